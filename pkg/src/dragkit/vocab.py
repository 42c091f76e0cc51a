"""Closed caption vocabulary shared by the corpus grammar and the denoiser."""

from __future__ import annotations

from dataclasses import dataclass

NULL_TOKEN = "<null>"

COLOR_WORDS = ("red", "green", "blue", "yellow", "purple", "orange")
SHAPE_WORDS = ("circle", "square", "triangle")
SIZE_WORDS = ("small", "medium", "large")
POSITION_WORDS = ("top", "bottom", "center", "left", "right")
FILLER_WORDS = ("a", "at", "the", "and")


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]

    def __post_init__(self):
        if NULL_TOKEN not in self.words:
            raise ValueError(f"vocabulary must reserve {NULL_TOKEN}")
        if len(set(self.words)) != len(self.words):
            raise ValueError("vocabulary contains duplicate words")

    @property
    def null_id(self) -> int:
        return self.words.index(NULL_TOKEN)

    def __len__(self) -> int:
        return len(self.words)

    def tokenize(self, caption: str) -> list[int]:
        """Whitespace tokenization over the closed vocabulary; OOV is an error."""
        ids = []
        index = {w: i for i, w in enumerate(self.words)}
        for word in caption.lower().split():
            if word not in index:
                raise ValueError(f"out-of-vocabulary token {word!r}")
            ids.append(index[word])
        if not ids:
            ids = [self.null_id]
        return ids

    def contains_caption(self, caption: str) -> bool:
        try:
            self.tokenize(caption)
            return True
        except ValueError:
            return False


def default_vocabulary() -> Vocabulary:
    words = (NULL_TOKEN,) + FILLER_WORDS + SIZE_WORDS + COLOR_WORDS + SHAPE_WORDS + POSITION_WORDS
    return Vocabulary(words=words)
