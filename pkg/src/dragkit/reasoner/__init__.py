"""Intention reasoning: locate the dragged object, propose semantic edits.

Two backends share the same surface: an oracle over synthetic scene ground
truth (deterministic, used for benchmarks) and a remote chat-completion
client. Both produce Intention records {intent, source prompt, target
prompt, confidence}; selection keeps the n most confident.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..bench.corpus import SceneRecord

UNIFORM_FALLBACK_FLAG = "confidence: uniform-fallback"


@dataclass
class SceneQuery:
    caption: str
    points: list[tuple[tuple[float, float], tuple[float, float]]]  # (handle, target) pairs
    image: np.ndarray | None = None
    scene: SceneRecord | None = None  # ground-truth layout for the oracle backend

    def validate(self, image_size: int | None = None):
        if not self.points:
            raise ValueError("query needs at least one drag pair")
        if image_size is not None:
            for handle, target in self.points:
                for x, y in (handle, target):
                    if not (0 <= x < image_size and 0 <= y < image_size):
                        raise ValueError(f"point ({x}, {y}) outside image bounds")


@dataclass
class ObjectDescription:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("object description must be nonempty")


@dataclass
class Intention:
    intent: str
    source_prompt: str
    target_prompt: str
    confidence: float = 1.0
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("intent", "source_prompt", "target_prompt"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be nonempty")
        if not (0.0 < self.confidence <= 1.0):
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")

    def to_json(self) -> dict:
        return {
            "intent": self.intent,
            "source_prompt": self.source_prompt,
            "target_prompt": self.target_prompt,
            "confidence": self.confidence,
            "flags": list(self.flags),
        }

    @staticmethod
    def from_json(payload: dict) -> "Intention":
        return Intention(
            intent=payload["intent"],
            source_prompt=payload["source_prompt"],
            target_prompt=payload["target_prompt"],
            confidence=payload.get("confidence", 1.0),
            flags=list(payload.get("flags", [])),
        )


_TRIPLET = re.compile(
    r"intention\s*:\s*(?P<intent>[^\n]*)\n+\s*"
    r"source\s+prompt\s*:\s*(?P<source>[^\n]*)\n+\s*"
    r"target\s+prompt\s*:\s*(?P<target>[^\n]*)",
    re.IGNORECASE,
)


def _clean(text: str) -> str:
    return text.strip().rstrip(".").strip()


def parse_reasoner_output(text: str) -> tuple[list[Intention], list[str]]:
    """Extract every (Intention, Source prompt, Target prompt) triplet in order.

    Labels are case-insensitive and surrounding prose is ignored. Triplets
    with an empty field are dropped and reported in the second return value.
    """
    parsed: list[Intention] = []
    errors: list[str] = []
    for m in _TRIPLET.finditer(text or ""):
        fields = {k: _clean(m.group(k)) for k in ("intent", "source", "target")}
        empty = [k for k, v in fields.items() if not v]
        if empty:
            errors.append(f"triplet at offset {m.start()} missing fields: {', '.join(empty)}")
            continue
        parsed.append(
            Intention(
                intent=fields["intent"],
                source_prompt=fields["source"],
                target_prompt=fields["target"],
            )
        )
    return parsed, errors


def render_intention(intention: Intention) -> str:
    """Inverse of the parser's triplet format."""
    return (
        f"Intention: {intention.intent}.\n"
        f"Source prompt: {intention.source_prompt}.\n"
        f"Target prompt: {intention.target_prompt}.\n"
    )


def select_intentions(scored: list[Intention], n: int) -> tuple[list[Intention], bool]:
    """Top-n by confidence, descending; ties keep input order.

    Returns (selection, truncated_warning) where the flag is set when fewer
    than n candidates were available.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not scored:
        raise ValueError("no intentions to select from")
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].confidence, i))
    picked = [scored[i] for i in order[:n]]
    return picked, len(scored) < n


def sample_intentions(scored: list[Intention], n: int, seed: int = 0) -> list[Intention]:
    """Confidence-proportional sampling without replacement (opt-in alternative)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not scored:
        raise ValueError("no intentions to sample from")
    rng = np.random.default_rng(seed)
    remaining = list(range(len(scored)))
    picked = []
    while remaining and len(picked) < n:
        weights = np.array([scored[i].confidence for i in remaining], dtype=np.float64)
        probs = weights / weights.sum()
        choice = rng.choice(len(remaining), p=probs)
        picked.append(scored[remaining.pop(int(choice))])
    return picked


def locate(query: SceneQuery, backend) -> ObjectDescription:
    return backend.locate(query)


def reason(
    description: ObjectDescription,
    caption: str,
    points,
    n_candidates: int,
    backend,
    scene: SceneRecord | None = None,
) -> list[Intention]:
    return backend.reason(description, caption, points, n_candidates, scene=scene)


from .oracle import OracleBackend  # noqa: E402
from .remote import RemoteBackend, RemoteReasonerError  # noqa: E402

__all__ = [
    "SceneQuery",
    "ObjectDescription",
    "Intention",
    "parse_reasoner_output",
    "render_intention",
    "select_intentions",
    "sample_intentions",
    "locate",
    "reason",
    "OracleBackend",
    "RemoteBackend",
    "RemoteReasonerError",
    "UNIFORM_FALLBACK_FLAG",
]
