"""Oracle reasoning backend over synthetic scene ground truth.

A pure function of (scene metadata, drag geometry, N): the located object
is the one nearest the first handle point, and candidate intentions are
derived from the drag vector (cell change -> move, radial expansion ->
resize) with confidences from a fixed table. Source/target prompts are
rebuilt from the scene's object list so they always tokenize under the
corpus grammar.
"""

from __future__ import annotations

import numpy as np

from ..bench.corpus import SIZE_WORDS, SceneObject, SceneRecord, cell_center, cell_name

# fixed confidence table for oracle-derived candidates
CONF_MOVE_CROSS_CELL = 0.85
CONF_MOVE_SAME_CELL = 0.40
CONF_RESIZE_RADIAL = 0.80
CONF_RESIZE_SECONDARY = 0.60
CONF_COMBINED = 0.45
CONF_IDENTITY = 0.30

_DIRECTIONS = {(1, 0): "right", (-1, 0): "left", (0, -1): "up", (0, 1): "down"}


def _direction_word(vx: float, vy: float) -> str:
    if abs(vx) >= abs(vy):
        return "right" if vx >= 0 else "left"
    return "down" if vy >= 0 else "up"


def _scene_caption_with(scene: SceneRecord, index: int, cell: str | None = None, size: str | None = None) -> str:
    phrases = []
    for i, obj in enumerate(scene.objects):
        if i == index and (cell is not None or size is not None):
            use_cell = cell if cell is not None else cell_name(*obj.center, scene.image_size)
            use_size = size if size is not None else obj.size
            phrases.append(f"a {use_size} {obj.color} {obj.shape} at the {use_cell}")
        else:
            phrases.append(obj.phrase(scene.image_size))
    return " and ".join(phrases)


class OracleBackend:
    name = "oracle"

    def locate(self, query) -> "ObjectDescription":
        from . import ObjectDescription

        scene = query.scene
        if scene is None:
            raise ValueError("oracle backend needs scene metadata")
        query.validate(scene.image_size)
        hx, hy = query.points[0][0]
        best_i, best_d = 0, float("inf")
        for i, obj in enumerate(scene.objects):
            d = float(np.hypot(hx - obj.center[0], hy - obj.center[1]))
            # strict < keeps the lower object id on exact ties
            if d < best_d:
                best_i, best_d = i, d
        obj = scene.objects[best_i]
        return ObjectDescription(text=f"the {obj.color} {obj.shape}")

    def _object_index(self, scene: SceneRecord, description) -> int:
        for i, obj in enumerate(scene.objects):
            if f"{obj.color} {obj.shape}" in description.text:
                return i
        raise ValueError(f"description {description.text!r} matches no scene object")

    def reason(self, description, caption: str, points, n_candidates: int, scene: SceneRecord | None = None):
        if n_candidates < 1:
            raise ValueError("need n_candidates >= 1")
        if scene is None:
            raise ValueError("oracle backend needs scene metadata")
        from . import Intention
        idx = self._object_index(scene, description)
        obj = scene.objects[idx]
        size_px = scene.image_size
        (hx, hy), (tx, ty) = points[0]
        vx, vy = tx - hx, ty - hy
        cur_cell = cell_name(*obj.center, size_px)
        tgt_cell = cell_name(
            float(np.clip(obj.center[0] + vx, 0, size_px - 1)),
            float(np.clip(obj.center[1] + vy, 0, size_px - 1)),
            size_px,
        )
        # radial expansion of the handle point relative to the object center
        outward = float(
            np.hypot(tx - obj.center[0], ty - obj.center[1])
            - np.hypot(hx - obj.center[0], hy - obj.center[1])
        )
        crosses = tgt_cell != cur_cell
        size_i = SIZE_WORDS.index(obj.size)

        candidates: list[Intention] = []
        direction = _direction_word(vx, vy)
        candidates.append(
            Intention(
                intent=f"move the {description.text.removeprefix('the ')} {direction}",
                source_prompt=_scene_caption_with(scene, idx),
                target_prompt=_scene_caption_with(scene, idx, cell=tgt_cell if crosses else cur_cell),
                confidence=CONF_MOVE_CROSS_CELL if crosses else CONF_MOVE_SAME_CELL,
            )
        )
        grow = outward >= 0
        new_size_i = size_i + 1 if grow else size_i - 1
        if 0 <= new_size_i < len(SIZE_WORDS):
            word = "larger" if grow else "smaller"
            candidates.append(
                Intention(
                    intent=f"make the {description.text.removeprefix('the ')} {word}",
                    source_prompt=_scene_caption_with(scene, idx),
                    target_prompt=_scene_caption_with(scene, idx, size=SIZE_WORDS[new_size_i]),
                    confidence=CONF_RESIZE_RADIAL if (not crosses and abs(outward) > 1.0) else CONF_RESIZE_SECONDARY,
                )
            )
            if crosses:
                candidates.append(
                    Intention(
                        intent=f"move the {description.text.removeprefix('the ')} {direction} and make it {word}",
                        source_prompt=_scene_caption_with(scene, idx),
                        target_prompt=_scene_caption_with(scene, idx, cell=tgt_cell, size=SIZE_WORDS[new_size_i]),
                        confidence=CONF_COMBINED,
                    )
                )
        candidates.append(
            Intention(
                intent=f"adjust the {description.text.removeprefix('the ')} slightly",
                source_prompt=_scene_caption_with(scene, idx),
                target_prompt=_scene_caption_with(scene, idx),
                confidence=CONF_IDENTITY,
            )
        )
        return candidates[:n_candidates]
