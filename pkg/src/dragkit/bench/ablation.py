"""Seeded drag bench and the ablation runner.

Sixty cases by default: twelve per archetype (move left/right/up/down at a
cell-crossing distance, enlarge with a short outward drag). Every case is a
single-object scene so detection is unambiguous, and the expected target is
the handle keypoint translated by the drag vector.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from ..guidance import DragPair, DragSpec, build_masks, capsule_mask
from ..pipeline import EditRequest, EditToggles, run_edit
from ..reasoner import OracleBackend, SceneQuery, locate, reason, select_intentions
from .corpus import (
    COLOR_WORDS,
    SHAPE_WORDS,
    SIZE_FRACTION,
    SceneObject,
    SceneRecord,
    cell_center,
)
from .metrics import mean_distance, preservation_error

log = logging.getLogger(__name__)

ARCHETYPES = ("move-right", "move-left", "move-up", "move-down", "enlarge")

REPORT_SCHEMA = "dragkit-bench-report/1"


@dataclass
class BenchCase:
    scene: SceneRecord
    drag: DragSpec
    expected_target: tuple[float, float]
    archetype: str

    @property
    def dragged_object(self) -> SceneObject:
        return self.scene.objects[0]

    @property
    def drag_length(self) -> float:
        (hx, hy), (tx, ty) = self.drag.pairs[0].handle, self.drag.pairs[0].target
        return float(np.hypot(tx - hx, ty - hy))


_MOVE_VECTORS = {
    "move-right": (1, 0),
    "move-left": (-1, 0),
    "move-up": (0, -1),
    "move-down": (0, 1),
}


def _case_for(archetype: str, rng: np.random.Generator, image_size: int) -> BenchCase:
    shape = SHAPE_WORDS[int(rng.integers(len(SHAPE_WORDS)))]
    color = COLOR_WORDS[int(rng.integers(len(COLOR_WORDS)))]
    third = image_size / 3.0
    if archetype == "enlarge":
        size = ("small", "medium")[int(rng.integers(2))]
        cells = ["center", "center left", "center right", "top center", "bottom center"]
        cell = cells[int(rng.integers(len(cells)))]
        cx, cy = cell_center(cell, image_size)
        r = SIZE_FRACTION[size] * image_size
        handle = (cx + r, cy)
        length = 3.0
        target = (handle[0] + length, handle[1])
    else:
        size = "medium"
        dx, dy = _MOVE_VECTORS[archetype]
        # start one cell away from the travel direction so the target stays inside
        col = 1 - dx
        row = 1 - dy
        cx, cy = (col + 0.5) * third, (row + 0.5) * third
        jitter = rng.uniform(-1.0, 1.0, size=2)
        cx, cy = float(cx + jitter[0]), float(cy + jitter[1])
        handle = (cx, cy)
        length = third
        target = (cx + dx * length, cy + dy * length)
    obj = SceneObject(shape=shape, color=color, size=size, center=(float(cx), float(cy)))
    scene = SceneRecord(image_size=image_size, objects=[obj], seed=int(rng.integers(2**31 - 1)))
    r_mask = obj.radius_px(image_size) + 3.0
    mask = capsule_mask(image_size, image_size, handle, target, r_mask)
    drag = DragSpec(pairs=[DragPair(handle=handle, target=target)], editable_mask=mask)
    # expected target is the handle keypoint translated by the drag vector
    return BenchCase(scene=scene, drag=drag, expected_target=target, archetype=archetype)


def make_bench(n_per_archetype: int = 12, seed: int = 0, image_size: int = 32) -> list[BenchCase]:
    rng = np.random.default_rng(seed)
    cases = []
    for archetype in ARCHETYPES:
        for _ in range(n_per_archetype):
            cases.append(_case_for(archetype, rng, image_size))
    return cases


def save_bench(cases: list[BenchCase], path):
    payload = [
        {
            "scene": c.scene.to_json(),
            "drag": c.drag.to_json(),
            "expected_target": list(c.expected_target),
            "archetype": c.archetype,
        }
        for c in cases
    ]
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_bench(path) -> list[BenchCase]:
    with open(path) as fh:
        payload = json.load(fh)
    return [
        BenchCase(
            scene=SceneRecord.from_json(c["scene"]),
            drag=DragSpec.from_json(c["drag"]),
            expected_target=tuple(c["expected_target"]),
            archetype=c["archetype"],
        )
        for c in payload
    ]


VARIANTS = ("full", "noint", "noq")


def _variant_toggles(variant: str) -> EditToggles:
    if variant == "full":
        return EditToggles()
    if variant == "noint":
        return EditToggles(use_semantic=False)
    if variant == "noq":
        return EditToggles(use_quality=False)
    raise ValueError(f"unknown variant {variant!r}; known: {VARIANTS}")


def _case_intention(case: BenchCase, backend: OracleBackend):
    query = SceneQuery(
        caption=case.scene.caption,
        points=[(p.handle, p.target) for p in case.drag.pairs],
        scene=case.scene,
    )
    description = locate(query, backend)
    candidates = reason(description, case.scene.caption, query.points, 3, backend, scene=case.scene)
    picked, _ = select_intentions(candidates, 1)
    return picked[0]


def run_bench_variant(
    cases: list[BenchCase],
    variant: str,
    denoiser,
    quality_model=None,
    sched=None,
    base_request: EditRequest | None = None,
    seed: int = 0,
) -> dict:
    """Run one toggle set over all cases and aggregate the metrics."""
    from ..pipeline import EditError, identity_intention

    backend = OracleBackend()
    toggles = _variant_toggles(variant)
    images = []
    preservation = []
    edit_failures = 0
    t0 = time.time()
    for i, case in enumerate(cases):
        if toggles.use_semantic:
            intention = _case_intention(case, backend)
        else:
            intention = identity_intention(case.scene.caption)
        template = base_request or EditRequest(
            image=case.scene.render(), caption=case.scene.caption, drag=case.drag, intention=intention
        )
        req = replace(
            template,
            image=case.scene.render(),
            caption=case.scene.caption,
            drag=case.drag,
            intention=intention,
            toggles=toggles,
            seed=seed + i,
        )
        try:
            result = run_edit(req, denoiser, quality_model=quality_model, sched=sched)
            images.append(result.image)
        except EditError as exc:
            log.warning("case %d (%s) failed: %s", i, case.archetype, exc)
            edit_failures += 1
            images.append(case.scene.render())  # unchanged input counts as a no-op edit
        half = denoiser.config.image_size // 2
        masks = build_masks(case.drag, (half, half), radius=2.0)
        err, _ = preservation_error(images[-1], case.scene.render(), masks.m_share)
        preservation.append(err)
    md = mean_distance(images, cases)
    return {
        "variant": variant,
        "mean_distance": md["mean"],
        "per_case_distance": md["per_case"],
        "detection_failures": md["failures"],
        "detection_failure_rate": md["failure_rate"],
        "edit_failures": edit_failures,
        "preservation_error": float(np.mean(preservation)),
        "runtime_s": time.time() - t0,
    }


def run_ablation(
    cases: list[BenchCase],
    variants: tuple[str, ...],
    denoiser,
    quality_model=None,
    sched=None,
    base_request: EditRequest | None = None,
    seed: int = 0,
) -> dict:
    """Metrics per toggle variant plus the no-edit drag-length baseline."""
    if not variants:
        raise ValueError("need at least one variant")
    results = {}
    for variant in variants:
        results[variant] = run_bench_variant(
            cases, variant, denoiser, quality_model=quality_model, sched=sched,
            base_request=base_request, seed=seed,
        )
    baseline = float(np.mean([c.drag_length for c in cases]))
    return {
        "schema": REPORT_SCHEMA,
        "seed": seed,
        "n_cases": len(cases),
        "baseline_drag_length": baseline,
        "variants": results,
    }


def render_report(report: dict) -> str:
    names = list(report["variants"])
    rows = [
        ("Mean Distance (down)", [f"{report['variants'][v]['mean_distance']:.2f}" for v in names]),
        (
            "Preservation Error (down)",
            [f"{report['variants'][v]['preservation_error']:.5f}" for v in names],
        ),
        (
            "Detection failure rate",
            [f"{report['variants'][v]['detection_failure_rate']:.2f}" for v in names],
        ),
    ]
    header = ["metric"] + names
    widths = [max(len(header[0]), *(len(r[0]) for r in rows))] + [
        max(len(h), *(len(r[1][i]) for r in rows)) for i, h in enumerate(names)
    ]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-+-".join("-" * w for w in widths))
    for label, cells in rows:
        lines.append(" | ".join(c.ljust(w) for c, w in zip([label] + cells, widths)))
    lines.append(f"baseline |drag| = {report['baseline_drag_length']:.2f} px over {report['n_cases']} cases")
    return "\n".join(lines)


def save_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
