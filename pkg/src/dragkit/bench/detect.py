"""Oracle object detection over the synthetic palette.

Detection is color thresholding, connected components, then a template
shape score (IoU against a re-rendered mask at the component's estimated
center and size). Ground-truth geometry exists for every generated scene,
so this detector doubles as the measurement oracle for edit metrics and as
the structural fidelity scorer used to label discriminator training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .corpus import BACKGROUND_RGB, COLOR_RGB, SIZE_FRACTION, SceneObject, shape_mask

# pixel area of a unit-radius shape; used to invert area -> radius
_SHAPE_AREA_COEFF = {"circle": np.pi, "square": 4.0, "triangle": 1.395}

MAX_COLOR_DIST = 95.0
MIN_COMPONENT_AREA = 10


@dataclass
class Detection:
    center: tuple[float, float]  # (x, y) pixels
    radius: float
    score: float  # template IoU in [0, 1]


def _color_mask(img: np.ndarray, color: str) -> np.ndarray:
    """Pixels whose nearest palette entry is `color`, within a distance cap."""
    rgb = img.astype(np.float64)
    palette = {**COLOR_RGB, "__background__": BACKGROUND_RGB}
    dists = {
        name: np.linalg.norm(rgb - np.array(val, dtype=np.float64), axis=-1)
        for name, val in palette.items()
    }
    target = dists[color]
    nearest = np.ones_like(target, dtype=bool)
    for name, d in dists.items():
        if name != color:
            nearest &= target <= d
    return nearest & (target < MAX_COLOR_DIST)


def _estimate_radius(area: float, shape: str) -> float:
    return float(np.sqrt(area / _SHAPE_AREA_COEFF[shape]))


def find_object(img: np.ndarray, shape: str, color: str, score_floor: float = 0.3) -> Detection | None:
    """Best-scoring component of the given color matching the shape template."""
    if shape not in _SHAPE_AREA_COEFF:
        raise ValueError(f"unknown shape {shape!r}")
    if color not in COLOR_RGB:
        raise ValueError(f"unknown color {color!r}")
    mask = _color_mask(img, color)
    mask = ndimage.binary_closing(mask, iterations=1)
    labels, n = ndimage.label(mask)
    h, w = mask.shape
    best: Detection | None = None
    for idx in range(1, n + 1):
        comp = labels == idx
        area = int(comp.sum())
        if area < MIN_COMPONENT_AREA:
            continue
        ys, xs = np.nonzero(comp)
        cx, cy = float(xs.mean() + 0.5), float(ys.mean() + 0.5)
        r = _estimate_radius(area, shape)
        template = shape_mask(shape, cx, cy, r, h, w)
        inter = np.logical_and(comp, template).sum()
        union = np.logical_or(comp, template).sum()
        score = float(inter / union) if union else 0.0
        if score >= score_floor and (best is None or score > best.score):
            best = Detection(center=(cx, cy), radius=r, score=score)
    return best


def detect_object(img: np.ndarray, shape: str, color: str, score_floor: float = 0.3):
    """Centroid (x, y) of the best matching object, or None when not found."""
    det = find_object(img, shape, color, score_floor)
    return det.center if det is not None else None


def scene_from_image(img: np.ndarray, score_floor: float = 0.45) -> list[SceneObject]:
    """Reconstruct scene metadata from a palette-shapes image.

    Each color's components are matched against all shape templates; the
    best-scoring shape wins. Returns a list of SceneObject with the nearest
    size word per estimated radius.
    """
    image_size = img.shape[0]
    objects: list[SceneObject] = []
    for color in COLOR_RGB:
        mask = _color_mask(img, color)
        mask = ndimage.binary_closing(mask, iterations=1)
        labels, n = ndimage.label(mask)
        for idx in range(1, n + 1):
            comp = labels == idx
            area = int(comp.sum())
            if area < MIN_COMPONENT_AREA:
                continue
            ys, xs = np.nonzero(comp)
            cx, cy = float(xs.mean() + 0.5), float(ys.mean() + 0.5)
            best_shape, best_score, best_r = None, 0.0, 0.0
            for shape in _SHAPE_AREA_COEFF:
                r = _estimate_radius(area, shape)
                template = shape_mask(shape, cx, cy, r, image_size, image_size)
                union = np.logical_or(comp, template).sum()
                score = float(np.logical_and(comp, template).sum() / union) if union else 0.0
                if score > best_score:
                    best_shape, best_score, best_r = shape, score, r
            if best_shape is None or best_score < score_floor:
                continue
            fractions = {k: abs(best_r / image_size - v) for k, v in SIZE_FRACTION.items()}
            size = min(fractions, key=fractions.get)
            objects.append(SceneObject(shape=best_shape, color=color, size=size, center=(cx, cy)))
    return objects


def _unexplained_mask(img: np.ndarray) -> np.ndarray:
    """Pixels far from every palette color and from the background."""
    rgb = img.astype(np.float64)
    palette = list(COLOR_RGB.values()) + [BACKGROUND_RGB]
    dist = np.min(
        np.stack([np.linalg.norm(rgb - np.array(p, dtype=np.float64), axis=-1) for p in palette]),
        axis=0,
    )
    return dist >= MAX_COLOR_DIST


def fidelity_score(img: np.ndarray, objects: list[SceneObject]) -> float:
    """Structural consistency score in [0, 10]; 10 means clean template shapes.

    Each expected object contributes its mask-overlap error (1 - Dice between
    its color mask and the fitted shape template); pixels matching no palette
    color at all count as extra corruption. The corrupted fraction is
    normalized by the expected total object area. Score = 10 - 10*fraction.
    """
    image_size = img.shape[0]
    expected_area = 0.0
    corrupted = 0.0
    explained = np.zeros((image_size, image_size), dtype=bool)
    for obj in objects:
        r = SIZE_FRACTION[obj.size] * image_size
        area = _SHAPE_AREA_COEFF[obj.shape] * r * r
        expected_area += area
        det = find_object(img, obj.shape, obj.color)
        if det is None:
            corrupted += area
            continue
        template = shape_mask(obj.shape, det.center[0], det.center[1], det.radius, image_size, image_size)
        color = _color_mask(img, obj.color)
        inter = np.logical_and(template, color).sum()
        denom = template.sum() + color.sum()
        dice = float(2.0 * inter / denom) if denom else 0.0
        corrupted += (1.0 - dice) * area
        # anti-aliased borders blend palette and background; forgive a thin ring
        explained |= ndimage.binary_dilation(template, iterations=2)
    corrupted += float((_unexplained_mask(img) & ~explained).sum())
    fraction = min(1.0, corrupted / max(expected_area, 1.0))
    return 10.0 - 10.0 * fraction
