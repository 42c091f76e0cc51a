"""Edit-quality metrics over the synthetic bench."""

from __future__ import annotations

import numpy as np

from .detect import detect_object


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB between two uint8 images."""
    if a.shape != b.shape:
        raise ValueError("psnr: shape mismatch")
    mse = np.mean((a.astype(np.float64) / 255.0 - b.astype(np.float64) / 255.0) ** 2)
    return float(10.0 * np.log10(1.0 / max(mse, 1e-12)))


def mean_distance(edited_images, cases) -> dict:
    """Pixel distance between each dragged object's detected centroid and its target.

    Detection failures are excluded from the mean and reported separately.
    """
    if len(edited_images) != len(cases):
        raise ValueError(f"{len(edited_images)} results vs {len(cases)} cases")
    per_case = []
    failures = 0
    for img, case in zip(edited_images, cases):
        obj = case.dragged_object
        found = detect_object(img, obj.shape, obj.color)
        if found is None:
            failures += 1
            per_case.append(None)
            continue
        ex, ey = case.expected_target
        per_case.append(float(np.hypot(found[0] - ex, found[1] - ey)))
    detected = [d for d in per_case if d is not None]
    return {
        "mean": float(np.mean(detected)) if detected else float("nan"),
        "per_case": per_case,
        "failures": failures,
        "failure_rate": failures / len(cases) if cases else 0.0,
    }


def upscale_mask(mask: np.ndarray, image_size: int) -> np.ndarray:
    """Nearest-neighbour upscale of a feature-resolution mask."""
    fh, fw = mask.shape
    if image_size % fh:
        raise ValueError("mask resolution must divide image size")
    s = image_size // fh
    return np.repeat(np.repeat(mask, s, axis=0), s, axis=1)


def preservation_error(edited: np.ndarray, original: np.ndarray, m_share: np.ndarray) -> tuple[float, bool]:
    """Mean squared pixel difference (on [0,1] scale) inside the unrelated region.

    Returns (error, empty_flag); an empty region is defined as 0 with the
    flag set.
    """
    if edited.shape != original.shape:
        raise ValueError("preservation_error: shape mismatch")
    size = edited.shape[0]
    mask = m_share if m_share.shape == edited.shape[:2] else upscale_mask(m_share, size)
    if not mask.any():
        return 0.0, True
    a = edited.astype(np.float64) / 255.0
    b = original.astype(np.float64) / 255.0
    diff = ((a - b) ** 2).mean(axis=-1)
    return float(diff[mask].mean()), False
