"""Editing energies and gradient guidance.

Masks live at the feature tap's resolution. The drag energy pulls the
generated features at the target region toward the guidance features at the
handle region (regions paired by the drag translation); the content energy
holds the unrelated region in place (same-position pairing). Both are
reciprocals 1/(alpha + beta*S) of a [0,1] similarity, so lower energy is
better and the sampler descends the total by adding eta * grad(log g) to
the predicted noise (the DDIM step's eps coefficient is negative, which
turns that injection into a descent direction).

The quality term enters the composed total as the density-ratio loss
(1-d)/d, the reciprocal of the discriminator's real/fake ratio: descending
the total then raises the discriminator logit. Composing the ratio itself
(as a literal reading of the sum would have it) and descending would push
samples toward the low-fidelity class, inverting the ablation direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .denoiser import Denoiser, FeatureMap
from .memory import MemoryBank
from .schedule import LatentState


QUALITY_GUIDANCE_BAND = 2.0  # logit band inside which quality guidance acts


class GuidanceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class DragPair:
    handle: tuple[float, float]  # (x, y) image pixels
    target: tuple[float, float]

    @property
    def vector(self) -> tuple[float, float]:
        return (self.target[0] - self.handle[0], self.target[1] - self.handle[1])


@dataclass
class DragSpec:
    pairs: list[DragPair]
    editable_mask: np.ndarray  # (H, W) bool, image resolution

    def validate(self, image_size: int):
        if not self.pairs:
            raise ValueError("drag spec needs at least one pair")
        if self.editable_mask.shape != (image_size, image_size):
            raise ValueError("editable_mask must match the image resolution")
        for p in self.pairs:
            for x, y in (p.handle, p.target):
                if not (0 <= x < image_size and 0 <= y < image_size):
                    raise ValueError(f"point ({x}, {y}) outside image bounds")
            hx, hy = int(p.handle[0]), int(p.handle[1])
            if not self.editable_mask[hy, hx]:
                raise ValueError(f"handle {p.handle} lies outside the editable mask")

    def to_json(self) -> dict:
        return {
            "pairs": [{"handle": list(p.handle), "target": list(p.target)} for p in self.pairs],
            "editable_mask": [[int(v) for v in row] for row in self.editable_mask.astype(int)],
        }

    @staticmethod
    def from_json(payload: dict) -> "DragSpec":
        pairs = [
            DragPair(handle=tuple(p["handle"]), target=tuple(p["target"]))
            for p in payload["pairs"]
        ]
        mask = np.asarray(payload["editable_mask"], dtype=bool)
        return DragSpec(pairs=pairs, editable_mask=mask)


@dataclass
class PairRegions:
    """Aligned handle/target feature cells for one drag pair."""

    src: np.ndarray  # (n, 2) of (row, col)
    tgt: np.ndarray  # (n, 2)

    @property
    def area(self) -> int:
        return len(self.src)


@dataclass
class GuidanceMasks:
    m_orig: np.ndarray  # (h, w) bool at feature resolution
    m_tar: np.ndarray
    m_share: np.ndarray
    regions: list[PairRegions]
    clipped: bool = False


@dataclass
class GuidanceWeights:
    w_e: float = 4e-4
    w_c: float = 4e-4
    eta_quality: float = 1e-3
    alpha: float = 1.0
    beta: float = 1.0
    eta: float = 1.0
    n1: int | None = None  # editing-guidance step budget (default 0.8*T)
    n2: int | None = None  # quality-guidance step budget (default 0.5*T)

    def resolved(self, T: int) -> "GuidanceWeights":
        n1 = self.n1 if self.n1 is not None else int(round(0.8 * T))
        n2 = self.n2 if self.n2 is not None else int(round(0.5 * T))
        out = GuidanceWeights(
            w_e=self.w_e, w_c=self.w_c, eta_quality=self.eta_quality,
            alpha=self.alpha, beta=self.beta, eta=self.eta, n1=n1, n2=n2,
        )
        out.validate(T)
        return out

    def validate(self, T: int):
        for name in ("w_e", "w_c", "eta_quality", "beta", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0 (it guards the energy denominator)")
        if self.n1 is None or self.n2 is None:
            raise ValueError("n1/n2 unresolved")
        if not (0 <= self.n2 <= self.n1 <= T):
            raise ValueError(f"need n2 <= n1 <= T, got n2={self.n2} n1={self.n1} T={T}")


def capsule_mask(h: int, w: int, p0: tuple[float, float], p1: tuple[float, float], radius: float) -> np.ndarray:
    """Boolean mask of all pixels within `radius` of the segment p0 -> p1."""
    ys, xs = np.mgrid[0:h, 0:w]
    px, py = xs + 0.5, ys + 0.5
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    seg_len2 = vx * vx + vy * vy
    tproj = np.clip(((px - p0[0]) * vx + (py - p0[1]) * vy) / max(seg_len2, 1e-9), 0.0, 1.0)
    dist = np.hypot(px - (p0[0] + tproj * vx), py - (p0[1] + tproj * vy))
    return dist <= radius


def _downscale_any(mask: np.ndarray, feat_shape: tuple[int, int]) -> np.ndarray:
    h, w = mask.shape
    fh, fw = feat_shape
    if h % fh or w % fw:
        raise ValueError(f"feature shape {feat_shape} does not divide image shape {mask.shape}")
    sy, sx = h // fh, w // fw
    return mask.reshape(fh, sy, fw, sx).any(axis=(1, 3))


def _disk_cells(cx: float, cy: float, radius: float, fh: int, fw: int) -> np.ndarray:
    rows, cols = np.mgrid[0:fh, 0:fw]
    inside = (cols + 0.5 - cx) ** 2 + (rows + 0.5 - cy) ** 2 <= radius**2
    rr, cc = np.nonzero(inside)
    return np.stack([rr, cc], axis=1)


def build_masks(spec: DragSpec, feat_shape: tuple[int, int], radius: float) -> GuidanceMasks:
    """Rasterize drag geometry into the three guidance masks.

    m_orig: radius-disks at each (downscaled) handle, clipped to the
    editable region; m_tar: the same cells rigidly translated by each
    pair's (rounded) feature-space drag vector; m_share: everything outside
    the editable region, minus any overlap with the disks. Target cells
    leaving the image are dropped and flagged, never wrapped.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1 feature cell")
    fh, fw = feat_shape
    img_h = spec.editable_mask.shape[0]
    scale = img_h / fh
    editable = _downscale_any(spec.editable_mask, feat_shape)

    m_orig = np.zeros(feat_shape, dtype=bool)
    m_tar = np.zeros(feat_shape, dtype=bool)
    regions: list[PairRegions] = []
    clipped = False
    for pair in spec.pairs:
        hx, hy = (pair.handle[0] + 0.5) / scale, (pair.handle[1] + 0.5) / scale
        cells = _disk_cells(hx, hy, radius, fh, fw)
        keep = editable[cells[:, 0], cells[:, 1]]
        cells = cells[keep]
        if len(cells) == 0:
            continue
        vx, vy = pair.vector
        dv = np.array([round(vy / scale), round(vx / scale)], dtype=int)  # (row, col)
        tgt = cells + dv
        in_bounds = (
            (tgt[:, 0] >= 0) & (tgt[:, 0] < fh) & (tgt[:, 1] >= 0) & (tgt[:, 1] < fw)
        )
        if not in_bounds.all():
            clipped = True
        src, tgt = cells[in_bounds], tgt[in_bounds]
        if len(src) == 0:
            continue
        m_orig[src[:, 0], src[:, 1]] = True
        m_tar[tgt[:, 0], tgt[:, 1]] = True
        regions.append(PairRegions(src=src, tgt=tgt))
    if not regions:
        raise ValueError("empty handle region: no disk cell fell inside the editable mask")
    m_share = ~editable & ~(m_orig | m_tar)
    return GuidanceMasks(m_orig=m_orig, m_tar=m_tar, m_share=m_share, regions=regions, clipped=clipped)


def _gather(values: torch.Tensor, positions: np.ndarray) -> torch.Tensor:
    """(C, h, w) features at (n, 2) (row, col) positions -> (n, C)."""
    rows = torch.from_numpy(positions[:, 0].copy()).long()
    cols = torch.from_numpy(positions[:, 1].copy()).long()
    return values[:, rows, cols].transpose(0, 1)


def _as_values(f) -> torch.Tensor:
    return f.values if isinstance(f, FeatureMap) else f


def _paired_similarity(f_gen, pos_gen: np.ndarray, f_gud, pos_gud: np.ndarray) -> torch.Tensor:
    """Mean of (cosine+1)/2 over aligned positions; guidance side is constant."""
    if len(pos_gen) != len(pos_gud):
        raise ValueError("paired regions must have equal areas")
    if len(pos_gen) == 0:
        raise ValueError("empty mask region")
    a = _gather(_as_values(f_gen), pos_gen)
    b = _gather(_as_values(f_gud), pos_gud).detach()
    cos = torch.nn.functional.cosine_similarity(a, b, dim=1, eps=1e-8)
    return ((cos + 1.0) / 2.0).mean()


def _mask_positions(mask: np.ndarray) -> np.ndarray:
    rr, cc = np.nonzero(mask)
    return np.stack([rr, cc], axis=1)


def region_similarity(f_gen, mask_a: np.ndarray, f_gud, mask_b: np.ndarray) -> torch.Tensor:
    """Similarity in [0,1] between two equal-area regions.

    Positions are paired in lexicographic order, which matches same-position
    pairing when the masks are equal and translation pairing when one mask
    is a rigid integer translate of the other.
    """
    pa, pb = _mask_positions(mask_a), _mask_positions(mask_b)
    if len(pa) != len(pb):
        raise ValueError(f"regions differ in area: {len(pa)} vs {len(pb)}")
    return _paired_similarity(f_gen, pa, f_gud, pb)


def drag_similarity(f_gen, f_gud, masks: GuidanceMasks) -> torch.Tensor:
    """Area-weighted similarity between target cells of F_gen and handle cells of F_gud."""
    total = 0.0
    area = 0
    for region in masks.regions:
        total = total + _paired_similarity(f_gen, region.tgt, f_gud, region.src) * region.area
        area += region.area
    return total / area


def drag_energy(f_gen, f_gud, masks: GuidanceMasks, alpha: float = 1.0, beta: float = 1.0):
    s = drag_similarity(f_gen, f_gud, masks)
    return 1.0 / (alpha + beta * s)


def content_energy(f_gen, f_gud, masks: GuidanceMasks, alpha: float = 1.0, beta: float = 1.0):
    """Preservation energy over m_share; an empty region contributes 1/alpha, no gradient."""
    if not masks.m_share.any():
        return torch.tensor(1.0 / alpha)
    s = region_similarity(f_gen, masks.m_share, f_gud, masks.m_share)
    return 1.0 / (alpha + beta * s)


def compose_edit_energy(g_drag, g_content, w_e: float, w_c: float):
    return w_e * g_drag + w_c * g_content


def compose_total(g_edit, g_quality):
    return g_edit + g_quality


def inject_guidance(eps_hat: torch.Tensor, grad_log_g: torch.Tensor, eta: float) -> torch.Tensor:
    if eps_hat.shape != grad_log_g.shape:
        raise ValueError("guidance gradient shape mismatch")
    if eta == 0.0:
        return eps_hat
    return eps_hat + eta * grad_log_g


def energy_gradient(
    z: LatentState,
    bank: MemoryBank,
    masks: GuidanceMasks,
    weights: GuidanceWeights,
    prompts: tuple[str | None, str | None],
    denoiser: Denoiser,
    quality_model=None,
    tap: str = "dec1",
    linear_energy: bool = False,
    use_quality: bool = True,
    kv_ctrl=None,
) -> tuple[torch.Tensor, dict]:
    """Gradient of log(total energy) with respect to z.data.

    F_gen comes from (z, target prompt) and F_gud from the bank's recorded
    latent under the source prompt; no gradient flows into the guidance
    branch. Returns (gradient, energy components for the trace).
    """
    source_prompt, target_prompt = prompts
    if not bank.sealed:
        raise GuidanceError("memory bank must be sealed")
    want_edit = weights.w_e > 0 or weights.w_c > 0
    want_quality = use_quality and quality_model is not None and weights.eta_quality > 0
    parts = {
        "g_drag": 0.0, "g_content": 0.0, "g_edit": 0.0,
        "g_quality": 0.0, "quality_term": 0.0, "g_total": 0.0, "similarity": 0.0,
    }
    if not want_edit and not want_quality:
        return torch.zeros_like(z.data), parts

    z_req = z.data.detach().clone().requires_grad_(True)
    zs = LatentState(data=z_req, t=z.t, cond=target_prompt)
    total = None
    if want_edit:
        f_gen = denoiser.features_to(zs, target_prompt, tap, attn_ctrl=kv_ctrl)
        entry = bank.entry(z.t)
        with torch.no_grad():
            f_gud = denoiser.features_to(
                LatentState(entry.z_gud, t=z.t, cond=source_prompt), source_prompt, tap
            )
        g_d = drag_energy(f_gen, f_gud, masks, weights.alpha, weights.beta)
        g_c = content_energy(f_gen, f_gud, masks, weights.alpha, weights.beta)
        g_edit = compose_edit_energy(g_d, g_c, weights.w_e, weights.w_c)
        parts["g_drag"] = float(g_d.detach())
        parts["g_content"] = float(g_c.detach())
        parts["g_edit"] = float(g_edit.detach())
        if weights.beta > 0:
            parts["similarity"] = (1.0 / parts["g_drag"] - weights.alpha) / weights.beta
        total = g_edit
    if want_quality:
        logit = quality_model.logit_t(zs, target_prompt)
        parts["g_quality"] = float(torch.exp(logit.detach().clamp(-16, 16)))
        # density-ratio loss, see module docstring; the tighter band keeps the
        # steep discriminator landscape from drowning the edit terms
        bounded = torch.clamp(logit, -QUALITY_GUIDANCE_BAND, QUALITY_GUIDANCE_BAND)
        quality_term = weights.eta_quality * torch.exp(-bounded)
        parts["quality_term"] = float(quality_term.detach())
        total = quality_term if total is None else compose_total(total, quality_term)

    parts["g_total"] = float(total.detach())
    objective = total if linear_energy else torch.log(total)
    (grad,) = torch.autograd.grad(objective, z_req)
    if not torch.isfinite(grad).all():
        raise GuidanceError(
            "non-finite guidance gradient",
            diagnostics={"t": z.t, **{k: v for k, v in parts.items()}},
        )
    return grad.detach(), parts


def evaluate_energy(
    z_data: torch.Tensor,
    t: int,
    bank: MemoryBank,
    masks: GuidanceMasks,
    weights: GuidanceWeights,
    prompts: tuple[str | None, str | None],
    denoiser: Denoiser,
    quality_model=None,
    tap: str = "dec1",
    use_quality: bool = True,
) -> float:
    """Total energy at a given latent (no gradients); used by descent checks."""
    source_prompt, target_prompt = prompts
    with torch.no_grad():
        zs = LatentState(data=z_data, t=t, cond=target_prompt)
        total = 0.0
        if weights.w_e > 0 or weights.w_c > 0:
            f_gen = denoiser.features_to(zs, target_prompt, tap)
            entry = bank.entry(t)
            f_gud = denoiser.features_to(
                LatentState(entry.z_gud, t=t, cond=source_prompt), source_prompt, tap
            )
            g_d = drag_energy(f_gen, f_gud, masks, weights.alpha, weights.beta)
            g_c = content_energy(f_gen, f_gud, masks, weights.alpha, weights.beta)
            total += float(compose_edit_energy(g_d, g_c, weights.w_e, weights.w_c))
        if use_quality and quality_model is not None and weights.eta_quality > 0:
            logit = quality_model.logit_t(zs, target_prompt)
            bounded = torch.clamp(logit, -QUALITY_GUIDANCE_BAND, QUALITY_GUIDANCE_BAND)
            total += float(weights.eta_quality * torch.exp(-bounded))
    return total
