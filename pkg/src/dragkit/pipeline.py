"""End-to-end edit orchestration.

One edit = invert under the source prompt (recording the memory bank),
copy the terminal latent, then sample under the target prompt with
classifier-free guidance, injecting energy gradients while the step budgets
allow (editing terms for the first n1 sampling steps, the quality term for
the first n2) and replaying banked decoder K/V for content consistency.

All four behaviour toggles are independent so ablations can switch any
subset off; with everything off the run is exactly the plain
inversion/sampling round trip.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .bench.corpus import SceneRecord, from_model_space, to_model_space
from .denoiser import Denoiser
from .guidance import (
    DragSpec,
    GuidanceWeights,
    build_masks,
    energy_gradient,
    inject_guidance,
)
from .memory import record_inversion
from .quality import QualityModel
from .reasoner import Intention, SceneQuery, locate, reason, select_intentions
from .schedule import LatentState, NoiseSchedule, ddim_step

log = logging.getLogger(__name__)

REASONER_FALLBACK_FLAG = "reasoner-fallback"


class EditError(RuntimeError):
    def __init__(self, message: str, trace: list | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.trace = trace or []
        self.diagnostics = diagnostics or {}


@dataclass
class EditToggles:
    use_edit: bool = True
    use_semantic: bool = True
    use_quality: bool = True
    use_kv_replacement: bool = True


@dataclass
class EditRequest:
    image: np.ndarray  # uint8 (H, W, 3)
    caption: str
    drag: DragSpec
    intention: Intention
    weights: GuidanceWeights = field(default_factory=GuidanceWeights)
    seed: int = 0
    cfg_scale: float = 5.0
    toggles: EditToggles = field(default_factory=EditToggles)
    feature_tap: str = "dec1"
    mask_radius: float = 2.0
    kv_layers: tuple[str, ...] | None = None
    linear_energy: bool = False


@dataclass
class EditResult:
    image: np.ndarray
    trace: list[dict]
    timing: dict
    config: dict
    intention: Intention
    flags: list[str] = field(default_factory=list)


def _tap_shape(denoiser: Denoiser, tap: str) -> tuple[int, int]:
    if not tap.startswith(("dec", "enc", "mid")):
        raise ValueError(f"unknown feature tap {tap!r}")
    size = denoiser.config.image_size
    level = len(denoiser.config.channel_multipliers) - 1 if tap == "mid" else int(tap[3:])
    side = size // (2**level)
    return side, side


def _config_echo(req: EditRequest, weights: GuidanceWeights, T: int) -> dict:
    return {
        "T": T,
        "cfg_scale": req.cfg_scale,
        "seed": req.seed,
        "weights": asdict(weights),
        "toggles": asdict(req.toggles),
        "feature_tap": req.feature_tap,
        "mask_radius": req.mask_radius,
        "linear_energy": req.linear_energy,
        "caption": req.caption,
        "source_prompt": req.intention.source_prompt,
        "target_prompt": req.intention.target_prompt,
    }


def run_edit(
    req: EditRequest,
    denoiser: Denoiser,
    quality_model: QualityModel | None = None,
    sched: NoiseSchedule | None = None,
    bank=None,
    bank_sink: list | None = None,
) -> EditResult:
    """Execute one edit per the collaborative-guidance sampling loop.

    ``bank`` reuses a previously recorded inversion (its source prompt must
    match); ``bank_sink``, when given a list, receives the bank used.
    """
    sched = sched or denoiser.sched
    size = denoiser.config.image_size
    if req.image.shape[:2] != (size, size):
        raise EditError(f"image must be {size}x{size}, got {req.image.shape[:2]}")
    req.drag.validate(size)
    if req.toggles.use_quality and quality_model is None:
        raise EditError("use_quality requested but no quality model supplied")
    if req.toggles.use_semantic:
        p_s, p_t = req.intention.source_prompt, req.intention.target_prompt
    else:
        p_s = p_t = req.caption
    for prompt in (p_s, p_t):
        denoiser.vocab.tokenize(prompt)  # fail fast on out-of-vocabulary prompts
    weights = req.weights.resolved(sched.T)

    t_start = time.perf_counter()
    if bank is not None:
        if bank.source_prompt != p_s:
            raise EditError(
                f"loaded bank was recorded under {bank.source_prompt!r}, need {p_s!r}"
            )
        z_T = LatentState(data=bank.entry(sched.T).z_gud, t=sched.T, cond=p_s)
    else:
        x0 = torch.from_numpy(to_model_space(req.image))
        z_T, bank = record_inversion(x0, p_s, sched, denoiser, layers=req.kv_layers)
    if bank_sink is not None:
        bank_sink.append(bank)
    t_inverted = time.perf_counter()

    masks = build_masks(req.drag, _tap_shape(denoiser, req.feature_tap), req.mask_radius)
    flags = ["target-clipped"] if masks.clipped else []

    z = LatentState(data=z_T.data.clone(), t=sched.T, cond=p_t)
    trace: list[dict] = []
    guidance_seconds = 0.0
    for t in range(sched.T, 0, -1):
        kv_ctrl = bank.override_ctrl(t, req.kv_layers) if req.toggles.use_kv_replacement else None
        edit_active = req.toggles.use_edit and (sched.T - t) < weights.n1
        quality_active = req.toggles.use_quality and (sched.T - t) < weights.n2
        step_weights = weights if edit_active else replace(weights, w_e=0.0, w_c=0.0)
        g0 = time.perf_counter()
        if edit_active or quality_active:
            # guidance features reflect the raw generation state: the K/V
            # replacement applies to the sampling forwards only
            grad, parts = energy_gradient(
                z,
                bank,
                masks,
                step_weights,
                (p_s, p_t),
                denoiser,
                quality_model=quality_model if quality_active else None,
                tap=req.feature_tap,
                linear_energy=req.linear_energy,
                use_quality=quality_active,
            )
        else:
            grad, parts = torch.zeros_like(z.data), {
                "g_drag": 0.0, "g_content": 0.0, "g_edit": 0.0,
                "g_quality": 0.0, "quality_term": 0.0, "g_total": 0.0, "similarity": 0.0,
            }
        guidance_seconds += time.perf_counter() - g0
        with torch.no_grad():
            eps_hat, _ = denoiser.cfg_predict(z, p_t, None, w=req.cfg_scale, attn_ctrl=kv_ctrl)
        eps_hat = inject_guidance(eps_hat, grad, weights.eta)
        trace.append(
            {
                "t": t,
                "edit_active": edit_active,
                "quality_active": quality_active,
                "grad_norm": float(torch.norm(grad)),
                **parts,
            }
        )
        try:
            z = ddim_step(z, eps_hat, sched)
        except ValueError as exc:
            raise EditError(f"sampler aborted at t={t}: {exc}", trace=trace,
                            diagnostics={"t": t}) from exc
        if not torch.isfinite(z.data).all():
            raise EditError(f"non-finite latent at t={t - 1}", trace=trace, diagnostics={"t": t - 1})

    edited = from_model_space(z.data.numpy())
    timing = {
        "inversion_s": t_inverted - t_start,
        "sampling_s": time.perf_counter() - t_inverted,
        "guidance_s": guidance_seconds,
        "total_s": time.perf_counter() - t_start,
    }
    return EditResult(
        image=edited,
        trace=trace,
        timing=timing,
        config=_config_echo(req, weights, sched.T),
        intention=req.intention,
        flags=flags,
    )


def identity_intention(caption: str) -> Intention:
    return Intention(
        intent="apply the drag without a semantic reading",
        source_prompt=caption,
        target_prompt=caption,
        confidence=1.0,
    )


def run_diverse(
    image: np.ndarray,
    caption: str,
    drag: DragSpec,
    n: int,
    denoiser: Denoiser,
    backend,
    quality_model: QualityModel | None = None,
    sched: NoiseSchedule | None = None,
    scene: SceneRecord | None = None,
    seed: int = 0,
    base_request: EditRequest | None = None,
) -> list[EditResult]:
    """Reason n intentions and run one edit per intention (distinct seeds).

    A reasoner failure falls back to a single identity intention whose
    result carries a flag; results are ordered by intention confidence.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fallback = False
    try:
        query = SceneQuery(
            caption=caption,
            points=[(p.handle, p.target) for p in drag.pairs],
            image=image,
            scene=scene,
        )
        description = locate(query, backend)
        candidates = reason(description, caption, query.points, max(3, n), backend, scene=scene)
        picked, _ = select_intentions(candidates, n)
    except Exception as exc:
        log.warning("reasoner failed (%s); falling back to identity intention", exc)
        picked = [identity_intention(caption)]
        fallback = True

    results = []
    for j, intention in enumerate(picked):
        req = replace(
            base_request or EditRequest(image=image, caption=caption, drag=drag, intention=intention),
            image=image, caption=caption, drag=drag, intention=intention, seed=seed + j,
        )
        result = run_edit(req, denoiser, quality_model=quality_model, sched=sched)
        if fallback:
            result.flags.append(REASONER_FALLBACK_FLAG)
        results.append(result)
    return results
