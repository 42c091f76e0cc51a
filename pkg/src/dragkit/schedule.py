"""Noise schedule tables and the deterministic DDIM forward/backward steps.

Everything here is pure math over immutable inputs: a schedule is a pair of
lookup tables (cumulative signal ``alpha_bar`` and noise level ``sigma``),
and the two DDIM steps are exact algebraic inverses of each other for any
fixed noise estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2
DEFAULT_TRAIN_STEPS = 1000


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative-signal / noise tables indexed by timestep 0..T.

    ``alpha_bar[t]`` is the cumulative product of (1 - beta) up to step t,
    with ``alpha_bar[0] == 1``. ``sigma[t] == sqrt(1 - alpha_bar[t])``.
    ``raw_t[t]`` maps a schedule index to the underlying training timestep
    (identity for unsubsampled schedules); the denoiser's time embedding
    consumes raw timesteps so a strided sampling schedule stays compatible
    with a model trained on the dense one.
    """

    T: int
    alpha_bar: np.ndarray
    sigma: np.ndarray
    raw_t: np.ndarray

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"schedule needs T >= 2, got {self.T}")
        if len(self.alpha_bar) != self.T + 1:
            raise ValueError("alpha_bar must have length T+1")
        if abs(self.alpha_bar[0] - 1.0) > 1e-12:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.any(self.alpha_bar <= 0) or np.any(self.alpha_bar > 1):
            raise ValueError("alpha_bar values must lie in (0, 1]")
        if np.max(np.abs(self.sigma**2 + self.alpha_bar - 1.0)) > 1e-6:
            raise ValueError("sigma[t]^2 + alpha_bar[t] must equal 1")


@dataclass
class LatentState:
    """An image-shaped tensor tagged with its timestep and conditioning.

    ``cond`` is the prompt the state is associated with (None means the
    null condition). The tensor layout is (channels, height, width).
    """

    data: torch.Tensor
    t: int
    cond: str | None = None

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ValueError(f"latent data must be (C, H, W), got shape {tuple(self.data.shape)}")
        if self.t < 0:
            raise ValueError(f"timestep must be >= 0, got {self.t}")
        if not torch.isfinite(self.data).all():
            raise ValueError("latent data contains non-finite values")

    def with_data(self, data: torch.Tensor, t: int | None = None) -> "LatentState":
        return LatentState(data=data, t=self.t if t is None else t, cond=self.cond)


def make_schedule(
    T: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build a linear-beta schedule with T diffusion steps.

    Deterministic for fixed inputs; betas are linearly spaced from
    beta_start to beta_end inclusive.
    """
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    for name, b in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not (0.0 < b < 1.0):
            raise ValueError(f"{name} must be in (0, 1), got {b}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    sigma = np.sqrt(1.0 - alpha_bar)
    return NoiseSchedule(T=T, alpha_bar=alpha_bar, sigma=sigma, raw_t=np.arange(T + 1))


def subsample_schedule(sched: NoiseSchedule, T: int) -> NoiseSchedule:
    """Stride a dense training schedule down to T sampling steps.

    Index i of the result maps to raw timestep i * (sched.T // T); the DDIM
    step formula applies unchanged over the strided alpha_bar table.
    """
    if T < 2 or T > sched.T:
        raise ValueError(f"subsample target must be in [2, {sched.T}], got {T}")
    if sched.T % T != 0:
        raise ValueError(f"subsample target {T} must divide {sched.T}")
    stride = sched.T // T
    idx = np.arange(T + 1) * stride
    return NoiseSchedule(
        T=T,
        alpha_bar=sched.alpha_bar[idx].copy(),
        sigma=sched.sigma[idx].copy(),
        raw_t=sched.raw_t[idx].copy(),
    )


def default_schedule(T: int = 50) -> NoiseSchedule:
    """The default sampling schedule: 1000 linear-beta steps strided to T."""
    return subsample_schedule(make_schedule(DEFAULT_TRAIN_STEPS), T)


def _check_t(t: int, lo: int, hi: int, what: str):
    if not (lo <= t <= hi):
        raise ValueError(f"{what}: timestep {t} outside [{lo}, {hi}]")


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> LatentState:
    """Noise a clean image to timestep t: sqrt(alpha_bar[t])*x0 + sigma[t]*eps."""
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    _check_t(t, 1, sched.T, "add_noise")
    signal = float(np.sqrt(sched.alpha_bar[t]))
    data = signal * x0 + float(sched.sigma[t]) * eps
    return LatentState(data=data, t=t)


def ddim_coeffs(sched: NoiseSchedule, t_from: int, t_to: int) -> tuple[float, float]:
    """Coefficients (a, b) of the deterministic step z_to = a*z_from + b*eps_hat.

    This is the cumulative-alpha reading of the DDIM update: the eps term
    carries a sqrt(alpha_bar[t_to]) factor, which is the only form under
    which forward and inverse steps are exact algebraic inverses.
    """
    ab_from = float(sched.alpha_bar[t_from])
    ab_to = float(sched.alpha_bar[t_to])
    a = np.sqrt(ab_to / ab_from)
    b = np.sqrt(ab_to) * (np.sqrt(1.0 / ab_to - 1.0) - np.sqrt(1.0 / ab_from - 1.0))
    return float(a), float(b)


def ddim_step(z: LatentState, eps_hat: torch.Tensor, sched: NoiseSchedule) -> LatentState:
    """One deterministic denoising step t -> t-1."""
    if z.t < 1:
        raise ValueError("ddim_step: nothing to denoise at t=0")
    _check_t(z.t, 1, sched.T, "ddim_step")
    if eps_hat.shape != z.data.shape:
        raise ValueError("ddim_step: eps_hat shape mismatch")
    if not torch.isfinite(eps_hat).all():
        raise ValueError("ddim_step: eps_hat contains non-finite values")
    a, b = ddim_coeffs(sched, z.t, z.t - 1)
    return z.with_data(a * z.data + b * eps_hat, t=z.t - 1)


def ddim_invert_step(z: LatentState, eps_hat: torch.Tensor, sched: NoiseSchedule) -> LatentState:
    """One deterministic inversion step t -> t+1 (exact inverse of ddim_step)."""
    if z.t > sched.T - 1:
        raise ValueError(f"ddim_invert_step: cannot invert beyond T={sched.T}")
    if eps_hat.shape != z.data.shape:
        raise ValueError("ddim_invert_step: eps_hat shape mismatch")
    if not torch.isfinite(eps_hat).all():
        raise ValueError("ddim_invert_step: eps_hat contains non-finite values")
    a, b = ddim_coeffs(sched, z.t, z.t + 1)
    return z.with_data(a * z.data + b * eps_hat, t=z.t + 1)
