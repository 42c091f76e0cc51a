"""Denoiser training: standard noise-prediction regression with CFG dropout."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .bench.corpus import to_model_space
from .denoiser import Denoiser, DenoiserConfig
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass
class TrainerOptions:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 2e-4
    cond_dropout: float = 0.1
    seed: int = 0
    log_every: int = 50
    val_fraction: float = 0.05
    ema_decay: float | None = None


@dataclass
class TrainResult:
    denoiser: Denoiser
    history: list[dict] = field(default_factory=list)
    held_out_loss: float = float("nan")
    baseline_loss: float = float("nan")


def _prepare(corpus, denoiser: Denoiser):
    if not corpus:
        raise ValueError("corpus is empty")
    images = torch.stack([torch.from_numpy(to_model_space(img)) for img, _ in corpus])
    token_lists = [denoiser.vocab.tokenize(caption) for _, caption in corpus]
    max_len = max(len(t) for t in token_lists)
    null_id = denoiser.vocab.null_id
    ids = torch.full((len(corpus), max_len), null_id, dtype=torch.long)
    for i, toks in enumerate(token_lists):
        ids[i, : len(toks)] = torch.tensor(toks, dtype=torch.long)
    return images, ids


def _noise_batch(x0, eps, t_idx, sched: NoiseSchedule):
    signal = torch.from_numpy(np.sqrt(sched.alpha_bar[t_idx.numpy()])).float()
    noise = torch.from_numpy(sched.sigma[t_idx.numpy()]).float()
    return signal[:, None, None, None] * x0 + noise[:, None, None, None] * eps


def eval_loss(denoiser: Denoiser, images, ids, sched: NoiseSchedule, seed: int, draws: int = 4) -> float:
    """Seeded held-out noise-prediction loss, averaged over a few (t, eps) draws."""
    g = torch.Generator().manual_seed(seed)
    total, count = 0.0, 0
    with torch.no_grad():
        for _ in range(draws):
            t_idx = torch.randint(1, sched.T + 1, (len(images),), generator=g)
            eps = torch.randn(images.shape, generator=g)
            z = _noise_batch(images, eps, t_idx, sched)
            pooled = denoiser.cond.pool(ids)
            raw_t = torch.from_numpy(sched.raw_t[t_idx.numpy()]).float()
            pred = denoiser.eps(z, raw_t, pooled)
            total += F.mse_loss(pred, eps, reduction="sum").item()
            count += eps.numel()
    return total / count


class _Ema:
    def __init__(self, module: torch.nn.Module, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone() for k, v in module.state_dict().items()}

    def update(self, module: torch.nn.Module):
        for k, v in module.state_dict().items():
            if v.dtype.is_floating_point:
                self.shadow[k].mul_(self.decay).add_(v.detach(), alpha=1 - self.decay)
            else:
                self.shadow[k] = v.detach().clone()


def train_denoiser(
    corpus,
    cfg: DenoiserConfig,
    sched: NoiseSchedule,
    opts: TrainerOptions | None = None,
    progress_cb=None,
) -> TrainResult:
    """Train a denoiser on (image, caption) pairs; seed-reproducible.

    The schedule should be the dense training schedule; sampling later runs
    on a strided view of the same table.
    """
    opts = opts or TrainerOptions()
    torch.manual_seed(opts.seed)
    denoiser = Denoiser(cfg, sched=sched)
    images, ids = _prepare(corpus, denoiser)

    g = torch.Generator().manual_seed(opts.seed)
    n = len(images)
    n_val = min(max(1, int(round(n * opts.val_fraction))), n - 1) if n > 1 else 0
    perm = torch.randperm(n, generator=g)
    val_idx = perm[:n_val] if n_val else perm[:1]  # singleton corpus validates on itself
    train_idx = perm[n_val:] if n_val else perm
    x_val, ids_val = images[val_idx], ids[val_idx]
    x_train, ids_train = images[train_idx], ids[train_idx]

    baseline = eval_loss(denoiser, x_val, ids_val, sched, seed=opts.seed + 1)

    denoiser.modules.train()
    optim = torch.optim.Adam(denoiser.parameters(), lr=opts.lr)
    ema = _Ema(denoiser.modules, opts.ema_decay) if opts.ema_decay else None
    history: list[dict] = []
    window: list[float] = []
    for step in range(1, opts.steps + 1):
        sel = torch.randint(len(x_train), (opts.batch_size,), generator=g)
        t_idx = torch.randint(1, sched.T + 1, (opts.batch_size,), generator=g)
        eps = torch.randn((opts.batch_size, *images.shape[1:]), generator=g)
        z = _noise_batch(x_train[sel], eps, t_idx, sched)
        pooled = denoiser.cond.pool(ids_train[sel])
        drop = torch.rand(opts.batch_size, generator=g) < opts.cond_dropout
        pooled = torch.where(drop[:, None], torch.zeros_like(pooled), pooled)
        raw_t = torch.from_numpy(sched.raw_t[t_idx.numpy()]).float()
        pred = denoiser.eps(z, raw_t, pooled)
        loss = F.mse_loss(pred, eps)
        optim.zero_grad()
        loss.backward()
        optim.step()
        if ema is not None:
            ema.update(denoiser.modules)
        window.append(loss.item())
        if step % opts.log_every == 0 or step == opts.steps:
            avg = float(np.mean(window))
            history.append({"step": step, "loss": avg})
            log.info("step %d loss %.5f", step, avg)
            window = []
            if progress_cb is not None:
                progress_cb(step, denoiser)

    if ema is not None:
        denoiser.modules.load_state_dict(ema.shadow)
    denoiser.modules.eval()
    held_out = eval_loss(denoiser, x_val, ids_val, sched, seed=opts.seed + 1)
    denoiser.train_meta = {
        "seed": opts.seed,
        "steps": opts.steps,
        "batch_size": opts.batch_size,
        "lr": opts.lr,
        "cond_dropout": opts.cond_dropout,
        "ema_decay": opts.ema_decay,
        "held_out_loss": held_out,
        "baseline_loss": baseline,
        "corpus_size": n,
    }
    return TrainResult(
        denoiser=denoiser, history=history, held_out_loss=held_out, baseline_loss=baseline
    )
