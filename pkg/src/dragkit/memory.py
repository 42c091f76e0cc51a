"""Inversion memory bank: per-timestep latents and decoder attention K/V.

The bank is written once while inverting an image under its source prompt
and is immutable afterwards. During sampling the generation branch reads
the same timestep's entry to (a) recompute guidance features from the
recorded latent and (b) replace decoder self-attention keys/values.

Timestep convention: the inversion step from index t to t+1 evaluates the
denoiser at the destination index t+1, and the resulting state plus the
K/V captured in that forward pass are stored under t+1. A sampling step at
index t therefore replays K/V that were computed with the same time
embedding, one half-step apart in latent space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType

import torch

from .denoiser import Denoiser
from .schedule import LatentState, NoiseSchedule, ddim_invert_step
from .unet import AttentionControl, BankMissError, scaled_dot_attention


class InversionError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class BankEntry:
    z_gud: torch.Tensor  # (C, H, W) latent recorded at this timestep
    snapshots: dict[str, tuple[torch.Tensor, torch.Tensor]]  # layer_id -> (K, V)


@dataclass
class MemoryBank:
    source_prompt: str | None
    num_heads: int
    layer_ids: tuple[str, ...]
    _entries: dict[int, BankEntry] = field(default_factory=dict)
    _sealed: bool = False

    @property
    def entries(self):
        return MappingProxyType(self._entries)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def timesteps(self) -> tuple[int, ...]:
        return tuple(sorted(self._entries))

    def add_entry(self, t: int, entry: BankEntry):
        if self._sealed:
            raise RuntimeError("memory bank is sealed; mutation rejected")
        self._entries[t] = entry

    def seal(self):
        self._sealed = True

    def entry(self, t: int) -> BankEntry:
        if t not in self._entries:
            raise BankMissError(f"memory bank has no entry for timestep {t}")
        return self._entries[t]

    def override_ctrl(self, t: int, layers: tuple[str, ...] | None = None) -> AttentionControl:
        """Attention control replaying this bank's K/V at timestep t.

        Every requested layer must be covered; a configured layer with no
        snapshot fails fast rather than silently falling back.
        """
        if not self._sealed:
            raise RuntimeError("memory bank must be sealed before replay")
        entry = self.entry(t)
        wanted = tuple(layers) if layers is not None else self.layer_ids
        missing = [lid for lid in wanted if lid not in entry.snapshots]
        if missing:
            raise BankMissError(f"no stored K/V at t={t} for layers {missing}")
        return AttentionControl(
            mode="override",
            store={lid: entry.snapshots[lid] for lid in wanted},
            layers=set(wanted),
        )


def record_inversion(
    x0: torch.Tensor,
    source_prompt: str | None,
    sched: NoiseSchedule,
    denoiser: Denoiser,
    layers: tuple[str, ...] | None = None,
    refine_steps: int = 1,
) -> tuple[LatentState, MemoryBank]:
    """Invert a clean image to z_T, recording one bank entry per visited step.

    Each step solves the implicit inversion equation by fixed-point
    iteration: the first eps estimate comes from the current state, then
    ``refine_steps`` re-evaluations at the provisional destination tighten
    it. The K/V snapshots are taken from the final (refined) forward pass,
    which is the one the sampling branch's own forward most closely
    mirrors. ``layers`` restricts which attention layers are banked
    (default: all decoder self-attention layers).
    """
    if x0.dim() != 3:
        raise ValueError("x0 must be (C, H, W)")
    if refine_steps < 0:
        raise ValueError("refine_steps must be >= 0")
    layer_ids = tuple(layers) if layers is not None else denoiser.unet.decoder_attention_ids
    bank = MemoryBank(source_prompt=source_prompt, num_heads=denoiser.config.num_heads, layer_ids=layer_ids)
    z = LatentState(data=x0.clone(), t=0, cond=source_prompt)
    with torch.no_grad():
        for t in range(sched.T):
            ctrl = AttentionControl(mode="capture")
            eps, _, _ = denoiser.predict_noise(z, source_prompt, attn_ctrl=ctrl, t_index=t + 1)
            z_next = ddim_invert_step(z, eps, sched)
            for _ in range(refine_steps):
                ctrl = AttentionControl(mode="capture")
                eps, _, _ = denoiser.predict_noise(
                    z_next, source_prompt, attn_ctrl=ctrl, t_index=t + 1
                )
                z_next = ddim_invert_step(z, eps, sched)
            if not torch.isfinite(z_next.data).all():
                raise InversionError(
                    f"non-finite latent while inverting step {t} -> {t + 1}",
                    diagnostics={
                        "t": t,
                        "z_norm": float(torch.norm(z.data)),
                        "eps_norm": float(torch.norm(eps)),
                    },
                )
            snapshots = {lid: kv for lid, kv in ctrl.store.items() if lid in layer_ids}
            bank.add_entry(t + 1, BankEntry(z_gud=z_next.data.clone(), snapshots=snapshots))
            z = z_next
    bank.seal()
    return z, bank


def kv_override(layer_id: str, t: int, gen_queries: torch.Tensor, bank: MemoryBank) -> torch.Tensor:
    """Attention output with generation-branch queries and banked K/V."""
    entry = bank.entry(t)
    if layer_id not in entry.snapshots:
        raise BankMissError(f"no stored K/V at t={t} for layer {layer_id!r}")
    k, v = entry.snapshots[layer_id]
    q = gen_queries
    squeeze = q.dim() == 2
    if squeeze:
        q = q.unsqueeze(0)
    out = scaled_dot_attention(q, k.unsqueeze(0).expand(q.shape[0], -1, -1),
                               v.unsqueeze(0).expand(q.shape[0], -1, -1), bank.num_heads)
    return out[0] if squeeze else out


def save_bank(bank: MemoryBank, path):
    torch.save(
        {
            "format": "dragkit-bank/1",
            "source_prompt": bank.source_prompt,
            "num_heads": bank.num_heads,
            "layer_ids": list(bank.layer_ids),
            "entries": {
                t: {"z_gud": e.z_gud, "snapshots": e.snapshots} for t, e in bank.entries.items()
            },
        },
        path,
    )


def load_bank(path) -> MemoryBank:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != "dragkit-bank/1":
        raise ValueError("unsupported bank format")
    bank = MemoryBank(
        source_prompt=payload["source_prompt"],
        num_heads=payload["num_heads"],
        layer_ids=tuple(payload["layer_ids"]),
    )
    for t, e in payload["entries"].items():
        bank.add_entry(int(t), BankEntry(z_gud=e["z_gud"], snapshots=e["snapshots"]))
    bank.seal()
    return bank
