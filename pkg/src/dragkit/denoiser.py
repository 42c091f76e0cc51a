"""Noise-prediction model: config, prompt conditioning, taps, checkpointing.

Conditioning is a learned token table mean-pooled over the caption, added to
the sinusoidal time embedding. The null condition is the all-zero embedding
(the reserved null token's row is masked to zero), and the token table is
zero-initialized, so an untrained prompt conditions exactly like the null
prompt; classifier-free guidance training replaces the pooled caption vector
with that zero vector at the configured dropout rate.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .schedule import LatentState, NoiseSchedule, default_schedule
from .unet import AttentionControl, UNet, timestep_embedding
from .vocab import NULL_TOKEN, Vocabulary, default_vocabulary

CHECKPOINT_FORMAT = "dragkit-denoiser/1"


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 64
    in_channels: int = 3
    base_channels: int = 64
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    attention_levels: tuple[int, ...] = (1, 2)
    num_res_blocks: int = 2
    embed_dim: int = 96
    num_heads: int = 4
    vocab: tuple[str, ...] = field(default_factory=lambda: default_vocabulary().words)

    def __post_init__(self):
        levels = len(self.channel_multipliers)
        if any(a < 0 or a >= levels for a in self.attention_levels):
            raise ValueError("attention_levels outside existing levels")
        if not self.attention_levels:
            raise ValueError("at least one level must carry self-attention")
        if NULL_TOKEN not in self.vocab:
            raise ValueError(f"vocab must reserve {NULL_TOKEN}")
        if self.image_size % (2 ** (levels - 1)):
            raise ValueError("image_size must be divisible by the downsampling factor")

    @property
    def vocabulary(self) -> Vocabulary:
        return Vocabulary(words=tuple(self.vocab))


@dataclass
class FeatureMap:
    layer_id: str
    t: int
    values: torch.Tensor  # (C, h, w)

    def __post_init__(self):
        if not torch.isfinite(self.values).all():
            raise ValueError(f"feature map {self.layer_id} contains non-finite values")


@dataclass
class AttentionSnapshot:
    layer_id: str
    t: int
    keys: torch.Tensor  # (tokens, dim)
    values_kv: torch.Tensor  # (tokens, dim)

    def __post_init__(self):
        if self.keys.shape[0] != self.values_kv.shape[0]:
            raise ValueError("keys and values disagree in token count")


class ConditionEncoder(nn.Module):
    """Token table + mean pooling + projection into the embedding stream."""

    def __init__(self, vocab_size: int, null_id: int, embed_dim: int, out_dim: int):
        super().__init__()
        self.null_id = null_id
        self.table = nn.Embedding(vocab_size, embed_dim)
        nn.init.zeros_(self.table.weight)
        self.mlp = nn.Sequential(nn.Linear(embed_dim, out_dim), nn.SiLU(), nn.Linear(out_dim, out_dim))

    def pool(self, token_ids: torch.Tensor) -> torch.Tensor:
        """Masked mean over tokens; null tokens (incl. padding) are ignored."""
        emb = self.table(token_ids)
        mask = (token_ids != self.null_id).float().unsqueeze(-1)
        return (emb * mask).sum(dim=-2) / mask.sum(dim=-2).clamp(min=1.0)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.mlp(pooled)


class Denoiser:
    """A loaded noise-prediction model bound to a sampling schedule."""

    def __init__(self, config: DenoiserConfig, sched: NoiseSchedule | None = None):
        self.config = config
        self.vocab = config.vocabulary
        self.sched = sched if sched is not None else default_schedule()
        emb_dim = config.base_channels * 4
        self.unet = UNet(
            in_channels=config.in_channels,
            base_channels=config.base_channels,
            channel_multipliers=config.channel_multipliers,
            attention_levels=config.attention_levels,
            num_res_blocks=config.num_res_blocks,
            emb_dim=emb_dim,
            num_heads=config.num_heads,
        )
        self.cond = ConditionEncoder(len(self.vocab), self.vocab.null_id, config.embed_dim, emb_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(config.base_channels, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.modules = nn.ModuleDict(
            {"unet": self.unet, "cond": self.cond, "time_mlp": self.time_mlp}
        )
        self.modules.eval()
        self.train_meta: dict = {}

    # -- conditioning ---------------------------------------------------

    def tokenize(self, prompt: str | None) -> torch.Tensor:
        if prompt is None or prompt == "":
            return torch.tensor([self.vocab.null_id], dtype=torch.long)
        return torch.tensor(self.vocab.tokenize(prompt), dtype=torch.long)

    def embed_prompt(self, prompt: str | None) -> torch.Tensor:
        """Pooled caption embedding; the null condition is exactly zero."""
        return self.cond.pool(self.tokenize(prompt))

    def embedding(self, raw_t: torch.Tensor, pooled: torch.Tensor) -> torch.Tensor:
        dtype = self.time_mlp[0].weight.dtype
        temb = self.time_mlp(timestep_embedding(raw_t, self.config.base_channels, dtype=dtype))
        return temb + self.cond(pooled)

    # -- prediction ------------------------------------------------------

    def eps(
        self,
        batch: torch.Tensor,
        raw_t: torch.Tensor,
        pooled: torch.Tensor,
        ctrl: AttentionControl | None = None,
        taps: dict | None = None,
    ) -> torch.Tensor:
        """Batched raw forward pass (B, C, H, W) at raw training timesteps."""
        return self.unet(batch, self.embedding(raw_t, pooled), ctrl=ctrl, taps=taps)

    def _raw_t(self, index: int) -> torch.Tensor:
        if not (1 <= index <= self.sched.T):
            raise ValueError(f"timestep index {index} outside [1, {self.sched.T}]")
        return torch.tensor([int(self.sched.raw_t[index])])

    def predict_noise(
        self,
        z: LatentState,
        prompt: str | None,
        taps: tuple[str, ...] = (),
        capture_attention: bool = False,
        attn_ctrl: AttentionControl | None = None,
        t_index: int | None = None,
    ) -> tuple[torch.Tensor, list[FeatureMap], list[AttentionSnapshot]]:
        """Predict noise for one latent; optionally return taps and K/V snapshots.

        ``t_index`` overrides the schedule index used for the time embedding
        (the inversion loop evaluates at the destination step's index).
        """
        index = z.t if t_index is None else t_index
        for tap in taps:
            if tap not in self.unet.tap_ids:
                raise ValueError(f"unknown tap id {tap!r}; known: {self.unet.tap_ids}")
        ctrl = attn_ctrl
        if capture_attention and ctrl is None:
            ctrl = AttentionControl(mode="capture")
        tap_store: dict | None = {} if taps else None
        pooled = self.embed_prompt(prompt).unsqueeze(0)
        eps = self.eps(z.data.unsqueeze(0), self._raw_t(index), pooled, ctrl=ctrl, taps=tap_store)
        features = [
            FeatureMap(layer_id=tap, t=index, values=tap_store[tap][0]) for tap in taps
        ] if tap_store is not None else []
        snaps: list[AttentionSnapshot] = []
        if capture_attention and ctrl is not None:
            snaps = [
                AttentionSnapshot(layer_id=lid, t=index, keys=k, values_kv=v)
                for lid, (k, v) in ctrl.store.items()
            ]
        return eps[0], features, snaps

    def cfg_predict(
        self,
        z: LatentState,
        prompt: str | None,
        null_prompt: str | None = None,
        w: float = 1.0,
        attn_ctrl: AttentionControl | None = None,
        taps: tuple[str, ...] = (),
    ):
        """Classifier-free guided prediction: eps(null) + w*(eps(prompt) - eps(null)).

        Returns (eps_hat, features) where features are taps from the
        conditional branch.
        """
        if w < 0:
            raise ValueError(f"guidance scale must be >= 0, got {w}")
        eps_c, feats, _ = self.predict_noise(z, prompt, taps=taps, attn_ctrl=attn_ctrl)
        if w == 1.0:
            return eps_c, feats
        eps_u, _, _ = self.predict_noise(z, null_prompt, attn_ctrl=attn_ctrl)
        if w == 0.0:
            return eps_u, feats
        return eps_u + w * (eps_c - eps_u), feats

    def extract_features(self, z: LatentState, prompt: str | None, layer: str) -> FeatureMap:
        """Convenience wrapper returning a single tap from predict_noise."""
        _, feats, _ = self.predict_noise(z, prompt, taps=(layer,))
        return feats[0]

    def features_to(
        self,
        z: LatentState,
        prompt: str | None,
        tap: str,
        attn_ctrl: AttentionControl | None = None,
    ) -> FeatureMap:
        """Feature extraction that truncates the forward pass at the tap.

        Values equal the corresponding predict_noise tap; the remaining
        decoder levels are simply never computed, which matters inside the
        per-step guidance gradient.
        """
        if tap not in self.unet.tap_ids:
            raise ValueError(f"unknown tap id {tap!r}; known: {self.unet.tap_ids}")
        pooled = self.embed_prompt(prompt).unsqueeze(0)
        emb = self.embedding(self._raw_t(z.t), pooled)
        store: dict = {}
        h, skips = self.unet.encode(z.data.unsqueeze(0), emb, ctrl=attn_ctrl, taps=store)
        if tap not in store:
            self.unet.decode(h, skips, emb, ctrl=attn_ctrl, taps=store, stop_at=tap)
        return FeatureMap(layer_id=tap, t=z.t, values=store[tap][0])

    # -- persistence -----------------------------------------------------

    def state_dict(self) -> dict:
        return self.modules.state_dict()

    def load_state_dict(self, state: dict):
        self.modules.load_state_dict(state)

    def parameters(self):
        return self.modules.parameters()

    def trunk_fingerprint(self) -> str:
        """Digest of the encoder-path weights (stem + enc + downs + mid + embeddings)."""
        buf = io.BytesIO()
        state = {
            k: v
            for k, v in self.modules.state_dict().items()
            if not k.startswith(("unet.dec_", "unet.ups", "unet.out_"))
        }
        torch.save({k: state[k] for k in sorted(state)}, buf)
        return hashlib.sha256(buf.getvalue()).hexdigest()


def save_denoiser(denoiser: Denoiser, path, train_meta: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(denoiser.config),
        "vocab": list(denoiser.config.vocab),
        "state_dict": denoiser.state_dict(),
        "train_meta": train_meta or denoiser.train_meta,
    }
    torch.save(payload, path)


def load_denoiser(path, sched: NoiseSchedule | None = None) -> Denoiser:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    fmt = payload.get("format")
    if fmt != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {fmt!r}")
    cfg_dict = dict(payload["config"])
    for key in ("channel_multipliers", "attention_levels", "vocab"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = DenoiserConfig(**cfg_dict)
    denoiser = Denoiser(config, sched=sched)
    denoiser.load_state_dict(payload["state_dict"])
    denoiser.train_meta = payload.get("train_meta", {})
    return denoiser
