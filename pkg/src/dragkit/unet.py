"""Conditional attention U-Net used for noise prediction.

The network is deliberately small (three resolution levels) but keeps the
two structural features the rest of the system depends on: named feature
taps on every block output, and self-attention layers whose keys/values can
be captured into, or overridden from, an external store. The encoder path
is factored out so the quality discriminator can reuse it verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


class BankMissError(KeyError):
    """Raised when an attention override has no entry for a layer."""


@dataclass
class AttentionControl:
    """Carries K/V capture or override state through one forward pass.

    mode "capture" records each attention layer's keys/values (batch must
    be 1); mode "override" replaces them with stored tensors. ``layers``
    restricts which layer ids participate in an override (None = every id
    present in the store participates, and a configured layer with no entry
    is a hard miss, never a silent fallback).
    """

    mode: str
    store: dict[str, tuple[torch.Tensor, torch.Tensor]] = field(default_factory=dict)
    layers: set[str] | None = None

    def process(self, layer_id: str, k: torch.Tensor, v: torch.Tensor):
        if self.mode == "capture":
            if k.shape[0] != 1:
                raise ValueError("attention capture requires batch size 1")
            self.store[layer_id] = (k.detach()[0].clone(), v.detach()[0].clone())
            return k, v
        if self.mode == "override":
            if self.layers is not None and layer_id not in self.layers:
                return k, v
            if layer_id not in self.store:
                if self.layers is None:
                    return k, v
                raise BankMissError(f"no stored K/V for attention layer {layer_id!r}")
            k0, v0 = self.store[layer_id]
            b = k.shape[0]
            return (
                k0.unsqueeze(0).expand(b, -1, -1).to(k.dtype),
                v0.unsqueeze(0).expand(b, -1, -1).to(v.dtype),
            )
        raise ValueError(f"unknown attention control mode {self.mode!r}")


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, num_heads: int) -> torch.Tensor:
    """Multi-head attention over (B, N, C) tensors; K/V may differ in length."""
    b, n, c = q.shape
    hd = c // num_heads
    if c % num_heads:
        raise ValueError(f"channels {c} not divisible by {num_heads} heads")

    def split(x):
        return x.reshape(b, x.shape[1], num_heads, hd).permute(0, 2, 1, 3)

    qh, kh, vh = split(q), split(k), split(v)
    attn = torch.softmax(qh @ kh.transpose(-1, -2) / math.sqrt(hd), dim=-1)
    out = attn @ vh
    return out.permute(0, 2, 1, 3).reshape(b, n, c)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, num_heads: int, layer_id: str):
        super().__init__()
        self.layer_id = layer_id
        self.num_heads = num_heads
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_k = nn.Linear(channels, channels)
        self.to_v = nn.Linear(channels, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, ctrl: AttentionControl | None = None) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q, k, v = self.to_q(tokens), self.to_k(tokens), self.to_v(tokens)
        if ctrl is not None:
            k, v = ctrl.process(self.layer_id, k, v)
        out = scaled_dot_attention(q, k, v, self.num_heads)
        out = self.proj(out).transpose(1, 2).reshape(b, c, h, w)
        return x + out


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.emb_proj(F.silu(emb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0,
                       dtype: torch.dtype = torch.float32) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=dtype) / half)
    args = t.to(dtype)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class UNet(nn.Module):
    """Three-ish level U-Net with per-block taps and controllable attention.

    Tap ids: "enc{i}", "mid", "dec{i}" name each block's output feature map.
    Attention layer ids: "enc{i}.attn", "mid.attn", "dec{i}.attn".
    """

    def __init__(
        self,
        in_channels: int,
        base_channels: int,
        channel_multipliers: tuple[int, ...],
        attention_levels: tuple[int, ...],
        num_res_blocks: int,
        emb_dim: int,
        num_heads: int,
    ):
        super().__init__()
        levels = len(channel_multipliers)
        widths = [base_channels * m for m in channel_multipliers]
        self.levels = levels
        self.attention_levels = tuple(attention_levels)
        self.num_heads = num_heads
        self.emb_dim = emb_dim

        self.stem = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.enc_res = nn.ModuleList()
        self.enc_attn = nn.ModuleDict()
        self.downs = nn.ModuleList()
        c_prev = widths[0]
        for i, c in enumerate(widths):
            blocks = nn.ModuleList()
            for j in range(num_res_blocks):
                blocks.append(ResBlock(c_prev if j == 0 else c, c, emb_dim))
            self.enc_res.append(blocks)
            if i in attention_levels:
                self.enc_attn[str(i)] = SelfAttention2d(c, num_heads, f"enc{i}.attn")
            if i < levels - 1:
                self.downs.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            c_prev = c

        cm = widths[-1]
        self.mid_res1 = ResBlock(cm, cm, emb_dim)
        self.mid_attn = SelfAttention2d(cm, num_heads, "mid.attn")
        self.mid_res2 = ResBlock(cm, cm, emb_dim)

        self.dec_res = nn.ModuleList()
        self.dec_attn = nn.ModuleDict()
        self.ups = nn.ModuleList()
        dec_levels = list(reversed(range(levels)))
        for i in dec_levels:
            c = widths[i]
            # incoming width: mid output at the deepest level, otherwise the
            # up conv below already mapped to this level's width
            incoming = cm if i == levels - 1 else c
            blocks = nn.ModuleList()
            for j in range(num_res_blocks):
                blocks.append(ResBlock(incoming + c if j == 0 else c, c, emb_dim))
            self.dec_res.append(blocks)
            if i in attention_levels:
                self.dec_attn[str(i)] = SelfAttention2d(c, num_heads, f"dec{i}.attn")
            if i > 0:
                self.ups.append(nn.Conv2d(c, widths[i - 1], 3, padding=1))
        self._dec_levels = dec_levels

        self.out_norm = nn.GroupNorm(min(8, widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], in_channels, 3, padding=1)

    @property
    def tap_ids(self) -> tuple[str, ...]:
        ids = [f"enc{i}" for i in range(self.levels)] + ["mid"]
        ids += [f"dec{i}" for i in self._dec_levels]
        return tuple(ids)

    @property
    def decoder_attention_ids(self) -> tuple[str, ...]:
        return tuple(f"dec{i}.attn" for i in self._dec_levels if str(i) in self.dec_attn)

    @property
    def attention_ids(self) -> tuple[str, ...]:
        enc = tuple(f"enc{i}.attn" for i in range(self.levels) if str(i) in self.enc_attn)
        return enc + ("mid.attn",) + self.decoder_attention_ids

    def encode(self, x, emb, ctrl=None, taps=None):
        """Encoder + middle path, shared with the quality discriminator."""
        h = self.stem(x)
        skips = []
        for i in range(self.levels):
            for block in self.enc_res[i]:
                h = block(h, emb)
            if str(i) in self.enc_attn:
                h = self.enc_attn[str(i)](h, ctrl)
            if taps is not None:
                taps[f"enc{i}"] = h
            skips.append(h)
            if i < self.levels - 1:
                h = self.downs[i](h)
        h = self.mid_res1(h, emb)
        h = self.mid_attn(h, ctrl)
        h = self.mid_res2(h, emb)
        if taps is not None:
            taps["mid"] = h
        return h, skips

    def decode(self, h, skips, emb, ctrl=None, taps=None, stop_at: str | None = None):
        for pos, i in enumerate(self._dec_levels):
            h = torch.cat([h, skips[i]], dim=1)
            for block in self.dec_res[pos]:
                h = block(h, emb)
            if str(i) in self.dec_attn:
                h = self.dec_attn[str(i)](h, ctrl)
            if taps is not None:
                taps[f"dec{i}"] = h
            if stop_at == f"dec{i}":
                return None
            if i > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.ups[pos](h)
        return self.out_conv(F.silu(self.out_norm(h)))

    def forward(self, x, emb, ctrl: AttentionControl | None = None, taps: dict | None = None):
        h, skips = self.encode(x, emb, ctrl, taps)
        return self.decode(h, skips, emb, ctrl, taps)
