"""Timestep-conditional fidelity discriminator and the quality energy.

The discriminator reuses the denoiser's encoder path: stem, down blocks and
embeddings are frozen copies of the source checkpoint, the middle block and
a linear head are fine-tuned. Training noises each example to a uniformly
drawn timestep and minimizes the canonical real/fake cross-entropy with
high-fidelity examples as the real class.

The quality energy is the density ratio d/(1-d); it is computed in logit
space (exp of the clamped logit), which is algebraically the same as
clamping d to [1e-4, 1-1e-4] first but keeps log(energy) == logit exact.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .bench.corpus import SceneRecord, to_model_space
from .denoiser import Denoiser, DenoiserConfig
from .schedule import LatentState, NoiseSchedule
from .train import _noise_batch
from .unet import UNet, timestep_embedding

log = logging.getLogger(__name__)

QUALITY_FORMAT = "dragkit-quality/1"
D_CLAMP = 1e-4
LOGIT_CLAMP = float(np.log((1.0 - D_CLAMP) / D_CLAMP))

_TRUNK_PREFIXES = ("unet.stem", "unet.enc_res", "unet.enc_attn", "unet.downs", "time_mlp", "cond")
_TUNABLE_PREFIXES = ("unet.mid_res1", "unet.mid_attn", "unet.mid_res2", "head")


def state_fingerprint(state: dict) -> str:
    buf = io.BytesIO()
    torch.save({k: state[k] for k in sorted(state)}, buf)
    return hashlib.sha256(buf.getvalue()).hexdigest()


@dataclass
class FidelityExample:
    image: np.ndarray  # uint8 (H, W, 3)
    caption: str
    label: str  # "high" | "low"
    provenance: str  # "real-corpus" | "degraded-edit"
    seed: int = 0
    drag: dict | None = None

    def __post_init__(self):
        if self.label not in ("high", "low"):
            raise ValueError(f"label must be high|low, got {self.label!r}")


class QualityModel:
    """Conditional discriminator d(z_t | y; t) over noisy latents."""

    def __init__(self, denoiser: Denoiser):
        self.config = denoiser.config
        self.vocab = denoiser.config.vocabulary
        self.sched = denoiser.sched
        src = Denoiser(denoiser.config, sched=denoiser.sched)
        src.load_state_dict(denoiser.state_dict())
        self.base = src
        cm = denoiser.config.base_channels * denoiser.config.channel_multipliers[-1]
        self.head = nn.Sequential(nn.GroupNorm(min(8, cm), cm), nn.SiLU(), nn.AdaptiveAvgPool2d(1),
                                  nn.Flatten(), nn.Linear(cm, 1))
        # zero-init: an untrained discriminator outputs d = 0.5 everywhere
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)
        self._all = nn.ModuleDict({"base": self.base.modules, "head": self.head})
        self._all.eval()
        for name, p in self._all.named_parameters():
            p.requires_grad_(self._is_tunable(name))
        self.train_meta: dict = {}

    @staticmethod
    def _is_tunable(param_name: str) -> bool:
        name = param_name.replace("base.", "", 1) if param_name.startswith("base.") else param_name
        return name.startswith(_TUNABLE_PREFIXES)

    def trunk_state(self) -> dict:
        return {
            k: v.detach().clone()
            for k, v in self.base.modules.state_dict().items()
            if k.startswith(_TRUNK_PREFIXES)
        }

    def trunk_fingerprint(self) -> str:
        return state_fingerprint(self.trunk_state())

    def tunable_parameters(self):
        return [p for p in self._all.parameters() if p.requires_grad]

    def logit(self, batch: torch.Tensor, raw_t: torch.Tensor, pooled: torch.Tensor) -> torch.Tensor:
        """(B,) pre-sigmoid logits; trunk runs under no_grad when frozen."""
        emb = self.base.embedding(raw_t, pooled)
        h = self.base.unet.stem(batch)
        with torch.no_grad():
            for i in range(self.base.unet.levels):
                for block in self.base.unet.enc_res[i]:
                    h = block(h, emb)
                if str(i) in self.base.unet.enc_attn:
                    h = self.base.unet.enc_attn[str(i)](h)
                if i < self.base.unet.levels - 1:
                    h = self.base.unet.downs[i](h)
        h = self.base.unet.mid_res1(h, emb)
        h = self.base.unet.mid_attn(h)
        h = self.base.unet.mid_res2(h, emb)
        return self.head(h).squeeze(-1)

    def logit_grad(self, batch: torch.Tensor, raw_t: torch.Tensor, pooled: torch.Tensor) -> torch.Tensor:
        """Logit with full gradient flow through the trunk (guidance path)."""
        emb = self.base.embedding(raw_t, pooled)
        h, _ = self.base.unet.encode(batch, emb)
        return self.head(h).squeeze(-1)

    def _pooled(self, caption: str | None) -> torch.Tensor:
        return self.base.embed_prompt(caption).unsqueeze(0)

    def discriminate(self, z: LatentState, caption: str | None, t: int | None = None) -> float:
        index = z.t if t is None else t
        raw_t = torch.tensor([float(self.sched.raw_t[index])])
        with torch.no_grad():
            logit = self.logit(z.data.unsqueeze(0), raw_t, self._pooled(caption))
        return float(torch.sigmoid(logit)[0])

    def logit_t(self, z: LatentState, caption: str | None) -> torch.Tensor:
        """Differentiable raw logit at the latent's timestep."""
        raw_t = torch.tensor([float(self.sched.raw_t[z.t])])
        return self.logit_grad(z.data.unsqueeze(0), raw_t, self._pooled(caption))[0]

    def quality_energy_t(self, z: LatentState, caption: str | None) -> torch.Tensor:
        """Differentiable density ratio d/(1-d) at the latent's timestep."""
        return torch.exp(torch.clamp(self.logit_t(z, caption), -LOGIT_CLAMP, LOGIT_CLAMP))

    def state_dict(self) -> dict:
        return self._all.state_dict()

    def load_state_dict(self, state: dict):
        self._all.load_state_dict(state)


def quality_energy(z: LatentState, caption: str | None, t: int, model: QualityModel) -> float:
    """Density ratio d/(1-d) with d clamped away from the singular ends."""
    raw_t = torch.tensor([float(model.sched.raw_t[t])])
    with torch.no_grad():
        logit = model.logit(z.data.unsqueeze(0), raw_t, model._pooled(caption))[0]
    return float(torch.exp(torch.clamp(logit, -LOGIT_CLAMP, LOGIT_CLAMP)))


# -- dataset construction --------------------------------------------------


def random_drag(rec: SceneRecord, rng: np.random.Generator):
    """Sample a drag on one of the scene's objects, with a capsule editable mask."""
    from .guidance import DragPair, DragSpec, capsule_mask  # local import to avoid a cycle

    size = rec.image_size
    obj = rec.objects[int(rng.integers(len(rec.objects)))]
    hx, hy = obj.center
    angle = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(0.15, 0.45) * size
    tx = float(np.clip(hx + length * np.cos(angle), 1, size - 2))
    ty = float(np.clip(hy + length * np.sin(angle), 1, size - 2))
    mask = capsule_mask(size, size, (hx, hy), (tx, ty), obj.radius_px(size) + 3.0)
    return DragSpec(pairs=[DragPair(handle=(hx, hy), target=(tx, ty))], editable_mask=mask), obj


def build_fidelity_dataset(
    records: list[SceneRecord],
    editor,
    scorer,
    threshold: float,
    n_pairs: int,
    seed: int = 0,
    max_attempts: int | None = None,
) -> tuple[list[FidelityExample], list[str]]:
    """Bootstrap high/low pairs by scoring random-drag edits of real scenes.

    ``editor(record, drag_spec, seed) -> uint8 image`` runs the
    editing-guidance-only pipeline; ``scorer(image, objects) -> float`` is
    the structural fidelity scorer. An edit scoring under the threshold
    becomes a low example and its source image the paired high example.
    """
    rng = np.random.default_rng(seed)
    examples: list[FidelityExample] = []
    warnings: list[str] = []
    attempts = 0
    budget = max_attempts if max_attempts is not None else max(4 * n_pairs, 16)
    pairs = 0
    while pairs < n_pairs and attempts < budget:
        rec = records[int(rng.integers(len(records)))]
        edit_seed = int(rng.integers(2**31 - 1))
        attempts += 1
        drag, obj = random_drag(rec, rng)
        try:
            edited = editor(rec, drag, edit_seed)
        except Exception as exc:  # editor failures skip the image, never abort
            log.warning("editor failed on seed %d: %s", edit_seed, exc)
            continue
        score = scorer(edited, rec.objects)
        if score < threshold:
            drag_meta = {
                "handle": list(drag.pairs[0].handle),
                "target": list(drag.pairs[0].target),
                "object": {"shape": obj.shape, "color": obj.color},
                "score": score,
            }
            examples.append(
                FidelityExample(
                    image=edited, caption=rec.caption, label="low",
                    provenance="degraded-edit", seed=edit_seed, drag=drag_meta,
                )
            )
            examples.append(
                FidelityExample(
                    image=rec.render(), caption=rec.caption, label="high",
                    provenance="real-corpus", seed=rec.seed,
                )
            )
            pairs += 1
    if pairs < n_pairs:
        warnings.append(
            f"insufficient low-scoring edits: built {pairs}/{n_pairs} pairs in {attempts} attempts"
        )
    return examples, warnings


def save_fidelity_dataset(examples: list[FidelityExample], out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ex in enumerate(examples):
        name = f"ex_{i:05d}.png"
        Image.fromarray(ex.image).save(out / name)
        lines.append(
            json.dumps(
                {"image": name, "caption": ex.caption, "label": ex.label,
                 "provenance": ex.provenance, "seed": ex.seed, "drag": ex.drag}
            )
        )
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")


def load_fidelity_dataset(in_dir) -> list[FidelityExample]:
    out = []
    in_dir = Path(in_dir)
    for line in (in_dir / "manifest.jsonl").read_text().splitlines():
        meta = json.loads(line)
        img = np.asarray(Image.open(in_dir / meta["image"]).convert("RGB"))
        out.append(
            FidelityExample(
                image=img, caption=meta["caption"], label=meta["label"],
                provenance=meta["provenance"], seed=meta["seed"], drag=meta.get("drag"),
            )
        )
    return out


# -- training ----------------------------------------------------------------


@dataclass
class DiscriminatorOptions:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    val_fraction: float = 0.2
    log_every: int = 20
    shuffle_labels: bool = False  # control experiments only


def auc_score(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with tie correction."""
    if len(scores_pos) == 0 or len(scores_neg) == 0:
        raise ValueError("AUC needs both classes")
    wins = 0.0
    for p in scores_pos:
        wins += np.sum(p > scores_neg) + 0.5 * np.sum(p == scores_neg)
    return float(wins / (len(scores_pos) * len(scores_neg)))


def _dataset_tensors(examples: list[FidelityExample], model: QualityModel):
    images = torch.stack([torch.from_numpy(to_model_space(ex.image)) for ex in examples])
    token_lists = [model.vocab.tokenize(ex.caption) for ex in examples]
    max_len = max(len(t) for t in token_lists)
    ids = torch.full((len(examples), max_len), model.vocab.null_id, dtype=torch.long)
    for i, toks in enumerate(token_lists):
        ids[i, : len(toks)] = torch.tensor(toks, dtype=torch.long)
    labels = torch.tensor([1.0 if ex.label == "high" else 0.0 for ex in examples])
    return images, ids, labels


def evaluate_auc(
    model: QualityModel,
    examples: list[FidelityExample],
    sched: NoiseSchedule,
    seed: int = 0,
    draws: int = 4,
) -> float:
    """Held-out AUC of mean discriminator score over seeded (t, eps) draws."""
    images, ids, labels = _dataset_tensors(examples, model)
    g = torch.Generator().manual_seed(seed)
    scores = torch.zeros(len(examples))
    with torch.no_grad():
        for _ in range(draws):
            t_idx = torch.randint(1, max(2, sched.T // 3), (len(examples),), generator=g)
            eps = torch.randn(images.shape, generator=g)
            z = _noise_batch(images, eps, t_idx, sched)
            raw_t = torch.from_numpy(sched.raw_t[t_idx.numpy()]).float()
            pooled = model.base.cond.pool(ids)
            scores += torch.sigmoid(model.logit(z, raw_t, pooled)) / draws
    s = scores.numpy()
    return auc_score(s[labels.numpy() == 1.0], s[labels.numpy() == 0.0])


def train_discriminator(
    dataset: list[FidelityExample],
    denoiser: Denoiser,
    sched: NoiseSchedule,
    opts: DiscriminatorOptions | None = None,
) -> QualityModel:
    """Train the conditional discriminator; trunk stays frozen throughout."""
    opts = opts or DiscriminatorOptions()
    n_high = sum(ex.label == "high" for ex in dataset)
    n_low = len(dataset) - n_high
    if n_high == 0 or n_low == 0 or n_high != n_low:
        raise ValueError(f"dataset must be balanced, got {n_high} high / {n_low} low")
    torch.manual_seed(opts.seed)
    model = QualityModel(denoiser)
    images, ids, labels = _dataset_tensors(dataset, model)
    g = torch.Generator().manual_seed(opts.seed)
    if opts.shuffle_labels:
        labels = labels[torch.randperm(len(labels), generator=g)]

    # stratified split: the held-out set keeps both classes at any size
    half_val = max(1, int(round(len(dataset) * opts.val_fraction / 2)))
    all_hi = torch.nonzero(labels == 1.0).flatten()
    all_lo = torch.nonzero(labels == 0.0).flatten()
    all_hi = all_hi[torch.randperm(len(all_hi), generator=g)]
    all_lo = all_lo[torch.randperm(len(all_lo), generator=g)]
    val_idx = torch.cat([all_hi[:half_val], all_lo[:half_val]])
    hi_idx, lo_idx = all_hi[half_val:], all_lo[half_val:]
    if len(hi_idx) == 0 or len(lo_idx) == 0:
        raise ValueError("train split lost a class; dataset too small")
    train_idx = torch.cat([hi_idx, lo_idx])

    trunk_before = model.trunk_fingerprint()
    optim = torch.optim.Adam(model.tunable_parameters(), lr=opts.lr)
    model._all.train()
    steps_per_epoch = max(1, len(train_idx) // opts.batch_size)
    half = opts.batch_size // 2
    step = 0
    for epoch in range(opts.epochs):
        for _ in range(steps_per_epoch):
            sel = torch.cat(
                [
                    hi_idx[torch.randint(len(hi_idx), (half,), generator=g)],
                    lo_idx[torch.randint(len(lo_idx), (half,), generator=g)],
                ]
            )
            t_idx = torch.randint(1, sched.T + 1, (len(sel),), generator=g)
            eps = torch.randn((len(sel), *images.shape[1:]), generator=g)
            z = _noise_batch(images[sel], eps, t_idx, sched)
            raw_t = torch.from_numpy(sched.raw_t[t_idx.numpy()]).float()
            pooled = model.base.cond.pool(ids[sel])
            logits = model.logit(z, raw_t, pooled)
            loss = F.binary_cross_entropy_with_logits(logits, labels[sel])
            optim.zero_grad()
            loss.backward()
            optim.step()
            step += 1
            if step % opts.log_every == 0:
                log.info("disc epoch %d step %d loss %.4f", epoch, step, loss.item())
    model._all.eval()
    if model.trunk_fingerprint() != trunk_before:
        raise RuntimeError("frozen trunk changed during training")
    val_examples = [dataset[i] for i in val_idx.tolist()]
    model.train_meta = {
        "seed": opts.seed,
        "epochs": opts.epochs,
        "lr": opts.lr,
        "batch_size": opts.batch_size,
        "val_indices": val_idx.tolist(),
        "held_out_auc": evaluate_auc(model, val_examples, sched, seed=opts.seed + 7),
        "shuffled_labels": opts.shuffle_labels,
    }
    return model


def save_quality_model(model: QualityModel, path):
    torch.save(
        {
            "format": QUALITY_FORMAT,
            "config": {
                **{k: v for k, v in model.config.__dict__.items()},
            },
            "state_dict": model.state_dict(),
            "train_meta": model.train_meta,
        },
        path,
    )


def load_quality_model(path, denoiser: Denoiser) -> QualityModel:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != QUALITY_FORMAT:
        raise ValueError("unsupported quality checkpoint format")
    saved_cfg = payload["config"]
    for key in ("image_size", "base_channels"):
        if saved_cfg[key] != getattr(denoiser.config, key):
            raise ValueError(
                f"quality checkpoint {key}={saved_cfg[key]} mismatches denoiser {getattr(denoiser.config, key)}"
            )
    model = QualityModel(denoiser)
    model.load_state_dict(payload["state_dict"])
    model.train_meta = payload.get("train_meta", {})
    return model
