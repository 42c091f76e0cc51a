"""Train the pilot denoiser checkpoint used by the test fixtures.

One-time run; the resulting checkpoint is committed under
tests/fixtures/pilot/. Intermediate checkpoints land in .pilot_cache/ so a
partially trained model is usable while training continues.
"""

import argparse
import logging
import time
from pathlib import Path

import torch

from dragkit.bench.corpus import CorpusSpec, gen_corpus
from dragkit.denoiser import DenoiserConfig, save_denoiser
from dragkit.schedule import make_schedule
from dragkit.train import TrainerOptions, train_denoiser

PILOT_CORPUS_SEED = 42
PILOT_CORPUS_SIZE = 4096


def pilot_config() -> DenoiserConfig:
    return DenoiserConfig(
        image_size=32,
        base_channels=32,
        channel_multipliers=(1, 2, 4),
        attention_levels=(1, 2),
        num_res_blocks=1,
        embed_dim=64,
        num_heads=4,
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--batch", type=int, default=48)
    ap.add_argument("--lr", type=float, default=3e-4)
    ap.add_argument("--out", default="tests/fixtures/pilot/denoiser.pt")
    ap.add_argument("--cache", default=".pilot_cache")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(2)
    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    spec = CorpusSpec(image_size=32, two_object_fraction=0.25)
    records = gen_corpus(PILOT_CORPUS_SIZE, seed=PILOT_CORPUS_SEED, spec=spec)
    corpus = [(rec.render(), rec.caption) for rec in records]
    logging.info("corpus ready: %d scenes in %.1fs", len(corpus), time.time() - t0)

    sched = make_schedule(1000)
    opts = TrainerOptions(
        steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        cond_dropout=0.1,
        seed=0,
        log_every=100,
        ema_decay=0.999,
    )

    def save_intermediate(step, denoiser):
        if step % 500 == 0:
            save_denoiser(denoiser, cache / "denoiser_partial.pt")

    result = train_denoiser(corpus, pilot_config(), sched, opts, progress_cb=save_intermediate)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_denoiser(result.denoiser, out)
    logging.info(
        "done in %.1f min: held-out %.5f vs baseline %.5f -> %s",
        (time.time() - t0) / 60,
        result.held_out_loss,
        result.baseline_loss,
        out,
    )
    (cache / "train_history.txt").write_text(
        "\n".join(f"{h['step']} {h['loss']:.6f}" for h in result.history) + "\n"
    )


if __name__ == "__main__":
    main()
