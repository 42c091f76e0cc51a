"""Train the pilot fidelity discriminator from the checked-in desk dataset."""

import argparse
import logging
import time

import torch

from dragkit.denoiser import load_denoiser
from dragkit.quality import (
    DiscriminatorOptions,
    evaluate_auc,
    load_fidelity_dataset,
    save_quality_model,
    train_discriminator,
)
from dragkit.schedule import default_schedule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="tests/fixtures/pilot/fidelity_data")
    ap.add_argument("--denoiser", default="tests/fixtures/pilot/denoiser.pt")
    ap.add_argument("--out", default="tests/fixtures/pilot/quality.pt")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(2)
    t0 = time.time()
    sched = default_schedule(50)
    den = load_denoiser(args.denoiser, sched=sched)
    dataset = load_fidelity_dataset(args.data)
    logging.info("dataset: %d examples", len(dataset))
    opts = DiscriminatorOptions(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed, log_every=25
    )
    model = train_discriminator(dataset, den, sched, opts)
    save_quality_model(model, args.out)
    logging.info(
        "done in %.1f min: held-out AUC %.4f -> %s",
        (time.time() - t0) / 60,
        model.train_meta["held_out_auc"],
        args.out,
    )


if __name__ == "__main__":
    main()
