"""Command-line entry points for training, data generation, editing, serving."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import yaml
from PIL import Image

from .bench.ablation import load_bench, make_bench, render_report, run_ablation, save_bench, save_report
from .bench.corpus import CorpusSpec, SceneRecord, gen_corpus, load_corpus, save_corpus
from .bench.detect import fidelity_score, scene_from_image
from .config import PipelineConfig, load_pipeline_config
from .denoiser import DenoiserConfig, load_denoiser, save_denoiser
from .guidance import DragPair, DragSpec
from .memory import load_bank, save_bank
from .pipeline import EditRequest, EditToggles, identity_intention, run_edit
from .quality import (
    DiscriminatorOptions,
    build_fidelity_dataset,
    load_fidelity_dataset,
    load_quality_model,
    save_fidelity_dataset,
    save_quality_model,
    train_discriminator,
)
from .reasoner import Intention, OracleBackend, RemoteBackend, SceneQuery, locate, reason, sample_intentions, select_intentions
from .train import TrainerOptions, train_denoiser


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose: bool):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )


def _load_points(points: str) -> list[DragPair]:
    payload = json.loads(Path(points).read_text()) if Path(points).exists() else json.loads(points)
    return [DragPair(handle=tuple(p["handle"]), target=tuple(p["target"])) for p in payload]


def _load_image(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def _pipeline_config(config: str | None) -> PipelineConfig:
    return load_pipeline_config(config) if config else PipelineConfig()


def _scene_for(image: np.ndarray, scene_path: str | None) -> SceneRecord:
    if scene_path:
        return SceneRecord.from_json(json.loads(Path(scene_path).read_text()))
    objects = scene_from_image(image)
    if not objects:
        raise click.ClickException("no palette objects detected; pass --scene metadata")
    return SceneRecord(image_size=image.shape[0], objects=objects)


@main.command("gen-corpus")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(), required=True)
@click.option("--image-size", type=int, default=32)
@click.option("--two-object-fraction", type=float, default=0.3)
def gen_corpus_cmd(n, seed, out, image_size, two_object_fraction):
    """Generate a captioned synthetic shapes corpus."""
    spec = CorpusSpec(image_size=image_size, two_object_fraction=two_object_fraction)
    records = gen_corpus(n, seed=seed, spec=spec)
    save_corpus(records, out)
    click.echo(f"wrote {n} scenes to {out}")


@main.command("train-denoiser")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML with DenoiserConfig fields")
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--steps", type=int, default=3000)
@click.option("--batch", type=int, default=64)
@click.option("--lr", type=float, default=2e-4)
@click.option("--cond-dropout", type=float, default=0.1)
@click.option("--ema-decay", type=float, default=None)
def train_denoiser_cmd(corpus, config_path, out, seed, steps, batch, lr, cond_dropout, ema_decay):
    """Train the noise-prediction model on a corpus directory."""
    pairs = [(img, rec.caption) for img, rec in load_corpus(corpus)]
    if config_path:
        raw = yaml.safe_load(Path(config_path).read_text()) or {}
        for key in ("channel_multipliers", "attention_levels", "vocab"):
            if key in raw:
                raw[key] = tuple(raw[key])
        cfg = DenoiserConfig(**raw)
    else:
        cfg = DenoiserConfig()
    pcfg = PipelineConfig()
    from .schedule import make_schedule

    sched = make_schedule(pcfg.train_steps, pcfg.beta_start, pcfg.beta_end)
    opts = TrainerOptions(steps=steps, batch_size=batch, lr=lr, cond_dropout=cond_dropout,
                          seed=seed, ema_decay=ema_decay)
    result = train_denoiser(pairs, cfg, sched, opts)
    save_denoiser(result.denoiser, out)
    click.echo(
        f"trained {steps} steps: held-out loss {result.held_out_loss:.5f} "
        f"(untrained baseline {result.baseline_loss:.5f}) -> {out}"
    )


@main.command("build-fidelity-data")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--denoiser", "denoiser_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--pairs", type=int, default=2000)
@click.option("--threshold", type=float, default=5.0)
@click.option("--seed", type=int, default=0)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--bootstrap-t", type=int, default=10, help="sampling steps for bootstrap edits")
def build_fidelity_cmd(corpus, denoiser_path, out, pairs, threshold, seed, config_path, bootstrap_t):
    """Create the high/low fidelity dataset by scoring random-drag edits."""
    cfg = _pipeline_config(config_path)
    cfg = replace(cfg, T=bootstrap_t, n1=None, n2=None)
    sched = cfg.schedule()
    den = load_denoiser(denoiser_path, sched=sched)
    records = [rec for _, rec in load_corpus(corpus)]

    def editor(rec, drag, edit_seed):
        req = EditRequest(
            image=rec.render(), caption=rec.caption, drag=drag,
            intention=identity_intention(rec.caption),
            weights=cfg.weights(), seed=edit_seed, cfg_scale=cfg.cfg_scale,
            toggles=EditToggles(use_quality=False, use_semantic=False),
            feature_tap=cfg.feature_tap, mask_radius=cfg.mask_radius,
        )
        return run_edit(req, den, sched=sched).image

    examples, warnings = build_fidelity_dataset(
        records, editor, fidelity_score, threshold, pairs, seed=seed
    )
    save_fidelity_dataset(examples, out)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"wrote {len(examples)} examples ({len(examples) // 2} pairs) to {out}")


@main.command("train-discriminator")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--denoiser", "denoiser_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=100)
@click.option("--lr", type=float, default=1e-4)
@click.option("--batch", type=int, default=128)
@click.option("--seed", type=int, default=0)
def train_discriminator_cmd(data, denoiser_path, out, epochs, lr, batch, seed):
    """Train the timestep-conditional fidelity discriminator."""
    den = load_denoiser(denoiser_path)
    dataset = load_fidelity_dataset(data)
    opts = DiscriminatorOptions(lr=lr, epochs=epochs, batch_size=batch, seed=seed)
    model = train_discriminator(dataset, den, den.sched, opts)
    save_quality_model(model, out)
    click.echo(f"held-out AUC {model.train_meta['held_out_auc']:.3f} -> {out}")


@main.command("reason")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--points", required=True, help="JSON list or path: [{handle:[x,y],target:[x,y]}]")
@click.option("--caption", required=True)
@click.option("-n", type=int, default=3)
@click.option("--backend", type=click.Choice(["oracle", "remote"]), default="oracle")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--sample", is_flag=True, help="confidence-proportional sampling instead of top-n")
@click.option("--seed", type=int, default=0)
def reason_cmd(image_path, points, caption, n, backend, scene_path, sample, seed):
    """Locate the dragged object and print reasoned intentions as JSON."""
    image = _load_image(image_path)
    pairs = _load_points(points)
    pts = [(p.handle, p.target) for p in pairs]
    if backend == "oracle":
        scene = _scene_for(image, scene_path)
        be = OracleBackend()
    else:
        scene = None
        be = RemoteBackend()
    query = SceneQuery(caption=caption, points=pts, image=image, scene=scene)
    description = locate(query, be)
    candidates = reason(description, caption, pts, max(3, n), be, scene=scene)
    if sample:
        picked = sample_intentions(candidates, n, seed=seed)
    else:
        picked, _ = select_intentions(candidates, n)
    click.echo(json.dumps({"object": description.text,
                           "intentions": [i.to_json() for i in picked]}, indent=2))


def _apply_weight_overrides(cfg: PipelineConfig, we, wc, wq, n1, n2, radius, eta, cfg_scale, linear_energy):
    updates = {}
    for key, val in (("w_e", we), ("w_c", wc), ("w_q", wq), ("n1", n1), ("n2", n2),
                     ("mask_radius", radius), ("eta", eta), ("cfg_scale", cfg_scale)):
        if val is not None:
            updates[key] = val
    if linear_energy:
        updates["linear_energy"] = True
    return replace(cfg, **updates)


@main.command("edit")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), required=True)
@click.option("--points", required=True)
@click.option("--caption", required=True)
@click.option("--denoiser", "denoiser_path", type=click.Path(exists=True), required=True)
@click.option("--quality", "quality_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--intention-index", type=int, default=None, help="pick the k-th reasoned intention")
@click.option("--auto", is_flag=True, help="use the top reasoned intention")
@click.option("--backend", type=click.Choice(["oracle", "remote"]), default="oracle")
@click.option("--scene", "scene_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--we", type=float, default=None)
@click.option("--wc", type=float, default=None)
@click.option("--wq", type=float, default=None)
@click.option("--n1", type=int, default=None)
@click.option("--n2", type=int, default=None)
@click.option("--radius", type=float, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--cfg-scale", type=float, default=None)
@click.option("--linear-energy", is_flag=True)
@click.option("--no-quality", is_flag=True)
@click.option("--no-semantic", is_flag=True)
@click.option("--no-kv", is_flag=True)
@click.option("--no-edit", is_flag=True)
@click.option("--save-bank", "save_bank_path", type=click.Path(), default=None)
@click.option("--load-bank", "load_bank_path", type=click.Path(exists=True), default=None)
def edit_cmd(image_path, mask_path, points, caption, denoiser_path, quality_path, config_path,
             out, intention_index, auto, backend, scene_path, seed, we, wc, wq, n1, n2, radius,
             eta, cfg_scale, linear_energy, no_quality, no_semantic, no_kv, no_edit,
             save_bank_path, load_bank_path):
    """Run one drag edit and persist the result directory."""
    cfg = _apply_weight_overrides(
        _pipeline_config(config_path), we, wc, wq, n1, n2, radius, eta, cfg_scale, linear_energy
    )
    sched = cfg.schedule()
    den = load_denoiser(denoiser_path, sched=sched)
    quality = load_quality_model(quality_path, den) if quality_path else None
    image = _load_image(image_path)
    mask = np.asarray(Image.open(mask_path).convert("L")) > 0
    pairs = _load_points(points)
    drag = DragSpec(pairs=pairs, editable_mask=mask)

    if auto or intention_index is not None:
        pts = [(p.handle, p.target) for p in pairs]
        if backend == "oracle":
            scene = _scene_for(image, scene_path)
            be = OracleBackend()
        else:
            scene, be = None, RemoteBackend()
        query = SceneQuery(caption=caption, points=pts, image=image, scene=scene)
        candidates = reason(locate(query, be), caption, pts, 3, be, scene=scene)
        ranked, _ = select_intentions(candidates, len(candidates))
        k = 0 if auto else intention_index
        if not (0 <= k < len(ranked)):
            raise click.ClickException(f"intention index {k} out of range (have {len(ranked)})")
        intention = ranked[k]
    else:
        intention = identity_intention(caption)

    toggles = EditToggles(
        use_edit=not no_edit,
        use_semantic=not no_semantic,
        use_quality=not no_quality and quality is not None,
        use_kv_replacement=not no_kv,
    )
    req = EditRequest(
        image=image, caption=caption, drag=drag, intention=intention,
        weights=cfg.weights(), seed=seed, cfg_scale=cfg.cfg_scale, toggles=toggles,
        feature_tap=cfg.feature_tap, mask_radius=cfg.mask_radius, linear_energy=cfg.linear_energy,
    )
    sink: list = []
    bank = load_bank(load_bank_path) if load_bank_path else None
    result = run_edit(req, den, quality_model=quality, sched=sched, bank=bank, bank_sink=sink)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(result.image).save(out_dir / "edited.png")
    with open(out_dir / "trace.jsonl", "w") as fh:
        for row in result.trace:
            fh.write(json.dumps(row) + "\n")
    (out_dir / "config-echo.json").write_text(json.dumps(result.config, indent=2))
    (out_dir / "intention.json").write_text(json.dumps(result.intention.to_json(), indent=2))
    if save_bank_path:
        save_bank(sink[0], save_bank_path)
    click.echo(f"edited image -> {out_dir / 'edited.png'} ({result.timing['total_s']:.1f}s)")


@main.command("gen-bench")
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--n-per-archetype", type=int, default=12)
@click.option("--image-size", type=int, default=32)
def gen_bench_cmd(out, seed, n_per_archetype, image_size):
    """Generate the seeded drag bench suite."""
    cases = make_bench(n_per_archetype=n_per_archetype, seed=seed, image_size=image_size)
    save_bench(cases, out)
    click.echo(f"wrote {len(cases)} cases to {out}")


@main.command("bench")
@click.option("--suite", type=click.Path(exists=True), required=True)
@click.option("--variants", default="full,noint,noq")
@click.option("--denoiser", "denoiser_path", type=click.Path(exists=True), required=True)
@click.option("--quality", "quality_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
def bench_cmd(suite, variants, denoiser_path, quality_path, config_path, out, seed):
    """Run the ablation table over a bench suite."""
    cfg = _pipeline_config(config_path)
    sched = cfg.schedule()
    den = load_denoiser(denoiser_path, sched=sched)
    quality = load_quality_model(quality_path, den) if quality_path else None
    cases = load_bench(suite)
    names = tuple(v.strip() for v in variants.split(",") if v.strip())
    base = EditRequest(
        image=cases[0].scene.render(), caption=cases[0].scene.caption, drag=cases[0].drag,
        intention=identity_intention(cases[0].scene.caption),
        weights=cfg.weights(), cfg_scale=cfg.cfg_scale,
        feature_tap=cfg.feature_tap, mask_radius=cfg.mask_radius, linear_energy=cfg.linear_energy,
    )
    report = run_ablation(cases, names, den, quality_model=quality, sched=sched,
                          base_request=base, seed=seed)
    save_report(report, out)
    click.echo(render_report(report))


@main.command("serve")
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--workers", type=int, default=1)
@click.option("--data", type=click.Path(), required=True)
@click.option("--denoiser", "denoiser_path", type=click.Path(exists=True), required=True)
@click.option("--quality", "quality_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--static", "static_dir", type=click.Path(), default=None)
def serve_cmd(port, host, workers, data, denoiser_path, quality_path, config_path, static_dir):
    """Serve the HTTP API (and the built UI bundle when present)."""
    import uvicorn

    from .pipeline import EditRequest as _ER
    from .service.app import ServiceContext, create_app
    from .service.jobs import JobStore

    cfg = _pipeline_config(config_path)
    sched = cfg.schedule()
    den = load_denoiser(denoiser_path, sched=sched)
    quality = load_quality_model(quality_path, den) if quality_path else None
    store = JobStore(data)
    dummy = make_bench(n_per_archetype=1, seed=0, image_size=den.config.image_size)[0]
    base = _ER(
        image=dummy.scene.render(), caption=dummy.scene.caption, drag=dummy.drag,
        intention=identity_intention(dummy.scene.caption),
        weights=cfg.weights(), cfg_scale=cfg.cfg_scale,
        feature_tap=cfg.feature_tap, mask_radius=cfg.mask_radius, linear_energy=cfg.linear_energy,
    )
    ctx = ServiceContext(denoiser=den, store=store, sched=sched, quality_model=quality,
                         base_request=base, workers=workers)
    default_static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(ctx, static_dir=static_dir or (str(default_static) if default_static.exists() else None))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
