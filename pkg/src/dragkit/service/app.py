"""HTTP service wrapping the edit pipeline and the intention reasoner."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response

from ..bench.corpus import SceneRecord
from ..bench.detect import scene_from_image
from ..denoiser import Denoiser
from ..guidance import DragPair, DragSpec, GuidanceWeights
from ..pipeline import EditRequest, EditToggles, identity_intention, run_edit
from ..quality import QualityModel
from ..reasoner import (
    Intention,
    OracleBackend,
    RemoteBackend,
    RemoteReasonerError,
    SceneQuery,
    locate,
    reason,
    select_intentions,
)
from ..schedule import NoiseSchedule
from .jobs import JobStore, QueueFullError, Worker
from .models import (
    AutoIntention,
    EditSubmission,
    IntentionModel,
    IntentionsRequest,
    IntentionsResponse,
    JobView,
    PointPair,
    ResultView,
    SubmitResponse,
    decode_image_b64,
    decode_mask_b64,
    encode_image_b64,
)

log = logging.getLogger(__name__)

MAX_PAYLOAD_BYTES = 8 * 1024 * 1024


@dataclass
class ServiceContext:
    denoiser: Denoiser
    store: JobStore
    sched: NoiseSchedule | None = None
    quality_model: QualityModel | None = None
    base_request: EditRequest | None = None
    workers: int = 1
    remote_backend: RemoteBackend | None = None  # injected in tests


def _points(pairs: list[PointPair]) -> list[tuple[tuple[float, float], tuple[float, float]]]:
    return [(tuple(p.handle), tuple(p.target)) for p in pairs]


def _reason_intentions(ctx: ServiceContext, image: np.ndarray, caption: str,
                       points, n: int, backend_name: str) -> list[Intention]:
    if backend_name == "oracle":
        objects = scene_from_image(image)
        if not objects:
            raise ValueError("oracle backend found no palette objects in the image")
        scene = SceneRecord(image_size=image.shape[0], objects=objects)
        backend = OracleBackend()
    else:
        scene = None
        backend = ctx.remote_backend if ctx.remote_backend is not None else RemoteBackend()
    query = SceneQuery(caption=caption, points=points, image=image, scene=scene)
    description = locate(query, backend)
    candidates = reason(description, caption, points, max(3, n), backend, scene=scene)
    picked, _ = select_intentions(candidates, n)
    return picked


def _build_edit_request(ctx: ServiceContext, sub: EditSubmission, intention: Intention) -> EditRequest:
    image = decode_image_b64(sub.image, "image")
    mask = decode_mask_b64(sub.mask, "mask")
    size = ctx.denoiser.config.image_size
    if image.shape[:2] != (size, size):
        raise ValueError(f"image: expected {size}x{size}, got {image.shape[1]}x{image.shape[0]}")
    if mask.shape != image.shape[:2]:
        raise ValueError("mask: resolution differs from image")
    drag = DragSpec(
        pairs=[DragPair(handle=tuple(p.handle), target=tuple(p.target)) for p in sub.points],
        editable_mask=mask,
    )
    drag.validate(size)
    base = ctx.base_request or EditRequest(
        image=image, caption=sub.caption, drag=drag, intention=intention
    )
    weights = base.weights
    if sub.weights is not None:
        overrides = {k: v for k, v in sub.weights.model_dump().items() if v is not None}
        weights = replace(weights, **overrides)
    return replace(
        base,
        image=image,
        caption=sub.caption,
        drag=drag,
        intention=intention,
        seed=sub.seed,
        weights=weights,
        toggles=EditToggles(**sub.toggles.model_dump()),
    )


def _job_runner(ctx: ServiceContext):
    def run(payload: dict) -> list[dict]:
        sub = EditSubmission.model_validate(payload)
        image = decode_image_b64(sub.image, "image")
        if sub.intention is not None:
            intentions = [Intention.from_json(sub.intention.model_dump())]
        else:
            auto = sub.auto or AutoIntention()
            try:
                intentions = _reason_intentions(
                    ctx, image, sub.caption, _points(sub.points), auto.n, auto.backend
                )
            except Exception as exc:
                log.warning("reasoner failed in job: %s; identity fallback", exc)
                fallback = identity_intention(sub.caption)
                fallback.flags.append("reasoner-fallback")
                intentions = [fallback]
        results = []
        for j, intention in enumerate(intentions):
            req = _build_edit_request(ctx, sub, intention)
            req = replace(req, seed=sub.seed + j)
            res = run_edit(req, ctx.denoiser, quality_model=ctx.quality_model, sched=ctx.sched)
            results.append(
                {
                    "image": res.image,
                    "trace": res.trace,
                    "intention": res.intention.to_json(),
                    "config": res.config,
                    "flags": res.flags + list(intention.flags),
                }
            )
        return results

    return run


def create_app(ctx: ServiceContext, static_dir: str | None = None) -> FastAPI:
    from contextlib import asynccontextmanager

    workers = [Worker(ctx.store, _job_runner(ctx)) for _ in range(max(0, ctx.workers))]

    @asynccontextmanager
    async def lifespan(app):
        for w in workers:
            w.start()
        yield
        for w in workers:
            w.stop()
        for w in workers:
            w.join(timeout=1.0)

    app = FastAPI(title="dragkit edit service", lifespan=lifespan)
    app.state.ctx = ctx
    app.state.workers = workers

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": [str(p) for p in e.get("loc", ())], "msg": str(e.get("msg", "")),
             "type": str(e.get("type", ""))}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.middleware("http")
    async def payload_guard(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > MAX_PAYLOAD_BYTES:
            return JSONResponse(status_code=413, content={"detail": "payload too large"})
        return await call_next(request)

    @app.post("/api/intentions", response_model=IntentionsResponse)
    def intentions(req: IntentionsRequest):
        try:
            image = decode_image_b64(req.image, "image")
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        try:
            picked = _reason_intentions(ctx, image, req.caption, _points(req.points), req.n, req.backend)
        except RemoteReasonerError as exc:
            return JSONResponse(
                status_code=502,
                content={"detail": str(exc), "retryable": exc.retryable},
                headers={"Retry-After": "5"},
            )
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        return IntentionsResponse(
            intentions=[IntentionModel(**i.to_json()) for i in picked],
            truncated=len(picked) < req.n,
        )

    @app.post("/api/edits", status_code=202, response_model=SubmitResponse)
    def submit_edit(sub: EditSubmission):
        # validate image/mask/points/prompts up front so schema errors are 400s
        try:
            intention = (
                Intention.from_json(sub.intention.model_dump())
                if sub.intention is not None
                else identity_intention(sub.caption)
            )
            _build_edit_request(ctx, sub, intention)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        try:
            jid = ctx.store.submit(sub.model_dump(), idempotency_key=sub.idempotency_key)
        except QueueFullError:
            return JSONResponse(status_code=429, content={"detail": "queue full"},
                                headers={"Retry-After": "10"})
        return SubmitResponse(job_id=jid)

    @app.get("/api/jobs/{jid}", response_model=JobView)
    def job_status(jid: str):
        job = ctx.store.get(jid)
        if job is None:
            return JSONResponse(status_code=404, content={"detail": "unknown job id"})
        return JobView(
            id=job.id,
            state=job.state,
            created_at=job.created_at,
            started_at=job.started_at,
            finished_at=job.finished_at,
            error=job.error,
            n_results=job.n_results,
            caption=job.payload.get("caption"),
            seed=job.payload.get("seed"),
        )

    @app.get("/api/jobs/{jid}/results/{index}", response_model=ResultView)
    def job_result(jid: str, index: int):
        job = ctx.store.get(jid)
        if job is None:
            return JSONResponse(status_code=404, content={"detail": "unknown job id"})
        loaded = ctx.store.load_result(jid, index) if job.state == "done" else None
        if loaded is None:
            return JSONResponse(status_code=404, content={"detail": "no such result"})
        image, trace, intention, config, flags = loaded
        return ResultView(
            index=index,
            image=encode_image_b64(image),
            intention=IntentionModel(**intention),
            trace=trace,
            config=config,
            flags=flags,
        )

    @app.get("/api/jobs/{jid}/results/{index}/image")
    def job_result_image(jid: str, index: int):
        job = ctx.store.get(jid)
        loaded = ctx.store.load_result(jid, index) if job and job.state == "done" else None
        if loaded is None:
            return JSONResponse(status_code=404, content={"detail": "no such result"})
        path = ctx.store.result_dir(jid, index) / "edited.png"
        return FileResponse(path, media_type="image/png")

    @app.get("/api/health")
    def health():
        return {"status": "ok", "image_size": ctx.denoiser.config.image_size,
                "quality_model": ctx.quality_model is not None}

    if static_dir and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
