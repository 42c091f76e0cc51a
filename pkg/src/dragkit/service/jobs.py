"""Job store: append-only journal, on-disk results, worker threads.

State machine: queued -> running -> done | failed. The journal replays on
startup; jobs that were running when the process died come back as failed
with reason "interrupted", finished jobs stay fetchable from their result
directories.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

_TRANSITIONS = {"queued": {"running"}, "running": {"done", "failed"}, "done": set(), "failed": set()}


@dataclass
class Job:
    id: str
    state: str = "queued"
    payload: dict = field(default_factory=dict)
    created_at: float = field(default_factory=time.time)
    started_at: float | None = None
    finished_at: float | None = None
    error: str | None = None
    n_results: int = 0
    idempotency_key: str | None = None


class QueueFullError(RuntimeError):
    pass


class JobStore:
    def __init__(self, data_dir, max_queue: int = 64):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.data_dir / "journal.jsonl"
        self.results_root = self.data_dir / "results"
        self.results_root.mkdir(exist_ok=True)
        self._jobs: dict[str, Job] = {}
        self._by_key: dict[str, str] = {}
        self._queue: queue.Queue[str] = queue.Queue(maxsize=max_queue)
        self._lock = threading.Lock()
        self._recover()

    # -- journal ---------------------------------------------------------

    def _append_journal(self, event: dict):
        with open(self.journal_path, "a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()

    def _recover(self):
        if not self.journal_path.exists():
            return
        for line in self.journal_path.read_text().splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            jid = event["id"]
            if event["event"] == "submit":
                self._jobs[jid] = Job(
                    id=jid,
                    payload=event.get("payload", {}),
                    created_at=event.get("ts", 0.0),
                    idempotency_key=event.get("idempotency_key"),
                )
                if event.get("idempotency_key"):
                    self._by_key[event["idempotency_key"]] = jid
            elif jid in self._jobs:
                job = self._jobs[jid]
                job.state = event["state"]
                job.error = event.get("error")
                job.started_at = event.get("started_at", job.started_at)
                job.finished_at = event.get("ts", job.finished_at)
                job.n_results = event.get("n_results", job.n_results)
        interrupted = [j for j in self._jobs.values() if j.state in ("queued", "running")]
        for job in interrupted:
            job.state = "failed"
            job.error = "interrupted"
            self._append_journal(
                {"event": "state", "id": job.id, "state": "failed", "error": "interrupted",
                 "ts": time.time()}
            )
        if interrupted:
            log.warning("marked %d interrupted jobs failed on recovery", len(interrupted))

    # -- submission ------------------------------------------------------

    def submit(self, payload: dict, idempotency_key: str | None = None) -> str:
        with self._lock:
            if idempotency_key and idempotency_key in self._by_key:
                return self._by_key[idempotency_key]
            jid = uuid.uuid4().hex[:12]
            job = Job(id=jid, payload=payload, idempotency_key=idempotency_key)
            try:
                self._queue.put_nowait(jid)
            except queue.Full:
                raise QueueFullError("job queue is full")
            self._jobs[jid] = job
            if idempotency_key:
                self._by_key[idempotency_key] = jid
            self._append_journal(
                {"event": "submit", "id": jid, "payload": payload,
                 "idempotency_key": idempotency_key, "ts": job.created_at}
            )
            return jid

    def get(self, jid: str) -> Job | None:
        return self._jobs.get(jid)

    def _transition(self, job: Job, state: str, error: str | None = None, n_results: int = 0):
        if state not in _TRANSITIONS[job.state]:
            raise RuntimeError(f"illegal transition {job.state} -> {state}")
        job.state = state
        now = time.time()
        if state == "running":
            job.started_at = now
        else:
            job.finished_at = now
            job.error = error
            job.n_results = n_results
        self._append_journal(
            {"event": "state", "id": job.id, "state": state, "error": error,
             "started_at": job.started_at, "n_results": n_results, "ts": now}
        )

    # -- results ---------------------------------------------------------

    def result_dir(self, jid: str, index: int) -> Path:
        return self.results_root / jid / str(index)

    def save_result(self, jid: str, index: int, image: np.ndarray, trace: list[dict],
                    intention: dict, config: dict, flags: list[str]):
        out = self.result_dir(jid, index)
        out.mkdir(parents=True, exist_ok=True)
        Image.fromarray(image).save(out / "edited.png")
        with open(out / "trace.jsonl", "w") as fh:
            for row in trace:
                fh.write(json.dumps(row) + "\n")
        (out / "intention.json").write_text(json.dumps(intention))
        (out / "config.json").write_text(json.dumps(config))
        (out / "flags.json").write_text(json.dumps(flags))

    def load_result(self, jid: str, index: int):
        out = self.result_dir(jid, index)
        if not (out / "edited.png").exists():
            return None
        image = np.asarray(Image.open(out / "edited.png").convert("RGB"))
        trace = [json.loads(l) for l in (out / "trace.jsonl").read_text().splitlines() if l.strip()]
        intention = json.loads((out / "intention.json").read_text())
        config = json.loads((out / "config.json").read_text())
        flags = json.loads((out / "flags.json").read_text())
        return image, trace, intention, config, flags


class Worker(threading.Thread):
    """Pulls queued jobs and executes them with the provided runner.

    runner(payload) -> list of result dicts
    {image, trace, intention, config, flags}.
    """

    def __init__(self, store: JobStore, runner, poll_s: float = 0.05):
        super().__init__(daemon=True)
        self.store = store
        self.runner = runner
        self.poll_s = poll_s
        self._halt = threading.Event()

    def stop(self):
        self._halt.set()

    def run(self):
        while not self._halt.is_set():
            try:
                jid = self.store._queue.get(timeout=self.poll_s)
            except queue.Empty:
                continue
            job = self.store.get(jid)
            if job is None or job.state != "queued":
                continue
            self.store._transition(job, "running")
            try:
                results = self.runner(job.payload)
                for i, res in enumerate(results):
                    self.store.save_result(
                        jid, i, res["image"], res["trace"], res["intention"],
                        res["config"], res.get("flags", []),
                    )
                self.store._transition(job, "done", n_results=len(results))
            except Exception as exc:
                log.exception("job %s failed", jid)
                self.store._transition(job, "failed", error=str(exc))
