"""HTTP service over the pipeline: corpora, training jobs, selectors,
selection, detection, reports.

One training slot: jobs queue FIFO and run on a single worker thread, which
keeps wall-clock numbers in the event stream honest. Mutating endpoints
accept an optional ``request_id``; retries with the same id replay the
original response instead of re-executing.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, StreamingResponse

from kdselect import __version__
from kdselect.config import ConfigError, RunConfig, apply_env_overrides
from kdselect.data import LabeledSeries, load_corpus
from kdselect.detectors import detector_by_name
from kdselect.model import load_model, save_model
from kdselect.pipeline import (
    TrainEvent,
    detect_and_score,
    evaluate_selector,
    prepare_training_set,
    select,
    train,
)
from kdselect.registry import SelectorRegistry, UnknownSelectorError

__all__ = ["create_app", "ServiceState"]


class JobCancelled(Exception):
    pass


@dataclass
class Job:
    job_id: str
    corpus_id: str
    config: RunConfig
    test_corpus_id: Optional[str] = None
    state: str = "queued"            # queued|running|finished|failed|cancelled
    progress_epoch: int = 0
    total_epochs: int = 0
    events: list[dict] = field(default_factory=list)
    error: Optional[str] = None
    model_path: Optional[str] = None
    report_id: Optional[str] = None
    cancel_requested: bool = False

    def status(self) -> dict:
        last_event = self.events[-1] if self.events else None
        return {
            "job_id": self.job_id,
            "state": self.state,
            "progress": {"epoch": self.progress_epoch, "total_epochs": self.total_epochs},
            "last_event": last_event,
            "error": self.error,
            "result": {
                "model_available": self.model_path is not None,
                "report_id": self.report_id,
            },
        }


_LEGAL = {
    "queued": {"running", "cancelled"},
    "running": {"finished", "failed", "cancelled"},
}


class ServiceState:
    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        for sub in ("corpora", "models", "reports"):
            (self.data_dir / sub).mkdir(parents=True, exist_ok=True)
        self.registry = SelectorRegistry(self.data_dir)
        self.jobs: dict[str, Job] = {}
        self.queue: "queue.Queue[str]" = queue.Queue()
        self.lock = threading.Lock()
        self.idempotency: dict[str, dict] = {}
        self.worker = threading.Thread(target=self._worker_loop, daemon=True)
        self.worker.start()

    # --- job state machine ------------------------------------------------

    def _transition(self, job: Job, new_state: str) -> None:
        with self.lock:
            if new_state not in _LEGAL.get(job.state, set()):
                raise RuntimeError(f"illegal transition {job.state} -> {new_state}")
            job.state = new_state

    def _worker_loop(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:  # shutdown sentinel for tests
                return
            job = self.jobs[job_id]
            if job.state == "cancelled":
                continue
            self._transition(job, "running")
            try:
                self._run_job(job)
                self._transition(job, "finished")
            except JobCancelled:
                self._transition(job, "cancelled")
            except Exception as exc:  # failures land in the status, not the log
                job.error = f"{type(exc).__name__}: {exc}"
                self._transition(job, "failed")

    def _corpus_path(self, corpus_id: str) -> tuple[Path, Path]:
        base = self.data_dir / "corpora" / corpus_id
        return base.with_suffix(".csv"), base.with_suffix(".meta.json")

    def load_corpus_by_id(self, corpus_id: str) -> list[LabeledSeries]:
        csv_path, meta_path = self._corpus_path(corpus_id)
        if not csv_path.exists():
            raise HTTPException(404, f"unknown corpus {corpus_id!r}")
        return load_corpus(csv_path, meta_path if meta_path.exists() else None)

    def _run_job(self, job: Job) -> None:
        corpus = self.load_corpus_by_id(job.corpus_id)
        cfg = job.config
        job.total_epochs = cfg.train.epochs
        training_set = prepare_training_set(corpus, cfg)

        def on_event(event: TrainEvent) -> None:
            job.events.append(event.to_dict())
            job.progress_epoch = event.epoch
            if job.cancel_requested:
                raise JobCancelled()

        result = train(training_set, cfg, on_event=on_event)
        model_path = self.data_dir / "models" / f"{job.job_id}.kdsl"
        save_model(result.model, model_path)
        job.model_path = str(model_path)

        if job.test_corpus_id:
            test_corpus = self.load_corpus_by_id(job.test_corpus_id)
            report = evaluate_selector(result.model, test_corpus, cfg)
            report_id = job.job_id
            report_path = self.data_dir / "reports" / f"{report_id}.json"
            report_path.write_text(json.dumps(report.to_dict(), sort_keys=True),
                                   encoding="utf-8")
            (self.data_dir / "reports" / f"{report_id}.csv").write_text(report.to_csv(),
                                                                        encoding="utf-8")
            job.report_id = report_id

    def shutdown(self) -> None:
        self.queue.put(None)


def _parse_config(raw_config: dict | None, raw_flags: dict | None) -> RunConfig:
    payload = dict(raw_config or {})
    if raw_flags:
        payload["flags"] = {**payload.get("flags", {}), **raw_flags}
    try:
        cfg = RunConfig.from_dict(payload)
    except (ConfigError, TypeError) as exc:
        raise HTTPException(422, f"bad config: {exc}")
    return apply_env_overrides(cfg)


def _series_from_payload(payload: dict) -> LabeledSeries:
    try:
        values = np.asarray(payload["values"], dtype=np.float64)
        labels = payload.get("point_labels")
        labels = (np.asarray(labels, dtype=np.int8) if labels is not None
                  else np.zeros(values.size, dtype=np.int8))
        return LabeledSeries(
            id=str(payload.get("id", "inline")),
            values=values,
            point_labels=labels,
            dataset_name=str(payload.get("dataset_name", "")),
            domain_text=str(payload.get("domain_description", "")),
        )
    except (KeyError, ValueError) as exc:
        raise HTTPException(422, f"bad series payload: {exc}")


def create_app(data_dir: str | Path) -> FastAPI:
    app = FastAPI(title="kdselect", version=__version__)
    state = ServiceState(data_dir)
    app.state.service = state

    def idempotent(request_id: Optional[str], build):
        if request_id:
            hit = state.idempotency.get(request_id)
            if hit is not None:
                return hit
        response = build()
        if request_id:
            state.idempotency[request_id] = response
        return response

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/corpora")
    def upload_corpus(payload: dict = Body(...)) -> dict:
        csv_text = payload.get("csv_text")
        if not csv_text:
            raise HTTPException(422, "csv_text is required")

        def build() -> dict:
            corpus_id = payload.get("name") or uuid.uuid4().hex[:12]
            csv_path, meta_path = state._corpus_path(corpus_id)
            if csv_path.exists():
                raise HTTPException(409, f"corpus {corpus_id!r} already exists")
            csv_path.write_text(csv_text, encoding="utf-8")
            metadata = payload.get("metadata")
            if metadata:
                meta_path.write_text(json.dumps(metadata), encoding="utf-8")
            try:
                corpus = load_corpus(csv_path, meta_path if metadata else None)
            except Exception as exc:
                csv_path.unlink(missing_ok=True)
                meta_path.unlink(missing_ok=True)
                raise HTTPException(422, f"corpus rejected: {exc}")
            return {"corpus_id": corpus_id, "n_series": len(corpus)}

        return idempotent(payload.get("request_id"), build)

    @app.post("/jobs/train")
    def submit_train(payload: dict = Body(...)) -> dict:
        corpus_id = payload.get("corpus_id")
        if not corpus_id:
            raise HTTPException(422, "corpus_id is required")
        state.load_corpus_by_id(corpus_id)  # 404 early
        cfg = _parse_config(payload.get("config"), payload.get("flags"))

        def build() -> dict:
            job = Job(job_id=uuid.uuid4().hex[:12], corpus_id=corpus_id, config=cfg,
                      test_corpus_id=payload.get("test_corpus_id"),
                      total_epochs=cfg.train.epochs)
            state.jobs[job.job_id] = job
            state.queue.put(job.job_id)
            return {"job_id": job.job_id, "state": job.state}

        return idempotent(payload.get("request_id"), build)

    def _job_or_404(job_id: str) -> Job:
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        return _job_or_404(job_id).status()

    @app.get("/jobs/{job_id}/events")
    def job_events(job_id: str, after: int = 0, stream: bool = False):
        job = _job_or_404(job_id)
        if not stream:
            events = job.events[after:]
            return {"events": events, "next_cursor": after + len(events),
                    "state": job.state}

        def sse():
            cursor = after
            while True:
                while cursor < len(job.events):
                    yield f"data: {json.dumps(job.events[cursor], sort_keys=True)}\n\n"
                    cursor += 1
                if job.state in ("finished", "failed", "cancelled"):
                    yield f"event: end\ndata: {json.dumps({'state': job.state})}\n\n"
                    return
                time.sleep(0.05)

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.post("/jobs/{job_id}/cancel")
    def cancel_job(job_id: str, payload: dict = Body(default={})) -> dict:
        job = _job_or_404(job_id)

        def build() -> dict:
            if job.state == "queued":
                state._transition(job, "cancelled")
            elif job.state == "running":
                job.cancel_requested = True
            return {"job_id": job.job_id, "state": job.state,
                    "cancel_requested": job.cancel_requested}

        return idempotent(payload.get("request_id"), build)

    @app.get("/selectors")
    def list_selectors() -> dict:
        return {"selectors": [r.to_dict() for r in state.registry.list()]}

    @app.post("/selectors")
    def register_selector(payload: dict = Body(...)) -> dict:
        job_id = payload.get("job_id")
        if not job_id:
            raise HTTPException(422, "job_id is required")
        job = _job_or_404(job_id)
        if job.state != "finished" or not job.model_path:
            raise HTTPException(409, f"job {job_id!r} has no finished model")

        def build() -> dict:
            selector_id = payload.get("selector_id") or uuid.uuid4().hex[:12]
            metrics = {}
            if job.report_id:
                report_path = state.data_dir / "reports" / f"{job.report_id}.json"
                report = json.loads(report_path.read_text(encoding="utf-8"))
                metrics = {"avg_selected": report["avg_selected"],
                           "avg_oracle": report["avg_oracle"]}
            try:
                record = state.registry.put(
                    selector_id, payload.get("name", selector_id), job.model_path,
                    config_echo=job.config.to_dict(), metrics=metrics)
            except ValueError as exc:
                raise HTTPException(409, str(exc))
            return record.to_dict()

        return idempotent(payload.get("request_id"), build)

    @app.get("/selectors/{selector_id}")
    def get_selector(selector_id: str) -> dict:
        try:
            return state.registry.get(selector_id).to_dict()
        except UnknownSelectorError as exc:
            raise HTTPException(404, str(exc))

    @app.delete("/selectors/{selector_id}")
    def delete_selector(selector_id: str, request_id: Optional[str] = None) -> dict:
        def build() -> dict:
            try:
                state.registry.delete(selector_id)
            except UnknownSelectorError as exc:
                raise HTTPException(404, str(exc))
            return {"deleted": selector_id}

        return idempotent(request_id, build)

    def _resolve_series(payload: dict) -> LabeledSeries:
        if "series" in payload:
            return _series_from_payload(payload["series"])
        corpus_id = payload.get("corpus_id")
        series_id = payload.get("series_id")
        if not corpus_id or not series_id:
            raise HTTPException(422, "provide either series or corpus_id+series_id")
        corpus = state.load_corpus_by_id(corpus_id)
        for series in corpus:
            if series.id == series_id:
                return series
        raise HTTPException(404, f"series {series_id!r} not in corpus {corpus_id!r}")

    def _load_selector_model(selector_id: str):
        try:
            record = state.registry.get(selector_id)
        except UnknownSelectorError as exc:
            raise HTTPException(404, str(exc))
        model = load_model(record.model_path)
        cfg = apply_env_overrides(RunConfig.from_dict(record.config_echo))
        return model, cfg

    @app.post("/select")
    def select_endpoint(payload: dict = Body(...)) -> dict:
        selector_id = payload.get("selector_id")
        if not selector_id:
            raise HTTPException(422, "selector_id is required")
        model, cfg = _load_selector_model(selector_id)
        series = _resolve_series(payload)
        result = select(model, series, cfg.train.window_len, cfg.train.stride)
        return result.to_dict()

    @app.post("/detect")
    def detect_endpoint(payload: dict = Body(...)) -> dict:
        series = _resolve_series(payload)
        compare = bool(payload.get("compare", False))
        detector_name = payload.get("detector")
        selector_id = payload.get("selector_id")
        if detector_name:
            try:
                target = detector_by_name(detector_name)
            except KeyError as exc:
                raise HTTPException(422, str(exc))
            cfg = _parse_config(payload.get("config"), None)
            report = detect_and_score(series, target, cfg, compare=compare)
            selection = None
        elif selector_id:
            model, cfg = _load_selector_model(selector_id)
            selection = select(model, series, cfg.train.window_len, cfg.train.stride)
            report = detect_and_score(series, selection, cfg, compare=compare)
        else:
            raise HTTPException(422, "provide detector or selector_id")
        out = report.to_dict(include_scores=bool(payload.get("include_scores", True)))
        if selection is not None:
            out["selection"] = selection.to_dict()
        out["point_labels"] = series.point_labels.tolist()
        return out

    @app.get("/reports/{report_id}")
    def get_report(report_id: str, format: str = "json"):
        base = state.data_dir / "reports" / report_id
        if format == "csv":
            path = base.with_suffix(".csv")
            if not path.exists():
                raise HTTPException(404, f"unknown report {report_id!r}")
            return PlainTextResponse(path.read_text(encoding="utf-8"),
                                     media_type="text/csv")
        path = base.with_suffix(".json")
        if not path.exists():
            raise HTTPException(404, f"unknown report {report_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    return app
