"""End-to-end orchestration: labeling, training, selection, evaluation.

The training loop per epoch: gate pruning by the annealing schedule, build
an epoch plan (full / below-mean / bucketed), iterate kept samples in
seeded shuffled order, combine the enabled loss terms, rescale by the
plan's factors, backprop, clip, step, and update the loss ledger with the
unrescaled per-sample losses. Every batch emits an event; each epoch ends
with a summary event whose losses are recomputed from the epoch-end
parameters (so they can be verified against the checkpoint).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from kdselect.config import RunConfig
from kdselect.data import (
    LabeledSeries,
    WindowSample,
    extract_windows,
    metadata_record,
    render_metadata,
)
from kdselect.detectors import (
    DETECTORS,
    NUM_DETECTORS,
    AnomalyScoreTrace,
    DetectorId,
    DetectorSkip,
    run_detector,
    score_all,
)
from kdselect.losses import (
    BatchTooSmallError,
    LossBreakdown,
    TextEmbedder,
    build_embedder,
    ce_loss,
    combine,
    infonce_loss,
    soft_ce_loss,
    soft_label,
)
from kdselect.metrics import UndefinedMetricError, auc_pr, label_windows
from kdselect.model import (
    SelectorModel,
    backward,
    forward,
    init_model,
    sgd_step,
)
from kdselect.pruning import (
    LossLedger,
    LshIndex,
    PruneStats,
    anneal_gate,
    build_lsh,
    plan_bucketed,
    plan_full,
    plan_infobatch,
)

__all__ = [
    "TrainEvent",
    "TrainingSet",
    "TrainResult",
    "SelectionResult",
    "DetectionReport",
    "EvalReport",
    "prepare_training_set",
    "train",
    "select",
    "detect_and_score",
    "evaluate_selector",
]


@dataclass
class TrainEvent:
    kind: str                 # "batch" | "epoch"
    epoch: int
    batch: int
    losses: LossBreakdown
    prune: PruneStats
    wall_ms: float
    samples_per_sec: float

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "epoch": self.epoch, "batch": self.batch}
        out.update(self.losses.to_dict())
        out.update(self.prune.to_dict())
        out["wall_ms"] = round(self.wall_ms, 3)
        out["samples_per_sec"] = round(self.samples_per_sec, 3)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class TrainingSet:
    """Labeled windows in array form, ready for the loop."""

    windows: list[WindowSample]
    values: np.ndarray            # (n, L)
    hard_labels: np.ndarray       # (n,)
    performance: np.ndarray       # (n, m)
    texts: list[str]
    text_embeddings: Optional[np.ndarray]  # (n, d_K) when metadata is on
    n_unlabeled: int = 0
    n_skipped_series: int = 0

    def __len__(self) -> int:
        return self.values.shape[0]


def _window_text(series: LabeledSeries) -> str:
    return render_metadata(metadata_record(series), series.dataset_name)


def prepare_training_set(corpus: Sequence[LabeledSeries], cfg: RunConfig,
                         embedder: Optional[TextEmbedder] = None,
                         label_table: Optional[dict] = None) -> TrainingSet:
    """Window every series, score the zoo, and fill performance labels.

    ``label_table`` (window_id -> (hard_label, performance)) skips the zoo
    pass, reusing a previously exported labeling.
    """
    tc = cfg.train
    zoo = cfg.zoo
    if zoo.window == 0:
        zoo = type(zoo)(**{**zoo.to_dict(), "window": max(2, tc.window_len // 2)})
    if cfg.flags.metadata and embedder is None:
        embedder = build_embedder(cfg.embedder)

    kept: list[WindowSample] = []
    texts: list[str] = []
    n_unlabeled = 0
    n_skipped = 0
    for series in corpus:
        windows = extract_windows(series, tc.window_len, tc.stride)
        if not windows:
            n_skipped += 1
            continue
        text = _window_text(series)
        if label_table is not None:
            for win in windows:
                hit = label_table.get(win.window_id)
                if hit is None:
                    n_unlabeled += 1
                    continue
                win.hard_label, win.performance = int(hit[0]), np.asarray(hit[1])
                win.metadata_text = text
                kept.append(win)
                texts.append(text)
            continue
        result = score_all(series, zoo)
        summary = label_windows(windows, series, result, tc.context_margin)
        n_unlabeled += summary.n_unlabeled
        for win in windows:
            if win.performance is None:
                continue
            win.metadata_text = text
            kept.append(win)
            texts.append(text)

    if not kept:
        raise ValueError("no labeled windows: corpus has no scoreable anomalies")

    values = np.stack([w.values for w in kept])
    hard = np.array([w.hard_label for w in kept], dtype=np.int64)
    perf = np.stack([w.performance for w in kept])
    embeddings = None
    if cfg.flags.metadata:
        cache: dict[str, np.ndarray] = {}
        rows = []
        for text in texts:
            if text not in cache:
                cache[text] = embedder.embed(text)
            rows.append(cache[text])
        embeddings = np.stack(rows)
    return TrainingSet(
        windows=kept, values=values, hard_labels=hard, performance=perf,
        texts=texts, text_embeddings=embeddings,
        n_unlabeled=n_unlabeled, n_skipped_series=n_skipped,
    )


@dataclass
class TrainResult:
    model: SelectorModel
    events: list[TrainEvent]
    kept_per_epoch: list[int]
    nce_skipped_batches: int = 0
    aborted_epoch: Optional[int] = None

    def write_events(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(event.to_json() + "\n")


def _epoch_losses(model: SelectorModel, ts: TrainingSet, cfg: RunConfig) -> LossBreakdown:
    """Full-trainset loss terms at the current parameters (unrescaled means)."""
    flags = cfg.flags
    tc = cfg.train
    out = forward(model, ts.values,
                  text_embeddings=ts.text_embeddings if flags.metadata else None)
    ce, _ = ce_loss(out.probs, ts.hard_labels)
    ce_mean = float(ce.mean())
    soft_mean = 0.0
    if flags.soft_labels:
        targets = soft_label(ts.performance, tc.soft_label_temp)
        soft, _ = soft_ce_loss(out.probs, targets)
        soft_mean = float(soft.mean())
    align_mean = 0.0
    if flags.metadata and len(ts) >= 2:
        nce, _, _ = infonce_loss(out.proj_series, out.proj_text, tc.nce_temp)
        align_mean = float(nce.mean())
    return combine(ce_mean, soft_mean, align_mean, tc.soft_label_weight,
                   tc.metadata_weight, flags.soft_labels, flags.metadata)


def train(training_set: TrainingSet, cfg: RunConfig,
          on_event: Optional[Callable[[TrainEvent], None]] = None) -> TrainResult:
    """Mini-batch SGD over labeled windows with optional soft labels,
    metadata alignment, and dynamic pruning. Deterministic given the seed
    (event wall-clock fields aside)."""
    ts = training_set
    tc = cfg.train
    flags = cfg.flags
    n = len(ts)
    if n == 0:
        raise ValueError("empty training set")

    text_dim = ts.text_embeddings.shape[1] if ts.text_embeddings is not None else cfg.embedder.dim
    model = init_model(tc.encoder, tc.window_len, NUM_DETECTORS, tc.proj_dim,
                       text_dim, seed=tc.seed,
                       config_echo=cfg.to_dict())

    soft_targets = None
    if flags.soft_labels:
        soft_targets = soft_label(ts.performance, tc.soft_label_temp)

    lsh: Optional[LshIndex] = None
    if flags.pruning == "bucketed":
        vectors = ts.values
        if flags.metadata and ts.text_embeddings is not None:
            vectors = np.concatenate([ts.values, ts.text_embeddings], axis=1)
        lsh = build_lsh(vectors, tc.lsh_bits, seed=tc.seed + 104729)

    ledger = LossLedger(n)
    events: list[TrainEvent] = []
    kept_per_epoch: list[int] = []
    nce_skipped = 0
    velocity = None
    checkpoint = model.copy()
    aborted: Optional[int] = None

    def emit(event: TrainEvent) -> None:
        events.append(event)
        if on_event is not None:
            on_event(event)

    for epoch in range(tc.epochs):
        if flags.pruning == "none" or not anneal_gate(epoch, tc.epochs, tc.anneal_fraction):
            plan = plan_full(n)
        elif flags.pruning == "infobatch":
            plan = plan_infobatch(ledger, tc.prune_ratio, seed=_mix(tc.seed, epoch, 1))
        else:
            plan = plan_bucketed(ledger, lsh, tc.prune_ratio, tc.loss_bins,
                                 seed=_mix(tc.seed, epoch, 1))
        kept_per_epoch.append(plan.stats.n_kept)

        order = plan.kept_ids.copy()
        np.random.default_rng(_mix(tc.seed, epoch, 2)).shuffle(order)

        try:
            for batch_no, start in enumerate(range(0, order.size, tc.batch_size)):
                ids = order[start:start + tc.batch_size]
                t0 = time.perf_counter()
                batch_losses, sample_losses, grads, skipped_nce = _batch_step(
                    model, ts, cfg, ids, plan.rescale[ids], soft_targets)
                nce_skipped += skipped_nce
                velocity = sgd_step(model, grads, tc.learning_rate, tc.clip_bound,
                                    momentum=tc.momentum, velocity=velocity)
                ledger.update(ids, sample_losses)
                wall = (time.perf_counter() - t0) * 1000.0
                emit(TrainEvent(
                    kind="batch", epoch=epoch, batch=batch_no, losses=batch_losses,
                    prune=plan.stats, wall_ms=wall,
                    samples_per_sec=ids.size / max(wall / 1000.0, 1e-9),
                ))
        except FloatingPointError:
            aborted = epoch
            model = checkpoint  # roll back to the last healthy epoch
            break

        checkpoint = model.copy()
        n_batches = int(np.ceil(order.size / tc.batch_size))
        t0 = time.perf_counter()
        summary = _epoch_losses(model, ts, cfg)
        wall = (time.perf_counter() - t0) * 1000.0
        emit(TrainEvent(
            kind="epoch", epoch=epoch, batch=n_batches, losses=summary,
            prune=plan.stats, wall_ms=wall,
            samples_per_sec=n / max(wall / 1000.0, 1e-9),
        ))

    return TrainResult(model=model, events=events, kept_per_epoch=kept_per_epoch,
                       nce_skipped_batches=nce_skipped, aborted_epoch=aborted)


def _mix(seed: int, epoch: int, salt: int) -> list[int]:
    return [seed, epoch, salt]


def _batch_step(model, ts: TrainingSet, cfg: RunConfig, ids: np.ndarray,
                rescale: np.ndarray, soft_targets):
    """One forward/backward over a batch. Returns (breakdown, per-sample
    unrescaled losses, grads, nce_skipped); single-sample batches skip the
    alignment term (it needs in-batch negatives)."""
    tc = cfg.train
    flags = cfg.flags
    x = ts.values[ids]
    zk = ts.text_embeddings[ids] if (flags.metadata and ts.text_embeddings is not None) else None
    out = forward(model, x, text_embeddings=zk)
    b = ids.size

    ce, dce = ce_loss(out.probs, ts.hard_labels[ids])
    soft = np.zeros(b)
    dsoft = np.zeros_like(dce)
    if flags.soft_labels:
        soft, dsoft = soft_ce_loss(out.probs, soft_targets[ids])
    align = np.zeros(b)
    du = dv = None
    nce_skipped = 0
    if flags.metadata and zk is not None:
        try:
            align, du, dv = infonce_loss(out.proj_series, out.proj_text,
                                         tc.nce_temp, weights=rescale)
        except BatchTooSmallError:
            nce_skipped = 1

    alpha = tc.soft_label_weight if flags.soft_labels else 0.0
    lam = tc.metadata_weight if flags.metadata else 0.0
    sample_losses = (1.0 - alpha) * ce + alpha * soft + lam * align

    dlogits = (rescale[:, None] * ((1.0 - alpha) * dce + alpha * dsoft)) / b
    kwargs = {}
    if du is not None:
        kwargs = {"dproj_series": lam * du / b, "dproj_text": lam * dv / b}
    grads = backward(model, out, dlogits, **kwargs)

    breakdown = combine(float(ce.mean()), float(soft.mean()), float(align.mean()),
                        tc.soft_label_weight, tc.metadata_weight,
                        flags.soft_labels, flags.metadata)
    return breakdown, sample_losses, grads, nce_skipped


# --- selection / detection / evaluation -----------------------------------

@dataclass
class SelectionResult:
    series_id: str
    window_predictions: list[int]
    votes: list[int]
    selected: DetectorId
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "series_id": self.series_id,
            "window_predictions": self.window_predictions,
            "votes": self.votes,
            "selected": {"index": self.selected.index, "name": self.selected.name},
            "fallback": self.fallback,
        }


def select(model: SelectorModel, series: LabeledSeries, window_len: int,
           stride: int) -> SelectionResult:
    """Majority vote over per-window predictions; ties take the lowest
    detector index. Series shorter than the window fall back to detector 0
    with the result flagged."""
    windows = extract_windows(series, window_len, stride)
    if not windows:
        return SelectionResult(series_id=series.id, window_predictions=[],
                               votes=[0] * NUM_DETECTORS, selected=DETECTORS[0],
                               fallback=True)
    x = np.stack([w.values for w in windows])
    out = forward(model, x)
    preds = np.argmax(out.probs, axis=1)
    votes = np.bincount(preds, minlength=NUM_DETECTORS)
    return SelectionResult(
        series_id=series.id,
        window_predictions=[int(p) for p in preds],
        votes=[int(v) for v in votes],
        selected=DETECTORS[int(np.argmax(votes))],
    )


@dataclass
class DetectionReport:
    series_id: str
    requested: DetectorId
    executed: DetectorId
    fallback_used: bool
    traces: dict[str, AnomalyScoreTrace]
    metrics: dict[str, Optional[float]]

    def to_dict(self, include_scores: bool = True) -> dict:
        out = {
            "series_id": self.series_id,
            "requested": self.requested.name,
            "executed": self.executed.name,
            "fallback_used": self.fallback_used,
            "metrics": self.metrics,
        }
        if include_scores:
            out["scores"] = {name: trace.scores.tolist()
                            for name, trace in self.traces.items()}
        return out


def _metric_or_none(trace: AnomalyScoreTrace, series: LabeledSeries) -> Optional[float]:
    try:
        return auc_pr(trace.scores, series.point_labels)
    except UndefinedMetricError:
        return None


def detect_and_score(series: LabeledSeries, selection: SelectionResult | DetectorId,
                     cfg: RunConfig, compare: bool = False) -> DetectionReport:
    """Run the chosen detector (falling back down the vote order on skips);
    compare mode scores every detector."""
    zoo = cfg.zoo
    if zoo.window == 0:
        zoo = type(zoo)(**{**zoo.to_dict(), "window": max(2, cfg.train.window_len // 2)})
    if isinstance(selection, DetectorId):
        requested = selection
        fallback_order = [d for d in DETECTORS if d.index != requested.index]
    else:
        requested = selection.selected
        by_votes = np.argsort([-v for v in selection.votes], kind="stable")
        fallback_order = [DETECTORS[int(i)] for i in by_votes
                          if int(i) != requested.index]

    executed = None
    traces: dict[str, AnomalyScoreTrace] = {}
    fallback_used = False
    for det in [requested] + fallback_order:
        try:
            traces[det.name] = run_detector(det, series, zoo)
            executed = det
            break
        except DetectorSkip:
            fallback_used = True
    if executed is None:
        raise DetectorSkip(requested, f"no detector can run on series {series.id!r}")

    if compare:
        result = score_all(series, zoo)
        for trace in result.traces:
            traces[trace.detector.name] = trace
    metrics = {name: _metric_or_none(trace, series) for name, trace in traces.items()}
    return DetectionReport(series_id=series.id, requested=requested,
                           executed=executed, fallback_used=fallback_used,
                           traces=traces, metrics=metrics)


@dataclass
class EvalReport:
    rows: list[dict]            # per-series: id, selected, metrics
    avg_selected: float
    avg_oracle: float
    avg_by_detector: dict[str, float]
    n_series: int
    n_fallback: int
    n_unscored: int = 0

    def to_dict(self) -> dict:
        return {
            "n_series": self.n_series,
            "n_fallback": self.n_fallback,
            "n_unscored": self.n_unscored,
            "avg_selected": self.avg_selected,
            "avg_oracle": self.avg_oracle,
            "avg_by_detector": self.avg_by_detector,
            "rows": self.rows,
        }

    def to_csv(self) -> str:
        header = (["series_id", "selected", "selected_auc_pr", "oracle", "oracle_auc_pr"]
                  + [d.name for d in DETECTORS])
        lines = [",".join(header)]
        for row in self.rows:
            lines.append(",".join(
                [row["series_id"], row["selected"], _fmt(row["selected_auc_pr"]),
                 row["oracle"], _fmt(row["oracle_auc_pr"])]
                + [_fmt(row["detector_auc_pr"].get(d.name)) for d in DETECTORS]))
        lines.append(",".join(
            ["__average__", "", _fmt(self.avg_selected), "", _fmt(self.avg_oracle)]
            + [_fmt(self.avg_by_detector.get(d.name)) for d in DETECTORS]))
        return "\n".join(lines) + "\n"


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.6f}"


def evaluate_selector(model: SelectorModel, corpus: Sequence[LabeledSeries],
                      cfg: RunConfig) -> EvalReport:
    """Per-series selection quality against single-detector and oracle rows.

    The oracle picks each series' best detector in hindsight; by definition
    its average is an upper bound on every other column.
    """
    zoo = cfg.zoo
    if zoo.window == 0:
        zoo = type(zoo)(**{**zoo.to_dict(), "window": max(2, cfg.train.window_len // 2)})
    rows = []
    selected_scores: list[float] = []
    oracle_scores: list[float] = []
    per_detector: dict[str, list[float]] = {d.name: [] for d in DETECTORS}
    n_fallback = 0
    n_unscored = 0
    for series in corpus:
        selection = select(model, series, cfg.train.window_len, cfg.train.stride)
        result = score_all(series, zoo)
        metrics: dict[str, Optional[float]] = {d.name: None for d in DETECTORS}
        for trace in result.traces:
            metrics[trace.detector.name] = _metric_or_none(trace, series)
        scored = {k: v for k, v in metrics.items() if v is not None}
        if not scored:
            n_unscored += 1
            continue
        selected_name = selection.selected.name
        if metrics[selected_name] is None:
            # selected detector skipped this series: walk the vote order
            n_fallback += 1
            by_votes = np.argsort([-v for v in selection.votes], kind="stable")
            selected_name = next(DETECTORS[int(i)].name for i in by_votes
                                 if metrics[DETECTORS[int(i)].name] is not None)
        # oracle: best in hindsight, lowest index on ties
        best_value = max(scored.values())
        oracle_name = next(det.name for det in DETECTORS
                           if scored.get(det.name) == best_value)
        rows.append({
            "series_id": series.id,
            "selected": selected_name,
            "selected_auc_pr": metrics[selected_name],
            "oracle": oracle_name,
            "oracle_auc_pr": scored[oracle_name],
            "votes": selection.votes,
            "fallback": selection.fallback,
            "detector_auc_pr": metrics,
        })
        selected_scores.append(metrics[selected_name])
        oracle_scores.append(scored[oracle_name])
        for name, value in metrics.items():
            if value is not None:
                per_detector[name].append(value)
    if not rows:
        raise ValueError("no scoreable series in the evaluation corpus")
    return EvalReport(
        rows=rows,
        avg_selected=float(np.mean(selected_scores)),
        avg_oracle=float(np.mean(oracle_scores)),
        avg_by_detector={name: (float(np.mean(vals)) if vals else float("nan"))
                         for name, vals in per_detector.items()},
        n_series=len(rows),
        n_fallback=n_fallback,
        n_unscored=n_unscored,
    )
