"""AUC-PR and per-window performance labeling from detector traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from kdselect.data import LabeledSeries, WindowSample
from kdselect.detectors import NUM_DETECTORS, ZooResult

__all__ = [
    "UndefinedMetricError",
    "auc_pr",
    "label_windows",
    "LabelSummary",
    "export_label_table",
    "load_label_table",
]


class UndefinedMetricError(ValueError):
    """AUC-PR is undefined: the label span contains no positives."""


def auc_pr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision: sum of (R_k - R_{k-1}) * P_k over descending
    unique score thresholds, predicting positive at score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {labels.shape}")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("no positive labels in span")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = (labels[order] == 1).astype(np.float64)
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1.0 - sorted_labels)
    # last index of each threshold group == cumulative counts at that threshold
    distinct = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    last = np.concatenate([distinct, [sorted_scores.size - 1]])
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    # fsum: exactly-rounded total, independent of term order
    return math.fsum((recall - prev_recall) * precision)


@dataclass
class LabelSummary:
    n_labeled: int
    n_unlabeled: int
    n_detector_skips: int


def label_windows(windows: list[WindowSample], series: LabeledSeries,
                  zoo_result: ZooResult, context_margin: int) -> LabelSummary:
    """Fill each window's performance vector and hard label in place.

    Performance entry j is the AUC-PR of detector j restricted to the window
    span widened by ``context_margin`` points on each side. Windows whose
    widened span has no positive labels stay unlabeled (usable for inference
    only). Skipped detectors score the sentinel 0.

    Hard label = argmax of the performance vector, lowest index on ties.
    """
    trace_by_index: dict[int, np.ndarray] = {
        t.detector.index: t.scores for t in zoo_result.traces
    }
    n = len(series)
    labeled = 0
    unlabeled = 0
    for win in windows:
        if win.series_id != series.id:
            raise ValueError(
                f"window {win.window_id} does not belong to series {series.id!r}"
            )
        length = win.values.size
        lo = max(0, win.offset - context_margin)
        hi = min(n, win.offset + length + context_margin)
        span_labels = series.point_labels[lo:hi]
        if not (span_labels == 1).any():
            win.performance = None
            win.hard_label = None
            unlabeled += 1
            continue
        perf = np.zeros(NUM_DETECTORS, dtype=np.float64)
        for j in range(NUM_DETECTORS):
            scores = trace_by_index.get(j)
            if scores is None:
                continue  # skipped detector keeps the worst-case 0
            perf[j] = auc_pr(scores[lo:hi], span_labels)
        win.performance = perf
        win.hard_label = int(np.argmax(perf))
        labeled += 1
    return LabelSummary(
        n_labeled=labeled,
        n_unlabeled=unlabeled,
        n_detector_skips=len(zoo_result.skips),
    )


def export_label_table(windows: Sequence[WindowSample], path: str | Path) -> int:
    """Write labeled windows as CSV: window_id,hard_label,p_0..p_{m-1}."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["window_id", "hard_label"] + [f"p_{j}" for j in range(NUM_DETECTORS)]
        )
        for win in windows:
            if win.performance is None:
                continue
            writer.writerow(
                [win.window_id, win.hard_label] + [repr(float(p)) for p in win.performance]
            )
            rows += 1
    return rows


def load_label_table(path: str | Path) -> dict[str, tuple[int, np.ndarray]]:
    """Read a label table back as window_id -> (hard_label, performance)."""
    out: dict[str, tuple[int, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["window_id", "hard_label"] + [f"p_{j}" for j in range(NUM_DETECTORS)]
        if header != expected:
            raise ValueError(f"{path}: unexpected label table header {header!r}")
        for row in reader:
            perf = np.array([float(v) for v in row[2:]], dtype=np.float64)
            out[row[0]] = (int(row[1]), perf)
    return out
