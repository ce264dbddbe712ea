"""Corpus ingestion, fixed-length windowing, and metadata text rendering.

The on-disk corpus format is a CSV with header ``series_id,value,label``,
rows grouped by series id in time order. An optional JSON sidecar maps
series_id -> {dataset_name, domain_description}.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "LabeledSeries",
    "WindowSample",
    "MetadataRecord",
    "CorpusFormatError",
    "load_corpus",
    "save_corpus",
    "extract_windows",
    "anomaly_runs",
    "metadata_record",
    "render_metadata",
    "split_corpus",
]


class CorpusFormatError(ValueError):
    """Raised when a corpus file does not parse or fails validation."""


@dataclass
class LabeledSeries:
    """A univariate series with binary point-level anomaly labels."""

    id: str
    values: np.ndarray
    point_labels: np.ndarray
    dataset_name: str = ""
    domain_text: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.point_labels = np.asarray(self.point_labels, dtype=np.int8)
        if self.values.ndim != 1:
            raise CorpusFormatError(f"series {self.id!r}: values must be 1-D")
        if self.values.shape != self.point_labels.shape:
            raise CorpusFormatError(
                f"series {self.id!r}: values and point_labels lengths differ "
                f"({len(self.values)} vs {len(self.point_labels)})"
            )
        if self.values.size < 1:
            raise CorpusFormatError(f"series {self.id!r}: empty series")
        bad = (self.point_labels != 0) & (self.point_labels != 1)
        if bad.any():
            raise CorpusFormatError(
                f"series {self.id!r}: point_labels must be 0 or 1 "
                f"(first offender at index {int(np.argmax(bad))})"
            )

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class WindowSample:
    """One z-normalized, fixed-length subsequence of a parent series.

    ``performance`` and ``hard_label`` stay unset until the labeling pass
    fills them (see :mod:`kdselect.metrics`).
    """

    series_id: str
    offset: int
    values: np.ndarray
    hard_label: Optional[int] = None
    performance: Optional[np.ndarray] = None
    metadata_text: str = ""

    @property
    def window_id(self) -> str:
        return f"{self.series_id}:{self.offset}"


@dataclass(frozen=True)
class MetadataRecord:
    """Per-series facts rendered into the metadata sentence template."""

    series_length: int
    anomaly_count: int
    anomaly_lengths: tuple[int, ...] = field(default_factory=tuple)
    domain_description: str = ""

    def __post_init__(self) -> None:
        if len(self.anomaly_lengths) != self.anomaly_count:
            raise ValueError(
                f"anomaly_lengths has {len(self.anomaly_lengths)} entries, "
                f"expected {self.anomaly_count}"
            )


def load_corpus(path: str | Path, metadata_path: str | Path | None = None) -> list[LabeledSeries]:
    """Parse a corpus CSV (and optional metadata sidecar) into series.

    Values are kept untouched; no normalization happens here. Rows must be
    grouped by ``series_id``: once a series ends, its id may not reappear.
    """
    path = Path(path)
    sidecar: dict[str, dict] = {}
    if metadata_path is not None:
        with open(metadata_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)

    corpus: list[LabeledSeries] = []
    order: list[str] = []
    values: dict[str, list[float]] = {}
    labels: dict[str, list[int]] = {}
    closed: set[str] = set()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [c.strip() for c in header] != ["series_id", "value", "label"]:
            raise CorpusFormatError(
                f"{path}: expected header 'series_id,value,label', got {','.join(header)!r}"
            )
        prev_id: Optional[str] = None
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise CorpusFormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            sid, raw_value, raw_label = row
            try:
                value = float(raw_value)
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: bad value {raw_value!r}") from exc
            if raw_label.strip() not in ("0", "1"):
                raise CorpusFormatError(
                    f"{path}:{lineno}: label must be 0 or 1, got {raw_label!r}"
                )
            if sid != prev_id:
                if sid in closed:
                    raise CorpusFormatError(
                        f"{path}:{lineno}: series {sid!r} reappears after ending"
                    )
                if prev_id is not None:
                    closed.add(prev_id)
                if sid not in values:
                    order.append(sid)
                    values[sid] = []
                    labels[sid] = []
                prev_id = sid
            values[sid].append(value)
            labels[sid].append(int(raw_label))

    for sid in order:
        meta = sidecar.get(sid, {})
        corpus.append(
            LabeledSeries(
                id=sid,
                values=np.array(values[sid], dtype=np.float64),
                point_labels=np.array(labels[sid], dtype=np.int8),
                dataset_name=str(meta.get("dataset_name", "")),
                domain_text=str(meta.get("domain_description", "")),
            )
        )
    return corpus


def save_corpus(corpus: Sequence[LabeledSeries], path: str | Path,
                metadata_path: str | Path | None = None) -> None:
    """Write series back to the corpus CSV format (and optional sidecar)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "value", "label"])
        for series in corpus:
            for value, label in zip(series.values, series.point_labels):
                writer.writerow([series.id, repr(float(value)), int(label)])
    if metadata_path is not None:
        sidecar = {
            s.id: {"dataset_name": s.dataset_name, "domain_description": s.domain_text}
            for s in corpus
        }
        with open(metadata_path, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)


def znormalize(window: np.ndarray) -> np.ndarray:
    """Zero-mean unit-std normalization; constant windows map to all zeros."""
    window = np.asarray(window, dtype=np.float64)
    std = float(window.std())
    if std == 0.0:
        return np.zeros_like(window)
    return (window - window.mean()) / std


def extract_windows(series: LabeledSeries, length: int, stride: int) -> list[WindowSample]:
    """Slice z-normalized windows at offsets 0, stride, 2*stride, ...

    A series shorter than ``length`` yields an empty list; callers count the
    skip (see :func:`kdselect.pipeline.prepare_training_set`).
    """
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = len(series)
    if n < length:
        return []
    windows = []
    for offset in range(0, n - length + 1, stride):
        windows.append(
            WindowSample(
                series_id=series.id,
                offset=offset,
                values=znormalize(series.values[offset:offset + length]),
            )
        )
    return windows


def anomaly_runs(point_labels: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of 1s as (start, length) pairs, in order."""
    labels = np.asarray(point_labels).astype(bool)
    if labels.size == 0:
        return []
    padded = np.concatenate(([False], labels, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def metadata_record(series: LabeledSeries) -> MetadataRecord:
    runs = anomaly_runs(series.point_labels)
    return MetadataRecord(
        series_length=len(series),
        anomaly_count=len(runs),
        anomaly_lengths=tuple(length for _, length in runs),
        domain_description=series.domain_text,
    )


def render_metadata(record: MetadataRecord, dataset_name: str) -> str:
    """Instantiate the metadata sentence template for one series.

    The anomaly-lengths sentence is omitted when the series has no anomalies.
    """
    text = (
        f"This is a time series from dataset {dataset_name}, "
        f"{record.domain_description}. "
        f"The length of the series is {record.series_length}. "
        f"There are {record.anomaly_count} anomalies in this series."
    )
    if record.anomaly_count > 0:
        lengths = ", ".join(str(n) for n in record.anomaly_lengths)
        text += f" The lengths of the anomalies are {lengths}."
    return text


def split_corpus(corpus: Sequence[LabeledSeries], fraction: float,
                 seed: int) -> tuple[list[LabeledSeries], list[LabeledSeries]]:
    """Deterministic train/test split, disjoint by series id."""
    if not corpus:
        raise ValueError("cannot split an empty corpus")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n_train = round(len(corpus) * fraction)
    if n_train == 0 or n_train == len(corpus):
        raise ValueError(
            f"fraction {fraction} leaves an empty side for {len(corpus)} series"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return [corpus[i] for i in train_idx], [corpus[i] for i in test_idx]
