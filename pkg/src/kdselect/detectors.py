"""Six classical anomaly detectors emitting per-point scores.

Every detector returns a score trace aligned to the input series, higher
meaning more anomalous. Window-level detectors score sliding embeddings of
width ``params.window``, assign each score to the window center, and
replicate edge scores outward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from kdselect.config import ZooParams
from kdselect.data import LabeledSeries, znormalize

__all__ = [
    "DetectorId",
    "DETECTORS",
    "DETECTOR_NAMES",
    "NUM_DETECTORS",
    "AnomalyScoreTrace",
    "DetectorSkip",
    "SkipRecord",
    "ZooResult",
    "detector_by_name",
    "run_detector",
    "score_all",
    "matrix_profile",
]


@dataclass(frozen=True)
class DetectorId:
    index: int
    name: str


DETECTORS = (
    DetectorId(0, "IForest"),
    DetectorId(1, "LOF"),
    DetectorId(2, "HBOS"),
    DetectorId(3, "MP"),
    DetectorId(4, "PCA"),
    DetectorId(5, "POLY"),
)
DETECTOR_NAMES = tuple(d.name for d in DETECTORS)
NUM_DETECTORS = len(DETECTORS)


def detector_by_name(name: str) -> DetectorId:
    for det in DETECTORS:
        if det.name == name:
            return det
    raise KeyError(f"unknown detector {name!r}; known: {', '.join(DETECTOR_NAMES)}")


@dataclass
class AnomalyScoreTrace:
    series_id: str
    detector: DetectorId
    scores: np.ndarray


class DetectorSkip(RuntimeError):
    """A detector cannot run on this series (too short for its embedding)."""

    def __init__(self, detector: DetectorId, reason: str):
        super().__init__(f"{detector.name}: {reason}")
        self.detector = detector
        self.reason = reason


@dataclass(frozen=True)
class SkipRecord:
    series_id: str
    detector: DetectorId
    reason: str


@dataclass
class ZooResult:
    traces: list[AnomalyScoreTrace] = field(default_factory=list)
    skips: list[SkipRecord] = field(default_factory=list)


def _embed(values: np.ndarray, width: int) -> np.ndarray:
    """Sliding windows of ``width`` as rows, stride 1."""
    return np.lib.stride_tricks.sliding_window_view(values, width).astype(np.float64)


def _centers_to_points(window_scores: np.ndarray, n: int, width: int) -> np.ndarray:
    """Place window scores at window centers, replicating toward both edges."""
    out = np.empty(n, dtype=np.float64)
    start = width // 2
    k = window_scores.size
    out[start:start + k] = window_scores
    out[:start] = window_scores[0]
    out[start + k:] = window_scores[-1]
    return out


# --- IForest -------------------------------------------------------------

def _avg_path_length(n: int) -> float:
    """Expected unsuccessful-search depth in a BST of n points."""
    if n <= 1:
        return 0.0
    h = math.log(n - 1) + 0.5772156649015329
    return 2.0 * h - 2.0 * (n - 1) / n


class _IsoTree:
    __slots__ = ("feature", "threshold", "left", "right", "depth", "size")

    def __init__(self, data: np.ndarray, height_limit: int, rng: np.random.Generator):
        # flat arrays; feature == -1 marks a leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.depth: list[int] = []
        self.size: list[int] = []
        self._build(data, np.arange(data.shape[0]), 0, height_limit, rng)
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.depth = np.asarray(self.depth, dtype=np.int64)
        self.size = np.asarray(self.size, dtype=np.int64)

    def _build(self, data, idx, depth, limit, rng) -> int:
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.depth.append(depth)
        self.size.append(len(idx))
        if len(idx) <= 1 or depth >= limit:
            return node
        sub = data[idx]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if splittable.size == 0:
            return node
        q = int(rng.choice(splittable))
        s = float(rng.uniform(lo[q], hi[q]))
        mask = sub[:, q] < s
        if not mask.any() or mask.all():
            return node
        self.feature[node] = q
        self.threshold[node] = s
        left = self._build(data, idx[mask], depth + 1, limit, rng)
        self.left[node] = left
        right = self._build(data, idx[~mask], depth + 1, limit, rng)
        self.right[node] = right
        return node

    def path_lengths(self, data: np.ndarray) -> np.ndarray:
        node = np.zeros(data.shape[0], dtype=np.int64)
        max_depth = int(self.depth.max(initial=0))
        for _ in range(max_depth + 1):
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            f = feat[rows]
            go_left = data[rows, f] < self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        tail = np.array([_avg_path_length(s) for s in self.size[node]])
        return self.depth[node] + tail


def _score_iforest(values: np.ndarray, params: ZooParams, rng: np.random.Generator) -> np.ndarray:
    emb = _embed(values, params.window)
    n_windows = emb.shape[0]
    psi = min(params.iforest_subsample, n_windows)
    height_limit = max(1, math.ceil(math.log2(max(psi, 2))))
    depths = np.zeros(n_windows, dtype=np.float64)
    for _ in range(params.iforest_trees):
        sample = rng.choice(n_windows, size=psi, replace=False)
        tree = _IsoTree(emb[sample], height_limit, rng)
        depths += tree.path_lengths(emb)
    mean_depth = depths / params.iforest_trees
    denom = _avg_path_length(psi)
    if denom <= 0:
        return np.zeros(n_windows)
    return np.power(2.0, -mean_depth / denom)


# --- LOF -----------------------------------------------------------------

def _score_lof(values: np.ndarray, params: ZooParams) -> np.ndarray:
    emb = _embed(values, params.window)
    n = emb.shape[0]
    k = min(params.lof_neighbors, n - 1)
    sq = (emb ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (emb @ emb.T)
    np.fill_diagonal(d2, np.inf)
    dist = np.sqrt(np.clip(d2, 0.0, None))
    nn_idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    nn_dist = np.take_along_axis(dist, nn_idx, axis=1)
    k_dist = nn_dist[:, -1]
    reach = np.maximum(nn_dist, k_dist[nn_idx])
    lrd = 1.0 / (reach.mean(axis=1) + 1e-10)
    lof = lrd[nn_idx].mean(axis=1) / lrd
    return lof


# --- HBOS ----------------------------------------------------------------

def _score_hbos(values: np.ndarray, params: ZooParams) -> np.ndarray:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros(values.size)
    bins = params.hbos_bins
    width = (hi - lo) / bins
    idx = np.clip(((values - lo) / width).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    max_count = counts.max()
    return np.log(max_count / counts[idx])


# --- Matrix profile ------------------------------------------------------

def matrix_profile(values: np.ndarray, subseq: int) -> np.ndarray:
    """Z-normalized 1-NN distance of every length-``subseq`` subsequence.

    Constant subsequences follow the windowing convention (all-zero after
    normalization). Neighbors within ceil(subseq/2) positions are excluded
    as trivial matches.
    """
    values = np.asarray(values, dtype=np.float64)
    n_sub = values.size - subseq + 1
    excl = math.ceil(subseq / 2)
    if n_sub < excl + 2:
        raise ValueError(
            f"need at least {subseq + excl + 1} points for subsequence length {subseq}"
        )
    windows = _embed(values, subseq)
    mean = windows.mean(axis=1, keepdims=True)
    std = windows.std(axis=1, keepdims=True)
    normed = np.where(std == 0.0, 0.0, (windows - mean) / np.where(std == 0.0, 1.0, std))
    sq = (normed ** 2).sum(axis=1)
    profile = np.empty(n_sub, dtype=np.float64)
    chunk = max(1, int(4_000_000 // max(n_sub, 1)))
    for start in range(0, n_sub, chunk):
        stop = min(start + chunk, n_sub)
        gram = normed[start:stop] @ normed.T
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * gram
        for i in range(start, stop):
            a = max(0, i - excl)
            b = min(n_sub, i + excl + 1)
            d2[i - start, a:b] = np.inf
        profile[start:stop] = np.sqrt(np.clip(d2.min(axis=1), 0.0, None))
    return profile


def _score_mp(values: np.ndarray, params: ZooParams) -> np.ndarray:
    return matrix_profile(values, params.window)


# --- PCA -----------------------------------------------------------------

def _score_pca(values: np.ndarray, params: ZooParams) -> np.ndarray:
    emb = _embed(values, params.window)
    centered = emb - emb.mean(axis=0, keepdims=True)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s ** 2
    total = var.sum()
    if total <= 0.0:
        return np.zeros(emb.shape[0])
    ratio = np.cumsum(var) / total
    n_comp = int(np.searchsorted(ratio, params.pca_variance) + 1)
    n_comp = min(n_comp, vt.shape[0])
    basis = vt[:n_comp]
    recon = (centered @ basis.T) @ basis
    return np.linalg.norm(centered - recon, axis=1)


# --- POLY ----------------------------------------------------------------

@lru_cache(maxsize=32)
def _poly_predictor(window: int, degree: int) -> np.ndarray:
    """Linear weights mapping a trailing window to its poly-extrapolated next value."""
    x = np.arange(window, dtype=np.float64) / window
    vander = np.vander(x, degree + 1, increasing=True)
    pinv = np.linalg.pinv(vander)
    x_next = np.ones(degree + 1)  # powers of x = 1.0
    return x_next @ pinv


def _score_poly(values: np.ndarray, params: ZooParams) -> np.ndarray:
    w = params.window
    weights = _poly_predictor(w, params.poly_degree)
    preds = np.convolve(values, weights[::-1], mode="valid")[:-1]
    errors = np.abs(preds - values[w:])
    out = np.empty(values.size, dtype=np.float64)
    out[w:] = errors
    out[:w] = errors[0]
    return out


# --- zoo entry points ----------------------------------------------------

def _min_length(det: DetectorId, params: ZooParams) -> int:
    w = params.window
    if det.name == "MP":
        return w + math.ceil(w / 2) + 1
    if det.name == "POLY":
        return w + 1
    if det.name == "LOF":
        return w + 2  # at least 2 embedding rows
    return w + 1  # IForest, PCA need >= 2 embedding rows; HBOS any


def run_detector(det: DetectorId, series: LabeledSeries, params: ZooParams) -> AnomalyScoreTrace:
    """Score one series with one detector; deterministic given params.seed."""
    if params.window < 2:
        raise ValueError(f"zoo window must be >= 2, got {params.window}")
    if params.window <= params.poly_degree and det.name == "POLY":
        raise ValueError("zoo window must exceed poly_degree")
    n = len(series)
    need = _min_length(det, params)
    if det.name != "HBOS" and n < need:
        raise DetectorSkip(det, f"series {series.id!r} has {n} points, needs >= {need}")

    values = series.values
    w = params.window
    if det.name == "IForest":
        rng = np.random.default_rng([params.seed, det.index])
        scores = _centers_to_points(_score_iforest(values, params, rng), n, w)
    elif det.name == "LOF":
        scores = _centers_to_points(_score_lof(values, params), n, w)
    elif det.name == "HBOS":
        scores = _score_hbos(values, params)
    elif det.name == "MP":
        scores = _centers_to_points(_score_mp(values, params), n, w)
    elif det.name == "PCA":
        scores = _centers_to_points(_score_pca(values, params), n, w)
    elif det.name == "POLY":
        scores = _score_poly(values, params)
    else:  # pragma: no cover
        raise KeyError(det.name)

    if not np.all(np.isfinite(scores)):
        raise FloatingPointError(f"{det.name} produced non-finite scores on {series.id!r}")
    return AnomalyScoreTrace(series_id=series.id, detector=det, scores=scores)


def score_all(series: LabeledSeries, params: ZooParams) -> ZooResult:
    """Run every detector; failures land in ``skips`` instead of raising."""
    result = ZooResult()
    for det in DETECTORS:
        try:
            result.traces.append(run_detector(det, series, params))
        except DetectorSkip as skip:
            result.skips.append(SkipRecord(series.id, det, skip.reason))
    return result
