"""Synthetic mixed-anomaly corpora for tests, demos, and benchmarks.

Three families, each built so a different detector wins on it:

* ``spike``  - aperiodic noise with isolated extreme points. The histogram
  detector scores the exact anomalous points; window-based detectors smear
  scores over neighboring positions and lose precision.
* ``motif``  - a strongly periodic signal where one or two cycles flip to a
  pure second-harmonic shape. The distorted cycle stays inside the normal
  value range (histogram blind) and inside the span of normal window shapes
  (subspace-projection blind), but has no near neighbor under z-normalized
  distance (matrix profile discord).
* ``drift``  - a slowly drifting baseline whose level snaps to the opposite
  band for single samples. The glitch values are globally common (histogram
  blind), the surrounding windows smear every window-level detector across
  unlabeled neighbors, but one-step polynomial extrapolation pinpoints the
  exact labeled points.

An optional ``ambiguous`` family produces near-duplicate series whose two
best detectors nearly tie, so replica windows carry conflicting hard labels
and stay high-loss: raw material for bucketed-pruning experiments.
"""

from __future__ import annotations

import numpy as np

from kdselect.data import LabeledSeries

__all__ = ["FAMILIES", "make_series", "make_corpus"]

FAMILIES = ("spike", "motif", "drift")

_DOMAIN_TEXT = {
    "spike": "an aperiodic sensor channel with isolated extreme-value spikes",
    "motif": "a strongly periodic signal where single cycles get distorted",
    "drift": "a drifting baseline whose level snaps to the opposite band for single samples",
    "ambiguous": "a noisy channel with moderate spikes of unclear best detector",
}


def _spike_series(rng: np.random.Generator, length: int) -> tuple[np.ndarray, np.ndarray]:
    values = rng.normal(0.0, 0.4, size=length)
    labels = np.zeros(length, dtype=np.int8)
    n_spikes = int(rng.integers(3, 6))
    positions = rng.choice(np.arange(20, length - 20), size=n_spikes, replace=False)
    positions = positions[np.argsort(positions)]
    prev = -100
    for pos in positions:
        if pos - prev < 12:
            continue
        sign = 1.0 if rng.random() < 0.5 else -1.0
        values[pos] += sign * rng.uniform(2.5, 3.5)
        labels[pos] = 1
        prev = pos
    return values, labels


def _motif_series(rng: np.random.Generator, length: int) -> tuple[np.ndarray, np.ndarray]:
    period = 16
    t = np.arange(length, dtype=np.float64)
    phase = rng.uniform(0.0, 2 * np.pi)
    base = 1.5 * np.sin(2 * np.pi * t / period + phase)
    base += 0.9 * np.sin(4 * np.pi * t / period + 2 * phase)
    # per-period amplitude jitter spreads raw embeddings but cancels under
    # per-window z-normalization, so periodic twins survive for the
    # nearest-neighbor distance
    for start in range(0, length - period, period):
        base[start:start + period] *= rng.uniform(0.9, 1.1)
    labels = np.zeros(length, dtype=np.int8)
    n_breaks = int(rng.integers(1, 3))
    break_len = 2 * period
    starts = rng.choice(np.arange(2, (length - 2 * break_len) // period, 6),
                        size=min(n_breaks, 2), replace=False)
    local = np.arange(break_len, dtype=np.float64)
    for k in starts:
        s = int(k) * period
        # two cycles of pure second harmonic: inside the normal value range
        # and (internally repeated, so density methods see twins) but a shape
        # no normal cycle matches under z-normalization
        base[s:s + break_len] = 1.35 * np.sin(
            4 * np.pi * local / period + rng.uniform(0, 2 * np.pi))
        labels[s:s + break_len] = 1
    values = base + 1.2 * np.sin(2 * np.pi * t / length + rng.uniform(0, 2 * np.pi))
    values += rng.normal(0.0, 0.04, size=length)
    return values, labels


def _drift_series(rng: np.random.Generator, length: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(length, dtype=np.float64)
    phase = rng.uniform(0.0, 2 * np.pi)
    wander = np.sin(2 * np.pi * t / (length / 2.5) + phase)
    values = wander + rng.normal(0.0, 0.03, size=length)
    labels = np.zeros(length, dtype=np.int8)
    # benign smooth bumps: outlier-window fodder for isolation/density methods
    bump = 0.5 * np.sin(np.linspace(0.0, np.pi, 24))
    for pos in (int(rng.integers(20, length // 2 - 40)),
                int(rng.integers(length // 2, length - 60))):
        values[pos:pos + 24] += bump
    # single-sample reversions to the opposite band, only where the baseline
    # is far from zero so the jump is large yet the value itself is ordinary
    eligible = np.flatnonzero(np.abs(wander) > 0.6)
    eligible = eligible[(eligible > 20) & (eligible < length - 20)]
    rng.shuffle(eligible)
    placed: list[int] = []
    for pos in eligible:
        if len(placed) == 4:
            break
        if any(abs(pos - q) < 24 for q in placed):
            continue
        values[pos] = -0.9 * wander[pos] + rng.normal(0.0, 0.03)
        labels[pos] = 1
        placed.append(int(pos))
    return values, labels


def _ambiguous_series(rng: np.random.Generator, length: int) -> tuple[np.ndarray, np.ndarray]:
    values = rng.normal(0.0, 0.5, size=length)
    labels = np.zeros(length, dtype=np.int8)
    positions = rng.choice(np.arange(24, length - 24), size=3, replace=False)
    prev = -100
    for pos in np.sort(positions):
        if pos - prev < 16:
            continue
        # moderate two-point bump: histogram vs density methods nearly tie
        values[pos] += 1.4
        values[pos + 1] += 1.1
        labels[pos:pos + 2] = 1
        prev = pos
    return values, labels


_GENERATORS = {
    "spike": _spike_series,
    "motif": _motif_series,
    "drift": _drift_series,
    "ambiguous": _ambiguous_series,
}


def make_series(family: str, index: int, rng: np.random.Generator,
                length: int = 256) -> LabeledSeries:
    values, labels = _GENERATORS[family](rng, length)
    return LabeledSeries(
        id=f"{family}-{index:03d}",
        values=values,
        point_labels=labels,
        dataset_name="synthetic-mix",
        domain_text=_DOMAIN_TEXT[family],
    )


def make_corpus(n_per_family: int, seed: int, length: int = 256,
                families: tuple[str, ...] = FAMILIES,
                duplicate_groups: int = 0, group_size: int = 4,
                duplicate_noise: float = 0.01) -> list[LabeledSeries]:
    """A labeled corpus with ``n_per_family`` series per family.

    ``duplicate_groups`` appends groups of near-identical ambiguous series
    (same base draw plus ``duplicate_noise`` jitter): windows across a group
    hash together and keep conflicting labels.
    """
    rng = np.random.default_rng(seed)
    corpus = [make_series(family, i, rng, length)
              for family in families for i in range(n_per_family)]
    for g in range(duplicate_groups):
        base_values, base_labels = _ambiguous_series(rng, length)
        for j in range(group_size):
            values = base_values + rng.normal(0.0, duplicate_noise, size=length)
            corpus.append(LabeledSeries(
                id=f"ambiguous-{g:02d}-{j:02d}",
                values=values,
                point_labels=base_labels.copy(),
                dataset_name="synthetic-mix",
                domain_text=_DOMAIN_TEXT["ambiguous"],
            ))
    return corpus
