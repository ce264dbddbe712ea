"""Dynamic per-epoch sample pruning with gradient rescaling.

Two planners share the low-loss rule (drop below-mean samples with
probability r, rescale survivors by 1/(1-r)):

* ``plan_infobatch`` keeps the entire above-mean side.
* ``plan_bucketed`` additionally groups above-mean samples by (sign-hash
  code, equi-depth loss bin) and applies the same random pruning inside
  every bucket that holds more than one sample. Singleton buckets are never
  pruned, which keeps the expected kept-set total loss equal to the
  full-data total.

The ledger starts empty; until every sample has a recorded loss (i.e. after
the first full epoch) both planners return a keep-everything plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "LossLedger",
    "LshIndex",
    "PruneStats",
    "EpochPlan",
    "build_lsh",
    "plan_full",
    "plan_infobatch",
    "plan_bucketed",
    "apply_plan",
    "anneal_gate",
]


class LossLedger:
    """Running mean loss per sample; samples unseen in an epoch keep their
    previous mean."""

    def __init__(self, n_samples: int):
        if n_samples < 1:
            raise ValueError("ledger needs at least one sample")
        self.n = n_samples
        self._sums = np.zeros(n_samples, dtype=np.float64)
        self._counts = np.zeros(n_samples, dtype=np.int64)

    def update(self, ids: np.ndarray, losses: np.ndarray) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        np.add.at(self._sums, ids, np.asarray(losses, dtype=np.float64))
        np.add.at(self._counts, ids, 1)

    @property
    def ready(self) -> bool:
        return bool((self._counts > 0).all())

    @property
    def mean_losses(self) -> np.ndarray:
        """Per-sample running means; +inf where nothing was recorded yet."""
        out = np.full(self.n, np.inf)
        seen = self._counts > 0
        out[seen] = self._sums[seen] / self._counts[seen]
        return out

    @property
    def global_mean(self) -> float:
        return float(self.mean_losses.mean())


@dataclass
class LshIndex:
    """Immutable random-hyperplane sign codes, built once before training."""

    bits: int
    hyperplanes: np.ndarray  # (bits, dim) unit rows
    codes: np.ndarray        # (n,) uint64 packed sign bits


def build_lsh(samples: np.ndarray, bits: int, seed: int) -> LshIndex:
    """Hash each sample vector to a ``bits``-wide sign code.

    Bit k is 1 iff the projection onto hyperplane k is >= 0, so two vectors
    collide on bit k with probability 1 - angle/pi.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if not 1 <= bits <= 64:
        raise ValueError(f"bits must be in [1, 64], got {bits}")
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((bits, samples.shape[1]))
    planes /= np.linalg.norm(planes, axis=1, keepdims=True)
    signs = (samples @ planes.T) >= 0.0
    weights = (np.uint64(1) << np.arange(bits, dtype=np.uint64))
    codes = (signs.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
    return LshIndex(bits=bits, hyperplanes=planes, codes=codes)


def hash_codes(index: LshIndex, samples: np.ndarray) -> np.ndarray:
    """Codes for new vectors under an existing index's hyperplanes."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != index.hyperplanes.shape[1]:
        raise ValueError(
            f"vector dim {samples.shape[1]} does not match index "
            f"({index.hyperplanes.shape[1]})"
        )
    signs = (samples @ index.hyperplanes.T) >= 0.0
    weights = (np.uint64(1) << np.arange(index.bits, dtype=np.uint64))
    return (signs.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


@dataclass
class PruneStats:
    n_total: int
    n_kept: int
    n_pruned_low: int
    n_pruned_bucket: int
    n_buckets_multi: int

    def to_dict(self) -> dict[str, int]:
        return {
            "n_total": self.n_total,
            "n_kept": self.n_kept,
            "n_pruned_low": self.n_pruned_low,
            "n_pruned_bucket": self.n_pruned_bucket,
            "n_buckets_multi": self.n_buckets_multi,
        }


@dataclass
class EpochPlan:
    kept_ids: np.ndarray          # indices into the sample set, ascending
    rescale: np.ndarray           # (n,) loss multiplier; meaningful for kept ids
    buckets: Optional[np.ndarray]  # (n,) bucket id or -1; None for non-bucketed plans
    stats: PruneStats
    kept_mask: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kept_mask is None:
            mask = np.zeros(self.rescale.shape[0], dtype=bool)
            mask[self.kept_ids] = True
            self.kept_mask = mask


def plan_full(n_samples: int) -> EpochPlan:
    return EpochPlan(
        kept_ids=np.arange(n_samples),
        rescale=np.ones(n_samples),
        buckets=None,
        stats=PruneStats(n_samples, n_samples, 0, 0, 0),
    )


def plan_infobatch(ledger: LossLedger, ratio: float, seed: int) -> EpochPlan:
    """Below-mean samples dropped independently with probability ``ratio``;
    surviving ones carry the 1/(1-ratio) factor. Above-mean samples all stay."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    n = ledger.n
    if not ledger.ready or ratio == 0.0:
        return plan_full(n)
    means = ledger.mean_losses
    low = means < ledger.global_mean
    rng = np.random.default_rng(seed)
    dropped = low & (rng.random(n) < ratio)
    rescale = np.where(low, 1.0 / (1.0 - ratio), 1.0)
    kept = ~dropped
    return EpochPlan(
        kept_ids=np.flatnonzero(kept),
        rescale=rescale,
        buckets=None,
        stats=PruneStats(n, int(kept.sum()), int(dropped.sum()), 0, 0),
    )


def _equi_depth_bins(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin ids (by ascending value) with near-equal populations.

    The remainder spreads over the first bins; runs of equal values never
    straddle a boundary (ties stay in the lower bin).
    """
    n = values.size
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    base, rem = divmod(n, n_bins)
    starts = []
    pos = 0
    for k in range(n_bins):
        starts.append(pos)
        pos += base + (1 if k < rem else 0)
    # push each boundary past any run of equal values
    for k in range(1, n_bins):
        s = max(starts[k], starts[k - 1])
        while 0 < s < n and sorted_vals[s] == sorted_vals[s - 1]:
            s += 1
        starts[k] = s
    bins = np.empty(n, dtype=np.int64)
    for k in range(n_bins):
        lo = starts[k]
        hi = starts[k + 1] if k + 1 < n_bins else n
        bins[order[lo:hi]] = k
    return bins


def plan_bucketed(ledger: LossLedger, lsh: LshIndex, ratio: float, n_bins: int,
                  seed: int) -> EpochPlan:
    """InfoBatch on the low-loss side plus bucketed pruning above the mean.

    Above-mean samples are split into ``n_bins`` equi-depth bins by running
    mean loss; a bucket is (hash code, bin). Multi-sample buckets prune each
    member with probability ``ratio`` and rescale survivors; singletons stay
    untouched.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    n = ledger.n
    if lsh.codes.shape[0] != n:
        raise ValueError(f"index covers {lsh.codes.shape[0]} samples, ledger has {n}")
    if not ledger.ready or ratio == 0.0:
        return plan_full(n)

    means = ledger.mean_losses
    low = means < ledger.global_mean
    high_ids = np.flatnonzero(~low)
    rng = np.random.default_rng(seed)

    dropped = low & (rng.random(n) < ratio)
    rescale = np.where(low, 1.0 / (1.0 - ratio), 1.0)
    n_pruned_low = int(dropped.sum())

    buckets = np.full(n, -1, dtype=np.int64)
    n_pruned_bucket = 0
    n_buckets_multi = 0
    if high_ids.size > 0:
        bins = _equi_depth_bins(means[high_ids], n_bins)
        lookup: dict[tuple[int, int], int] = {}
        bucket_ids = np.empty(high_ids.size, dtype=np.int64)
        for pos, (code, b) in enumerate(zip(lsh.codes[high_ids], bins)):
            bucket_ids[pos] = lookup.setdefault((int(code), int(b)), len(lookup))
        counts = np.bincount(bucket_ids, minlength=len(lookup))
        buckets[high_ids] = bucket_ids
        multi = counts[bucket_ids] > 1
        n_buckets_multi = int((counts > 1).sum())
        drop_hi = multi & (rng.random(high_ids.size) < ratio)
        dropped[high_ids[drop_hi]] = True
        rescale[high_ids[multi]] = 1.0 / (1.0 - ratio)
        n_pruned_bucket = int(drop_hi.sum())

    kept = ~dropped
    return EpochPlan(
        kept_ids=np.flatnonzero(kept),
        rescale=rescale,
        buckets=buckets,
        stats=PruneStats(n, int(kept.sum()), n_pruned_low, n_pruned_bucket,
                         n_buckets_multi),
    )


def apply_plan(plan: EpochPlan, sample_ids: np.ndarray,
               losses: np.ndarray) -> np.ndarray:
    """Rescale batch losses by the plan's per-sample factors."""
    ids = np.asarray(sample_ids, dtype=np.int64)
    if not plan.kept_mask[ids].all():
        missing = ids[~plan.kept_mask[ids]][0]
        raise RuntimeError(f"sample {missing} was pruned from this epoch's plan")
    return np.asarray(losses, dtype=np.float64) * plan.rescale[ids]


def anneal_gate(epoch: int, total_epochs: int, fraction: float) -> bool:
    """True while pruning is allowed; the last ``fraction`` of epochs train
    on full data."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    return epoch < total_epochs - fraction * total_epochs
