"""Training objectives and text embedding.

Three loss terms feed the selector: hard-label cross-entropy, soft-label
cross-entropy against a temperature-softmax of per-detector performance, and
a symmetric InfoNCE alignment between projected series features and text
embeddings. Loss primitives return per-sample losses plus per-sample
gradients; reduction and weighting belong to the training loop.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from kdselect.config import EmbedderConfig

__all__ = [
    "SoftLabelError",
    "BatchTooSmallError",
    "EmbeddingLookupError",
    "LossBreakdown",
    "numeric_warnings",
    "soft_label",
    "ce_loss",
    "soft_ce_loss",
    "infonce_loss",
    "combine",
    "TextEmbedder",
    "HashingEmbedder",
    "FileEmbedder",
    "build_embedder",
    "text_key",
]

PROB_FLOOR = 1e-12


class SoftLabelError(ValueError):
    pass


class BatchTooSmallError(ValueError):
    """Contrastive alignment needs at least two pairs per batch."""


class EmbeddingLookupError(KeyError):
    pass


class _WarningCounter:
    """Counts probability clamps so silent numeric trouble stays visible."""

    def __init__(self) -> None:
        self.clamps = 0

    def reset(self) -> None:
        self.clamps = 0


numeric_warnings = _WarningCounter()


@dataclass
class LossBreakdown:
    ce: float
    soft: float
    align: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return {"loss_ce": self.ce, "loss_soft": self.soft,
                "loss_align": self.align, "loss_total": self.total}


def soft_label(performance: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax of a performance vector; preserves the argmax."""
    if temperature <= 0:
        raise SoftLabelError(f"temperature must be > 0, got {temperature}")
    perf = np.asarray(performance, dtype=np.float64) / temperature
    shifted = perf - perf.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _clamped_log(probs: np.ndarray) -> np.ndarray:
    below = probs < PROB_FLOOR
    if below.any():
        numeric_warnings.clamps += int(below.sum())
        probs = np.maximum(probs, PROB_FLOOR)
    return np.log(probs)


def ce_loss(probs: np.ndarray, hard_labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hard-label cross-entropy.

    Returns per-sample losses (B,) and per-sample gradients w.r.t. logits
    (B, m): softmax minus one-hot.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(hard_labels, dtype=np.int64))
    b, m = probs.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if (labels < 0).any() or (labels >= m).any():
        raise ValueError("hard label out of range")
    picked = probs[np.arange(b), labels]
    losses = -_clamped_log(picked)
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    return losses, probs - onehot


def soft_ce_loss(probs: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy against distribution targets: -sum_j p_j log phat_j.

    Equals ``ce_loss`` exactly when the target is one-hot; lower-bounded by
    the target's entropy (Gibbs). Gradient w.r.t. logits is phat - p.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {targets.shape}")
    if not np.allclose(targets.sum(axis=1), 1.0, atol=1e-6):
        raise SoftLabelError("targets must sum to 1")
    losses = -(targets * _clamped_log(probs)).sum(axis=1)
    return losses, probs - targets


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return x / norms, norms


def infonce_loss(proj_series: np.ndarray, proj_text: np.ndarray, temperature: float,
                 weights: Optional[np.ndarray] = None
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric InfoNCE over cosine-similarity logits.

    Pair (i, i) is the positive. Per-sample loss is the mean of the
    series->text and text->series cross-entropies. Returns (losses (B,),
    dU, dV) where the gradients cover sum_i w_i * loss_i w.r.t. the raw
    (pre-normalization) projections.
    """
    u = np.atleast_2d(np.asarray(proj_series, dtype=np.float64))
    v = np.atleast_2d(np.asarray(proj_text, dtype=np.float64))
    if u.shape != v.shape:
        raise ValueError(f"projection shape mismatch: {u.shape} vs {v.shape}")
    n = u.shape[0]
    if n < 2:
        raise BatchTooSmallError(f"need >= 2 pairs for contrastive loss, got {n}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    u_hat, u_norm = _normalize_rows(u)
    v_hat, v_norm = _normalize_rows(v)
    sim = (u_hat @ v_hat.T) / temperature

    def row_softmax(s: np.ndarray) -> np.ndarray:
        shifted = s - s.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    p_row = row_softmax(sim)        # series -> text
    p_col = row_softmax(sim.T)      # text -> series
    diag = np.arange(n)
    row_losses = -_clamped_log(p_row[diag, diag])
    col_losses = -_clamped_log(p_col[diag, diag])
    losses = 0.5 * (row_losses + col_losses)

    eye = np.eye(n)
    d_sim = 0.5 * (w[:, None] * (p_row - eye)) + 0.5 * (w[:, None] * (p_col - eye)).T

    du_hat = (d_sim @ v_hat) / temperature
    dv_hat = (d_sim.T @ u_hat) / temperature
    # through the row normalization: d(u/|u|) pulls out the radial component
    du = (du_hat - (du_hat * u_hat).sum(axis=1, keepdims=True) * u_hat) / u_norm
    dv = (dv_hat - (dv_hat * v_hat).sum(axis=1, keepdims=True) * v_hat) / v_norm
    return losses, du, dv


def combine(ce: float, soft: float, align: float, alpha: float, lam: float,
            soft_enabled: bool, align_enabled: bool) -> LossBreakdown:
    """Weighted total: (1 - alpha) * ce + alpha * soft + lam * align.

    A disabled module zeroes both its weight and its reported term.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    a = alpha if soft_enabled else 0.0
    l = lam if align_enabled else 0.0
    soft_term = soft if soft_enabled else 0.0
    align_term = align if align_enabled else 0.0
    total = (1.0 - a) * ce + a * soft_term + l * align_term
    return LossBreakdown(ce=ce, soft=soft_term, align=align_term, total=total)


# --- text embedding -------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def text_key(text: str) -> str:
    """Stable lookup key for precomputed embedding files."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class TextEmbedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic bag-of-words embedding: each token hashes to a signed
    bucket; the sum is L2-normalized. Word order does not matter."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            sign = 1.0 if (h >> 32) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class FileEmbedder:
    """Lookup of precomputed embeddings, keyed by sha256 of the exact text.

    File format: CSV rows ``text_sha256,dim,v_0,...,v_{dim-1}``.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._table: dict[str, np.ndarray] = {}
        self.dim = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) < 3:
                    raise ValueError(f"{self.path}:{lineno}: expected key,dim,values...")
                key, dim_s = parts[0], parts[1]
                dim = int(dim_s)
                values = np.array([float(p) for p in parts[2:]], dtype=np.float64)
                if values.size != dim:
                    raise ValueError(
                        f"{self.path}:{lineno}: dim {dim} but {values.size} values"
                    )
                if self.dim == 0:
                    self.dim = dim
                elif dim != self.dim:
                    raise ValueError(f"{self.path}:{lineno}: inconsistent dim {dim}")
                self._table[key] = values
        if not self._table:
            raise ValueError(f"{self.path}: empty embedding file")

    def embed(self, text: str) -> np.ndarray:
        key = text_key(text)
        hit = self._table.get(key)
        if hit is None:
            preview = text if len(text) <= 80 else text[:77] + "..."
            raise EmbeddingLookupError(
                f"no precomputed embedding for text {preview!r} (sha256 {key})"
            )
        return hit


def build_embedder(config: EmbedderConfig) -> TextEmbedder:
    if config.kind == "feature-hash":
        return HashingEmbedder(config.dim)
    return FileEmbedder(config.path)  # kind validated by EmbedderConfig
