"""The trainable selector: encoder + linear classifier + projection heads.

All layers are implemented directly over numpy with hand-derived gradients
(validated against finite differences in the test suite). Parameters live as
float32 arrays; arithmetic runs in float64 via promotion, so saved files
round-trip bitwise.

Two encoder kinds:
  * ``mlp``: window -> 256 -> 128, rectified-linear units.
  * ``temporal-conv``: three 1-D conv layers (kernel 7, channels 32/64/64,
    same padding) with global average pooling, feature dim 64.

Projection heads map encoder features and text embeddings into a shared
space for the contrastive alignment loss: one 256-unit hidden layer with
rectified-linear activation, linear output of width ``proj_dim``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "SelectorModel",
    "ForwardResult",
    "Gradients",
    "ModelFormatError",
    "init_model",
    "forward",
    "forward_window",
    "backward",
    "clip_global_norm",
    "sgd_step",
    "save_model",
    "load_model",
    "FORMAT_VERSION",
]

MAGIC = b"KDSL"
FORMAT_VERSION = 1

CONV_CHANNELS = (32, 64, 64)
CONV_KERNEL = 7
MLP_HIDDEN = 256
MLP_FEATURES = 128
PROJ_HIDDEN = 256

Params = dict[str, np.ndarray]
Gradients = dict[str, np.ndarray]


class ModelFormatError(RuntimeError):
    """Raised when a model file cannot be read back."""


@dataclass
class SelectorModel:
    encoder_kind: str
    window_len: int
    n_classes: int
    proj_dim: int
    text_dim: int
    params: Params
    config_echo: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def feature_dim(self) -> int:
        return MLP_FEATURES if self.encoder_kind == "mlp" else CONV_CHANNELS[-1]

    def copy(self) -> "SelectorModel":
        return SelectorModel(
            encoder_kind=self.encoder_kind,
            window_len=self.window_len,
            n_classes=self.n_classes,
            proj_dim=self.proj_dim,
            text_dim=self.text_dim,
            params={k: v.copy() for k, v in self.params.items()},
            config_echo=dict(self.config_echo),
            version=self.version,
        )


@dataclass
class ForwardResult:
    """Activations of one batch pass, kept for backprop."""

    features: np.ndarray          # (B, F) encoder output
    logits: np.ndarray            # (B, m)
    probs: np.ndarray             # (B, m), rows sum to 1
    proj_series: Optional[np.ndarray] = None  # (B, H) h_T output, raw
    proj_text: Optional[np.ndarray] = None    # (B, H) h_K output, raw
    cache: dict = field(default_factory=dict)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_model(encoder_kind: str, window_len: int, n_classes: int,
               proj_dim: int, text_dim: int, seed: int,
               config_echo: dict | None = None) -> SelectorModel:
    """Seeded fan-in uniform initialization; biases start at zero."""
    if encoder_kind not in ("mlp", "temporal-conv"):
        raise ValueError(f"unknown encoder kind {encoder_kind!r}")
    rng = np.random.default_rng(seed)
    params: Params = {}
    if encoder_kind == "mlp":
        params["enc.W1"] = _uniform(rng, (MLP_HIDDEN, window_len), window_len)
        params["enc.b1"] = np.zeros(MLP_HIDDEN, dtype=np.float32)
        params["enc.W2"] = _uniform(rng, (MLP_FEATURES, MLP_HIDDEN), MLP_HIDDEN)
        params["enc.b2"] = np.zeros(MLP_FEATURES, dtype=np.float32)
        feat = MLP_FEATURES
    else:
        c_in = 1
        for i, c_out in enumerate(CONV_CHANNELS, start=1):
            fan_in = c_in * CONV_KERNEL
            params[f"enc.conv{i}.W"] = _uniform(rng, (c_out, c_in, CONV_KERNEL), fan_in)
            params[f"enc.conv{i}.b"] = np.zeros(c_out, dtype=np.float32)
            c_in = c_out
        feat = CONV_CHANNELS[-1]
    params["cls.W"] = _uniform(rng, (n_classes, feat), feat)
    params["cls.b"] = np.zeros(n_classes, dtype=np.float32)
    for head, in_dim in (("projT", feat), ("projK", text_dim)):
        params[f"{head}.W1"] = _uniform(rng, (PROJ_HIDDEN, in_dim), in_dim)
        params[f"{head}.b1"] = np.zeros(PROJ_HIDDEN, dtype=np.float32)
        params[f"{head}.W2"] = _uniform(rng, (proj_dim, PROJ_HIDDEN), PROJ_HIDDEN)
        params[f"{head}.b2"] = np.zeros(proj_dim, dtype=np.float32)
    return SelectorModel(
        encoder_kind=encoder_kind,
        window_len=window_len,
        n_classes=n_classes,
        proj_dim=proj_dim,
        text_dim=text_dim,
        params=params,
        config_echo=dict(config_echo or {}),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _p64(model: SelectorModel, name: str) -> np.ndarray:
    return model.params[name].astype(np.float64)


def _encode_mlp(model: SelectorModel, x: np.ndarray, cache: dict) -> np.ndarray:
    a1 = x @ _p64(model, "enc.W1").T + _p64(model, "enc.b1")
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ _p64(model, "enc.W2").T + _p64(model, "enc.b2")
    z = np.maximum(a2, 0.0)
    cache.update(x=x, a1=a1, h1=h1, a2=a2)
    return z


def _conv_im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(B, L, C) -> (B, L, C*kernel) with same padding."""
    pad = (kernel - 1) // 2
    x_pad = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(x_pad, kernel, axis=1)
    b, length, c, k = view.shape
    return np.ascontiguousarray(view).reshape(b, length, c * k)


def _encode_conv(model: SelectorModel, x: np.ndarray, cache: dict) -> np.ndarray:
    h = x[:, :, None]  # (B, L, 1)
    cols = []
    pres = []
    for i in range(1, len(CONV_CHANNELS) + 1):
        w = _p64(model, f"enc.conv{i}.W")
        bias = _p64(model, f"enc.conv{i}.b")
        col = _conv_im2col(h, CONV_KERNEL)
        pre = col @ w.reshape(w.shape[0], -1).T + bias
        h = np.maximum(pre, 0.0)
        cols.append(col)
        pres.append(pre)
    cache.update(cols=cols, pres=pres, length=x.shape[1])
    return h.mean(axis=1)  # global average pool over time


def forward(model: SelectorModel, windows: np.ndarray,
            text_embeddings: np.ndarray | None = None) -> ForwardResult:
    """Batch forward pass. ``windows``: (B, L); optional text embeddings
    (B, text_dim) trigger both projection heads."""
    x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if x.shape[1] != model.window_len:
        raise ValueError(
            f"window length {x.shape[1]} does not match model ({model.window_len})"
        )
    cache: dict = {}
    if model.encoder_kind == "mlp":
        z = _encode_mlp(model, x, cache)
    else:
        z = _encode_conv(model, x, cache)
    logits = z @ _p64(model, "cls.W").T + _p64(model, "cls.b")
    probs = _softmax(logits)
    result = ForwardResult(features=z, logits=logits, probs=probs, cache=cache)

    if text_embeddings is not None:
        zk = np.atleast_2d(np.asarray(text_embeddings, dtype=np.float64))
        if zk.shape[1] != model.text_dim:
            raise ValueError(
                f"text embedding dim {zk.shape[1]} does not match model ({model.text_dim})"
            )
        result.proj_series, cache["projT"] = _project(model, "projT", z)
        result.proj_text, cache["projK"] = _project(model, "projK", zk)
    return result


def _project(model: SelectorModel, head: str, inp: np.ndarray) -> tuple[np.ndarray, dict]:
    a1 = inp @ _p64(model, f"{head}.W1").T + _p64(model, f"{head}.b1")
    h1 = np.maximum(a1, 0.0)
    out = h1 @ _p64(model, f"{head}.W2").T + _p64(model, f"{head}.b2")
    return out, {"inp": inp, "a1": a1, "h1": h1}


def forward_window(model: SelectorModel, window: np.ndarray) -> ForwardResult:
    """Single-window forward; probabilities sum to 1 within 1e-9."""
    return forward(model, np.asarray(window, dtype=np.float64)[None, :])


def relu_signature(fwd: ForwardResult) -> bytes:
    """Sign pattern of every rectifier pre-activation in a forward pass.

    Finite-difference checks compare signatures of the two perturbed passes
    to detect (and skip) kink crossings, where difference quotients do not
    estimate the gradient.
    """
    parts = []
    cache = fwd.cache
    for key in ("a1", "a2"):
        if key in cache:
            parts.append(cache[key] > 0.0)
    for pre in cache.get("pres", []):
        parts.append(pre > 0.0)
    for head in ("projT", "projK"):
        if head in cache:
            parts.append(cache[head]["a1"] > 0.0)
    return b"".join(np.packbits(p.reshape(-1)).tobytes() for p in parts)


def backward(model: SelectorModel, fwd: ForwardResult,
             dlogits: np.ndarray,
             dproj_series: np.ndarray | None = None,
             dproj_text: np.ndarray | None = None) -> Gradients:
    """Gradients for every parameter given upstream loss gradients.

    ``dlogits`` is dLoss/dlogits; the optional projection gradients are
    dLoss/d(h_T output) and dLoss/d(h_K output) from the alignment loss.
    """
    grads: Gradients = {name: np.zeros(p.shape, dtype=np.float64)
                        for name, p in model.params.items()}
    z = fwd.features
    dlogits = np.asarray(dlogits, dtype=np.float64)
    grads["cls.W"] = dlogits.T @ z
    grads["cls.b"] = dlogits.sum(axis=0)
    dz = dlogits @ _p64(model, "cls.W")

    if dproj_series is not None:
        if "projT" not in fwd.cache:
            raise ValueError("forward pass did not run the projection heads")
        dz = dz + _project_backward(model, "projT", fwd.cache["projT"],
                                    np.asarray(dproj_series, dtype=np.float64), grads)
    if dproj_text is not None:
        if "projK" not in fwd.cache:
            raise ValueError("forward pass had no text embeddings")
        _project_backward(model, "projK", fwd.cache["projK"],
                          np.asarray(dproj_text, dtype=np.float64), grads)

    if model.encoder_kind == "mlp":
        _backward_mlp(model, fwd.cache, dz, grads)
    else:
        _backward_conv(model, fwd.cache, dz, grads)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    return grads


def _project_backward(model: SelectorModel, head: str, cache: dict,
                      dout: np.ndarray, grads: Gradients) -> np.ndarray:
    grads[f"{head}.W2"] = dout.T @ cache["h1"]
    grads[f"{head}.b2"] = dout.sum(axis=0)
    dh1 = dout @ _p64(model, f"{head}.W2")
    da1 = dh1 * (cache["a1"] > 0.0)
    grads[f"{head}.W1"] = da1.T @ cache["inp"]
    grads[f"{head}.b1"] = da1.sum(axis=0)
    return da1 @ _p64(model, f"{head}.W1")


def _backward_mlp(model: SelectorModel, cache: dict, dz: np.ndarray,
                  grads: Gradients) -> None:
    da2 = dz * (cache["a2"] > 0.0)
    grads["enc.W2"] = da2.T @ cache["h1"]
    grads["enc.b2"] = da2.sum(axis=0)
    dh1 = da2 @ _p64(model, "enc.W2")
    da1 = dh1 * (cache["a1"] > 0.0)
    grads["enc.W1"] = da1.T @ cache["x"]
    grads["enc.b1"] = da1.sum(axis=0)


def _backward_conv(model: SelectorModel, cache: dict, dz: np.ndarray,
                   grads: Gradients) -> None:
    length = cache["length"]
    dh = np.repeat(dz[:, None, :], length, axis=1) / length  # undo average pool
    for i in range(len(CONV_CHANNELS), 0, -1):
        col = cache["cols"][i - 1]
        pre = cache["pres"][i - 1]
        w = _p64(model, f"enc.conv{i}.W")
        dpre = dh * (pre > 0.0)
        b, t, c_out = dpre.shape
        flat_dpre = dpre.reshape(b * t, c_out)
        flat_col = col.reshape(b * t, -1)
        grads[f"enc.conv{i}.W"] = (flat_dpre.T @ flat_col).reshape(w.shape)
        grads[f"enc.conv{i}.b"] = dpre.sum(axis=(0, 1))
        if i == 1:
            break  # input gradient unused
        dcol = (flat_dpre @ w.reshape(c_out, -1)).reshape(b, t, -1)
        c_in = w.shape[1]
        dcol = dcol.reshape(b, t, c_in, CONV_KERNEL)
        pad = (CONV_KERNEL - 1) // 2
        dh_pad = np.zeros((b, t + 2 * pad, c_in))
        for j in range(CONV_KERNEL):
            dh_pad[:, j:j + t, :] += dcol[:, :, :, j]
        dh = dh_pad[:, pad:pad + t, :]


def global_norm(grads: Gradients) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_global_norm(grads: Gradients, clip_bound: float) -> tuple[Gradients, float]:
    """Scale the whole gradient set so its global norm is <= clip_bound."""
    norm = global_norm(grads)
    if norm <= clip_bound or norm == 0.0:
        return grads, norm
    scale = clip_bound / norm
    return {name: g * scale for name, g in grads.items()}, norm


def sgd_step(model: SelectorModel, grads: Gradients, learning_rate: float,
             clip_bound: float, momentum: float = 0.0,
             velocity: Gradients | None = None) -> Gradients:
    """In-place SGD update with global-norm clipping; returns velocity state."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    clipped, _ = clip_global_norm(grads, clip_bound)
    if momentum > 0.0:
        if velocity is None:
            velocity = {name: np.zeros(g.shape, dtype=np.float64)
                        for name, g in clipped.items()}
        for name, g in clipped.items():
            velocity[name] = momentum * velocity[name] + g
            step = velocity[name]
            p = model.params[name]
            p[...] = (p.astype(np.float64) - learning_rate * step).astype(np.float32)
        return velocity
    for name, g in clipped.items():
        p = model.params[name]
        p[...] = (p.astype(np.float64) - learning_rate * g).astype(np.float32)
    return velocity if velocity is not None else {}


# --- persistence ----------------------------------------------------------

def save_model(model: SelectorModel, path: str | Path) -> None:
    """Versioned binary container: magic, format version, JSON header with a
    shape manifest and config echo, then little-endian float32 blobs."""
    names = sorted(model.params)
    header = {
        "encoder_kind": model.encoder_kind,
        "window_len": model.window_len,
        "n_classes": model.n_classes,
        "proj_dim": model.proj_dim,
        "text_dim": model.text_dim,
        "config_echo": model.config_echo,
        "manifest": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for name in names:
        arr = model.params[name]
        if arr.dtype != np.float32:
            raise ValueError(f"parameter {name} is not float32")
        buf.write(np.ascontiguousarray(arr).astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path: str | Path) -> SelectorModel:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a selector model file (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )
    header_len = struct.unpack("<I", raw[8:12])[0]
    if len(raw) < 12 + header_len:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    offset = 12 + header_len
    params: Params = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if len(raw) < offset + nbytes:
            raise ModelFormatError(f"{path}: truncated parameter blob {entry['name']}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype="<f4").reshape(shape)
        params[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return SelectorModel(
        encoder_kind=header["encoder_kind"],
        window_len=int(header["window_len"]),
        n_classes=int(header["n_classes"]),
        proj_dim=int(header["proj_dim"]),
        text_dim=int(header["text_dim"]),
        params=params,
        config_echo=header.get("config_echo", {}),
        version=version,
    )
