"""Filter means, projection, extraction and the embedding loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .keys import KeyMatrix

LOGIT_CLAMP = 30.0


def _matrix(X):
    return X.X if isinstance(X, KeyMatrix) else np.asarray(X, dtype=np.float64)


def as_bits(b) -> np.ndarray:
    bits = np.asarray(b)
    if bits.ndim != 1 or bits.size < 1:
        raise ConfigurationError("payload must be a non-empty 1-D bit vector")
    if not np.all((bits == 0) | (bits == 1)):
        raise ConfigurationError("payload entries must be 0 or 1")
    return bits.astype(np.uint8)


def ones_payload(T: int) -> np.ndarray:
    return np.ones(int(T), dtype=np.uint8)


def mean_over_filters(W) -> np.ndarray:
    """Average an ``(S, S, D, L)`` tensor over its L filters, flattened (i, j, k)."""
    W = np.asarray(W)
    if W.ndim != 4 or min(W.shape) < 1:
        raise ConfigurationError(f"conv weights must be a non-empty 4-D tensor, got {W.shape}")
    return W.astype(np.float64).mean(axis=3).reshape(-1)


def project(X, w) -> np.ndarray:
    X = _matrix(X)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or w.ndim != 1 or X.shape[1] != w.shape[0]:
        raise ConfigurationError(
            f"key expects M={X.shape[-1]} parameters but the layer provides {w.shape[0]}"
        )
    return X @ w


def extract(X, w) -> np.ndarray:
    """Bits by thresholding the projection at 0 (0 itself reads as 1)."""
    return (project(X, w) >= 0).astype(np.uint8)


def sigmoid(z):
    z = np.clip(np.asarray(z, dtype=np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def _loss_from_logits(z, b):
    z = np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    # -ln(sigmoid(z)) = log(1 + e^-z); -ln(1 - sigmoid(z)) = log(1 + e^z)
    return float(np.sum(b * np.logaddexp(0.0, -z) + (1 - b) * np.logaddexp(0.0, z)))


def embedding_loss(X, w, b) -> float:
    """Summed binary cross entropy between sigmoid(X w) and the payload."""
    b = as_bits(b)
    z = project(X, w)
    if z.shape != b.shape:
        raise ConfigurationError(f"key has T={z.shape[0]} rows but payload has {b.shape[0]} bits")
    return _loss_from_logits(z, b.astype(np.float64))


def embedding_loss_grad(X, w, b, W_shape=None):
    """Gradient of the embedding loss wrt ``w``.

    With ``W_shape`` given, also returns the gradient wrt the full conv
    tensor, which is the ``w`` gradient spread evenly over the L filters.
    """
    b = as_bits(b).astype(np.float64)
    Xm = _matrix(X)
    y = sigmoid(project(Xm, w))
    if y.shape != b.shape:
        raise ConfigurationError(f"key has T={y.shape[0]} rows but payload has {b.shape[0]} bits")
    grad_w = (y - b) @ Xm
    if W_shape is None:
        return grad_w
    S1, S2, D, L = W_shape
    grad_W = np.broadcast_to((grad_w / L).reshape(S1, S2, D, 1), W_shape)
    return grad_w, grad_W


def bit_error_rate(extracted, reference) -> float:
    a = as_bits(extracted)
    r = as_bits(reference)
    if a.shape != r.shape:
        raise ConfigurationError(f"bit vectors differ in length: {a.size} vs {r.size}")
    return float(np.count_nonzero(a != r)) / a.size


@dataclass
class DetectionReport:
    activations: np.ndarray
    bits: np.ndarray
    ber: float
    mean_abs_logit: float
    near_half_fraction: float
    histogram: np.ndarray
    degenerate: bool

    @property
    def T(self):
        return self.bits.size

    def summary(self) -> dict:
        return {
            "T": int(self.T),
            "ber": self.ber,
            "mean_abs_logit": self.mean_abs_logit,
            "near_half_fraction": self.near_half_fraction,
            "activation_min": float(self.activations.min()),
            "activation_mean": float(self.activations.mean()),
            "activation_max": float(self.activations.max()),
            "histogram": [int(c) for c in self.histogram],
            "degenerate": self.degenerate,
        }

    def format(self) -> str:
        s = self.summary()
        lines = [
            f"bits           {s['T']}",
            f"BER            {s['ber']:.6f}",
            f"mean |logit|   {s['mean_abs_logit']:.6g}",
            f"y in [.45,.55] {s['near_half_fraction']:.4f}",
            f"y min/mean/max {s['activation_min']:.4f} / {s['activation_mean']:.4f} / {s['activation_max']:.4f}",
            "histogram      " + " ".join(str(c) for c in s["histogram"]),
        ]
        if self.degenerate:
            lines.append("warning        all projections are exactly zero (layer is blank)")
        return "\n".join(lines)


def detection_report(X, w, reference) -> DetectionReport:
    """Statistics of the sigmoid activations; no embedded/not-embedded verdict."""
    z = project(X, w)
    ref = as_bits(reference)
    y = sigmoid(z)
    bits = (z >= 0).astype(np.uint8)
    hist, _ = np.histogram(y, bins=10, range=(0.0, 1.0))
    return DetectionReport(
        activations=y,
        bits=bits,
        ber=bit_error_rate(bits, ref),
        mean_abs_logit=float(np.abs(z).mean()),
        near_half_fraction=float(np.mean((y >= 0.45) & (y <= 0.55))),
        histogram=hist,
        degenerate=bool(np.all(z == 0)),
    )


def layer_mean(model, layer_id) -> np.ndarray:
    return mean_over_filters(model.conv_layer(layer_id).params["weight"])
