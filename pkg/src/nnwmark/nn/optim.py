"""SGD with Nesterov momentum and the step learning-rate schedule."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError


class OptimizerState:
    """Velocity buffers keyed like the parameter dict."""

    def __init__(self, params=None):
        self.velocity = {k: np.zeros_like(v) for k, v in (params or {}).items()}

    def buffer(self, key, like):
        v = self.velocity.get(key)
        if v is None or v.shape != like.shape:
            v = self.velocity[key] = np.zeros_like(like)
        return v


def sgd_nesterov_step(params, grads, state, lr, momentum, weight_decay, decayed=None):
    """One in-place update of every entry of ``params``.

    g <- g + weight_decay * w   (only for keys in ``decayed``; all keys if None)
    v <- momentum * v - lr * g
    w <- w + momentum * v - lr * g
    """
    for key, w in params.items():
        g = grads[key]
        if weight_decay and (decayed is None or key in decayed):
            g = g + weight_decay * w
        v = state.buffer(key, w)
        v *= momentum
        v -= lr * g
        update = momentum * v - lr * g
        if not np.all(np.isfinite(update)):
            raise NumericError(f"non-finite update for {key}")
        w += update.astype(w.dtype, copy=False)
    return params, state


def lr_schedule(epoch, config):
    drops = sum(1 for e in config.lr_drop_epochs if e <= epoch)
    return config.lr_initial * config.lr_drop_factor**drops
