"""Post-hoc embedding into an already trained layer, without the task loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from .core import as_bits, bit_error_rate, embedding_loss, embedding_loss_grad, extract, mean_over_filters


@dataclass
class DirectEmbedResult:
    proximity: float
    embedding_loss: float
    ber: float
    steps_taken: int


def _objective(w, w0, X, b, lam):
    return 0.5 * float(np.sum((w - w0) ** 2)) + lam * embedding_loss(X, w, b)


def direct_embed(model, layer_id, X, b, reg_lambda, steps=300, step_size=1.0, tol=1e-10):
    """Minimize ``0.5 * ||w - w0||^2 + lambda * E_R(w)`` over one conv layer.

    Gradient descent runs in the space of the filter mean ``w``; since the
    loss sees ``W`` only through its mean, a descent step on ``W`` moves every
    filter by the same amount, which is what is applied here.  The step
    starts at ``step_size`` and is halved until the objective decreases
    (Armijo backtracking), then allowed to double on the next step.

    Returns a modified copy of ``model`` and a :class:`DirectEmbedResult`.
    """
    b = as_bits(b)
    model = model.copy()
    layer = model.conv_layer(layer_id)
    W = layer.params["weight"]
    w0 = mean_over_filters(W)
    w = w0.copy()
    f = _objective(w, w0, X, b, reg_lambda)
    eta = step_size
    taken = 0
    if reg_lambda > 0:
        for taken in range(1, steps + 1):
            grad = (w - w0) + reg_lambda * embedding_loss_grad(X, w, b)
            gnorm2 = float(grad @ grad)
            if gnorm2 <= tol**2:
                break
            while True:
                cand = w - eta * grad
                f_new = _objective(cand, w0, X, b, reg_lambda)
                if f_new <= f - 0.5 * eta * gnorm2 or eta < 1e-12:
                    break
                eta *= 0.5
            if not np.isfinite(f_new):
                raise NumericError(f"direct embedding diverged at step {taken}")
            w, f = cand, f_new
            eta *= 2.0
    shift = (w - w0).reshape(W.shape[:3])[..., None]
    layer.params["weight"] = (W.astype(np.float64) + shift).astype(W.dtype)
    w_final = mean_over_filters(layer.params["weight"])
    result = DirectEmbedResult(
        proximity=0.5 * float(np.sum((w_final - w0) ** 2)),
        embedding_loss=embedding_loss(X, w_final, b),
        ber=bit_error_rate(extract(X, w_final), b),
        steps_taken=taken,
    )
    return model, result
