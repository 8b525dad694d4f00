"""Minibatch training with an optional watermark regularizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericError
from ..record import ExperimentRecord
from ..rng import SplitMix64, check_seed
from ..watermark.core import (
    as_bits,
    bit_error_rate,
    embedding_loss,
    embedding_loss_grad,
    extract,
    mean_over_filters,
)
from ..watermark.keys import KeyMatrix
from .losses import cross_entropy_loss, soft_target_loss
from .optim import OptimizerState, lr_schedule, sgd_nesterov_step


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr_initial: float = 0.02
    lr_drop_factor: float = 0.2
    lr_drop_epochs: list = field(default_factory=lambda: [10, 15])
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    reg_lambda: float = 0.01

    def __post_init__(self):
        self.lr_drop_epochs = [int(e) for e in self.lr_drop_epochs]
        self.seed = check_seed(self.seed)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if any(b <= a for a, b in zip(self.lr_drop_epochs, self.lr_drop_epochs[1:])):
            raise ConfigurationError("lr_drop_epochs must be strictly increasing")
        if self.epochs and any(e >= self.epochs for e in self.lr_drop_epochs):
            raise ConfigurationError("lr_drop_epochs must all be < epochs")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.reg_lambda < 0:
            raise ConfigurationError("weight_decay and reg_lambda must be >= 0")

    def scaled(self, fraction: float, **overrides) -> "TrainConfig":
        """Copy with ``fraction`` of the epochs and the drop points scaled alike."""
        epochs = max(1, int(round(self.epochs * fraction)))
        drops = sorted({int(e * fraction) for e in self.lr_drop_epochs if 0 < int(e * fraction) < epochs})
        params = dict(self.__dict__, epochs=epochs, lr_drop_epochs=drops)
        params.update(overrides)
        return TrainConfig(**params)


@dataclass
class RegularizerHook:
    key: KeyMatrix
    bits: np.ndarray
    layer_id: str
    reg_lambda: float = 0.01

    def __post_init__(self):
        self.bits = as_bits(self.bits)
        if self.key.T != self.bits.size:
            raise ConfigurationError(f"key has T={self.key.T} rows but payload has {self.bits.size} bits")

    def check(self, model):
        layer = model.conv_layer(self.layer_id)
        if layer.fan_in != self.key.M:
            raise ConfigurationError(
                f"key expects M={self.key.M} but layer {self.layer_id} has S*S*D={layer.fan_in}"
            )

    def loss(self, model) -> float:
        w = mean_over_filters(model.conv_layer(self.layer_id).params["weight"])
        return embedding_loss(self.key, w, self.bits)

    def ber(self, model) -> float:
        w = mean_over_filters(model.conv_layer(self.layer_id).params["weight"])
        return bit_error_rate(extract(self.key, w), self.bits)

    def loss_and_grad(self, model):
        W = model.conv_layer(self.layer_id).params["weight"]
        w = mean_over_filters(W)
        _, grad_W = embedding_loss_grad(self.key, w, self.bits, W.shape)
        return embedding_loss(self.key, w, self.bits), grad_W


def _as_hooks(hook):
    if hook is None:
        return []
    if isinstance(hook, RegularizerHook):
        return [hook]
    return list(hook)


def combined_ber(model, hooks) -> float:
    """Pooled bit error rate over several hooks."""
    wrong = sum(h.ber(model) * h.key.T for h in hooks)
    return wrong / sum(h.key.T for h in hooks)


def forward(model, batch):
    return model.forward(batch)


def backward(model, batch, targets):
    """Gradients of the mean batch loss for integer labels or soft targets."""
    logits = model.forward(batch, keep_cache=True)
    targets = np.asarray(targets)
    if targets.ndim == 2:
        loss, dlogits = soft_target_loss(logits, targets)
    else:
        loss, dlogits = cross_entropy_loss(logits, targets)
    grads = model.backward(dlogits)
    return grads, loss


def evaluate(model, dataset, batch_size=256) -> float:
    """Fraction of misclassified samples; argmax ties go to the lowest class."""
    logits = model.predict_logits(dataset.images, batch_size)
    return float(np.mean(logits.argmax(axis=1) != np.asarray(dataset.labels)))


def train(
    model,
    dataset,
    config: TrainConfig,
    hook=None,
    *,
    test=None,
    soft_targets=None,
    monitor=None,
    log=None,
):
    """Minimize E0 + lambda * E_R by minibatch SGD.

    ``hook`` is a RegularizerHook or a list of them (one per embedded layer).
    ``monitor`` hooks are only measured, never trained on; their E_R and BER
    fill the record when no ``hook`` is given.

    Returns a trained copy of ``model`` and the per-epoch record.  E0, E_R and
    total are means over the epoch's minibatches (E_R measured before each
    update); test error and BER are measured at the end of the epoch.  With
    ``soft_targets`` (an N x C probability matrix) labels are never read.
    """
    model = model.copy()
    n = len(dataset.images)
    if n == 0:
        raise ConfigurationError("dataset is empty")
    if soft_targets is not None:
        soft_targets = np.asarray(soft_targets, dtype=model.dtype)
        if soft_targets.shape != (n, model.num_classes):
            raise ConfigurationError("soft_targets must be N x num_classes")
        targets = soft_targets
    else:
        targets = np.asarray(dataset.labels)
    hooks = _as_hooks(hook)
    watched = hooks or _as_hooks(monitor)
    for h in hooks + _as_hooks(monitor):
        h.check(model)

    params = model.parameters()
    decayed = model.decayed_keys()
    state = OptimizerState(params)
    shuffle = SplitMix64(config.seed).spawn("shuffle")
    record = ExperimentRecord("epoch")

    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = shuffle.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    grads, e0 = backward(model, dataset.images[idx], targets[idx])
            except NumericError as exc:
                raise NumericError(f"training diverged in epoch {epoch}: {exc}") from None
            e_r = penalty = 0.0
            for h in hooks:
                h_loss, grad_W = h.loss_and_grad(model)
                e_r += h_loss
                penalty += h.reg_lambda * h_loss
                if h.reg_lambda:
                    key = (h.layer_id, "weight")
                    grads[key] = grads[key] + (h.reg_lambda * grad_W).astype(model.dtype)
            if not hooks and watched:
                e_r = sum(h.loss(model) for h in watched)
            total = e0 + penalty
            if not math.isfinite(total):
                raise NumericError(f"loss diverged in epoch {epoch}")
            try:
                sgd_nesterov_step(
                    params, grads, state, lr, config.momentum, config.weight_decay, decayed
                )
            except NumericError as exc:
                raise NumericError(f"training diverged in epoch {epoch}: {exc}") from None
            sums += (e0, e_r, total)
            steps += 1
        e0_mean, er_mean, total_mean = sums / steps
        test_error = evaluate(model, test) if test is not None else math.nan
        ber = combined_ber(model, watched) if watched else math.nan
        record.append(epoch, e0_mean, er_mean, total_mean, test_error, ber)
        if log is not None:
            log(f"epoch {epoch:3d} lr {lr:.4g} E0 {e0_mean:.4f} E_R {er_mean:.4g} "
                f"test_err {test_error:.4f} BER {ber:.4f}")
    model.check_finite()
    return model, record
