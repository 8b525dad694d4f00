"""Attacks on an embedded watermark: pruning, fine-tuning, overwriting, distillation.

Every report is computed with the original key object handed in by the
caller, never with a key re-derived from stored fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .nn.losses import softmax
from .nn.model import initialize
from .nn.training import RegularizerHook, TrainConfig, evaluate, train
from .record import ExperimentRecord
from .rng import SplitMix64
from .watermark.core import as_bits, bit_error_rate, embedding_loss, extract, layer_mean
from .watermark.keys import KEY_FAMILIES, generate_key

PRUNE_ORDERS = ("ascending", "descending", "random")


@dataclass
class Watermark:
    """The owner's secret: key, payload and the layer holding them."""

    key: object
    bits: np.ndarray
    layer_id: str

    def __post_init__(self):
        self.bits = as_bits(self.bits)

    def measure(self, model):
        w = layer_mean(model, self.layer_id)
        return (
            bit_error_rate(extract(self.key, w), self.bits),
            embedding_loss(self.key, w, self.bits),
        )

    def hook(self, reg_lambda=0.0):
        return RegularizerHook(self.key, self.bits, self.layer_id, reg_lambda)


# -- pruning ---------------------------------------------------------------

@dataclass
class PruneSpec:
    layer_id: str
    rate: float
    order: str = "ascending"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigurationError(f"pruning rate must lie in [0, 1], got {self.rate}")
        if self.order not in PRUNE_ORDERS:
            raise ConfigurationError(f"unknown pruning order {self.order!r}")


def prune_count(rate, size):
    # round first so that e.g. 0.29 * 100 counts 29, not 28
    return int(math.floor(round(rate * size, 9)))


def prune(model, spec: PruneSpec):
    """Zero ``floor(rate * P)`` entries of the layer's full weight tensor.

    ``ascending`` removes the smallest magnitudes first and ``descending``
    the largest; magnitude ties go to the lower flat index.  ``random``
    removes a uniform sample.  Biases are left alone.
    """
    model = model.copy()
    layer = model.conv_layer(spec.layer_id)
    flat = layer.params["weight"].reshape(-1)
    k = prune_count(spec.rate, flat.size)
    if k == 0:
        return model
    mag = np.abs(flat)
    if spec.order == "ascending":
        idx = np.argsort(mag, kind="stable")[:k]
    elif spec.order == "descending":
        idx = np.argsort(-mag, kind="stable")[:k]
    else:
        idx = SplitMix64(spec.seed).spawn("prune").permutation(flat.size)[:k]
    flat[idx] = 0
    return model


def prune_sweep(model, watermark: Watermark, rates, orders=PRUNE_ORDERS, seed=0, test=None):
    """One record row per (order, rate): E_R and BER under the owner's key."""
    record = ExperimentRecord("alpha")
    for order in orders:
        for rate in rates:
            pruned = prune(model, PruneSpec(watermark.layer_id, rate, order, seed))
            ber, e_r = watermark.measure(pruned)
            err = evaluate(pruned, test) if test is not None else math.nan
            record.append(rate, math.nan, e_r, math.nan, err, ber, tag=order)
    return record


# -- fine-tuning -----------------------------------------------------------

@dataclass
class FinetuneReport:
    e_r_before: float
    e_r_after: float
    ber_before: float
    ber_after: float
    test_error: float
    record: ExperimentRecord


def finetune_attack(model, dataset, config: TrainConfig, watermark: Watermark, test=None):
    """Keep training on ``dataset`` with no regularizer and re-measure the mark."""
    ber0, er0 = watermark.measure(model)
    if config.epochs == 0:
        return model.copy(), FinetuneReport(er0, er0, ber0, ber0, math.nan, ExperimentRecord())
    tuned, record = train(model, dataset, config, test=test, monitor=watermark.hook())
    ber1, er1 = watermark.measure(tuned)
    err = evaluate(tuned, test) if test is not None else math.nan
    return tuned, FinetuneReport(er0, er1, ber0, ber1, err, record)


# -- overwriting -----------------------------------------------------------

@dataclass
class OverwriteSpec:
    target_layers: list
    family: str = "random"
    seed: int = 1
    bits: int = 64
    config: TrainConfig = field(default_factory=TrainConfig)
    reg_lambda: float = 0.01
    payload: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.target_layers, str):
            self.target_layers = [self.target_layers]
        if not self.target_layers:
            raise ConfigurationError("overwrite needs at least one target layer")
        if self.bits < 1:
            raise ConfigurationError("overwrite payload length must be >= 1")
        if self.family not in KEY_FAMILIES:
            raise ConfigurationError(f"unknown key family {self.family!r}")

    def new_payload(self):
        if self.payload is not None:
            return as_bits(self.payload)
        draws = SplitMix64(self.seed).spawn("overwrite-payload").integers(2, self.bits)
        return draws.astype(np.uint8)


@dataclass
class OverwriteReport:
    original_ber: float
    original_e_r: float
    new_ber: float
    new_e_r: float
    test_error: float
    record: ExperimentRecord


def overwrite_attack(model, spec: OverwriteSpec, dataset, watermark: Watermark, test=None, keys=None):
    """Embed a second watermark (new key per target layer) by further training.

    ``keys`` optionally maps layer ids to ready-made keys, e.g. to re-embed
    with the owner's own key.
    """
    payload = spec.new_payload()
    hooks = []
    for i, layer_id in enumerate(spec.target_layers):
        key = (keys or {}).get(layer_id)
        if key is None:
            M = model.conv_layer(layer_id).fan_in
            seed = SplitMix64(spec.seed).spawn(f"overwrite-key-{i}").seed
            key = generate_key(spec.family, spec.bits, M, seed)
        hooks.append(RegularizerHook(key, payload, layer_id, spec.reg_lambda))
    attacked, record = train(model, dataset, spec.config, hooks, test=test)
    ber, e_r = watermark.measure(attacked)
    new_wrong = sum(h.ber(attacked) * h.key.T for h in hooks)
    new_ber = new_wrong / sum(h.key.T for h in hooks)
    new_e_r = sum(h.loss(attacked) for h in hooks)
    err = evaluate(attacked, test) if test is not None else math.nan
    return attacked, OverwriteReport(ber, e_r, new_ber, new_e_r, err, record)


# -- distillation ----------------------------------------------------------

@dataclass
class DistillReport:
    student_test_error: float
    teacher_test_error: float
    ber: float
    e_r: float
    record: ExperimentRecord


def teacher_probabilities(teacher, images, batch_size=256):
    """Temperature-1 softmax outputs of the teacher."""
    return softmax(teacher.predict_logits(images, batch_size).astype(np.float64))


def fresh_student(teacher, seed):
    student = teacher.copy()
    init_seed = SplitMix64(seed).spawn("distill-student").seed
    return initialize(student, init_seed)


def distill_attack(teacher, config: TrainConfig, dataset, watermark: Watermark, test=None, hook=None):
    """Train a freshly initialized copy of the teacher's architecture on its soft outputs.

    Labels in ``dataset`` are never read. A ``hook`` turns this into
    distill-to-embed.
    """
    student = fresh_student(teacher, config.seed)
    probs = teacher_probabilities(teacher, dataset.images)
    monitor = None if hook is not None else watermark.hook()
    student, record = train(
        student, dataset, config, hook, test=test, soft_targets=probs, monitor=monitor
    )
    ber, e_r = watermark.measure(student)
    s_err = evaluate(student, test) if test is not None else math.nan
    t_err = evaluate(teacher, test) if test is not None else math.nan
    return student, DistillReport(s_err, t_err, ber, e_r, record)
