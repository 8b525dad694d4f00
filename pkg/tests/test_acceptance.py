"""The twelve acceptance criteria at desk scale.

Training runs are shared between criteria through a small cache, so the whole
module costs roughly a dozen 20-epoch trainings.  Each criterion prints one
PASS/FAIL line; the lines are also collected into the terminal summary.
"""

import functools
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ks_2samp

from conftest import ACCEPTANCE_LINES, numeric_grad, rel_close
from nnwmark import (
    ChecksumError,
    OverwriteSpec,
    PruneSpec,
    SynthSpec,
    TrainConfig,
    Watermark,
    build_host,
    direct_embed,
    distill_attack,
    embedding_loss,
    embedding_loss_grad,
    evaluate,
    finetune_attack,
    generate_key,
    overwrite_attack,
    prune,
    synth_dataset,
    train,
)
from nnwmark.cli import main
from nnwmark.nn.training import backward
from nnwmark.persistence import (
    bits_from_dict,
    bits_to_dict,
    key_from_dict,
    key_to_dict,
    model_from_bytes,
    model_to_bytes,
)
from nnwmark.rng import SplitMix64
from nnwmark.watermark.core import ones_payload

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
KEY_SEED = 100
LAYER = "conv3"  # M = 576
FIXTURES = Path(__file__).parent / "fixtures"


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def data(domain=0):
    if domain == 0:
        return synth_dataset(SynthSpec())
    return synth_dataset(SynthSpec(domain=domain, seed=5))


# name -> (family, T, layer, lambda, payload seed or None for all ones)
RUNS = {
    "base": None,
    "random64": ("random", 64, LAYER, 0.01, None),
    "direct64": ("direct", 64, LAYER, 0.01, None),
    "diff64": ("diff", 64, LAYER, 0.01, None),
    "direct64_strong": ("direct", 64, LAYER, 1.0, None),
    "random256": ("random", 256, LAYER, 0.01, None),
    "capacity_half": ("random", 72, "conv2", 0.01, 3),
    "capacity_4x": ("random", 576, "conv2", 0.01, 3),
}


def watermark(name):
    family, T, layer, _, payload_seed = RUNS[name]
    M = build_host().conv_layer(layer).fan_in
    bits = ones_payload(T) if payload_seed is None else SplitMix64(payload_seed).integers(2, T)
    return Watermark(generate_key(family, T, M, KEY_SEED), bits, layer)


@functools.lru_cache(maxsize=None)
def trained(name, seed=0):
    tr, te = data()
    hook = None
    if RUNS[name] is not None:
        hook = watermark(name).hook(RUNS[name][3])
    model, _ = train(build_host(seed=seed), tr, TrainConfig(seed=seed), hook, test=te)
    return model


def conv_weights(model):
    return model.conv_layer(LAYER).params["weight"].ravel()


def test_criterion_01_gradients(toy_model):
    start = time.perf_counter()
    worst_er = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(32, 64))
        w = rng.normal(scale=0.1, size=64)
        b = rng.integers(0, 2, size=32)
        g = embedding_loss_grad(X, w, b)
        for i in range(64):
            fd = numeric_grad(lambda: embedding_loss(X, w, b), w, i)
            worst_er = max(worst_er, abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-12))

    rng = np.random.default_rng(0)
    batch = rng.normal(size=(3, 2, 4, 4))
    labels = np.array([0, 2, 1])
    grads, _ = backward(toy_model, batch, labels)
    worst_nn = 0.0
    for key, param in toy_model.parameters().items():
        for idx in range(param.size):
            fd = numeric_grad(lambda: backward(toy_model, batch, labels)[1], param, idx)
            an = grads[key].flat[idx]
            if not rel_close(an, fd, 1e-4):
                worst_nn = np.inf
            elif abs(fd) > 1e-6:
                worst_nn = max(worst_nn, abs(an - fd) / abs(fd))
    elapsed = time.perf_counter() - start
    ok = worst_er <= 1e-5 and worst_nn <= 1e-4 and elapsed < 5
    verdict(1, ok, f"E_R grad worst rel err {worst_er:.2e}, "
                   f"backward worst rel err {worst_nn:.2e}, {elapsed:.2f}s")


def test_criterion_02_fidelity():
    _, te = data()
    wm = watermark("random64")
    bers, gaps = [], []
    for seed in SEEDS:
        embedded = trained("random64", seed)
        bers.append(wm.measure(embedded)[0])
        gaps.append(abs(evaluate(embedded, te) - evaluate(trained("base", seed), te)))
    ber, gap = float(np.median(bers)), float(np.median(gaps))
    verdict(2, ber == 0.0 and gap <= 0.02,
            f"median BER {ber:.4f} (per seed {bers}), median |test error gap| {gap:.4f}")


def test_criterion_03_key_family_ordering():
    e_r = {name: watermark(name).measure(trained(name))[1] for name in ("random64", "direct64", "diff64")}
    ok = e_r["random64"] < e_r["diff64"] and e_r["random64"] < e_r["direct64"]
    verdict(3, ok, "final E_R " + ", ".join(f"{k}={v:.4g}" for k, v in e_r.items()))


def test_criterion_04_parameter_distribution():
    base = conv_weights(trained("base"))
    random_p = ks_2samp(base, conv_weights(trained("random64"))).pvalue
    strong = trained("direct64_strong")
    direct_ber = watermark("direct64_strong").measure(strong)[0]
    direct_p = ks_2samp(base, conv_weights(strong)).pvalue
    ok = random_p >= 0.01 and direct_ber == 0.0 and direct_p < 0.01
    verdict(4, ok, f"KS p random={random_p:.3g} (needs >= 0.01), "
                   f"direct at BER {direct_ber:.3f} p={direct_p:.3g} (needs < 0.01)")


def test_criterion_05_direct_embed_trend():
    _, te = data()
    base = trained("base")
    base_err = evaluate(base, te)
    wm = watermark("random64")
    rows = []
    for lam in (0.0, 1.0, 10.0, 100.0):
        model, res = direct_embed(base, LAYER, wm.key, wm.bits, lam)
        rows.append((lam, res.ber, res.proximity, evaluate(model, te)))
    bers = [r[1] for r in rows]
    prox = [r[2] for r in rows]
    ok = (
        all(a >= b for a, b in zip(bers, bers[1:]))
        and all(a <= b for a, b in zip(prox, prox[1:]))
        and any(r[1] == 0.0 and r[3] > base_err for r in rows)
    )
    detail = "; ".join(f"lambda={l:g} BER={b:.3f} prox={p:.3g} err={e:.3f}" for l, b, p, e in rows)
    verdict(5, ok, f"{detail} (untouched err {base_err:.3f})")


def test_criterion_06_finetune():
    tr, te = data()
    tr2, te2 = data(domain=1)
    model = trained("random64")
    wm = watermark("random64")
    cfg = TrainConfig(seed=0).scaled(0.5)
    _, same = finetune_attack(model, tr, cfg, wm, te)
    _, cross = finetune_attack(model, tr2, cfg, wm, te2)
    ok = same.ber_after == 0.0 and cross.ber_after == 0.0 and cross.e_r_after > cross.e_r_before
    verdict(6, ok, f"same-domain BER {same.ber_after:.4f}; cross-domain BER {cross.ber_after:.4f}, "
                   f"E_R {cross.e_r_before:.4g} -> {cross.e_r_after:.4g}")


def test_criterion_07_pruning():
    model = trained("random64")
    wm = watermark("random64")
    M = model.conv_layer(LAYER).fan_in

    def ber(rate, order, seed=0):
        return wm.measure(prune(model, PruneSpec(LAYER, rate, order, seed)))[0]

    low = [ber(a, "ascending") for a in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)]
    ok = M >= 512 and max(low) == 0.0
    parts = [f"ascending BER up to alpha=0.5: max {max(low):.4f}"]
    for rate in (0.25, 0.5, 0.75):
        med = {o: float(np.median([ber(rate, o, s) for s in range(5)]))
               for o in ("ascending", "random", "descending")}
        ok &= med["ascending"] <= med["random"] <= med["descending"]
        parts.append(f"alpha={rate}: asc {med['ascending']:.3f} rnd {med['random']:.3f} "
                     f"desc {med['descending']:.3f}")
    verdict(7, ok, "; ".join(parts))


def test_criterion_08_overwriting():
    tr, te = data()
    model = trained("random256")
    wm = watermark("random256")
    cfg = TrainConfig(seed=0).scaled(0.5)
    bers = []
    for n_bits in (256, 512, 1024):
        _, rep = overwrite_attack(model, OverwriteSpec([LAYER], bits=n_bits, seed=7, config=cfg), tr, wm, te)
        bers.append(rep.original_ber)
    _, other = overwrite_attack(model, OverwriteSpec(["conv2"], bits=256, seed=7, config=cfg), tr, wm, te)
    ok = bers[0] > 0 and all(a <= b for a, b in zip(bers, bers[1:])) and other.original_ber == 0.0
    verdict(8, ok, f"original BER after T'=256/512/1024: {bers[0]:.4f}/{bers[1]:.4f}/{bers[2]:.4f}; "
                   f"other group {other.original_ber:.4f}")


def test_criterion_09_distillation():
    tr, te = data()
    _, rep = distill_attack(trained("random256"), TrainConfig(seed=0), tr, watermark("random256"), te)
    ok = 0.35 <= rep.ber <= 0.65 and abs(rep.student_test_error - rep.teacher_test_error) <= 0.05
    verdict(9, ok, f"student BER {rep.ber:.4f}, test error student {rep.student_test_error:.4f} "
                   f"teacher {rep.teacher_test_error:.4f}")


def test_criterion_10_capacity():
    big_ber, big_er = watermark("capacity_4x").measure(trained("capacity_4x"))
    _, half_er = watermark("capacity_half").measure(trained("capacity_half"))
    ok = big_ber > 0 or big_er > 10 * half_er
    verdict(10, ok, f"T=4M: BER {big_ber:.4f}, E_R {big_er:.4g}; T=M/2: E_R {half_er:.4g}")


def test_criterion_11_serialization():
    model = build_host(seed=9, residual=True, embed_layer_id=LAYER)
    raw = model_to_bytes(model)
    back = model_from_bytes(raw)
    ok = model_to_bytes(back) == raw and all(
        np.array_equal(v, back.parameters()[k]) for k, v in model.parameters().items()
    )
    for family in ("direct", "diff", "random"):
        key = generate_key(family, 16, 576, 4)
        for explicit in (False, True):
            again, layer = key_from_dict(key_to_dict(key, LAYER, explicit))
            ok &= layer == LAYER and np.array_equal(again.X, key.X)
    bits = SplitMix64(1).integers(2, 100)
    ok &= np.array_equal(bits_from_dict(bits_to_dict(bits)), bits)

    fixture = bytes.fromhex((FIXTURES / "tiny_model.hex").read_text().strip())
    tiny = model_from_bytes(fixture)
    x = np.array([[[[1.0, 2.0], [3.0, -4.0]]]], dtype=np.float32)
    ok &= tiny.predict_logits(x).tolist() == [[3.9375, 6.375]]

    corrupt = bytearray(raw)
    corrupt[-3] ^= 0x10
    try:
        model_from_bytes(bytes(corrupt))
        rejected = False
    except ChecksumError:
        rejected = True
    verdict(11, ok and rejected, f"round-trips exact: {bool(ok)}, corrupted checksum rejected: {rejected}")


def test_criterion_12_determinism(tmp_path):
    args = ["--threads", "1", "--seed", "3", "embed", "--epochs", "2", "--lr-drops", "", "--bits", "32"]
    outputs = []
    for run in ("a", "b"):
        assert main(["--out-dir", str(tmp_path / run), *args]) == 0
        outputs.append((tmp_path / run / "model.nnwm").read_bytes())
    verdict(12, outputs[0] == outputs[1], f"model files byte-identical: {outputs[0] == outputs[1]} "
                                          f"({len(outputs[0])} bytes)")
