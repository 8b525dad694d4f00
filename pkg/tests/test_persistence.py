import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnwmark import (
    ChecksumError,
    DataError,
    ExperimentRecord,
    ValidationError,
    VersionError,
    build_host,
    export_record,
    generate_key,
    load_bits,
    load_key,
    load_model,
    read_record,
    save_bits,
    save_key,
    save_model,
)
from nnwmark.persistence import key_from_dict, key_to_dict, model_from_bytes, model_to_bytes

FIXTURES = Path(__file__).parent / "fixtures"


def _same_model(a, b):
    assert a.input_shape == b.input_shape
    assert a.num_classes == b.num_classes
    assert a.embed_layer_id == b.embed_layer_id
    assert [(l.name, l.kind) for l in a.layers] == [(l.name, l.kind) for l in b.layers]
    for key, value in a.parameters().items():
        assert np.array_equal(value, b.parameters()[key])


@pytest.mark.parametrize("residual", [False, True])
def test_model_round_trip_is_bit_exact(tmp_path, residual):
    model = build_host(seed=3, residual=residual, embed_layer_id="conv3")
    save_model(model, tmp_path / "m.nnwm")
    back = load_model(tmp_path / "m.nnwm")
    _same_model(model, back)
    assert model_to_bytes(back) == (tmp_path / "m.nnwm").read_bytes()


def test_loaded_model_predicts_identically():
    model = build_host(seed=1)
    back = model_from_bytes(model_to_bytes(model))
    x = np.random.default_rng(0).normal(size=(4, 3, 16, 16)).astype(np.float32)
    assert np.array_equal(model.predict_logits(x), back.predict_logits(x))


def test_corrupted_byte_is_rejected():
    raw = bytearray(model_to_bytes(build_host(seed=0)))
    raw[100] ^= 0x01
    with pytest.raises(ChecksumError):
        model_from_bytes(bytes(raw))


def test_corrupted_checksum_is_rejected():
    raw = bytearray(model_to_bytes(build_host(seed=0)))
    raw[-1] ^= 0xFF
    with pytest.raises(ChecksumError):
        model_from_bytes(bytes(raw))


def test_wrong_version_and_magic():
    raw = bytearray(model_to_bytes(build_host(seed=0)))
    raw[4] = 9
    with pytest.raises(VersionError):
        model_from_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        model_from_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(DataError, match="truncated"):
        model_from_bytes(bytes(raw[:10]))


def test_hex_fixture_loads_to_documented_model():
    raw = bytes.fromhex((FIXTURES / "tiny_model.hex").read_text().strip())
    model = model_from_bytes(raw)
    assert model.input_shape == (1, 2, 2)
    assert model.num_classes == 2
    assert model.embed_layer_id == "c"
    assert [l.kind for l in model.layers] == ["conv2d", "relu", "global_avg_pool", "dense"]
    assert model.layer("c").params["weight"].ravel().tolist() == [0.5, -1.0]
    assert model.layer("c").params["bias"].tolist() == [0.25, 0.0]
    assert model.layer("d").params["weight"].tolist() == [[1, 2], [3, 4]]
    assert model.layer("d").params["bias"].tolist() == [0.0, 0.5]
    x = np.array([[[[1.0, 2.0], [3.0, -4.0]]]], dtype=np.float32)
    # conv: relu(0.5x + 0.25) averages to 0.9375, relu(-x) to 1.0
    assert model.predict_logits(x).tolist() == [[3.9375, 6.375]]
    assert model_to_bytes(model) == raw


def test_key_round_trip_seed_only(tmp_path):
    key = generate_key("random", 16, 32, 7)
    save_key(key, tmp_path / "k.json", layer_id="conv3")
    back, layer = load_key(tmp_path / "k.json")
    assert layer == "conv3"
    assert back == key
    assert np.array_equal(back.X, key.X)
    assert "matrix" not in json.loads((tmp_path / "k.json").read_text())


@pytest.mark.parametrize("family", ["direct", "diff", "random"])
def test_key_round_trip_explicit(tmp_path, family):
    key = generate_key(family, 8, 12, 2)
    save_key(key, tmp_path / "k.json", explicit=True)
    back, _ = load_key(tmp_path / "k.json")
    assert np.array_equal(back.X, key.X)


def test_explicit_diff_matrix_with_bad_row_is_rejected():
    key = generate_key("diff", 4, 6, 0)
    doc = key_to_dict(key, explicit=True)
    doc["matrix"][2] = [1, 1, 0, 0, 0, 0]
    with pytest.raises(ValidationError, match="row 2"):
        key_from_dict(doc)


def test_key_file_errors(tmp_path):
    doc = key_to_dict(generate_key("random", 2, 3, 0))
    doc["version"] = 2
    with pytest.raises(VersionError):
        key_from_dict(doc)
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(DataError):
        load_key(tmp_path / "bad.json")


def test_bits_file(tmp_path):
    path = tmp_path / "b.json"
    path.write_text(json.dumps({"format": "nnwm-bits", "version": 1, "T": 4, "bits": "1011"}))
    assert load_bits(path).tolist() == [1, 0, 1, 1]
    path.write_text(json.dumps({"format": "nnwm-bits", "version": 1, "T": 4, "bits": "10a1"}))
    with pytest.raises(ValidationError):
        load_bits(path)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_bits_round_trip(tmp_path_factory, bits):
    path = tmp_path_factory.mktemp("bits") / "b.json"
    save_bits(bits, path)
    assert load_bits(path).tolist() == bits


def test_empty_record_is_header_only(tmp_path):
    export_record(ExperimentRecord(), tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == ["epoch,E0,E_R,total,test_error,BER"]


def test_one_epoch_record(tmp_path):
    rec = ExperimentRecord()
    rec.append(1, 0.5, 2.0, 0.52, 0.1, 0.0)
    export_record(rec, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1] == "1,0.5,2,0.52,0.1,0"


def test_tagged_record_round_trip(tmp_path):
    rec = ExperimentRecord("alpha")
    rec.append(0.5, math.nan, 3.0, math.nan, 0.2, 0.25, tag="ascending")
    export_record(rec, tmp_path / "r.csv")
    back = read_record(tmp_path / "r.csv")
    assert back.index_name == "alpha"
    assert back.rows[0].tag == "ascending"
    assert math.isnan(back.rows[0].e0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 5), max_size=6))
def test_record_parses_back_within_tolerance(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rec") / "r.csv"
    rec = ExperimentRecord()
    for i, row in enumerate(rows):
        rec.append(i + 1, *row)
    export_record(rec, path)
    back = read_record(path)
    assert len(back) == len(rec)
    for a, b in zip(rec.rows, back.rows):
        for name in ("e0", "e_r", "total", "test_error", "ber"):
            x, y = getattr(a, name), getattr(b, name)
            # half a unit in the ninth significant digit
            assert abs(x - y) <= 5e-9 * abs(x) + 1e-300
