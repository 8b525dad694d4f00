"""File formats: binary model files, JSON key/payload files, CSV records.

Model file layout (all integers unsigned little-endian)::

    "NNWM"                          4-byte magic
    version                         u32 (currently 1)
    input shape C, H, W             3 x u32
    num_classes                     u32
    embed layer name                u32 length + UTF-8 (length 0 = none)
    layer count                     u32
    per layer:
        name                        u32 length + UTF-8
        kind tag                    u8, index into LAYER_KINDS
        rank, dims                  u32 + rank x u32
        extra                       u32 length + UTF-8 (skip source of residual_add, else empty)
        weights, biases             float32 LE, row-major (conv2d and dense only)
    checksum                        u64, first 8 bytes of BLAKE2b(all preceding bytes)

Shapes: conv2d stores the weight shape (S, S, D, L), dense (in, out),
max_pool (size,), other kinds rank 0.  Biases have the last weight dim.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct

import numpy as np

from .errors import ChecksumError, DataError, ValidationError, VersionError
from .nn.layers import LAYER_KINDS, Conv2D, Dense, MaxPool, ResidualAdd, make_layer
from .nn.model import HostModel
from .record import ExperimentRecord, RecordRow
from .watermark.core import as_bits
from .watermark.keys import KeyMatrix, generate_key, key_from_matrix

MAGIC = b"NNWM"
MODEL_VERSION = 1
KEY_VERSION = 1
BITS_VERSION = 1
RECORD_COLUMNS = ("E0", "E_R", "total", "test_error", "BER")


def checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


# -- models ----------------------------------------------------------------

def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def model_to_bytes(model: HostModel) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", MODEL_VERSION)
    out += struct.pack("<3I", *model.input_shape)
    out += struct.pack("<I", model.num_classes)
    out += _pack_str(model.embed_layer_id or "")
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        out += _pack_str(layer.name)
        out += struct.pack("<B", LAYER_KINDS.index(layer.kind))
        if layer.param_names:
            dims = layer.params["weight"].shape
        elif isinstance(layer, MaxPool):
            dims = (layer.size,)
        else:
            dims = ()
        out += struct.pack(f"<I{len(dims)}I", len(dims), *dims)
        out += _pack_str(layer.skip_from if isinstance(layer, ResidualAdd) else "")
        for pname in layer.param_names:
            out += np.ascontiguousarray(layer.params[pname], dtype="<f4").tobytes()
    out += checksum(bytes(out))
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataError(f"{self.source}: truncated at byte offset {self.pos}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def model_from_bytes(raw: bytes, source="<bytes>") -> HostModel:
    if len(raw) < 16:
        raise DataError(f"{source}: truncated at byte offset {len(raw)}")
    if raw[:4] != MAGIC:
        raise DataError(f"{source}: not a model file (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != MODEL_VERSION:
        raise VersionError(f"{source}: model format version {version} is not supported (expected {MODEL_VERSION})")
    body, stored = raw[:-8], raw[-8:]
    if checksum(body) != stored:
        raise ChecksumError(f"{source}: checksum mismatch")
    r = _Reader(body, source)
    r.take(8)
    input_shape = tuple(struct.unpack("<3I", r.take(12)))
    num_classes = r.u32()
    embed = r.string() or None
    layers = []
    for _ in range(r.u32()):
        name = r.string()
        tag = struct.unpack("<B", r.take(1))[0]
        if tag >= len(LAYER_KINDS):
            raise DataError(f"{source}: unknown layer kind tag {tag} at byte offset {r.pos - 1}")
        kind = LAYER_KINDS[tag]
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        extra = r.string()
        spec = {"kind": kind, "name": name}
        if kind == "conv2d":
            if rank != 4 or dims[0] != dims[1]:
                raise DataError(f"{source}: bad conv2d shape {dims}")
            spec.update(filter_size=dims[0], in_depth=dims[2], filters=dims[3])
        elif kind == "dense":
            if rank != 2:
                raise DataError(f"{source}: bad dense shape {dims}")
            spec.update(in_features=dims[0], out_features=dims[1])
        elif kind == "max_pool":
            spec.update(size=dims[0] if dims else 2)
        elif kind == "residual_add":
            spec.update(skip_from=extra)
        layer = make_layer(spec)
        if layer.param_names:
            size = int(np.prod(dims))
            layer.params["weight"] = r.floats(size).reshape(dims)
            layer.params["bias"] = r.floats(dims[-1])
        layers.append(layer)
    if r.pos != len(body):
        raise DataError(f"{source}: {len(body) - r.pos} unexpected trailing bytes at offset {r.pos}")
    return HostModel(layers, input_shape, num_classes, embed)


def save_model(model: HostModel, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> HostModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), str(path))


# -- keys and payloads -----------------------------------------------------

def key_to_dict(key: KeyMatrix, layer_id=None, explicit=None) -> dict:
    doc = {
        "format": "nnwm-key",
        "version": KEY_VERSION,
        "family": key.family,
        "T": key.T,
        "M": key.M,
        "seed": key.seed,
        "layer": layer_id,
    }
    if key.explicit if explicit is None else explicit:
        doc["matrix"] = key.X.tolist()
    return doc


def key_from_dict(doc: dict):
    """Returns ``(key, layer_id)``."""
    if doc.get("format") != "nnwm-key":
        raise DataError("not a key file")
    if doc.get("version") != KEY_VERSION:
        raise VersionError(f"key file version {doc.get('version')} is not supported")
    family, T, M, seed = doc["family"], int(doc["T"]), int(doc["M"]), int(doc["seed"])
    if "matrix" in doc:
        key = key_from_matrix(family, doc["matrix"], seed)
        if key.shape != (T, M):
            raise ValidationError(f"matrix shape {key.shape} does not match T={T}, M={M}")
    else:
        key = generate_key(family, T, M, seed)
    return key, doc.get("layer")


def save_key(key: KeyMatrix, path, layer_id=None, explicit=None):
    with open(path, "w") as fh:
        json.dump(key_to_dict(key, layer_id, explicit), fh, indent=1)
        fh.write("\n")


def load_key(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from None
    return key_from_dict(doc)


def bits_to_dict(bits) -> dict:
    bits = as_bits(bits)
    return {
        "format": "nnwm-bits",
        "version": BITS_VERSION,
        "T": int(bits.size),
        "bits": "".join(str(int(v)) for v in bits),
    }


def bits_from_dict(doc: dict) -> np.ndarray:
    if doc.get("format") != "nnwm-bits":
        raise DataError("not a payload file")
    if doc.get("version") != BITS_VERSION:
        raise VersionError(f"payload file version {doc.get('version')} is not supported")
    text = doc["bits"]
    if len(text) != int(doc["T"]) or set(text) - {"0", "1"}:
        raise ValidationError("payload string must be T characters of '0'/'1'")
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def save_bits(bits, path):
    with open(path, "w") as fh:
        json.dump(bits_to_dict(bits), fh)
        fh.write("\n")


def load_bits(path) -> np.ndarray:
    with open(path) as fh:
        return bits_from_dict(json.load(fh))


# -- experiment records ----------------------------------------------------

def _fmt(value) -> str:
    return "nan" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.9g}"


def export_record(record: ExperimentRecord, path):
    tagged = any(row.tag is not None for row in record.rows)
    header = [record.index_name, *RECORD_COLUMNS] + (["tag"] if tagged else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in record.rows:
            cells = [_fmt(row.index), _fmt(row.e0), _fmt(row.e_r), _fmt(row.total),
                     _fmt(row.test_error), _fmt(row.ber)]
            if tagged:
                cells.append(row.tag or "")
            writer.writerow(cells)


def read_record(path) -> ExperimentRecord:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty record file")
    header = rows[0]
    record = ExperimentRecord(header[0])
    tagged = len(header) == 7
    for cells in rows[1:]:
        values = [float(c) for c in cells[:6]]
        tag = (cells[6] or None) if tagged else None
        record.rows.append(RecordRow(*values, tag=tag))
    return record
