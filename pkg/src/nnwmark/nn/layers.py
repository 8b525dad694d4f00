"""Layers of the numpy engine.

Activations flow in NHWC layout. Convolution weights are stored as
``(S, S, D, L)`` tensors, which is also the layout the watermark code reads.
Every layer implements ``forward(x, cache)`` and ``backward(dout, cache)``;
``backward`` returns the input gradient and fills ``self.grads``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

LAYER_KINDS = (
    "conv2d",
    "dense",
    "relu",
    "max_pool",
    "global_avg_pool",
    "flatten",
    "residual_add",
)


class Layer:
    kind: str = ""
    param_names: tuple[str, ...] = ()

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def spec(self) -> dict:
        """Kind tag plus the shape fields needed to rebuild the layer."""
        return {"kind": self.kind, "name": self.name}

    def forward(self, x, cache):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError

    def __repr__(self):
        fields = ", ".join(f"{k}={v!r}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({fields})"


class Conv2D(Layer):
    """Stride-1 'same' convolution with an odd square filter."""

    kind = "conv2d"
    param_names = ("weight", "bias")

    def __init__(self, name, filter_size, in_depth, filters, dtype=np.float32):
        super().__init__(name)
        if filter_size < 1 or filter_size % 2 == 0:
            raise ConfigurationError(f"{name}: filter size must be odd, got {filter_size}")
        if in_depth < 1 or filters < 1:
            raise ConfigurationError(f"{name}: depth and filter count must be >= 1")
        self.filter_size = int(filter_size)
        self.in_depth = int(in_depth)
        self.filters = int(filters)
        shape = (self.filter_size, self.filter_size, self.in_depth, self.filters)
        self.params["weight"] = np.zeros(shape, dtype=dtype)
        self.params["bias"] = np.zeros(self.filters, dtype=dtype)

    @property
    def fan_in(self):
        return self.filter_size * self.filter_size * self.in_depth

    def spec(self):
        return {
            "kind": self.kind,
            "name": self.name,
            "filter_size": self.filter_size,
            "in_depth": self.in_depth,
            "filters": self.filters,
        }

    def output_shape(self, shape):
        if len(shape) != 3 or shape[2] != self.in_depth:
            raise ConfigurationError(
                f"{self.name}: expected (H, W, {self.in_depth}) input, got {shape}"
            )
        return (shape[0], shape[1], self.filters)

    def _im2col(self, x):
        n, h, w, d = x.shape
        s = self.filter_size
        p = s // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = np.empty((n, h, w, s, s, d), dtype=x.dtype)
        for i in range(s):
            for j in range(s):
                cols[:, :, :, i, j, :] = xp[:, i : i + h, j : j + w, :]
        return cols.reshape(n * h * w, s * s * d)

    def forward(self, x, cache):
        n, h, w, _ = x.shape
        cols = self._im2col(x)
        wmat = self.params["weight"].reshape(self.fan_in, self.filters)
        out = cols @ wmat + self.params["bias"]
        cache["cols"] = cols
        cache["in_shape"] = x.shape
        return out.reshape(n, h, w, self.filters)

    def backward(self, dout, cache):
        n, h, w, d = cache["in_shape"]
        s = self.filter_size
        p = s // 2
        d2 = dout.reshape(-1, self.filters)
        wmat = self.params["weight"].reshape(self.fan_in, self.filters)
        self.grads["weight"] = (cache["cols"].T @ d2).reshape(self.params["weight"].shape)
        self.grads["bias"] = d2.sum(axis=0)
        dcols = (d2 @ wmat.T).reshape(n, h, w, s, s, d)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, d), dtype=dout.dtype)
        for i in range(s):
            for j in range(s):
                dxp[:, i : i + h, j : j + w, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p : p + h, p : p + w, :]


class Dense(Layer):
    kind = "dense"
    param_names = ("weight", "bias")

    def __init__(self, name, in_features, out_features, dtype=np.float32):
        super().__init__(name)
        if in_features < 1 or out_features < 1:
            raise ConfigurationError(f"{name}: feature counts must be >= 1")
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params["weight"] = np.zeros((self.in_features, self.out_features), dtype=dtype)
        self.params["bias"] = np.zeros(self.out_features, dtype=dtype)

    @property
    def fan_in(self):
        return self.in_features

    def spec(self):
        return {
            "kind": self.kind,
            "name": self.name,
            "in_features": self.in_features,
            "out_features": self.out_features,
        }

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ConfigurationError(
                f"{self.name}: expected ({self.in_features},) input, got {shape}"
            )
        return (self.out_features,)

    def forward(self, x, cache):
        cache["x"] = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout, cache):
        self.grads["weight"] = cache["x"].T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, cache):
        mask = x > 0
        cache["mask"] = mask
        return x * mask

    def backward(self, dout, cache):
        return dout * cache["mask"]


class MaxPool(Layer):
    """Non-overlapping ``size x size`` max pooling; ties go to the first element."""

    kind = "max_pool"

    def __init__(self, name, size=2):
        super().__init__(name)
        self.size = int(size)

    def spec(self):
        return {"kind": self.kind, "name": self.name, "size": self.size}

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] % self.size or shape[1] % self.size:
            raise ConfigurationError(
                f"{self.name}: spatial dims {shape[:2]} not divisible by {self.size}"
            )
        return (shape[0] // self.size, shape[1] // self.size, shape[2])

    def forward(self, x, cache):
        n, h, w, c = x.shape
        k = self.size
        blocks = x.reshape(n, h // k, k, w // k, k, c).transpose(0, 1, 3, 5, 2, 4)
        blocks = blocks.reshape(n, h // k, w // k, c, k * k)
        idx = blocks.argmax(axis=-1)
        cache["idx"] = idx
        cache["in_shape"] = x.shape
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout, cache):
        n, h, w, c = cache["in_shape"]
        k = self.size
        grad = np.zeros((n, h // k, w // k, c, k * k), dtype=dout.dtype)
        np.put_along_axis(grad, cache["idx"][..., None], dout[..., None], axis=-1)
        grad = grad.reshape(n, h // k, w // k, c, k, k).transpose(0, 1, 4, 2, 5, 3)
        return grad.reshape(n, h, w, c)


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ConfigurationError(f"{self.name}: expected (H, W, C) input, got {shape}")
        return (shape[2],)

    def forward(self, x, cache):
        cache["in_shape"] = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout, cache):
        n, h, w, c = cache["in_shape"]
        scale = np.asarray(1.0 / (h * w), dtype=dout.dtype)
        return np.broadcast_to((dout * scale)[:, None, None, :], (n, h, w, c)).copy()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, cache):
        cache["in_shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, cache):
        return dout.reshape(cache["in_shape"])


class ResidualAdd(Layer):
    """Adds the output of an earlier layer (``skip_from``) to its input."""

    kind = "residual_add"

    def __init__(self, name, skip_from):
        super().__init__(name)
        self.skip_from = skip_from

    def spec(self):
        return {"kind": self.kind, "name": self.name, "skip_from": self.skip_from}

    def forward(self, x, cache, skip=None):
        return x + skip

    def backward(self, dout, cache):
        # The same gradient also flows to ``skip_from``; the model routes it.
        return dout


def make_layer(spec: dict, dtype=np.float32) -> Layer:
    kind = spec["kind"]
    name = spec["name"]
    if kind == "conv2d":
        return Conv2D(name, spec["filter_size"], spec["in_depth"], spec["filters"], dtype)
    if kind == "dense":
        return Dense(name, spec["in_features"], spec["out_features"], dtype)
    if kind == "relu":
        return ReLU(name)
    if kind == "max_pool":
        return MaxPool(name, spec.get("size", 2))
    if kind == "global_avg_pool":
        return GlobalAvgPool(name)
    if kind == "flatten":
        return Flatten(name)
    if kind == "residual_add":
        return ResidualAdd(name, spec["skip_from"])
    raise ConfigurationError(f"unknown layer kind {kind!r}")
