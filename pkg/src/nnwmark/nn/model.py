"""Host network container and the default desk-scale CNN."""

from __future__ import annotations

import copy

import numpy as np

from ..errors import ConfigurationError, NumericError
from ..rng import SplitMix64
from .layers import Conv2D, Dense, GlobalAvgPool, Layer, MaxPool, ReLU, ResidualAdd


class HostModel:
    """An ordered stack of layers with shape checking.

    ``input_shape`` is ``(channels, height, width)``; batches are passed in
    NCHW layout and converted to NHWC internally.
    """

    def __init__(self, layers, input_shape, num_classes, embed_layer_id=None):
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = int(num_classes)
        self.embed_layer_id = embed_layer_id
        self._caches: list[dict] | None = None
        self.validate()

    # -- structure -------------------------------------------------------
    def validate(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ConfigurationError("layer names must be unique")
        if len(self.input_shape) != 3:
            raise ConfigurationError("input_shape must be (channels, height, width)")
        c, h, w = self.input_shape
        shape = (h, w, c)
        seen: dict[str, tuple] = {}
        for layer in self.layers:
            if isinstance(layer, ResidualAdd):
                if layer.skip_from not in seen:
                    raise ConfigurationError(
                        f"{layer.name}: skip source {layer.skip_from!r} must precede it"
                    )
                if seen[layer.skip_from] != shape:
                    raise ConfigurationError(
                        f"{layer.name}: skip shape {seen[layer.skip_from]} != {shape}"
                    )
            shape = layer.output_shape(shape)
            seen[layer.name] = shape
        if shape != (self.num_classes,):
            raise ConfigurationError(
                f"network output shape {shape} does not match {self.num_classes} classes"
            )
        if self.embed_layer_id is not None:
            self.conv_layer(self.embed_layer_id)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ConfigurationError(f"no layer named {name!r}")

    def conv_layer(self, name: str) -> Conv2D:
        layer = self.layer(name)
        if not isinstance(layer, Conv2D):
            raise ConfigurationError(f"layer {name!r} is {layer.kind}, not conv2d")
        return layer

    def conv_names(self) -> list[str]:
        return [layer.name for layer in self.layers if isinstance(layer, Conv2D)]

    @property
    def dtype(self):
        for layer in self.layers:
            for arr in layer.params.values():
                return arr.dtype
        return np.dtype(np.float32)

    def parameters(self) -> dict[tuple[str, str], np.ndarray]:
        """Live references to every trainable tensor keyed by (layer, param)."""
        return {
            (layer.name, pname): layer.params[pname]
            for layer in self.layers
            for pname in layer.param_names
        }

    def decayed_keys(self) -> set[tuple[str, str]]:
        return {key for key in self.parameters() if key[1] == "weight"}

    def copy(self) -> "HostModel":
        clone = copy.deepcopy(self)
        clone._caches = None
        return clone

    def check_finite(self):
        for (lname, pname), arr in self.parameters().items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in {lname}.{pname}")

    # -- computation -----------------------------------------------------
    def _to_nhwc(self, batch):
        batch = np.asarray(batch)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.input_shape:
            raise ConfigurationError(
                f"batch shape {batch.shape} does not match input shape (N, {self.input_shape})"
            )
        return np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=self.dtype)

    def forward(self, batch, keep_cache=False):
        x = self._to_nhwc(batch)
        outputs: dict[str, np.ndarray] = {}
        caches = []
        for layer in self.layers:
            cache: dict = {}
            if isinstance(layer, ResidualAdd):
                x = layer.forward(x, cache, skip=outputs[layer.skip_from])
            else:
                x = layer.forward(x, cache)
            outputs[layer.name] = x
            caches.append(cache)
        self._caches = caches if keep_cache else None
        return x

    def backward(self, dlogits) -> dict[tuple[str, str], np.ndarray]:
        """Backpropagate from the loss gradient of the last ``forward(keep_cache=True)``."""
        if self._caches is None:
            raise ConfigurationError("backward needs a preceding forward(keep_cache=True)")
        pending: dict[str, np.ndarray] = {}
        grad = np.asarray(dlogits, dtype=self.dtype)
        for layer, cache in zip(reversed(self.layers), reversed(self._caches)):
            if layer.name in pending:
                grad = grad + pending.pop(layer.name)
            grad = layer.backward(grad, cache)
            if isinstance(layer, ResidualAdd):
                pending[layer.skip_from] = pending.get(layer.skip_from, 0) + grad
        self._caches = None
        return {
            (layer.name, pname): layer.grads[pname]
            for layer in self.layers
            for pname in layer.param_names
        }

    def predict_logits(self, images, batch_size=256):
        outs = [
            self.forward(images[i : i + batch_size])
            for i in range(0, len(images), batch_size)
        ]
        return np.concatenate(outs, axis=0)

    def summary(self) -> str:
        lines = []
        for layer in self.layers:
            extra = ""
            if isinstance(layer, Conv2D):
                extra = f" W={layer.params['weight'].shape} M={layer.fan_in}"
            elif isinstance(layer, Dense):
                extra = f" W={layer.params['weight'].shape}"
            lines.append(f"{layer.name:<8} {layer.kind}{extra}")
        return "\n".join(lines)


def initialize(model: HostModel, seed: int) -> HostModel:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases, in place.

    Each layer draws from its own named sub-stream so adding a layer does not
    perturb the others.
    """
    root = SplitMix64(seed).spawn("init")
    for layer in model.layers:
        if not layer.param_names:
            continue
        w = layer.params["weight"]
        std = np.sqrt(2.0 / layer.fan_in)
        draws = root.spawn(layer.name).normal(w.size) * std
        layer.params["weight"] = draws.reshape(w.shape).astype(w.dtype)
        layer.params["bias"] = np.zeros_like(layer.params["bias"])
    return model


def build_host(
    input_shape=(3, 16, 16),
    num_classes=4,
    widths=(16, 64, 64, 64),
    filter_size=3,
    residual=False,
    seed=0,
    dtype=np.float32,
    embed_layer_id=None,
) -> HostModel:
    """Plain CNN with groups conv1..conv4.

    conv1 and conv2 are each followed by 2x2 max pooling; conv3 and conv4 run
    at the reduced resolution.  With ``residual`` the conv3 activation is
    added to conv4's output before its ReLU (needs equal widths).
    """
    c, h, w = input_shape
    if len(widths) != 4:
        raise ConfigurationError("widths must list four group widths")
    if residual and widths[2] != widths[3]:
        raise ConfigurationError("residual skip needs conv3 and conv4 widths equal")
    w1, w2, w3, w4 = widths
    layers: list[Layer] = [
        Conv2D("conv1", filter_size, c, w1, dtype),
        ReLU("relu1"),
        MaxPool("pool1", 2),
        Conv2D("conv2", filter_size, w1, w2, dtype),
        ReLU("relu2"),
        MaxPool("pool2", 2),
        Conv2D("conv3", filter_size, w2, w3, dtype),
        ReLU("relu3"),
        Conv2D("conv4", filter_size, w3, w4, dtype),
    ]
    if residual:
        layers.append(ResidualAdd("res4", "relu3"))
    layers += [ReLU("relu4"), GlobalAvgPool("gap"), Dense("fc", w4, num_classes, dtype)]
    model = HostModel(layers, input_shape, num_classes, embed_layer_id)
    return initialize(model, seed)
