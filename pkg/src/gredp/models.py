"""Sequential models and the evaluated architectures."""

from __future__ import annotations

import math

import numpy as np

from .layers import AvgPool2D, CirculantFC, Conv2D, Flatten, Layer, MaxPool2D, ReLU, ShapeError


class Model:
    """Ordered layer stack with a step counter.

    ``forward`` keeps one cache per layer so a single ``backward`` call can
    hand every trainable layer its input and upstream gradient.
    """

    def __init__(self, layers: list[Layer], in_shape: tuple, name: str = "model"):
        self.layers = list(layers)
        self.in_shape = tuple(in_shape)
        self.name = name
        self.step = 0
        shape = self.in_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.out_shape = shape

    @property
    def trainable(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.params]

    def init(self, rng: np.random.Generator) -> "Model":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
        for i in self.trainable:
            layer = self.layers[i]
            bound = 1.0 / math.sqrt(layer.fan_in)
            w = layer.params["w"]
            layer.params["w"] = rng.uniform(-bound, bound, size=w.shape)
            layer.params["b"] = np.zeros_like(layer.params["b"])
        return self

    def forward(self, x) -> tuple[np.ndarray, list]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.in_shape:
            raise ShapeError(f"{self.name} expects inputs {self.in_shape}, got {x.shape[1:]}")
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, upstream, caches) -> dict[int, np.ndarray]:
        """Upstream gradient at the output of every trainable layer."""
        grads = {}
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            if layer.params:
                grads[i] = upstream
            if i > 0:
                upstream = layer.backward(upstream, caches[i])
        return grads

    def predict(self, x, chunk: int = 1000) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[s:s + chunk])[0].argmax(axis=-1) for s in range(0, len(x), chunk)]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def accuracy(self, x, y) -> float:
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def get_params(self) -> list[dict]:
        return [{k: v.copy() for k, v in layer.params.items()} for layer in self.layers]

    def set_params(self, params: list[dict]) -> None:
        for layer, p in zip(self.layers, params):
            for k, v in p.items():
                layer.params[k] = v.copy()

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers if layer.params)
        return f"{self.name}({inner})"


def _conv_stack(in_shape, channels, d, pool) -> tuple[list[Layer], tuple]:
    layers: list[Layer] = []
    shape = tuple(in_shape)
    for c_out in channels:
        conv = Conv2D(shape[-1], c_out, d)
        layers += [conv, ReLU(), pool()]
        for layer in layers[-3:]:
            shape = layer.out_shape(shape)
    layers.append(Flatten())
    return layers, layers[-1].out_shape(shape)


def _fc_stack(n: int, widths) -> list[Layer]:
    layers: list[Layer] = []
    for k, m in enumerate(widths):
        layers.append(CirculantFC(n, m))
        if k < len(widths) - 1:
            layers.append(ReLU())
        n = m
    return layers


def _build(name, in_shape, channels, d, pool, widths) -> Model:
    try:
        convs, flat = _conv_stack(in_shape, channels, d, pool)
    except ShapeError as err:
        raise ShapeError(f"{name} cannot take input {tuple(in_shape)}: {err}") from None
    return Model(convs + _fc_stack(flat[0], widths), in_shape, name)


def lenet5(in_shape=(28, 28, 1), classes: int = 10) -> Model:
    return _build("lenet5", in_shape, (6, 6), 5, MaxPool2D, (120, 84, classes))


def resnet20(in_shape=(32, 32, 3)) -> Model:
    # plain conv stack with a single 64-unit output layer used directly as logits
    return _build("resnet20", in_shape, (7, 6, 6), 3, AvgPool2D, (64,))


def model3(in_shape=(32, 32, 3), classes: int = 10) -> Model:
    return _build("model3", in_shape, (2, 2, 2), 3, MaxPool2D, (120, classes))


def alexnet(in_shape=(96, 96, 3), classes: int = 10) -> Model:
    """Five single-kernel conv/pool stages; needs at least 94x94 input."""
    return _build("alexnet", in_shape, (1,) * 5, 3, MaxPool2D, (120, 84, classes))


def mlp_circulant(in_dim: int, hidden: int = 64, classes: int = 2) -> Model:
    return Model(_fc_stack(in_dim, (hidden, classes)), (in_dim,), "mlp")


BUILDERS = {
    "lenet5": lenet5,
    "resnet20": resnet20,
    "model3": model3,
    "alexnet": alexnet,
    "mlp": mlp_circulant,
}
