"""Layers whose weight gradients are computed in the frequency domain.

Tensors are channels-last: images are ``(..., h, w, c)`` and vectors are
``(..., n)``; any leading axes are treated as a batch. Convolution kernels
are stored as ``(c_in, c_out, d, d)`` and block-circulant weights as
``(p, q, d)`` first rows.

Both spectral weight gradients are scaled so that ``ifft(G).real`` is the
exact time-domain gradient under the unitary transform:

* convolution: ``G = sqrt(h w) * fft2(X_j) * conj(fft2(pad(dL/do_i)))`` on the
  full ``h x w`` grid, cropped to ``d x d`` after the inverse transform;
* circulant FC: ``G = sqrt(d) * fft(x_j) * conj(fft(dL/do_i))`` per block.

The conjugate turns the element-wise product into the cross-correlation
that the chain rule produces for these layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import spectral
from .mechanisms import Mechanism, NoiseSpec, clip, perturb_spectrum, prefix_mask, sample_real_noise


class ShapeError(ValueError):
    pass


# --------------------------------------------------------------------------- conv


@dataclass(frozen=True)
class ConvLayerSpec:
    c_in: int
    c_out: int
    d: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.d, self.h, self.w) < 1:
            raise ShapeError(f"all conv dimensions must be positive: {self}")
        if self.d > self.h or self.d > self.w:
            raise ShapeError(f"kernel {self.d} larger than input {self.h}x{self.w}")

    @property
    def out_hw(self) -> tuple[int, int]:
        return self.h - self.d + 1, self.w - self.d + 1


def _conv_shapes(x: np.ndarray, w: np.ndarray) -> ConvLayerSpec:
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be (c_in, c_out, d, d), got {w.shape}")
    if x.ndim < 3:
        raise ShapeError(f"input must be (..., h, w, c_in), got {x.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects c_in={w.shape[0]}")
    return ConvLayerSpec(w.shape[0], w.shape[1], w.shape[2], x.shape[-3], x.shape[-2])


def _windows(x: np.ndarray, d: int) -> np.ndarray:
    # (..., h, w, c) -> (..., h_out, w_out, c, d, d)
    return sliding_window_view(x, (d, d), axis=(-3, -2))


def conv2d_forward(x, w) -> np.ndarray:
    """Valid, stride-1 cross-correlation ``o_i = sum_j X_j (*) W_ij``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _conv_shapes(x, w)
    return np.tensordot(_windows(x, w.shape[2]), w, axes=([-3, -2, -1], [0, 2, 3]))


def conv2d_input_grad(upstream, w) -> np.ndarray:
    upstream = np.asarray(upstream, dtype=np.float64)
    d = w.shape[2]
    pad = [(0, 0)] * (upstream.ndim - 3) + [(d - 1, d - 1), (d - 1, d - 1), (0, 0)]
    flipped = w[:, :, ::-1, ::-1]
    return np.tensordot(_windows(np.pad(upstream, pad), d), flipped, axes=([-3, -2, -1], [1, 2, 3]))


def _check_upstream(upstream: np.ndarray, spec: ConvLayerSpec, lead: tuple) -> None:
    expected = lead + spec.out_hw + (spec.c_out,)
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient has shape {upstream.shape}, expected {expected}")


def conv2d_weight_grad(upstream, x, d: int) -> np.ndarray:
    """Time-domain kernel gradient ``(..., c_in, c_out, d, d)``."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    win = _windows(x, d)
    lead = x.shape[:-3]
    h_out, w_out, c_in = win.shape[-5], win.shape[-4], win.shape[-3]
    c_out = upstream.shape[-1]
    a = win.reshape(lead + (h_out * w_out, c_in * d * d))
    u = upstream.reshape(lead + (h_out * w_out, c_out))
    g = np.matmul(np.swapaxes(u, -1, -2), a)  # (..., c_out, c_in*d*d)
    return np.swapaxes(g.reshape(lead + (c_out, c_in, d, d)), -3, -4)


def conv2d_spectral_grad(upstream, x) -> np.ndarray:
    """Frequency-domain kernel gradient on the ``h x w`` grid, ``(..., c_in, c_out, h, w)``."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    h_out, w_out = upstream.shape[-3], upstream.shape[-2]
    pad = [(0, 0)] * (upstream.ndim - 3) + [(0, h - h_out), (0, w - w_out), (0, 0)]
    fx = spectral.fft2(np.moveaxis(x, -1, -3))  # (..., c_in, h, w)
    fu = spectral.fft2(np.moveaxis(np.pad(upstream, pad), -1, -3))  # (..., c_out, h, w)
    return math.sqrt(h * w) * fx[..., :, None, :, :] * np.conj(fu[..., None, :, :, :])


def conv2d_from_spectral(G, d: int) -> np.ndarray:
    """Inverse transform, real part, crop to the kernel support."""
    return spectral.ifft2(G).real[..., :d, :d]


def conv2d_weight_grad_spectral(upstream, x, spec: NoiseSpec | None = None,
                                mechanism: Mechanism | None = None,
                                rng: np.random.Generator | None = None, *, d: int | None = None) -> np.ndarray:
    """Kernel gradient through the frequency domain, optionally privatized.

    Each ``(j, i)`` kernel's spectrum is treated as one unit: it is clipped
    to ``spec.clip``, receives noise and (for Spectral-DP) the prefix
    filter before the inverse transform. ``dpsgd`` perturbs the cropped
    time-domain kernel gradient instead. With ``spec`` omitted the exact
    gradient is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if d is None:
        d = x.shape[-3] - upstream.shape[-3] + 1
    cs = ConvLayerSpec(x.shape[-1], upstream.shape[-1], d, x.shape[-3], x.shape[-2])
    _check_upstream(upstream, cs, x.shape[:-3])
    if spec is None:
        return conv2d_from_spectral(conv2d_spectral_grad(upstream, x), d)
    if mechanism is None or rng is None:
        raise ValueError("a mechanism and an rng are required when spec is given")
    if mechanism.kind == "dpsgd":
        g = clip(conv2d_weight_grad(upstream, x, d), spec.clip, axes=2)
        return g + sample_real_noise(g.shape, spec, rng)
    G = perturb_spectrum(conv2d_spectral_grad(upstream, x), spec, mechanism, rng, axes=2)
    return conv2d_from_spectral(G, d)


# ----------------------------------------------------------------- circulant FC


@dataclass(frozen=True)
class CirculantFCSpec:
    m: int
    n: int
    d: int

    def __post_init__(self):
        if min(self.m, self.n, self.d) < 1:
            raise ShapeError(f"circulant dimensions must be positive: {self}")
        if self.m % self.d or self.n % self.d:
            raise ShapeError(f"block size {self.d} must divide out_dim {self.m} and in_dim {self.n}")

    @property
    def p(self) -> int:
        return self.m // self.d

    @property
    def q(self) -> int:
        return self.n // self.d


def _segments(x: np.ndarray, q: int, d: int) -> np.ndarray:
    if x.shape[-1] != q * d:
        raise ShapeError(f"input length {x.shape[-1]} does not match in_dim {q * d}")
    return x.reshape(x.shape[:-1] + (q, d))


def _check_rows(w: np.ndarray) -> None:
    if w.ndim != 3:
        raise ShapeError(f"circulant weights must be (p, q, d), got {w.shape}")


def circfc_forward(x, w_rows) -> np.ndarray:
    """``o_i = sum_j W_ij x_j`` with each ``W_ij`` circulant in its first row."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w_rows, dtype=np.float64)
    _check_rows(w)
    p, q, d = w.shape
    fx = spectral.fft(_segments(x, q, d))  # (..., q, d)
    O = math.sqrt(d) * np.einsum("ijk,...jk->...ik", np.conj(spectral.fft(w)), fx)
    return spectral.ifft(O).real.reshape(x.shape[:-1] + (p * d,))


def circfc_input_grad(upstream, w_rows) -> np.ndarray:
    w = np.asarray(w_rows, dtype=np.float64)
    p, q, d = w.shape
    fu = spectral.fft(_segments(np.asarray(upstream, dtype=np.float64), p, d))
    X = math.sqrt(d) * np.einsum("ijk,...ik->...jk", spectral.fft(w), fu)
    return spectral.ifft(X).real.reshape(fu.shape[:-2] + (q * d,))


def circfc_weight_grad(upstream, x, d: int) -> np.ndarray:
    """Time-domain block gradient ``dL/dw_ij[m] = sum_r u_i[r] x_j[(m+r) mod d]``."""
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    xs = x.reshape(x.shape[:-1] + (-1, d))
    us = upstream.reshape(upstream.shape[:-1] + (-1, d))
    idx = (np.arange(d)[:, None] + np.arange(d)[None, :]) % d
    shifted = xs[..., idx]  # (..., q, m, r)
    return np.einsum("...ir,...jmr->...ijm", us, shifted)


def circfc_spectral_grad(upstream, x, d: int) -> np.ndarray:
    """Per-block spectra ``(..., p, q, d)`` of the weight gradient."""
    fx = spectral.fft(np.asarray(x, dtype=np.float64).reshape(np.shape(x)[:-1] + (-1, d)))
    fu = spectral.fft(np.asarray(upstream, dtype=np.float64).reshape(np.shape(upstream)[:-1] + (-1, d)))
    return math.sqrt(d) * np.conj(fu[..., :, None, :]) * fx[..., None, :, :]


def circfc_from_spectral(G) -> np.ndarray:
    return spectral.ifft(G).real


def circfc_weight_grad_spectral(upstream, x, spec: NoiseSpec | None = None,
                                mechanism: Mechanism | None = None,
                                rng: np.random.Generator | None = None, *, d: int) -> np.ndarray:
    """Block gradients ``(p, q, d)`` through the frequency domain.

    Each block spectrum is one clipping and noise unit, mirroring
    :func:`conv2d_weight_grad_spectral`.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    CirculantFCSpec(upstream.shape[-1], x.shape[-1], d)
    if upstream.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"batch shapes differ: {upstream.shape} vs {x.shape}")
    if spec is None:
        return circfc_from_spectral(circfc_spectral_grad(upstream, x, d))
    if mechanism is None or rng is None:
        raise ValueError("a mechanism and an rng are required when spec is given")
    if mechanism.kind == "dpsgd":
        g = clip(circfc_weight_grad(upstream, x, d), spec.clip, axes=1)
        return g + sample_real_noise(g.shape, spec, rng)
    G = perturb_spectrum(circfc_spectral_grad(upstream, x, d), spec, mechanism, rng, axes=1)
    return circfc_from_spectral(G)


# ------------------------------------------------------- activations and pooling


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(upstream, x) -> np.ndarray:
    return np.where(np.asarray(x) > 0, upstream, 0.0)


def _pool_view(x: np.ndarray, k: int) -> np.ndarray:
    h, w = x.shape[-3] // k, x.shape[-2] // k
    if h < 1 or w < 1:
        raise ShapeError(f"pooling window {k} larger than input {x.shape[-3]}x{x.shape[-2]}")
    x = x[..., : h * k, : w * k, :]
    return x.reshape(x.shape[:-3] + (h, k, w, k, x.shape[-1]))


def max_pool2d(x, k: int = 2) -> np.ndarray:
    """Max pooling with stride ``k``; trailing rows/columns that do not fill a window are dropped."""
    return _pool_view(np.asarray(x, dtype=np.float64), k).max(axis=(-4, -2))


def max_pool2d_backward(upstream, x, k: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    v = _pool_view(x, k)
    h, w, c = v.shape[-5], v.shape[-3], v.shape[-1]
    lead = v.shape[:-5]
    # route each window's gradient to its first maximal element
    flat = np.moveaxis(v, -4, -3).reshape(lead + (h, w, k * k, c))
    winner = flat.argmax(axis=-2)
    onehot = np.arange(k * k)[:, None] == winner[..., None, :]
    g = onehot * np.asarray(upstream)[..., None, :]
    g = np.moveaxis(g.reshape(lead + (h, w, k, k, c)), -3, -4).reshape(lead + (h * k, w * k, c))
    out = np.zeros_like(x)
    out[..., : h * k, : w * k, :] = g
    return out


def avg_pool2d(x, k: int = 2) -> np.ndarray:
    return _pool_view(np.asarray(x, dtype=np.float64), k).mean(axis=(-4, -2))


def avg_pool2d_backward(upstream, x, k: int = 2) -> np.ndarray:
    x = np.asarray(x)
    up = np.asarray(upstream, dtype=np.float64) / (k * k)
    g = np.repeat(np.repeat(up, k, axis=-3), k, axis=-2)
    out = np.zeros(x.shape)
    out[..., : g.shape[-3], : g.shape[-2], :] = g
    return out


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, labels) -> np.ndarray:
    """Per-sample softmax cross-entropy against integer class labels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)].flat[0]
        raise ValueError(f"label {bad} out of range for {n_classes} classes")
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, labels[..., None].astype(np.intp), axis=-1)[..., 0]
    return logz - picked


def cross_entropy_backward(logits, labels) -> np.ndarray:
    """Gradient of each sample's loss with respect to its own logits."""
    cross_entropy_loss(logits, labels)  # validates labels
    p = softmax(logits)
    onehot = np.arange(p.shape[-1]) == np.asarray(labels)[..., None]
    return p - onehot


# ------------------------------------------------------------- layer objects


class Layer:
    """Stateless-ish building block; ``forward`` caches what ``backward`` needs."""

    params: dict

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, upstream, cache):
        raise NotImplementedError

    def out_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError


class Conv2D(Layer):
    transform_ndim = 2

    def __init__(self, c_in: int, c_out: int, d: int):
        super().__init__()
        self.c_in, self.c_out, self.d = c_in, c_out, d
        self.params = {"w": np.zeros((c_in, c_out, d, d)), "b": np.zeros(c_out)}

    @property
    def fan_in(self) -> int:
        return self.c_in * self.d * self.d

    def out_shape(self, in_shape):
        h, w, c = in_shape
        ConvLayerSpec(c, self.c_out, self.d, h, w)
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {c}")
        return (h - self.d + 1, w - self.d + 1, self.c_out)

    def forward(self, x):
        return conv2d_forward(x, self.params["w"]) + self.params["b"], x

    def backward(self, upstream, x):
        return conv2d_input_grad(upstream, self.params["w"])

    def time_grads(self, x, upstream):
        return {"w": conv2d_weight_grad(upstream, x, self.d), "b": upstream.sum(axis=(-3, -2))}

    def spectral_grad(self, x, upstream):
        return conv2d_spectral_grad(upstream, x)

    def from_spectral(self, G):
        return conv2d_from_spectral(G, self.d)

    def __repr__(self):
        return f"Conv2D({self.c_in}->{self.c_out}, {self.d}x{self.d})"


class CirculantFC(Layer):
    transform_ndim = 1

    def __init__(self, n: int, m: int, d: int | None = None):
        super().__init__()
        d = math.gcd(n, m) if d is None else d
        self.spec = CirculantFCSpec(m, n, d)
        self.n, self.m, self.d = n, m, d
        self.params = {"w": np.zeros((self.spec.p, self.spec.q, d)), "b": np.zeros(m)}

    @property
    def fan_in(self) -> int:
        return self.n

    def out_shape(self, in_shape):
        if in_shape != (self.n,):
            raise ShapeError(f"circulant FC expects ({self.n},), got {in_shape}")
        return (self.m,)

    def forward(self, x):
        return circfc_forward(x, self.params["w"]) + self.params["b"], x

    def backward(self, upstream, x):
        return circfc_input_grad(upstream, self.params["w"])

    def time_grads(self, x, upstream):
        return {"w": circfc_weight_grad(upstream, x, self.d), "b": upstream}

    def spectral_grad(self, x, upstream):
        return circfc_spectral_grad(upstream, x, self.d)

    def from_spectral(self, G):
        return circfc_from_spectral(G)

    def dense(self) -> np.ndarray:
        """Materialized ``(m, n)`` weight matrix."""
        p, q, d = self.params["w"].shape
        idx = (np.arange(d)[None, :] - np.arange(d)[:, None]) % d
        blocks = self.params["w"][:, :, idx]  # (p, q, r, k)
        return blocks.transpose(0, 2, 1, 3).reshape(p * d, q * d)

    def __repr__(self):
        return f"CirculantFC({self.n}->{self.m}, block {self.d})"


class ReLU(Layer):
    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        return relu(x), x

    def backward(self, upstream, x):
        return relu_backward(upstream, x)


class MaxPool2D(Layer):
    def __init__(self, k: int = 2):
        super().__init__()
        self.k = k

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if h // self.k < 1 or w // self.k < 1:
            raise ShapeError(f"pooling window {self.k} larger than input {h}x{w}")
        return (h // self.k, w // self.k, c)

    def forward(self, x):
        return max_pool2d(x, self.k), x

    def backward(self, upstream, x):
        return max_pool2d_backward(upstream, x, self.k)


class AvgPool2D(MaxPool2D):
    def forward(self, x):
        return avg_pool2d(x, self.k), x

    def backward(self, upstream, x):
        return avg_pool2d_backward(upstream, x, self.k)


class Flatten(Layer):
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, upstream, shape):
        return upstream.reshape(shape)


def mask_for(layer: Layer, G_shape: tuple, rho: float) -> np.ndarray:
    """Spectral-DP prefix filter for one transform unit of ``layer``."""
    return prefix_mask(G_shape[len(G_shape) - layer.transform_ndim:], rho)
