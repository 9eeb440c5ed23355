"""Differentially private SGD with per-layer spectral perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .accountant import spent_epsilon
from .data import Dataset
from .layers import cross_entropy_backward, cross_entropy_loss, mask_for
from .mechanisms import GREDP, Mechanism, NoiseSpec, clip, make_rng, sample_complex_noise, sample_real_noise
from .models import Model

PER_SAMPLE = "per-sample"
PER_BATCH = "per-batch"

# called as hook(layer_index, param_name, draws) whenever noise is added
NoiseHook = Callable[[int, str, int], None]


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 500
    epochs: int = 5
    lr: float = 0.01
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(1.0, 0.0))
    mechanism: Mechanism = GREDP
    granularity: str = PER_SAMPLE
    seed: int = 0
    delta: float = 1e-5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.granularity not in (PER_SAMPLE, PER_BATCH):
            raise ValueError(f"noise granularity must be {PER_SAMPLE!r} or {PER_BATCH!r}, got {self.granularity!r}")


@dataclass(frozen=True)
class MetricRecord:
    step: int
    epoch: int
    train_loss: float
    val_acc: float
    epsilon_spent: float


def _check_batch_size(n: int, b: int) -> None:
    if n == 0:
        raise ValueError("dataset is empty")
    if b > n:
        raise ValueError(f"batch size {b} exceeds dataset size {n}")


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Dataset:
    """``batch_size`` distinct samples in random order."""
    _check_batch_size(len(dataset), batch_size)
    return dataset.take(rng.permutation(len(dataset))[:batch_size])


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One shuffled pass split into ``n // batch_size`` full batches."""
    _check_batch_size(n, batch_size)
    order = rng.permutation(n)
    return [order[k * batch_size:(k + 1) * batch_size] for k in range(n // batch_size)]


def per_sample_grads(model: Model, batch: Dataset, mechanism: Mechanism) -> tuple[dict, np.ndarray]:
    """Per-sample gradients of every trainable layer and per-sample losses.

    Weights come back as spectra for the frequency-domain mechanisms and as
    time-domain gradients for DPSGD; biases are always time-domain.
    """
    logits, caches = model.forward(batch.x)
    losses = cross_entropy_loss(logits, batch.y)
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise FloatingPointError(f"non-finite loss at step {model.step} for batch positions {bad[:10].tolist()}")
    ups = model.backward(cross_entropy_backward(logits, batch.y), caches)
    grads = {}
    for i, up in ups.items():
        layer, x = model.layers[i], caches[i]
        w = layer.spectral_grad(x, up) if mechanism.spectral else layer.time_grads(x, up)["w"]
        b = up.sum(axis=(1, 2)) if up.ndim == 4 else up
        grads[i] = {"w": w, "b": b}
    return grads, losses


def _noisy_sum(g: np.ndarray, noise: Callable, granularity: str, hook, i, name) -> np.ndarray:
    """Sum clipped per-sample units over the batch with noise at the chosen granularity."""
    if granularity == PER_SAMPLE:
        if hook:
            hook(i, name, len(g))
        return (g + noise(g.shape)).sum(axis=0)
    if hook:
        hook(i, name, 1)
    return g.sum(axis=0) + noise(g.shape[1:])


def privatize(model: Model, grads: dict, cfg: TrainingConfig, rng: np.random.Generator,
              hook: NoiseHook | None = None) -> dict:
    """Clip, noise and aggregate per-sample gradients into summed updates."""
    spec, mech = cfg.noise, cfg.mechanism
    # Spectral-DP always splits its noise evenly; GReDP honours the configured split
    cspec = spec if mech.kind == "gredp" else NoiseSpec(spec.clip, spec.sigma)
    out = {}
    for i, g in grads.items():
        layer = model.layers[i]
        w = clip(g["w"], spec.clip, axes=g["w"].ndim - 1)
        if mech.spectral:
            total = _noisy_sum(w, lambda s: sample_complex_noise(s, cspec, rng), cfg.granularity, hook, i, "w")
            if mech.kind == "spectraldp" and mech.rho < 1:
                # the prefix filter is linear, so masking the sum masks every sample
                total = total * mask_for(layer, total.shape, mech.rho)
            w_sum = layer.from_spectral(total)
        else:
            w_sum = _noisy_sum(w, lambda s: sample_real_noise(s, spec, rng), cfg.granularity, hook, i, "w")
        b = clip(g["b"], spec.clip, axes=g["b"].ndim - 1)
        b_sum = _noisy_sum(b, lambda s: sample_real_noise(s, spec, rng), cfg.granularity, hook, i, "b")
        out[i] = {"w": w_sum, "b": b_sum}
    return out


def dp_step(model: Model, batch: Dataset, cfg: TrainingConfig, rng: np.random.Generator,
            hook: NoiseHook | None = None) -> tuple[Model, float]:
    """One private update ``W <- W - lr / B * sum``; returns the model and mean batch loss.

    The model is updated in place.
    """
    grads, losses = per_sample_grads(model, batch, cfg.mechanism)
    sums = privatize(model, grads, cfg, rng, hook)
    scale = cfg.lr / len(batch)
    for i, s in sums.items():
        params = model.layers[i].params
        params["w"] = params["w"] - scale * s["w"]
        params["b"] = params["b"] - scale * s["b"]
    model.step += 1
    return model, float(losses.mean())


def train(model: Model, train_set: Dataset, cfg: TrainingConfig, val: Dataset | None = None,
          hook: NoiseHook | None = None) -> tuple[Model, list[MetricRecord]]:
    """Run ``epochs * (N // B)`` steps, logging once per epoch.

    Sampling and noise use separate streams derived from ``cfg.seed`` so
    changing the mechanism never changes which batches are drawn.
    """
    log: list[MetricRecord] = []
    if cfg.epochs == 0 or len(train_set) // cfg.batch_size == 0:
        return model, log
    sampler = make_rng(cfg.seed, 1)
    noise_rng = make_rng(cfg.seed, 2)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for idx in epoch_batches(len(train_set), cfg.batch_size, sampler):
            _, loss = dp_step(model, train_set.take(idx), cfg, noise_rng, hook)
            losses.append(loss)
        acc = model.accuracy(val.x, val.y) if val is not None else math.nan
        eps = spent_epsilon(cfg.noise.sigma, model.step, cfg.delta)
        log.append(MetricRecord(model.step, epoch, float(np.mean(losses)), acc, eps))
    return model, log
