"""Experiment orchestration, CSV results and Monte-Carlo verification."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import io
import math
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _backend, data as datasets
from .accountant import calibrate_sigma, spent_epsilon
from .data import Dataset
from .mechanisms import DPSGD, Mechanism, NoiseSpec, fre, fre2d, make_rng, perturb, spectral_dp
from .models import BUILDERS, Model
from .training import PER_BATCH, PER_SAMPLE, TrainingConfig, train

RESULT_FIELDS = ("experiment_id", "seed", "mechanism", "epsilon", "delta", "clip", "sigma", "batch", "lr",
                 "epoch", "metric", "value")
METRICS = ("test_acc", "train_loss")
DEFAULT_EPSILONS = (0.5, 1.0, 1.5, 2.0)
DEFAULT_CLIPS = (0.1, 1.0)
DEFAULT_MECHANISMS = ("dpsgd", "spectraldp:0.5", "gredp")


@dataclass
class ExperimentConfig:
    name: str = ""
    model: str = "lenet5"
    data: str = "mnist5k"
    data_dir: str = "data/mnist5k"
    synth_dims: int = 10
    synth_classes: int = 2
    synth_count: int = 500
    hidden: int = 64
    mechanism: str = "gredp"
    epsilon: float = 2.0
    delta: float = 1e-5
    clip: float = 1.0
    sigma: float | None = None
    batch: int = 500
    lr: float = 0.01
    epochs: int = 5
    seed: int = 0
    trials: int = 1
    noise_granularity: str = PER_SAMPLE
    metrics: str = "test_acc"
    out: str = "results/train.csv"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if self.model not in BUILDERS:
            raise ValueError(f"unknown model {self.model!r}; choose from {sorted(BUILDERS)}")
        Mechanism.parse(self.mechanism)
        if self.noise_granularity not in (PER_SAMPLE, PER_BATCH):
            raise ValueError(f"noise granularity must be {PER_SAMPLE} or {PER_BATCH}")
        unknown = set(self.metric_list) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {METRICS}")
        if self.data not in ("synthetic", "mnist5k") and not Path(self.data).exists():
            raise FileNotFoundError(f"data path {self.data} does not exist")

    @property
    def metric_list(self) -> list[str]:
        return [m.strip() for m in self.metrics.split(",") if m.strip()]

    @property
    def noise_multiplier(self) -> float:
        return self.sigma if self.sigma is not None else calibrate_sigma(self.epsilon, self.delta)

    @property
    def experiment_id(self) -> str:
        return self.name or f"{self.model}-{self.mechanism}-eps{self.epsilon:g}-c{self.clip:g}"

    def training_config(self, seed: int) -> TrainingConfig:
        return TrainingConfig(
            batch_size=self.batch, epochs=self.epochs, lr=self.lr,
            noise=NoiseSpec(self.clip, self.noise_multiplier), mechanism=Mechanism.parse(self.mechanism),
            granularity=self.noise_granularity, seed=seed, delta=self.delta,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ValueError(f"unknown config key {name!r}")
    kind = types[name]
    if raw in ("", "none", "None") and "None" in kind:
        return None
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, value) if key in {f.name for f in fields(ExperimentConfig)} else value
    return out


def load_config(path=None, **overrides) -> tuple[ExperimentConfig, dict]:
    """Config file values overridden by non-None keyword arguments.

    Returns the experiment config and any extra keys (sweep grids).
    """
    values = parse_config(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    extra = {k: v for k, v in values.items() if k not in known}
    stray = sorted(k for k in extra if not k.startswith("sweep_"))
    if stray:
        raise ValueError(f"unknown config keys {stray}")
    return ExperimentConfig(**{k: v for k, v in values.items() if k in known}), extra


# ------------------------------------------------------------------- datasets


def _idx_pair(folder: Path, prefix: str) -> tuple[Path, Path] | None:
    for ext in (".gz", ""):
        img = folder / f"{prefix}-images-idx3-ubyte{ext}"
        lab = folder / f"{prefix}-labels-idx1-ubyte{ext}"
        if img.exists() and lab.exists():
            return img, lab
    return None


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train and test sets named by ``cfg.data``."""
    if cfg.data == "synthetic":
        full = datasets.gen_synthetic(cfg.synth_dims, cfg.synth_classes, cfg.synth_count, cfg.seed)
        return datasets.split(full, cfg.synth_count // 5, cfg.seed)
    if cfg.data == "mnist5k":
        folder = Path(cfg.data_dir)
        if _idx_pair(folder, "train") is None:
            datasets.mnist5k(folder)
    else:
        folder = Path(cfg.data)
        if folder.suffix == ".npz":
            full = datasets.load_npz(folder)
            return datasets.split(full, len(full) // 5, cfg.seed)
    train_files = _idx_pair(folder, "train")
    if train_files is None:
        raise FileNotFoundError(f"no train-images/train-labels IDX files in {folder}")
    train_set = datasets.load_mnist_idx(*train_files)
    test_files = _idx_pair(folder, "test") or _idx_pair(folder, "t10k")
    if test_files is None:
        raise FileNotFoundError(f"no test IDX files in {folder}")
    return train_set, datasets.load_mnist_idx(*test_files)


def build_model(cfg: ExperimentConfig, train_set: Dataset) -> Model:
    shape = train_set.x.shape[1:]
    classes = train_set.classes
    if cfg.model == "mlp":
        if len(shape) != 1:
            raise ValueError(f"the mlp model needs flat features, got sample shape {shape}")
        return BUILDERS["mlp"](shape[0], cfg.hidden, classes)
    if len(shape) != 3:
        raise ValueError(f"{cfg.model} needs (h, w, c) images, got sample shape {shape}")
    if cfg.model == "resnet20":
        return BUILDERS["resnet20"](shape)
    return BUILDERS[cfg.model](shape, classes)


# ----------------------------------------------------------------- experiments


@dataclass(frozen=True)
class ResultRow:
    experiment_id: str
    seed: int
    mechanism: str
    epsilon: float
    delta: float
    clip: float
    sigma: float
    batch: int
    lr: float
    epoch: int
    metric: str
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.metric} is not finite: {self.value}")

    def cells(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in dataclasses.astuple(self)]


def run_trials(cfg: ExperimentConfig, train_set: Dataset, test_set: Dataset) -> Iterator[ResultRow]:
    """Train once per trial seed ``cfg.seed + t`` and yield rows epoch by epoch."""
    sigma = cfg.noise_multiplier
    for t in range(cfg.trials):
        seed = cfg.seed + t
        model = build_model(cfg, train_set).init(make_rng(seed, 0))
        _, log = train(model, train_set, cfg.training_config(seed), test_set)
        for rec in log:
            values = {"test_acc": rec.val_acc, "train_loss": rec.train_loss}
            for metric in cfg.metric_list:
                yield ResultRow(cfg.experiment_id, seed, cfg.mechanism, spent_epsilon(sigma, rec.step, cfg.delta),
                                cfg.delta, cfg.clip, sigma, cfg.batch, cfg.lr, rec.epoch, metric, values[metric])


class CsvSink:
    """Single writer: a timestamp comment, the header, then rows flushed as they arrive."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w", encoding="utf-8", newline="")
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._f.write(f"# generated {stamp}\n")
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(RESULT_FIELDS)

    def write(self, row: ResultRow) -> None:
        self._w.writerow(row.cells())
        self._f.flush()

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


def csv_body(path) -> bytes:
    """File contents without the timestamp line."""
    raw = Path(path).read_bytes()
    return b"".join(line for line in raw.splitlines(keepends=True) if not line.startswith(b"#"))


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None) -> list[ResultRow]:
    """Train per config for each trial seed and write the CSV to ``cfg.out``."""
    train_set, test_set = data or load_data(cfg)
    rows = []
    with CsvSink(cfg.out) as sink:
        for row in run_trials(cfg, train_set, test_set):
            sink.write(row)
            rows.append(row)
    return rows


def sweep_grid(cfg: ExperimentConfig, mechanisms: Iterable[str] = DEFAULT_MECHANISMS,
               epsilons: Iterable[float] = DEFAULT_EPSILONS, clips: Iterable[float] = DEFAULT_CLIPS
               ) -> list[ExperimentConfig]:
    return [cfg.replace(mechanism=m, epsilon=e, clip=c, name="")
            for m in mechanisms for e in epsilons for c in clips]


def sweep(configs: list[ExperimentConfig], out, data: tuple[Dataset, Dataset] | None = None,
          progress=None) -> list[ResultRow]:
    """Run several experiments into one CSV, loading each distinct dataset once."""
    rows = []
    cache = {}
    with CsvSink(out) as sink:
        for k, cfg in enumerate(configs):
            key = (cfg.data, cfg.data_dir, cfg.seed, cfg.synth_dims, cfg.synth_classes, cfg.synth_count)
            if data is None and key not in cache:
                cache[key] = load_data(cfg)
            for row in run_trials(cfg, *(data or cache[key])):
                sink.write(row)
                rows.append(row)
            if progress:
                progress(k + 1, len(configs), cfg)
    return rows


# ----------------------------------------------------------------- verification


@dataclass(frozen=True)
class Check:
    name: str
    target: float
    empirical: float
    tol: float

    @property
    def passed(self) -> bool:
        return abs(self.empirical / self.target - 1.0) <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} target={self.target:.6g} empirical={self.empirical:.6g} tol={self.tol:g} {status}"


def worst_coordinate(variances: np.ndarray, target: float) -> float:
    """The per-coordinate variance farthest from ``target``."""
    v = np.ravel(variances)
    return float(v[np.argmax(np.abs(v - target))])


def misnormalized_kernel(kernel):
    """Negative control: unscaled forward and ``1/n`` inverse instead of unitary."""
    def wrapped(x, inverse: bool = False):
        n = x.shape[-1]
        return kernel(x, inverse) * (1 / math.sqrt(n) if inverse else math.sqrt(n))
    return wrapped


@contextlib.contextmanager
def kernel_override(kernel):
    """Temporarily route every transform through ``kernel``."""
    saved = _backend.dft_rows
    _backend.dft_rows = kernel
    try:
        yield
    finally:
        _backend.dft_rows = saved


def variance_checks(trials: int, tolerance: float, seed: int = 0, n: int = 8, splits: bool = False,
                    clip: float = 1.0, sigma: float = 1.0) -> list[Check]:
    """Zero-input output variances of the three mechanisms against their targets."""
    if trials < 10**5:
        raise ValueError(f"verification needs at least 1e5 trials, got {trials}")
    spec = NoiseSpec(clip, sigma)
    level = (clip * sigma) ** 2
    zero = np.zeros((trials, n))
    checks = []
    g = fre(zero, spec, make_rng(seed, 1)).var(axis=0)
    checks.append(Check("variance-halving-gredp", level / 2, worst_coordinate(g, level / 2), tolerance))
    d = perturb(zero, spec, DPSGD, make_rng(seed, 2)).var(axis=0)
    checks.append(Check("variance-halving-dpsgd", level, worst_coordinate(d, level), tolerance))
    m2 = max(trials // 10, 10**5)
    z2 = fre2d(np.zeros((m2, 8, 8)), spec, make_rng(seed, 3))
    checks.append(Check("2d-pooled-gredp", level / 2, float(z2.var(axis=0).mean()), tolerance))
    s = perturb(zero, spec, spectral_dp(0.5), make_rng(seed, 4)).var(axis=0)
    checks.append(Check("spectraldp-rho0.5", level / 4, float(s.mean()), tolerance))
    if splits:
        for k, (a, b) in enumerate(((1.0, 0.0), (0.0, 1.0), (0.6, 0.8), (2**-0.5, 2**-0.5))):
            v = fre(zero, NoiseSpec(clip, sigma, (a, b)), make_rng(seed, 10 + k)).var(axis=0)
            checks.append(Check(f"split-a{a:.3g}-b{b:.3g}", level / 2, worst_coordinate(v, level / 2), tolerance))
    return checks


def verify_theorems(trials: int, tolerance: float, seed: int = 0, splits: bool = False,
                    misnormalized: bool = False) -> list[Check]:
    if misnormalized:
        with kernel_override(misnormalized_kernel(_backend.dft_rows)):
            return variance_checks(trials, tolerance, seed, splits=splits)
    return variance_checks(trials, tolerance, seed, splits=splits)


def report(checks: list[Check], stream=None) -> bool:
    stream = stream or sys.stdout
    for c in checks:
        print(c, file=stream)
    return all(c.passed for c in checks)

