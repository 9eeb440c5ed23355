"""Command-line entry point: ``gredp {train,sweep,verify,gen-data}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import BACKEND, data, harness
from .training import PER_BATCH, PER_SAMPLE

log = logging.getLogger("gredp")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _experiment_flags(p: argparse.ArgumentParser, lists: bool = False) -> None:
    p.add_argument("--config", help="flat key=value config file; flags override it")
    p.add_argument("--model")
    p.add_argument("--data", help="'mnist5k', 'synthetic', an IDX folder or an .npz file")
    p.add_argument("--mechanism", help="gredp, dpsgd or spectraldp[:rho]" + (" (comma list)" if lists else ""))
    p.add_argument("--epsilon", help="target epsilon" + (" (comma list)" if lists else ""),
                   type=str if lists else float)
    p.add_argument("--delta", type=float)
    p.add_argument("--clip", help="clipping bound c" + (" (comma list)" if lists else ""),
                   type=str if lists else float)
    p.add_argument("--sigma", type=float, help="noise multiplier; default calibrates from epsilon, delta")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--noise-granularity", choices=(PER_SAMPLE, PER_BATCH))


def _overrides(args, skip=()) -> dict:
    keys = ("model", "data", "mechanism", "epsilon", "delta", "clip", "sigma", "batch", "lr", "epochs", "seed",
            "trials", "out", "noise_granularity")
    return {k: getattr(args, k) for k in keys if k not in skip}


def cmd_train(args) -> int:
    cfg, _ = harness.load_config(args.config, **_overrides(args))
    log.info("training %s with %s (sigma=%.4f, backend=%s)", cfg.model, cfg.mechanism, cfg.noise_multiplier, BACKEND)
    rows = harness.run_experiment(cfg)
    for r in rows:
        print(f"seed={r.seed} epoch={r.epoch} {r.metric}={r.value:.4f} eps_spent={r.epsilon:.4f}")
    print(f"wrote {len(rows)} rows to {cfg.out}")
    return 0


def cmd_sweep(args) -> int:
    grid_keys = ("mechanism", "epsilon", "clip")
    cfg, extra = harness.load_config(args.config, **_overrides(args, skip=grid_keys))
    pick = {k: getattr(args, k) or extra.get(f"sweep_{k}") for k in grid_keys}
    configs = harness.sweep_grid(
        cfg,
        mechanisms=pick["mechanism"].split(",") if pick["mechanism"] else harness.DEFAULT_MECHANISMS,
        epsilons=_floats(pick["epsilon"]) if pick["epsilon"] else harness.DEFAULT_EPSILONS,
        clips=_floats(pick["clip"]) if pick["clip"] else harness.DEFAULT_CLIPS,
    )
    out = args.out or extra.get("sweep_out") or "results/sweep.csv"
    rows = harness.sweep(configs, out, progress=lambda k, n, c: log.info("[%d/%d] %s", k, n, c.experiment_id))
    print(f"wrote {len(rows)} rows for {len(configs)} experiments to {out}")
    return 0


def cmd_verify(args) -> int:
    checks = harness.verify_theorems(args.trials, args.tol, args.seed, splits=args.splits,
                                     misnormalized=args.misnormalized)
    return 0 if harness.report(checks) else 1


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if args.source == "mnist5k":
        for name, path in data.mnist5k(out, seed=args.seed).items():
            print(f"{name}: {path}")
        return 0
    ds = data.gen_synthetic(args.dims, args.classes, args.count, args.seed)
    if out.suffix != ".npz":
        out = out.with_suffix(".npz")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_npz(out, ds)
    print(f"wrote {len(ds)} samples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gredp", description="Spectral-domain differentially private training")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration for each trial seed")
    _experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over mechanisms, epsilons and clipping bounds into one CSV")
    _experiment_flags(p, lists=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="Monte-Carlo noise-variance checks")
    p.add_argument("--trials", type=int, default=10**6)
    p.add_argument("--tol", type=float, default=0.02, help="relative tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", action="store_true", help="also check unequal real/imaginary noise splits")
    p.add_argument("--misnormalized", action="store_true", help="negative control with a non-unitary transform")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-data", help="write a synthetic .npz set or the 5k MNIST subset as IDX")
    p.add_argument("--source", choices=("synthetic", "mnist5k"), default="synthetic")
    p.add_argument("--out", required=True, help=".npz path or output folder for mnist5k")
    p.add_argument("--dims", type=int, default=10)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"gredp: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
