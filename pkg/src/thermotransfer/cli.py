"""Command-line entry point: ``thermotransfer <command> [options]``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import (PRESETS, ConfigError, ExperimentConfig, HouseSpec, MpcStudyConfig,
                      experiment_config_from_kv, fit_source, house_dataset, is_mpc_config,
                      mpc_config_from_kv, parse_kv, run_experiment, run_mpc_curves,
                      scenario_from_kv, write_curves, write_metrics)
from .regressors import LinearModel
from .simulator import SimulationDiverged
from .validate import run_checks

NUMERICAL_ERRORS = (np.linalg.LinAlgError, SimulationDiverged, FloatingPointError)


def _read_kv(path) -> dict[str, str]:
    if path is None:
        return {}
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _reseed(houses: tuple[HouseSpec, ...], target: HouseSpec, seed: int | None):
    """``--seed`` numbers the sources ``seed, seed + 1, ...`` and the target after them."""
    if seed is None:
        return houses, target
    sources = tuple(replace(h, seed=seed + i) for i, h in enumerate(houses))
    return sources, replace(target, seed=seed + len(houses))


def _experiment_config(args) -> ExperimentConfig:
    path = args.config_file or args.config
    if path is None:
        raise ConfigError("an experiment config file is required")
    if path in PRESETS and not Path(path).exists():
        cfg = PRESETS[path]
    else:
        kv = _read_kv(path)
        if is_mpc_config(kv):
            raise ConfigError(f"{path} describes an MPC study; use mpc-curve")
        cfg = experiment_config_from_kv(kv)
    sources, target = _reseed(cfg.sources, cfg.target, args.seed)
    return replace(cfg, sources=sources, target=target)


def cmd_simulate(args) -> int:
    cfg = scenario_from_kv(_read_kv(args.config_file or args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data = cfg.run()
    path = args.out_dir / cfg.output
    data.to_csv(path)
    print(f"wrote {len(data)} records to {path}")
    return 0


def cmd_fit_source(args) -> int:
    cfg = _experiment_config(args)
    datasets = [house_dataset(s, cfg.source_days, cfg, f"source{i + 1}")
                for i, s in enumerate(cfg.sources)]
    model = fit_source(cfg, datasets)
    if isinstance(model, LinearModel):
        path = args.out_dir / f"{cfg.experiment_id}_source.csv"
    else:
        path = args.out_dir / f"{cfg.experiment_id}_source"
    model.save(path)
    print(f"wrote source model to {path}")
    return 0


def cmd_run_exp(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg)
    metrics, alpha = write_metrics(result, args.out_dir)
    print(f"wrote {metrics} and {alpha}")
    return 0


def cmd_mpc_curve(args) -> int:
    kv = _read_kv(args.config_file or args.config)
    cfg = mpc_config_from_kv(kv) if kv else MpcStudyConfig()
    sources, target = _reseed(cfg.sources, cfg.target, args.seed)
    cfg = replace(cfg, sources=sources, target=target)
    curves = run_mpc_curves(cfg)
    for path in write_curves(curves, args.out_dir, cfg.experiment_id):
        print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    results = run_checks(0 if args.seed is None else args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<18} {r.detail}  ({r.seconds:.2f} s)")
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seeds")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
    common.add_argument("--config", default=None, help="key = value config file")

    parser = argparse.ArgumentParser(prog="thermotransfer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": (cmd_simulate, "simulate one house under hysteresis control"),
        "fit-source": (cmd_fit_source, "fit and save the source predictor of an experiment"),
        "run-exp": (cmd_run_exp, "run a prediction experiment and write its CSVs"),
        "mpc-curve": (cmd_mpc_curve, "sweep kappa and write comfort/heating curves"),
        "validate": (cmd_validate, "run the built-in invariant checks"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name != "validate":
            p.add_argument("config_file", nargs="?", default=None,
                           help="config file (run-exp also accepts exp1..exp4)")
        p.set_defaults(func=func, config_file=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # ConfigError plus invalid tags or values caught while building the run
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
