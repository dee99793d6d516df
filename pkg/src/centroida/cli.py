"""Experiment runner CLI: run / validate / sweep.

Exit codes: 0 success, 2 configuration error, 3 training abort.  The
``CENTROIDA_THREADS`` environment variable caps how many seeds run in
parallel worker processes (default 1, sequential).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .config import VARIANTS, ExperimentConfig, validate_config
from .eval import MetricsReport
from .trainer import TrainingAborted, run_ablation


class ConfigError(ValueError):
    """Configuration problem; maps to exit code 2."""


def _load_config(path: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_json(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _worker_cap() -> int:
    raw = os.environ.get("CENTROIDA_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"CENTROIDA_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"CENTROIDA_THREADS must be >= 1, got {cap}")
    return cap


def _check_out_dir(out_dir: Path, overwrite: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise ConfigError(
            f"output directory {out_dir} is not empty; pass --overwrite to replace its contents"
        )
    out_dir.mkdir(parents=True, exist_ok=True)


def _seed_worker(cfg_dict: dict, seed: int, run_dir: str) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_ablation(cfg, seed=seed, run_dir=run_dir).to_dict()


def run_experiment(cfg: ExperimentConfig, out_dir: Path, overwrite: bool = False) -> dict:
    """Run every seed of one config, write all artifacts, return the summary."""
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("\n".join(problems))
    _check_out_dir(out_dir, overwrite)
    cfg.write_json(out_dir / "config.json")
    cap = min(_worker_cap(), len(cfg.seeds))
    if cap > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cap) as pool:
            futures = [
                pool.submit(_seed_worker, cfg.to_dict(), seed, str(out_dir))
                for seed in cfg.seeds
            ]
            reports = [MetricsReport.from_dict(f.result()) for f in futures]
    else:
        reports = [run_ablation(cfg, seed=seed, run_dir=out_dir) for seed in cfg.seeds]
    accs = [r.mean_acc for r in reports]
    summary = {
        "variant": cfg.variant,
        "config_hash": cfg.config_hash(),
        "seeds": list(cfg.seeds),
        "mean_acc_per_seed": {str(s): a for s, a in zip(cfg.seeds, accs)},
        "mean_acc_mean": float(np.mean(accs)),
        "mean_acc_stddev": float(np.std(accs)),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.variant is not None:
        cfg.variant = args.variant
    if args.p_target is not None:
        cfg.p_target = args.p_target
    if args.out is not None:
        cfg.out_dir = args.out
    summary = run_experiment(cfg, Path(cfg.out_dir), overwrite=args.overwrite)
    print(
        f"{cfg.variant}: mean_acc {summary['mean_acc_mean']:.4f} "
        f"+- {summary['mean_acc_stddev']:.4f} over seeds {summary['seeds']}"
    )
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return 2
    print("config OK")
    return 0


def _parse_grid(specs: list[str]) -> list[tuple[str, list[Any]]]:
    grid = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid spec must look like key=v1,v2 got {spec!r}")
        key, _, raw = spec.partition("=")
        key = key.strip()
        if not raw:
            raise ConfigError(f"grid spec {spec!r} lists no values")
        values = []
        for tok in raw.split(","):
            tok = tok.strip()
            try:
                values.append(json.loads(tok))
            except json.JSONDecodeError:
                values.append(tok)
        grid.append((key, values))
    return grid


def _apply_cell(cfg: ExperimentConfig, cell: dict[str, Any]) -> ExperimentConfig:
    d = cfg.to_dict()
    for key, value in cell.items():
        if key == "p":
            d["p_source"] = value
            d["p_target"] = value
        elif "." in key:
            head, _, tail = key.partition(".")
            if head not in d or not isinstance(d[head], dict) or tail not in d[head]:
                raise ConfigError(f"unknown sweep key {key!r}")
            d[head][tail] = value
        elif key in d:
            d[key] = value
        else:
            raise ConfigError(f"unknown sweep key {key!r}")
    try:
        return ExperimentConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    grid = _parse_grid(args.grid)
    out_root = Path(cfg.out_dir)
    _check_out_dir(out_root, args.overwrite)

    cells: list[dict[str, Any]] = [{}]
    for key, values in grid:
        cells = [dict(c, **{key: v}) for c in cells for v in values]
    results = []
    for cell in cells:
        cell_cfg = _apply_cell(cfg, cell)
        cell_name = "_".join(f"{k}={v}" for k, v in cell.items())
        cell_dir = out_root / cell_name
        summary = run_experiment(cell_cfg, cell_dir, overwrite=args.overwrite)
        print(
            f"{cell_name}: mean_acc {summary['mean_acc_mean']:.4f} "
            f"+- {summary['mean_acc_stddev']:.4f}"
        )
        results.append({"cell": cell, "dir": cell_name, **summary})
    (out_root / "sweep_summary.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"sweep artifacts in {out_root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="centroida",
        description="Imbalanced domain adaptation experiments: balanced resampling "
        "plus centroid and class-wise feature alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train and evaluate one config across its seeds")
    run_p.add_argument("--config", required=True, help="path to a JSON config")
    run_p.add_argument("--seed", type=int, help="run only this seed")
    run_p.add_argument("--variant", choices=VARIANTS, help="override the config's variant")
    run_p.add_argument("--p-target", type=float, dest="p_target", help="override target imbalance ratio")
    run_p.add_argument("--out", help="override the output directory")
    run_p.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")

    val_p = sub.add_parser("validate", help="report config problems without running")
    val_p.add_argument("--config", required=True)

    sweep_p = sub.add_parser("sweep", help="run a cartesian grid of config overrides")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument(
        "--grid", action="append", required=True, metavar="KEY=V1,V2",
        help="sweep values; repeatable; key 'p' sets p_source and p_target together",
    )
    sweep_p.add_argument("--out", help="override the output directory")
    sweep_p.add_argument("--overwrite", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "validate": _cmd_validate, "sweep": _cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
