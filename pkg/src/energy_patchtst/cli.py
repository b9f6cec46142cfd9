"""
Command-line entry point.

    energy-patchtst synth    --config exp.toml --out runs/data
    energy-patchtst pretrain --config exp.toml --out runs/pre
    energy-patchtst finetune --config exp.toml --checkpoint runs/pre/checkpoint.json --out runs/ft
    energy-patchtst evaluate --config exp.toml --checkpoint runs/ft/checkpoint.json --horizons 96,192 --baseline
    energy-patchtst ablate   --config exp.toml --out runs/abl
    energy-patchtst forecast --config exp.toml --checkpoint ck.json --input recent.csv [--future z.csv]

Exit codes: 0 success, 1 runtime or training failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .data import (
    NormalizationStats,
    Schema,
    SyntheticSpec,
    WindowSet,
    generate_synthetic,
    instance_stats,
    load_csv,
    write_csv,
)
from .errors import CheckpointError, ConfigError, EnergyPatchTSTError, MissingFileError, ParseError
from .experiment import (
    evaluate_model,
    forecast_windows,
    load_dataset,
    model_config,
    prepare,
    run_ablation,
    run_pretrain,
    to_units,
    train_config,
    write_forecast_csv,
)
from .training import finetune, load_checkpoint, save_checkpoint
from .uncertainty import mixture_interval, prediction_interval

log = logging.getLogger("energy_patchtst")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad command-line input; maps to exit code 2."""


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _default_targets(n: int) -> list[str]:
    return ["target"] if n == 1 else [f"target_{k}" for k in range(n)]


def _meta(cfg: ExperimentConfig, targets, future) -> dict:
    return {"targets": list(targets), "future": list(future), "instance_norm": cfg.data.instance_norm}


def _write_run(out: Path, params, mconf, stats, report, meta) -> None:
    save_checkpoint(out / "checkpoint.json", params, mconf, stats, meta)
    (out / "train_report.json").write_text(report.to_json())
    _dump(out / "timing.json", {"epoch_seconds": report.epoch_seconds,
                                "total_seconds": float(sum(report.epoch_seconds))})


def _load_checkpoint(path):
    if path is None:
        raise UsageError("--checkpoint is required for this command")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# -- commands --------------------------------------------------------------------
def cmd_synth(cfg: ExperimentConfig, args, out: Path) -> None:
    d = cfg.data
    if d.source != "synthetic":
        raise ConfigError("synth needs data.source = \"synthetic\"")
    table = generate_synthetic(cfg.seed + d.seed_offset, d.n_steps, SyntheticSpec(**asdict(d.synthetic)))
    write_csv(table, out / "synthetic.csv")
    log.info("wrote %d rows to %s", table.n_steps, out / "synthetic.csv")


def cmd_pretrain(cfg: ExperimentConfig, args, out: Path) -> None:
    params, mconf, report = run_pretrain(cfg)
    targets = cfg.corpus[0].targets or _default_targets(mconf.n_targets)
    _write_run(out, params, mconf, None, report, _meta(cfg, targets, []))


def cmd_finetune(cfg: ExperimentConfig, args, out: Path) -> None:
    ck = _load_checkpoint(args.checkpoint)
    table = load_dataset(cfg.data, cfg.seed)
    prepared = prepare(table, cfg)
    mconf = model_config(cfg, table.n_targets, table.n_future)
    report = finetune(ck.params, ck.config, mconf, prepared.train, prepared.val, train_config(cfg))
    meta = _meta(cfg, table.target_names, table.future_names)
    _write_run(out, report.best_params, mconf, prepared.stats, report, meta)


def _checkpoint_view(cfg: ExperimentConfig, mconf) -> ExperimentConfig:
    """Config whose window geometry follows the checkpoint's model."""
    view = copy.deepcopy(cfg)
    view.data.lookback = mconf.lookback
    view.data.horizon = mconf.horizon
    return view


def cmd_evaluate(cfg: ExperimentConfig, args, out: Path) -> None:
    ck = _load_checkpoint(args.checkpoint)
    if ck.stats is None:
        raise CheckpointError("checkpoint has no normalization statistics; evaluate a finetuned checkpoint")
    view = _checkpoint_view(cfg, ck.config)
    table = load_dataset(cfg.data, cfg.seed)
    horizons = args.horizons or cfg.eval_horizons()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reports, skipped = evaluate_model(ck.params, ck.config, ck.stats, table, view, horizons,
                                          args.baseline or cfg.evaluate.baseline)
    for msg in skipped:
        log.warning("skipped %s", msg)
    for w in caught:
        if not any(str(w.message) == s for s in skipped):
            log.warning("%s", w.message)
    for r in reports:
        _dump(out / f"metrics_{r.horizon}.json", r.to_dict())
    _dump(out / "metrics.json", {"reports": [r.to_dict() for r in reports], "skipped": skipped})


def cmd_ablate(cfg: ExperimentConfig, args, out: Path) -> None:
    if args.horizons:
        cfg.evaluate.horizons = list(args.horizons)
    result = run_ablation(cfg)
    _dump(out / "ablation.json", result.to_dict())
    (out / "ablation.txt").write_text(result.to_text())
    sys.stdout.write(result.to_text())


def _read_header(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingFileError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))][1:]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0) from None


def _check_columns(path: Path, expected: list[str], allowed: list[str]) -> None:
    header = _read_header(path)
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in allowed]
    if missing or extra:
        raise ConfigError(f"{path}: schema mismatch; missing channels {missing}, extra channels {extra}")


def cmd_forecast(cfg: ExperimentConfig, args, out: Path) -> None:
    ck = _load_checkpoint(args.checkpoint)
    if args.input is None:
        raise UsageError("forecast needs --input CSV")
    mconf = ck.config
    stats = ck.stats or NormalizationStats.identity(mconf.n_targets, mconf.n_future)
    targets = list(ck.meta.get("targets") or _default_targets(mconf.n_targets))
    future = list(ck.meta.get("future") or [])
    if len(targets) != mconf.n_targets or (mconf.n_future and len(future) != mconf.n_future):
        raise CheckpointError(f"checkpoint channel names {targets} / {future} do not match its model")
    path = Path(args.input)
    _check_columns(path, targets, targets + future)
    table = load_csv(path, Schema(tuple(targets)))
    L, H = mconf.lookback, mconf.horizon
    if table.n_steps < L:
        raise ConfigError(f"{path}: {table.n_steps} rows, model needs a lookback of {L}")

    z = np.zeros((H, mconf.n_future))
    if mconf.n_future:
        if args.future is None:
            raise UsageError(f"model uses future-known channels {future}; pass them with --future")
        fpath = Path(args.future)
        _check_columns(fpath, future, future + targets)
        ftable = load_csv(fpath, Schema(tuple(future)))
        if ftable.n_steps < H:
            raise ConfigError(f"{fpath}: {ftable.n_steps} rows, horizon needs {H}")
        z = stats.normalize_future(ftable.targets[:H])

    x = stats.normalize_targets(table.targets[-L:])[None]
    if ck.meta.get("instance_norm", True):
        m, s = instance_stats(x)
    else:
        m, s = np.zeros((1, mconf.n_targets)), np.ones((1, mconf.n_targets))
    windows = WindowSet(x, z[None], np.zeros((1, H, mconf.n_targets)), m, s, np.zeros(1, dtype=np.int64))
    fc = to_units(forecast_windows(windows, ck.params, mconf, cfg), windows, stats, "original")
    level = cfg.uncertainty.level
    if cfg.uncertainty.interval == "empirical" and fc.n_samples > 1:
        pi = mixture_interval(fc.sample_means, fc.sample_vars, level)
    else:
        pi = prediction_interval(fc.mean, fc.variance, level)
    stamps = table.timestamps[-1] + np.arange(1, H + 1) * table.step
    write_forecast_csv(out / "forecast.csv", stamps, targets, fc.mean[0], fc.variance[0], pi.lower[0],
                       pi.upper[0])


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "forecast": cmd_forecast,
}


# -- argument handling ---------------------------------------------------------------
def _horizons(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"horizons must be positive integers, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energy-patchtst", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory (must not exist)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("finetune", "evaluate", "forecast"):
            p.add_argument("--checkpoint", type=Path, default=None)
        if name in ("evaluate", "ablate"):
            p.add_argument("--horizons", type=_horizons, default=None, help="comma-separated, e.g. 96,192")
        if name == "evaluate":
            p.add_argument("--baseline", action="store_true", help="also report the persistence baseline")
        if name == "forecast":
            p.add_argument("--input", type=Path, default=None, help="recent history CSV (>= lookback rows)")
            p.add_argument("--future", type=Path, default=None, help="future-known channels over the horizon")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        out = args.out or Path("runs") / f"{args.command}_{datetime.now():%Y%m%d-%H%M%S}"
        try:
            out.mkdir(parents=True, exist_ok=False)
        except FileExistsError:
            raise UsageError(f"output directory {out} already exists") from None
        (out / "config.json").write_text(cfg.to_json())
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    start = time.perf_counter()
    try:
        COMMANDS[args.command](cfg, args, out)
    except (UsageError, ConfigError, CheckpointError, MissingFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EnergyPatchTSTError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished in %.1fs; artifacts in %s", args.command, time.perf_counter() - start, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
