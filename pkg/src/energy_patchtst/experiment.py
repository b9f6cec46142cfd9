"""End-to-end pipeline pieces shared by the command line and the acceptance suite."""

from __future__ import annotations

import copy
import csv
import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import DatasetSection, ExperimentConfig
from .data import (
    NormalizationStats,
    Schema,
    SyntheticSpec,
    TimeSeriesTable,
    WindowSet,
    chronological_split,
    count_windows,
    denormalize_forecast,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    make_windows,
)
from .errors import ConfigError, ParameterError
from .model import ModelConfig, Params, init_model
from .patching import default_scale_specs
from .training import (
    PretrainCorpus,
    TrainConfig,
    TrainReport,
    pretrain,
    prepare_finetune,
    train,
)
from .uncertainty import MCForecast, MetricReport, evaluate_forecast, mc_forecast, point_forecast, point_metrics

log = logging.getLogger(__name__)

VARIANTS = ("Full EnergyPatchTST", "- Multi-scale", "- Future Variables", "- Uncertainty Est.", "- Pre-training")
_TOGGLES = {"- Multi-scale": "multi_scale", "- Future Variables": "future_variables",
            "- Uncertainty Est.": "mc_dropout", "- Pre-training": "pretraining"}


def load_dataset(spec: DatasetSection, seed: int) -> TimeSeriesTable:
    if spec.source == "synthetic":
        return generate_synthetic(seed + spec.seed_offset, spec.n_steps, SyntheticSpec(**asdict(spec.synthetic)))
    if not spec.targets:
        raise ConfigError(f"dataset {spec.name!r}: csv source needs at least one target column")
    return load_csv(spec.path, Schema(tuple(spec.targets), tuple(spec.future)))


@dataclass
class Prepared:
    table: TimeSeriesTable
    stats: NormalizationStats
    train: WindowSet
    val: WindowSet
    test: WindowSet


def prepare(table: TimeSeriesTable, cfg: ExperimentConfig, horizon: int | None = None,
            stats: NormalizationStats | None = None) -> Prepared:
    """Window, split and normalize a table.

    With ``purge`` on, ``horizon - 1`` window positions separate consecutive
    splits so no target row is shared between them. ``stats`` overrides the
    fitted normalization (used when a checkpoint carries its own).
    """
    d = cfg.data
    h = horizon or d.horizon
    n = count_windows(table.n_steps, d.lookback, h, d.stride)
    if n == 0:
        raise ParameterError(f"series has {table.n_steps} steps; lookback {d.lookback} + horizon {h} "
                             f"needs at least {d.lookback + h}")
    gap = -(-(h - 1) // d.stride) if d.purge else 0
    split = chronological_split(n, d.split, gap)
    if stats is None:
        stats = fit_normalizer(table, split.train_rows(d.lookback, h, d.stride))
    windows = make_windows(table, stats, d.lookback, h, d.stride, d.instance_norm)
    return Prepared(table, stats, windows.subset(split.train), windows.subset(split.val),
                    windows.subset(split.test))


def model_config(cfg: ExperimentConfig, n_targets: int, n_future: int) -> ModelConfig:
    m, d = cfg.model, cfg.data
    windows = m.windows if cfg.ablation.multi_scale else [1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scales = default_scale_specs(d.lookback, windows=windows, max_patch=m.max_patch)
    lam = m.loss_weight if cfg.ablation.mc_dropout else 0.0
    return ModelConfig(scales=tuple(scales), lookback=d.lookback, horizon=d.horizon, n_targets=n_targets,
                       n_future=n_future if cfg.ablation.future_variables else 0, d_model=m.d_model,
                       n_heads=m.n_heads, n_layers=m.n_layers, d_ff=m.d_ff, dropout=m.dropout,
                       loss_weight=lam, var_floor=m.var_floor)


def train_config(cfg: ExperimentConfig, pretraining: bool = False) -> TrainConfig:
    t = cfg.training
    return TrainConfig(lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps, batch_size=t.batch_size,
                       max_epochs=t.pretrain_max_epochs if pretraining else t.max_epochs,
                       patience=t.patience, seed=cfg.seed,
                       freeze_encoder=t.freeze_encoder and not pretraining)


def run_pretrain(cfg: ExperimentConfig, n_targets: int | None = None) -> tuple[Params, ModelConfig, TrainReport]:
    """Pretrain on ``cfg.corpus`` with the future pathway disabled.

    Every dataset is loaded and windowed before training starts.
    """
    if not cfg.corpus:
        raise ConfigError("corpus is empty: add at least one [[corpus]] dataset")
    corpus = PretrainCorpus()
    for i, spec in enumerate(cfg.corpus):
        prepared = prepare(load_dataset(spec, cfg.seed + 1000 * (i + 1)), cfg)
        corpus.add(spec.name, prepared.train, prepared.val, spec.weight)
    channels = {e[1].n_targets for e in corpus.entries}
    if len(channels) != 1 or (n_targets is not None and channels != {n_targets}):
        raise ConfigError(f"corpus target channel counts {sorted(channels)} are incompatible"
                          + (f" with the target's {n_targets}" if n_targets is not None else ""))
    mconf = model_config(cfg, channels.pop(), 0).replace(n_future=0)
    params = init_model(mconf, cfg.seed)
    report = pretrain(params, mconf, corpus, train_config(cfg, pretraining=True))
    return report.best_params, mconf, report


@dataclass
class TrainedModel:
    params: Params
    config: ModelConfig
    stats: NormalizationStats
    report: TrainReport
    prepared: Prepared


def run_train(cfg: ExperimentConfig, table: TimeSeriesTable | None = None,
              pretrained: tuple[Params, ModelConfig] | None = None) -> TrainedModel:
    """Train on the target dataset, optionally starting from pretrained weights."""
    table = table if table is not None else load_dataset(cfg.data, cfg.seed)
    prepared = prepare(table, cfg)
    mconf = model_config(cfg, table.n_targets, table.n_future)
    if pretrained is not None:
        params = prepare_finetune(pretrained[0], pretrained[1], mconf, cfg.seed)
    else:
        params = init_model(mconf, cfg.seed)
    report = train(params, mconf, prepared.train, prepared.val, train_config(cfg))
    return TrainedModel(report.best_params, mconf, prepared.stats, report, prepared)


def forecast_windows(windows: WindowSet, params: Params, mconf: ModelConfig, cfg: ExperimentConfig,
                     seed: int | None = None) -> MCForecast:
    """MC-dropout forecast (or a single eval pass when MC dropout is toggled off)."""
    if cfg.ablation.mc_dropout and mconf.dropout > 0:
        return mc_forecast(windows, params, mconf, cfg.uncertainty.mc_samples, cfg.seed if seed is None else seed)
    return point_forecast(windows, params, mconf)


def to_units(fc: MCForecast, windows: WindowSet, stats: NormalizationStats, units: str) -> MCForecast:
    """Map a forecast from instance-normalized to reporting units."""
    target_stats = stats if units == "original" else None
    sm, sv = denormalize_forecast(fc.sample_means, fc.sample_vars, target_stats, windows.inst_mean, windows.inst_std)
    m, v = denormalize_forecast(fc.mean, fc.variance, target_stats, windows.inst_mean, windows.inst_std)
    return MCForecast(sm, sv, m, v)


def targets_in_units(windows: WindowSet, stats: NormalizationStats, units: str) -> np.ndarray:
    return stats.denormalize_targets(windows.y) if units == "original" else windows.y


def persistence_metrics(windows: WindowSet, stats: NormalizationStats, units: str) -> dict:
    last = windows.x[:, -1:, :]
    if units == "original":
        last = stats.denormalize_targets(last)
    pred = np.repeat(last, windows.horizon, axis=1)
    mse, mae, rse = point_metrics(targets_in_units(windows, stats, units), pred)
    return {"name": "persistence", "mse": mse, "mae": mae, "rse": rse}


def evaluate_model(params: Params, mconf: ModelConfig, stats: NormalizationStats, table: TimeSeriesTable,
                   cfg: ExperimentConfig, horizons=None, baseline: bool = False,
                   dataset: str = "") -> tuple[list[MetricReport], list[str]]:
    """Score the model on the test split for each requested horizon.

    Test windows are built at the model's horizon and each report scores the
    first ``h`` steps. Horizons beyond the model's, or a table too short to
    window, are skipped with a warning.
    """
    u = cfg.uncertainty
    horizons = list(horizons or cfg.eval_horizons())
    reports, skipped = [], []
    try:
        test = prepare(table, cfg, horizon=mconf.horizon, stats=stats).test
    except ParameterError as exc:
        skipped = [f"horizon {h}: {exc}" for h in horizons]
        test = None
    if test is not None:
        fc = to_units(forecast_windows(test, params, mconf, cfg), test, stats, u.units)
        y = targets_in_units(test, stats, u.units)
        for h in horizons:
            if h > mconf.horizon:
                skipped.append(f"horizon {h}: model forecasts only {mconf.horizon} steps")
                continue
            part = MCForecast(fc.sample_means[..., :h, :], fc.sample_vars[..., :h, :],
                              fc.mean[:, :h], fc.variance[:, :h])
            report = evaluate_forecast(y[:, :h], part, h, dataset or cfg.data.name, u.level, u.units,
                                       u.interval, u.crps)
            if baseline:
                report.baseline = persistence_metrics(test.truncate(h), stats, u.units)
            reports.append(report)
    for msg in skipped:
        warnings.warn(msg, stacklevel=2)
    return reports, skipped


# -- ablation ------------------------------------------------------------------
@dataclass
class AblationResult:
    horizons: list
    rows: list  # {"variant": str, "mse": {h: float}, "delta_pct": {h: float}}

    def to_dict(self) -> dict:
        return {"horizons": self.horizons,
                "rows": [{"variant": r["variant"], "mse": {str(h): v for h, v in r["mse"].items()},
                          "delta_pct": {str(h): v for h, v in r["delta_pct"].items()}} for r in self.rows]}

    def to_text(self) -> str:
        width = max(len(v) for v in VARIANTS) + 2
        lines = ["Model Variant".ljust(width) + "".join(f"{h}h".rjust(18) for h in self.horizons)]
        for r in self.rows:
            cells = []
            for h in self.horizons:
                v, d = r["mse"].get(h), r["delta_pct"].get(h)
                if v is None:
                    cells.append("n/a".rjust(18))
                elif r["variant"] == VARIANTS[0]:
                    cells.append(f"{v:.3f}".rjust(18))
                else:
                    arrow = "↑" if d >= 0 else "↓"
                    cells.append(f"{v:.3f} ({abs(d):.1f}%{arrow})".rjust(18))
            lines.append(r["variant"].ljust(width) + "".join(cells))
        return "\n".join(lines) + "\n"


def variant_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Copy of ``cfg`` with the variant's component switched off."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {VARIANTS}")
    out = copy.deepcopy(cfg)
    if variant in _TOGGLES:
        setattr(out.ablation, _TOGGLES[variant], False)
    return out


def run_ablation(cfg: ExperimentConfig, variants=VARIANTS, table: TimeSeriesTable | None = None) -> AblationResult:
    """Retrain each variant with the shared seed and tabulate test MSE per horizon.

    Variants that keep pretraining and share an architecture reuse one
    pretrained model; pretraining always uses the base configuration's loss.
    """
    table = table if table is not None else load_dataset(cfg.data, cfg.seed)
    horizons = cfg.eval_horizons()
    cache: dict[bool, tuple[Params, ModelConfig]] = {}
    rows = []
    for variant in variants:
        vc = variant_config(cfg, variant)
        pretrained = None
        if vc.ablation.pretraining:
            key = vc.ablation.multi_scale
            if key not in cache:
                pc = copy.deepcopy(cfg)
                pc.ablation.multi_scale = key
                params, mconf, _ = run_pretrain(pc, table.n_targets)
                cache[key] = (params, mconf)
            pretrained = cache[key]
        trained = run_train(vc, table, pretrained)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reports, _ = evaluate_model(trained.params, trained.config, trained.stats, table, vc, horizons)
        log.info("ablation %s done", variant)
        rows.append({"variant": variant, "mse": {r.horizon: r.mse for r in reports}})
    full = next((r for r in rows if r["variant"] == VARIANTS[0]), None)
    for r in rows:
        r["delta_pct"] = {h: 100.0 * (v - full["mse"][h]) / full["mse"][h]
                          for h, v in r["mse"].items()} if full else {}
    return AblationResult(horizons, rows)


# -- forecast output -------------------------------------------------------------
def write_forecast_csv(path, timestamps, channels, mean, variance, lower, upper) -> None:
    """One row per (step, channel): timestamp, channel, mean, variance, lower, upper."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "channel", "mean", "variance", "lower", "upper"])
        for i, ts in enumerate(timestamps):
            for j, name in enumerate(channels):
                writer.writerow([str(ts).replace("T", " "), name, repr(float(mean[i, j])),
                                 repr(float(variance[i, j])), repr(float(lower[i, j])), repr(float(upper[i, j]))])
