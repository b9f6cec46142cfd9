"""Shared builders for the test suite."""

import warnings

from energy_patchtst.data import NormalizationStats, SyntheticSpec, generate_synthetic, make_windows
from energy_patchtst.model import ModelConfig
from energy_patchtst.patching import ScaleSpec


def micro_config(**changes) -> ModelConfig:
    """Smallest configuration exercising every component: one scale, one head, one layer."""
    base = ModelConfig(scales=(ScaleSpec(1, 4, 2),), lookback=8, horizon=2, n_targets=1, n_future=1,
                       d_model=8, n_heads=1, n_layers=1, d_ff=16, dropout=0.1)
    return base.replace(**changes) if changes else base


def small_config(**changes) -> ModelConfig:
    base = ModelConfig(scales=(ScaleSpec(1, 8, 4), ScaleSpec(4, 6, 3)), lookback=24, horizon=6, n_targets=2,
                       n_future=1, d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.1)
    return base.replace(**changes) if changes else base


def synthetic(seed=0, n_steps=200, **spec):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate_synthetic(seed, n_steps, SyntheticSpec(**spec))


def small_windows(seed=0, n_steps=200, lookback=24, horizon=6, n_targets=2, driver_coef=0.5):
    table = synthetic(seed, n_steps, n_targets=n_targets, driver_coef=driver_coef)
    return make_windows(table, NormalizationStats.identity(n_targets, 1), lookback, horizon)
