"""
Monte Carlo dropout inference, prediction intervals and forecast metrics.

All Gaussian CDF/PDF/quantile evaluations go through ``scipy.special``
(``ndtr``, ``ndtri``), which are accurate to double precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .data import WindowSample, WindowSet
from .errors import DimensionError, DomainError, ParameterError
from .model import ModelConfig, Params, forward_batch
from .tensor import make_rng, no_grad

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass
class MCForecast:
    sample_means: np.ndarray  # (M, ...)
    sample_vars: np.ndarray  # (M, ...)
    mean: np.ndarray
    variance: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.sample_means.shape[0]


def combine_mc(sample_means: np.ndarray, sample_vars: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Total variance: mean aleatoric variance plus the spread of the sample means."""
    sample_means = np.asarray(sample_means, dtype=np.float64)
    sample_vars = np.asarray(sample_vars, dtype=np.float64)
    if sample_means.shape != sample_vars.shape:
        raise DimensionError(f"sample means {sample_means.shape} and variances {sample_vars.shape} differ")
    mean = sample_means.mean(axis=0)
    spread = ((sample_means - mean) ** 2).mean(axis=0)
    return mean, sample_vars.mean(axis=0) + spread


def _as_windows(windows) -> tuple[WindowSet, bool]:
    if isinstance(windows, WindowSample):
        return WindowSet.stack([windows]), True
    return windows, False


def _passes(windows: WindowSet, params: Params, config: ModelConfig, seeds, train: bool,
            batch_size: int, drop_scales=()) -> tuple[np.ndarray, np.ndarray]:
    x, _ = windows.model_inputs()
    z = windows.z if "future.w" in params else None
    means, variances = [], []
    with no_grad():
        for seed in seeds:
            rng = make_rng(seed) if train else None
            m_parts, v_parts = [], []
            for start in range(0, len(windows), batch_size):
                sl = slice(start, start + batch_size)
                m, v = forward_batch(x[sl], None if z is None else z[sl], params, config, train, rng,
                                     drop_scales)
                m_parts.append(m.data)
                v_parts.append(v.data)
            means.append(np.concatenate(m_parts))
            variances.append(np.concatenate(v_parts))
    return np.stack(means), np.stack(variances)


def mc_forecast(windows, params: Params, config: ModelConfig, n_samples: int = 50, seed: int = 0,
                batch_size: int = 256) -> MCForecast:
    """Run ``n_samples`` train-mode passes; pass ``i`` uses generator seed ``seed + i``.

    Results are in instance-normalized units, shaped ``(M, B, H, D)`` for a
    window set or ``(M, H, D)`` for a single sample.
    """
    if n_samples < 2:
        raise ParameterError(f"MC dropout needs at least 2 samples, got {n_samples}")
    if config.dropout == 0:
        warnings.warn("dropout rate is 0: MC samples are identical and the epistemic term vanishes",
                      stacklevel=2)
    ws, single = _as_windows(windows)
    means, variances = _passes(ws, params, config, [seed + i for i in range(n_samples)], True, batch_size)
    if single:
        means, variances = means[:, 0], variances[:, 0]
    mean, var = combine_mc(means, variances)
    return MCForecast(means, variances, mean, var)


def point_forecast(windows, params: Params, config: ModelConfig, batch_size: int = 256,
                   drop_scales=()) -> MCForecast:
    """Single eval-mode pass packaged as a one-sample :class:`MCForecast`."""
    ws, single = _as_windows(windows)
    means, variances = _passes(ws, params, config, [0], False, batch_size, drop_scales)
    if single:
        means, variances = means[:, 0], variances[:, 0]
    return MCForecast(means, variances, means[0], variances[0])


# -- intervals ----------------------------------------------------------------
@dataclass
class PredictionInterval:
    lower: np.ndarray
    upper: np.ndarray
    level: float


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise ParameterError(f"interval level must lie in (0, 1), got {level}")


def prediction_interval(mean, variance, level: float = 0.95) -> PredictionInterval:
    _check_level(level)
    mean, variance = np.asarray(mean, dtype=np.float64), np.asarray(variance, dtype=np.float64)
    if np.any(variance <= 0):
        raise DomainError("prediction_interval: variance must be positive")
    half = special.ndtri(0.5 + level / 2.0) * np.sqrt(variance)
    return PredictionInterval(mean - half, mean + half, level)


def mixture_interval(sample_means, sample_vars, level: float = 0.95, iterations: int = 80) -> PredictionInterval:
    """Central interval of the equal-weight Gaussian mixture over MC samples.

    Quantiles are found by bisection on the mixture CDF.
    """
    _check_level(level)
    mu = np.asarray(sample_means, dtype=np.float64)
    sd = np.sqrt(np.asarray(sample_vars, dtype=np.float64))
    lo_all = (mu - 40.0 * sd).min(axis=0)
    hi_all = (mu + 40.0 * sd).max(axis=0)

    def quantile(q):
        lo, hi = lo_all.copy(), hi_all.copy()
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = special.ndtr((mid - mu) / sd).mean(axis=0) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    tail = (1.0 - level) / 2.0
    return PredictionInterval(quantile(tail), quantile(1.0 - tail), level)


def pi_coverage(y, interval: PredictionInterval) -> float:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != interval.lower.shape:
        raise DimensionError(f"pi_coverage: targets {y.shape} vs interval {interval.lower.shape}")
    return float(np.mean((interval.lower <= y) & (y <= interval.upper)))


# -- scores ----------------------------------------------------------------
def point_metrics(y, y_hat) -> tuple[float, float, float]:
    """MSE, MAE and root relative squared error against the mean predictor."""
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"point_metrics: targets {y.shape} vs predictions {y_hat.shape}")
    err = y - y_hat
    denom = np.sum((y - y.mean()) ** 2)
    if denom == 0:
        raise DomainError("RSE undefined for constant targets")
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err))), float(np.sqrt(np.sum(err ** 2) / denom))


def _crps_terms(y, mean, sd):
    z = (y - mean) / sd
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return sd * (z * (2.0 * special.ndtr(z) - 1.0) + 2.0 * pdf - INV_SQRT_PI)


def crps_gaussian(y, mean, variance) -> float:
    """Closed-form CRPS of N(mean, variance), averaged over entries."""
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance <= 0):
        raise DomainError("crps_gaussian: variance must be positive")
    y, mean = np.asarray(y, dtype=np.float64), np.asarray(mean, dtype=np.float64)
    if y.shape != mean.shape or y.shape != variance.shape:
        raise DimensionError(f"crps_gaussian: shapes {y.shape}, {mean.shape}, {variance.shape} differ")
    return float(np.mean(_crps_terms(y, mean, np.sqrt(variance))))


def _abs_moment(mu, var):
    """E|X| for X ~ N(mu, var)."""
    sd = np.sqrt(var)
    z = mu / sd
    return mu * (2.0 * special.ndtr(z) - 1.0) + 2.0 * sd * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def crps_mixture(y, sample_means, sample_vars) -> float:
    """CRPS of the equal-weight Gaussian mixture over MC samples (closed form)."""
    mu = np.asarray(sample_means, dtype=np.float64)
    var = np.asarray(sample_vars, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(var <= 0):
        raise DomainError("crps_mixture: variance must be positive")
    first = _abs_moment(y - mu, var).mean(axis=0)
    m = mu.shape[0]
    second = np.zeros_like(y)
    for i in range(m):
        second += _abs_moment(mu[i] - mu, var[i] + var).sum(axis=0)
    return float(np.mean(first - 0.5 * second / (m * m)))


@dataclass
class MetricReport:
    mse: float
    mae: float
    rse: float
    crps: float
    pi_coverage: float
    horizon: int
    dataset: str = ""
    units: str = "normalized"
    level: float = 0.95
    n_windows: int = 0
    baseline: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_forecast(y, forecast: MCForecast, horizon: int, dataset: str = "", level: float = 0.95,
                      units: str = "normalized", interval: str = "gaussian",
                      crps: str = "gaussian") -> MetricReport:
    """Score a forecast whose arrays are already in the reporting units."""
    y = np.asarray(y, dtype=np.float64)
    mse, mae, rse = point_metrics(y, forecast.mean)
    if interval == "gaussian":
        pi = prediction_interval(forecast.mean, forecast.variance, level)
    elif interval == "empirical":
        pi = mixture_interval(forecast.sample_means, forecast.sample_vars, level)
    else:
        raise ParameterError(f"unknown interval method {interval!r}")
    if crps == "gaussian":
        score = crps_gaussian(y, forecast.mean, forecast.variance)
    elif crps == "mixture":
        score = crps_mixture(y, forecast.sample_means, forecast.sample_vars)
    else:
        raise ParameterError(f"unknown CRPS method {crps!r}")
    n = y.shape[0] if y.ndim == 3 else 1
    return MetricReport(mse, mae, rse, score, pi_coverage(y, pi), horizon, dataset, units, level, n)


def scale_importance(params: Params, config: ModelConfig, windows: WindowSet, horizons=None) -> dict:
    """Leave-one-scale-out importance in eval mode.

    For every horizon prefix ``h`` the importance of scale ``s`` is the MSE
    increase (floored at 0) when that scale's fusion inputs are zeroed,
    normalized to sum to 1. Returns ``{h: array of S weights}``.
    """
    if config.n_scales < 2:
        raise ParameterError(f"scale importance needs at least 2 scales, model has {config.n_scales}")
    horizons = [config.horizon] if horizons is None else list(horizons)
    for h in horizons:
        if not 1 <= h <= config.horizon:
            raise ParameterError(f"horizon {h} outside 1..{config.horizon}")
    _, y = windows.model_inputs()
    base = point_forecast(windows, params, config).mean
    ablated = [point_forecast(windows, params, config, drop_scales=(s,)).mean for s in range(config.n_scales)]
    out = {}
    for h in horizons:
        base_mse = np.mean((y[:, :h] - base[:, :h]) ** 2)
        gains = np.array([max(0.0, np.mean((y[:, :h] - a[:, :h]) ** 2) - base_mse) for a in ablated])
        total = gains.sum()
        out[h] = gains / total if total > 0 else gains
    return out
