"""
Multi-scale patch transformer with a Gaussian output head.

Each target channel goes through the network on its own (weights are shared
across channels). Per scale the lookback is block-averaged, cut into
patches, embedded, encoded by a scale-specific pre-norm transformer and
mapped to ``H`` horizon tokens. The horizon tokens of all scales, plus an
embedding of the future-known covariates, are concatenated per step and
fused by a one-hidden-layer MLP feeding a mean head and a variance head.

Parameters live in a flat ``dict[str, Tensor]`` whose key order is fixed by
:func:`init_model`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, ParameterError
from .patching import ScaleSpec, patch_windows, scale_transform
from .tensor import Tensor, make_rng

Params = dict[str, Tensor]

# softplus(VAR_BIAS) == 1, so an untrained model predicts unit variance
VAR_BIAS = math.log(math.e - 1.0)


@dataclass(frozen=True)
class ModelConfig:
    scales: tuple[ScaleSpec, ...]
    lookback: int
    horizon: int
    n_targets: int = 1
    n_future: int = 0
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    loss_weight: float = 0.5
    var_floor: float = 1e-6
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(
            s if isinstance(s, ScaleSpec) else ScaleSpec(**s) for s in self.scales))
        if not self.scales:
            raise ConfigError("at least one scale is required")
        for name in ("lookback", "horizon", "n_targets", "d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_future < 0:
            raise ConfigError(f"n_future must be >= 0, got {self.n_future}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.var_floor <= 0:
            raise ConfigError(f"var_floor must be positive, got {self.var_floor}")
        if self.loss_weight < 0:
            raise ConfigError(f"loss_weight must be non-negative, got {self.loss_weight}")
        for i, s in enumerate(self.scales, start=1):
            if s.length(self.lookback) < s.patch_len:
                raise ConfigError(f"scale {i} (w={s.window}): downsampled length "
                                  f"{s.length(self.lookback)} < patch length {s.patch_len}")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["scales"] = tuple(ScaleSpec(**s) for s in d["scales"])
        return cls(**d)


@dataclass
class GaussianForecast:
    mean: np.ndarray
    variance: np.ndarray


# -- initialization ----------------------------------------------------------
def _uniform(rng, fan_in, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def _linear(params: Params, name: str, rng, fan_in: int, fan_out: int) -> None:
    params[f"{name}.w"] = _uniform(rng, fan_in, (fan_in, fan_out))
    params[f"{name}.b"] = _zeros(fan_out)


def _future_params(config: ModelConfig, seed: int) -> Params:
    params: Params = {}
    _linear(params, "future", make_rng(seed, 2), config.n_future, config.d_model)
    return params


def init_model(config: ModelConfig, seed: int) -> Params:
    """Fan-in uniform weights, zero biases, unit layer-norm gains.

    Every scale, the future projection and the fusion head draw from their
    own generator stream, so adding or removing the future pathway leaves
    the other weights unchanged for a given seed.
    """
    if not isinstance(config, ModelConfig):
        raise ParameterError(f"expected ModelConfig, got {type(config).__name__}")
    d, params = config.d_model, {}
    for s, spec in enumerate(config.scales):
        rng = make_rng(seed, 100 + s)
        n = spec.n_patches(config.lookback)
        pre = f"scale{s}"
        _linear(params, f"{pre}.proj", rng, spec.patch_len, d)
        params[f"{pre}.pos"] = Tensor(rng.uniform(-0.02, 0.02, size=(n, d)), requires_grad=True)
        for layer in range(config.n_layers):
            lp = f"{pre}.layer{layer}"
            params[f"{lp}.ln1.g"], params[f"{lp}.ln1.b"] = _ones(d), _zeros(d)
            for proj in ("q", "k", "v", "o"):
                _linear(params, f"{lp}.attn.{proj}", rng, d, d)
            params[f"{lp}.ln2.g"], params[f"{lp}.ln2.b"] = _ones(d), _zeros(d)
            _linear(params, f"{lp}.ff1", rng, d, config.d_ff)
            _linear(params, f"{lp}.ff2", rng, config.d_ff, d)
        params[f"{pre}.ln.g"], params[f"{pre}.ln.b"] = _ones(d), _zeros(d)
        _linear(params, f"{pre}.head", rng, n * d, config.horizon * d)

    if config.n_future > 0:
        params.update(_future_params(config, seed))

    slots = config.n_scales + (1 if config.n_future > 0 else 0)
    _linear(params, "fusion", make_rng(seed, 3), slots * d, d)
    rng = make_rng(seed, 4)
    _linear(params, "mean", rng, d, 1)
    _linear(params, "var", rng, d, 1)
    params["var.b"].data[:] = VAR_BIAS
    return params


def extend_with_future(params: Params, config: ModelConfig, seed: int) -> Params:
    """Add a fresh future pathway to parameters trained without one.

    The projection is freshly drawn; the new fusion rows start at zero so the
    extended model's forecasts equal the original ones until the first update.
    Existing tensors are shared, not copied.
    """
    if config.n_future < 1:
        raise ParameterError("target config has no future channels to add")
    if "future.w" in params:
        raise ParameterError("parameters already contain a future pathway")
    out = {k: v for k, v in params.items() if not k.startswith(("fusion.", "mean.", "var."))}
    out.update(_future_params(config, seed))
    old = params["fusion.w"]
    expected = config.n_scales * config.d_model
    if old.shape != (expected, config.d_model):
        raise DimensionError(f"fusion.w has shape {old.shape}; expected ({expected}, {config.d_model})")
    out["fusion.w"] = Tensor(np.concatenate([old.data, np.zeros((config.d_model, config.d_model))]),
                             requires_grad=True)
    for k in ("fusion.b", "mean.w", "mean.b", "var.w", "var.b"):
        out[k] = params[k]
    return out


def parameter_count(params: Params) -> int:
    return sum(p.size for p in params.values())


# -- forward pieces ----------------------------------------------------------
def _dense(x: Tensor, params: Params, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def _attention(x: Tensor, params: Params, lp: str, config: ModelConfig, train: bool, rng) -> Tensor:
    b, n, d = x.shape
    h, dh = config.n_heads, config.head_dim

    def heads(t: Tensor) -> Tensor:
        return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

    q = heads(_dense(x, params, f"{lp}.attn.q"))
    k = heads(_dense(x, params, f"{lp}.attn.k"))
    v = heads(_dense(x, params, f"{lp}.attn.v"))
    weights = T.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)), axis=-1)
    weights = T.dropout(weights, config.dropout, train, rng)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    return _dense(ctx, params, f"{lp}.attn.o")


def encode_scale(x_scaled, params: Params, config: ModelConfig, s: int, train: bool = False,
                 rng=None) -> Tensor:
    """Encode downsampled single-channel series ``(B, L_s)`` into ``(B, H, d_model)``.

    A 1-d input of length ``L_s`` yields ``(H, d_model)``.
    """
    x_scaled = np.asarray(x_scaled, dtype=np.float64)
    squeeze = x_scaled.ndim == 1
    if squeeze:
        x_scaled = x_scaled[None, :]
    if x_scaled.ndim != 2:
        raise DimensionError(f"encode_scale expects (B, L_s), got {x_scaled.shape}")
    spec = config.scales[s]
    expected = spec.length(config.lookback)
    if x_scaled.shape[1] != expected:
        raise DimensionError(f"scale {s + 1}: expected length {expected}, got {x_scaled.shape[1]}")
    pre, d = f"scale{s}", config.d_model
    patches = patch_windows(x_scaled, spec.patch_len, spec.stride)  # (B, N, P)
    b, n, _ = patches.shape

    h = _dense(Tensor(patches), params, f"{pre}.proj") + params[f"{pre}.pos"]
    h = T.dropout(h, config.dropout, train, rng)
    for layer in range(config.n_layers):
        lp = f"{pre}.layer{layer}"
        a = T.layer_norm(h, params[f"{lp}.ln1.g"], params[f"{lp}.ln1.b"], config.ln_eps)
        h = h + T.dropout(_attention(a, params, lp, config, train, rng), config.dropout, train, rng)
        f = T.layer_norm(h, params[f"{lp}.ln2.g"], params[f"{lp}.ln2.b"], config.ln_eps)
        f = _dense(T.gelu(_dense(f, params, f"{lp}.ff1")), params, f"{lp}.ff2")
        h = h + T.dropout(f, config.dropout, train, rng)
    h = T.layer_norm(h, params[f"{pre}.ln.g"], params[f"{pre}.ln.b"], config.ln_eps)
    out = _dense(h.reshape(b, n * d), params, f"{pre}.head").reshape(b, config.horizon, d)
    return out.reshape(config.horizon, d) if squeeze else out


def project_future(z, params: Params) -> Tensor:
    """Per-step affine map of future covariates ``(..., H, E)`` to ``(..., H, d_model)``."""
    z = T.as_tensor(z)
    w = params["future.w"]
    if z.shape[-1] != w.shape[0]:
        raise DimensionError(f"future covariates have {z.shape[-1]} channels; projection expects {w.shape[0]}")
    return _dense(z, params, "future")


def fuse_and_head(per_scale, z_embed, params: Params, config: ModelConfig, train: bool = False,
                  rng=None) -> tuple[Tensor, Tensor]:
    """Fuse ``S`` scale features (and optional future embedding) per horizon step.

    Inputs are ``(..., H, d_model)``; returns mean and variance of shape ``(..., H)``.
    """
    feats = list(per_scale) + ([z_embed] if z_embed is not None else [])
    horizons = {f.shape[-2] for f in feats}
    if len(horizons) != 1:
        raise DimensionError(f"fusion inputs disagree on horizon length: {[f.shape for f in feats]}")
    width = params["fusion.w"].shape[0]
    if len(feats) * config.d_model != width:
        raise DimensionError(f"fusion expects {width // config.d_model} inputs, got {len(feats)}")
    hidden = T.gelu(_dense(T.concat(feats, axis=-1), params, "fusion"))
    hidden = T.dropout(hidden, config.dropout, train, rng)
    lead = hidden.shape[:-1]
    mean = _dense(hidden, params, "mean").reshape(lead)
    var = T.softplus(_dense(hidden, params, "var").reshape(lead)) + config.var_floor
    return mean, var


def forward_batch(x: np.ndarray, z: np.ndarray | None, params: Params, config: ModelConfig,
                  train: bool = False, rng=None, drop_scales=()) -> tuple[Tensor, Tensor]:
    """Batched forward on instance-normalized lookbacks.

    ``x`` is ``(B, L, D)`` and ``z`` is ``(B, H, E)`` or ``None``. Scales listed
    in ``drop_scales`` (0-based) have their fusion inputs replaced by zeros.
    Returns mean and variance tensors of shape ``(B, H, D)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != config.lookback:
        raise DimensionError(f"input stage: expected (B, {config.lookback}, D), got {x.shape}")
    b, length, d = x.shape
    series = x.transpose(0, 2, 1).reshape(b * d, length)

    feats = []
    for s, spec in enumerate(config.scales):
        if s in drop_scales:
            feats.append(Tensor(np.zeros((b * d, config.horizon, config.d_model))))
            continue
        feats.append(encode_scale(scale_transform(series, spec.window, axis=-1), params, config, s, train, rng))

    z_embed = None
    if "future.w" in params:
        if z is None or np.asarray(z).shape[-1] == 0:
            raise DimensionError("future stage: model has a future pathway but no covariates were given")
        z = np.asarray(z, dtype=np.float64)
        if z.shape[:2] != (b, config.horizon):
            raise DimensionError(f"future stage: expected ({b}, {config.horizon}, E), got {z.shape}")
        z_embed = T.take(project_future(z, params), np.repeat(np.arange(b), d), axis=0)

    mean, var = fuse_and_head(feats, z_embed, params, config, train, rng)
    mean = mean.reshape(b, d, config.horizon).transpose(0, 2, 1)
    var = var.reshape(b, d, config.horizon).transpose(0, 2, 1)
    return mean, var


def _train_flag(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def forward(sample, params: Params, config: ModelConfig, mode: str = "eval", rng=None) -> GaussianForecast:
    """Forecast one window in instance-normalized units.

    ``sample`` is a :class:`~energy_patchtst.data.WindowSample`; the caller maps
    the result back with :func:`~energy_patchtst.data.denormalize_forecast`.
    """
    if sample.x.shape != (config.lookback, config.n_targets):
        raise DimensionError(f"input stage: sample x {sample.x.shape} does not match "
                             f"({config.lookback}, {config.n_targets})")
    x = (sample.x - sample.inst_mean) / sample.inst_std
    z = sample.z[None] if "future.w" in params else None
    with T.no_grad():
        mean, var = forward_batch(x[None], z, params, config, _train_flag(mode), rng)
    return GaussianForecast(mean.data[0], var.data[0])
