"""Losses, Adam, the training loop, pretraining/finetuning and checkpoints."""

from __future__ import annotations

import base64
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import NormalizationStats, WindowSet
from .errors import CheckpointError, ConfigError, DimensionError, DomainError, ParameterError, TrainingError
from .model import ModelConfig, Params, extend_with_future, forward_batch
from .tensor import Tensor, make_rng, no_grad

CHECKPOINT_FORMAT = "energy-patchtst-checkpoint"
CHECKPOINT_VERSION = 1

# parameters held fixed by ``freeze_encoder``: patch embedding and transformer stacks
ENCODER_PARTS = (".proj.", ".pos", ".layer", ".ln.")


# -- losses -----------------------------------------------------------------
def _pair(y, y_hat, name):
    y, y_hat = T.as_tensor(y), T.as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise DimensionError(f"{name}: target shape {y.shape} != prediction shape {y_hat.shape}")
    return y, y_hat


def mse_loss(y, y_hat) -> Tensor:
    y, y_hat = _pair(y, y_hat, "mse_loss")
    return ((y - y_hat) ** 2).mean()


def nll_loss(y, y_hat, var_hat) -> Tensor:
    """Gaussian NLL without the constant: mean of log(var)/2 + err^2/(2 var)."""
    y, y_hat = _pair(y, y_hat, "nll_loss")
    var_hat = T.as_tensor(var_hat)
    if var_hat.shape != y.shape:
        raise DimensionError(f"nll_loss: variance shape {var_hat.shape} != target shape {y.shape}")
    if not np.all(var_hat.data > 0):
        raise DomainError("nll_loss: variance must be strictly positive")
    return (T.log(var_hat) * 0.5 + (y - y_hat) ** 2 / (var_hat * 2.0)).mean()


def combined_loss(y, mean, variance, lam: float) -> Tensor:
    if lam < 0:
        raise ParameterError(f"loss weight must be non-negative, got {lam}")
    mse = mse_loss(y, mean)
    if lam == 0:
        return mse
    return mse + nll_loss(y, mean, variance) * lam


# -- optimizer --------------------------------------------------------------
@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction over a name -> Tensor mapping."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, frozen: Sequence[str] = ()):
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ParameterError(f"invalid Adam settings lr={lr} betas=({beta1}, {beta2}) eps={eps}")
        self.state = OptimizerState(lr, beta1, beta2, eps)
        self.frozen = frozenset(frozen)

    def step(self, params: Params) -> None:
        st = self.state
        for name, p in params.items():
            if name not in self.frozen and p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {name!r} at step {st.step + 1}")
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for name, p in params.items():
            if name in self.frozen or p.grad is None:
                p.zero_grad()
                continue
            g = p.grad
            if name not in st.m:
                st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            m, v = st.m[name], st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.data -= st.lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
            p.zero_grad()


# -- training loop ----------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise ConfigError(f"invalid loop settings: {self}")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    stopped_epoch: int | None = None
    seed: int = 0
    config_hash: str = ""
    best_params: Params | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock timings are left out."""
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "epochs_run": len(self.train_loss),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_epoch": self.stopped_epoch,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def config_hash(*parts) -> str:
    blob = json.dumps([p if isinstance(p, dict) else asdict(p) for p in parts], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def clone_params(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def encoder_parameter_names(params: Params) -> list[str]:
    return [k for k in params if k.startswith("scale") and any(part in k for part in ENCODER_PARTS)]


def batch_loss(windows: WindowSet, params: Params, config: ModelConfig, train: bool, rng) -> Tensor:
    x, y = windows.model_inputs()
    z = windows.z if "future.w" in params else None
    mean, var = forward_batch(x, z, params, config, train, rng)
    return combined_loss(y, mean, var, config.loss_weight)


def evaluate_loss(windows: WindowSet, params: Params, config: ModelConfig, batch_size: int = 256) -> float:
    """Eval-mode combined loss averaged over all entries."""
    total = 0.0
    with no_grad():
        for start in range(0, len(windows), batch_size):
            chunk = windows.subset(slice(start, start + batch_size))
            total += batch_loss(chunk, params, config, False, None).item() * len(chunk)
    return total / len(windows)


@dataclass
class _Source:
    train: WindowSet
    val: WindowSet
    weight: float
    rng: np.random.Generator
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    pos: int = 0

    def next_batch(self, size: int) -> WindowSet:
        if self.pos >= len(self.order):
            self.order = self.rng.permutation(len(self.train))
            self.pos = 0
        idx = self.order[self.pos:self.pos + size]
        self.pos += size
        return self.train.subset(idx)


def _fit(params: Params, config: ModelConfig, sources: list[_Source], tc: TrainConfig,
         frozen: Sequence[str] = ()) -> TrainReport:
    active = [i for i, s in enumerate(sources) if s.weight > 0]
    if not active:
        raise ConfigError("no training source has positive weight")
    for s in sources:
        if len(s.train) == 0 or len(s.val) == 0:
            raise ParameterError("training and validation splits must be non-empty")
    weights = np.array([sources[i].weight for i in active])
    probs = weights / weights.sum()
    n_batches = sum(math.ceil(len(sources[i].train) / tc.batch_size) for i in active)

    drop_rng = make_rng(tc.seed, 11)
    choice_rng = make_rng(tc.seed, 12)
    opt = Adam(tc.lr, tc.beta1, tc.beta2, tc.eps, frozen=frozen)
    report = TrainReport(seed=tc.seed, config_hash=config_hash(config.to_dict(), tc))
    best_params = clone_params(params)
    bad_epochs = 0

    for epoch in range(tc.max_epochs):
        started = time.perf_counter()
        running, seen = 0.0, 0
        for b in range(n_batches):
            k = active[0] if len(active) == 1 else active[int(choice_rng.choice(len(active), p=probs))]
            src = sources[k]
            batch = src.next_batch(tc.batch_size)
            loss = batch_loss(batch, params, config, True, drop_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            if src.weight != 1.0:
                loss = loss * src.weight
            loss.backward()
            opt.step(params)
            running += value * len(batch)
            seen += len(batch)

        val = sum(s.weight * evaluate_loss(s.val, params, config) for s in sources if s.weight > 0)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.train_loss.append(running / seen)
        report.val_loss.append(val)
        report.epoch_seconds.append(time.perf_counter() - started)

        if report.best_val_loss is None or val < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val, epoch
            best_params = clone_params(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= max(tc.patience, 1):
                report.stopped_epoch = epoch
                break

    report.best_params = best_params
    return report


def train(params: Params, config: ModelConfig, train_set: WindowSet, val_set: WindowSet,
          tc: TrainConfig = TrainConfig()) -> TrainReport:
    """Mini-batch Adam with early stopping on validation loss.

    ``params`` is updated in place; ``report.best_params`` holds a copy of the
    best-validation parameters.
    """
    frozen = encoder_parameter_names(params) if tc.freeze_encoder else ()
    return _fit(params, config, [_Source(train_set, val_set, 1.0, make_rng(tc.seed, 10, 0))], tc, frozen)


@dataclass
class PretrainCorpus:
    entries: list = field(default_factory=list)  # (name, train WindowSet, val WindowSet, weight)

    def add(self, name: str, train_set: WindowSet, val_set: WindowSet, weight: float = 1.0) -> None:
        if weight < 0 or not math.isfinite(weight):
            raise ConfigError(f"dataset {name!r}: weight must be finite and >= 0, got {weight}")
        self.entries.append((name, train_set, val_set, float(weight)))


def pretrain(params: Params, config: ModelConfig, corpus: PretrainCorpus,
             tc: TrainConfig = TrainConfig()) -> TrainReport:
    """Weighted multi-dataset training without the future pathway.

    Each batch comes from one dataset drawn with probability proportional to
    its weight, and its loss is scaled by that weight.
    """
    if not corpus.entries:
        raise ConfigError("pretraining corpus is empty")
    if "future.w" in params or config.n_future:
        raise ConfigError("pretraining runs without the future pathway; use n_future=0")
    channels = {e[1].n_targets for e in corpus.entries}
    if len(channels) != 1:
        raise ConfigError(f"corpus datasets disagree on target channel count: {sorted(channels)}")
    sources = [_Source(tr.without_future(), va.without_future(), w, make_rng(tc.seed, 10, i))
               for i, (_, tr, va, w) in enumerate(corpus.entries)]
    return _fit(params, config, sources, tc)


SHAPE_FIELDS = ("scales", "lookback", "horizon", "d_model", "n_heads", "n_layers", "d_ff")


def config_diff(a: ModelConfig, b: ModelConfig, fields=SHAPE_FIELDS) -> dict:
    da, db = a.to_dict(), b.to_dict()
    return {k: (da[k], db[k]) for k in fields if da[k] != db[k]}


def prepare_finetune(pretrained: Params, source_config: ModelConfig, target_config: ModelConfig,
                     seed: int = 0) -> Params:
    """Copy pretrained weights for the target config, adding a fresh future pathway if needed."""
    diff = config_diff(source_config, target_config)
    if diff:
        raise CheckpointError(f"checkpoint does not match target config: {diff}")
    params = clone_params(pretrained)
    has_future = "future.w" in params
    if target_config.n_future and not has_future:
        params = extend_with_future(params, target_config, seed)
    elif has_future and params["future.w"].shape[0] != target_config.n_future:
        raise CheckpointError(f"checkpoint future projection expects {params['future.w'].shape[0]} "
                              f"channels, target has {target_config.n_future}")
    elif has_future and not target_config.n_future:
        raise CheckpointError("checkpoint has a future pathway but the target has no future channels")
    return params


def finetune(pretrained: Params, source_config: ModelConfig, target_config: ModelConfig,
             train_set: WindowSet, val_set: WindowSet, tc: TrainConfig = TrainConfig()) -> TrainReport:
    params = prepare_finetune(pretrained, source_config, target_config, tc.seed)
    return train(params, target_config, train_set, val_set, tc)


# -- checkpoints ------------------------------------------------------------
def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


@dataclass
class Checkpoint:
    params: Params
    config: ModelConfig
    stats: NormalizationStats | None = None
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(params: Params, config: ModelConfig, stats: NormalizationStats | None = None,
                     meta: dict | None = None) -> bytes:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "stats": stats.to_dict() if stats is not None else None,
        "meta": meta or {},
        "params": [{"name": k, "shape": list(v.shape), "dtype": "<f8", "data": _encode(v.data)}
                   for k, v in params.items()],
    }
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode()


def save_checkpoint(path, params: Params, config: ModelConfig, stats: NormalizationStats | None = None,
                    meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, config, stats, meta))


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; any defect raises :class:`CheckpointError` and nothing is returned."""
    path = Path(path)
    try:
        doc = json.loads(path.read_bytes())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        stats = NormalizationStats.from_dict(doc["stats"]) if doc["stats"] is not None else None
        params: Params = {}
        for entry in doc["params"]:
            raw = base64.b64decode(entry["data"], validate=True)
            values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            shape = tuple(entry["shape"])
            if values.size != int(np.prod(shape)):
                raise CheckpointError(f"parameter {entry['name']!r}: {values.size} values for shape {shape}")
            params[entry["name"]] = Tensor(values.reshape(shape), requires_grad=True)
        meta = dict(doc.get("meta") or {})
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
    return Checkpoint(params, config, stats, meta)
