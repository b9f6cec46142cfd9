"""Multi-scale downsampling and patch extraction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError

HOURLY_WINDOWS = (1, 24, 168)


@dataclass(frozen=True)
class ScaleSpec:
    window: int
    patch_len: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.patch_len < 1 or self.stride < 1:
            raise ParameterError(f"scale fields must be positive integers: {self}")

    def length(self, lookback: int) -> int:
        return lookback // self.window

    def n_patches(self, lookback: int) -> int:
        return patch_count(self.length(lookback), self.patch_len, self.stride)


@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # (N, P, D)
    scale_index: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


def patch_count(length: int, patch_len: int, stride: int) -> int:
    return (length - patch_len) // stride + 1


def scale_transform(x: np.ndarray, window: int, axis: int = 0) -> np.ndarray:
    """Average non-overlapping blocks of ``window`` steps along ``axis``.

    Trailing steps that do not fill a whole block are dropped. ``window=1``
    returns the input unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    n = x.shape[axis]
    if n < window:
        raise ParameterError(f"series of length {n} is shorter than window {window}")
    if window == 1:
        return x
    moved = np.moveaxis(x, axis, 0)
    out_len = n // window
    blocks = moved[: out_len * window].reshape(out_len, window, *moved.shape[1:])
    return np.moveaxis(blocks.mean(axis=1), 0, axis)


def patch_windows(series: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Patches along the last axis: ``(..., L)`` -> ``(..., N, patch_len)``."""
    length = series.shape[-1]
    if length < patch_len:
        raise ParameterError(f"length {length} is shorter than patch length {patch_len}")
    return sliding_window_view(series, patch_len, axis=-1)[..., ::stride, :]


def patchify(x: np.ndarray, patch_len: int, stride: int, scale_index: int = 1) -> PatchSet:
    """Split an ``L_s x D`` series into ``N_s`` patches of shape ``P_s x D``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if x.shape[0] < patch_len:
        raise ParameterError(
            f"scale {scale_index}: length {x.shape[0]} is shorter than patch length {patch_len}")
    patches = patch_windows(x.T, patch_len, stride)  # (D, N, P)
    return PatchSet(np.ascontiguousarray(patches.transpose(1, 2, 0)), scale_index)


def default_scale_specs(lookback: int, hourly: bool = True, windows=None,
                        max_patch: int = 16) -> list[ScaleSpec]:
    """Daily/weekly scales for hourly data with per-scale patch geometry.

    Each scale uses ``P = min(max_patch, L_s)`` and ``stride = max(1, P // 2)``;
    a scale whose downsampled length falls below 2 is dropped with a warning.
    """
    if windows is None:
        windows = HOURLY_WINDOWS if hourly else (1,)
    specs = []
    for w in windows:
        length = lookback // w
        if length < 2:
            warnings.warn(f"dropping scale w={w}: lookback {lookback} gives only {length} point(s)",
                          stacklevel=2)
            continue
        p = min(max_patch, length)
        specs.append(ScaleSpec(window=int(w), patch_len=p, stride=max(1, p // 2)))
    if not specs:
        raise ParameterError(f"lookback {lookback} supports no scale")
    return specs
