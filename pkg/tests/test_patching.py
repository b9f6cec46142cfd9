import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from energy_patchtst.errors import ParameterError
from energy_patchtst.patching import (
    ScaleSpec,
    default_scale_specs,
    patch_count,
    patchify,
    scale_transform,
)


def enumerate_starts(length, patch_len, stride):
    """Brute-force oracle: every start whose full patch fits."""
    starts, s = [], 0
    while s + patch_len <= length:
        starts.append(s)
        s += stride
    return starts


# -- scale transform -------------------------------------------------------------
def test_window_one_is_identity():
    x = np.random.default_rng(0).normal(size=(12, 3))
    out = scale_transform(x, 1)
    np.testing.assert_array_equal(out, x)


def test_block_mean_hand_value():
    np.testing.assert_array_equal(scale_transform(np.arange(1.0, 7.0)[:, None], 3), [[2.0], [5.0]])


def test_remainder_dropped():
    np.testing.assert_array_equal(scale_transform(np.arange(1.0, 8.0), 3), [2.0, 5.0])


@pytest.mark.parametrize("w", [1, 2, 5, 7])
def test_constant_series(w):
    out = scale_transform(np.full((14, 2), 4.5), w)
    assert out.shape == (14 // w, 2)
    np.testing.assert_array_equal(out, 4.5)


def test_shorter_than_window():
    with pytest.raises(ParameterError):
        scale_transform(np.ones(5), 6)


def test_batched_axis():
    x = np.random.default_rng(1).normal(size=(4, 24))
    np.testing.assert_allclose(scale_transform(x, 6, axis=1), x.reshape(4, 4, 6).mean(axis=2))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 80).flatmap(
    lambda n: st.tuples(arrays(np.float64, (n, 2), elements=st.floats(-100, 100)), st.integers(1, n))))
def test_mean_preservation(case):
    x, w = case
    out = scale_transform(x, w)
    kept = (x.shape[0] // w) * w
    np.testing.assert_allclose(out.mean(axis=0), x[:kept].mean(axis=0), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4),
       st.randoms(use_true_random=False))
def test_composition(a, b, k, rnd):
    n = a * b * k
    x = np.array([[rnd.uniform(-10, 10)] for _ in range(n)])
    np.testing.assert_allclose(scale_transform(scale_transform(x, a), b), scale_transform(x, a * b), atol=1e-12)


# -- patchify -------------------------------------------------------------
def test_patchify_hand_example():
    x = np.arange(1.0, 11.0)
    ps = patchify(x, 4, 2)
    assert ps.n_patches == 4
    np.testing.assert_array_equal(ps.patches[-1, :, 0], [7.0, 8.0, 9.0, 10.0])


def test_default_lookback_patch_count():
    assert patchify(np.zeros((336, 1)), 16, 8).n_patches == 41


@pytest.mark.parametrize("stride", [1, 3, 50])
def test_length_equal_patch(stride):
    x = np.arange(6.0)[:, None]
    ps = patchify(x, 6, stride)
    assert ps.n_patches == 1
    np.testing.assert_array_equal(ps.patches[0], x)


def test_patchify_error_names_scale():
    with pytest.raises(ParameterError, match="scale 3"):
        patchify(np.zeros((4, 1)), 5, 1, scale_index=3)


def test_patch_geometry_exhaustive():
    for length in range(1, 65):
        for p in range(1, length + 1):
            for tau in range(1, length + 1):
                starts = enumerate_starts(length, p, tau)
                assert patch_count(length, p, tau) == len(starts)
    x = np.arange(20.0)[:, None]
    for p in range(1, 21):
        for tau in range(1, 21):
            ps = patchify(x, p, tau)
            expect = [x[s:s + p] for s in enumerate_starts(20, p, tau)]
            np.testing.assert_array_equal(ps.patches, np.stack(expect))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 5))
def test_non_overlapping_patches_reconstruct(p, n, extra):
    x = np.random.default_rng(p * 100 + n).normal(size=(n * p + min(extra, p - 1), 2))
    ps = patchify(x, p, p)
    np.testing.assert_array_equal(ps.patches.reshape(-1, 2), x[:ps.n_patches * p])


# -- default scales -------------------------------------------------------------------
def test_default_scales_at_336():
    specs = default_scale_specs(336)
    assert [s.window for s in specs] == [1, 24, 168]
    assert [s.length(336) for s in specs] == [336, 14, 2]
    assert specs[0] == ScaleSpec(1, 16, 8)
    assert specs[1] == ScaleSpec(24, 14, 7)
    assert specs[2] == ScaleSpec(168, 2, 1) and specs[2].n_patches(336) == 1


def test_weekly_scale_dropped_for_short_lookback():
    with pytest.warns(UserWarning, match="w=168"):
        specs = default_scale_specs(100)
    assert [s.window for s in specs] == [1, 24]


def test_non_hourly_single_scale():
    assert default_scale_specs(64, hourly=False) == [ScaleSpec(1, 16, 8)]


def test_scale_spec_rejects_zero():
    with pytest.raises(ParameterError):
        ScaleSpec(1, 0, 1)
