import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from energy_patchtst.data import (
    ETT_COLUMNS,
    STD_FLOOR,
    NormalizationStats,
    Schema,
    SyntheticSpec,
    TimeSeriesTable,
    WindowSet,
    chronological_split,
    count_windows,
    denormalize_forecast,
    ett_schema,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    make_windows,
    write_csv,
)
from energy_patchtst.errors import (
    IrregularSpacingError,
    LoadError,
    MissingFileError,
    MissingValueError,
    ParameterError,
    ParseError,
    TimestampError,
)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def table_from(targets, future=None):
    targets = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    t = targets.shape[0]
    future = np.zeros((t, 0)) if future is None else np.asarray(future, dtype=float).reshape(t, -1)
    stamps = np.datetime64("2021-01-01T00:00:00") + np.arange(t) * np.timedelta64(1, "h")
    return TimeSeriesTable(stamps, targets, future, tuple(f"y{i}" for i in range(targets.shape[1])),
                           tuple(f"z{i}" for i in range(future.shape[1])))


GOOD = """date,a,b,c
2021-01-01 00:00:00,1,2,9
2021-01-01 01:00:00,3,4,9
2021-01-01 02:00:00,5,6,9
2021-01-01 03:00:00,7,8,9
"""


# -- loading -----------------------------------------------------------------
def test_load_well_formed(tmp_path):
    table = load_csv(write(tmp_path, GOOD), Schema(("a", "b")))
    assert (table.n_steps, table.n_targets, table.n_future) == (4, 2, 0)
    np.testing.assert_array_equal(table.targets[:, 1], [2, 4, 6, 8])
    assert table.step == np.timedelta64(3600, "s")


def test_load_with_future_role(tmp_path):
    table = load_csv(write(tmp_path, GOOD), Schema.from_roles({"a": "target", "b": "ignore", "c": "future"}))
    assert table.target_names == ("a",) and table.future_names == ("c",)


def test_empty_cell_names_row_and_column(tmp_path):
    path = write(tmp_path, GOOD.replace("3,4,9", "3,,9"))
    with pytest.raises(MissingValueError) as info:
        load_csv(path, Schema(("a", "b")))
    assert (info.value.row, info.value.column) == (2, "b")


def test_nan_is_missing_value(tmp_path):
    with pytest.raises(MissingValueError):
        load_csv(write(tmp_path, GOOD.replace("5,6", "nan,6")), Schema(("a",)))


def test_unparseable_cell(tmp_path):
    with pytest.raises(ParseError) as info:
        load_csv(write(tmp_path, GOOD.replace("7,8", "7,x8")), Schema(("b",)))
    assert (info.value.row, info.value.column) == (4, "b")


def test_missing_timestamp(tmp_path):
    with pytest.raises(TimestampError):
        load_csv(write(tmp_path, GOOD.replace("2021-01-01 02:00:00", "")), Schema(("a",)))


def test_irregular_spacing(tmp_path):
    with pytest.raises(IrregularSpacingError) as info:
        load_csv(write(tmp_path, GOOD.replace("03:00:00", "04:00:00")), Schema(("a",)))
    assert info.value.row == 4


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_csv(tmp_path / "nope.csv", Schema(("a",)))


def test_missing_column(tmp_path):
    with pytest.raises(ParseError, match="zz"):
        load_csv(write(tmp_path, GOOD), Schema(("zz",)))


def test_load_errors_are_distinct():
    kinds = {MissingFileError, MissingValueError, ParseError, TimestampError, IrregularSpacingError}
    assert all(issubclass(k, LoadError) for k in kinds)
    assert len({k.__name__ for k in kinds}) == 5


def test_ett_layout(tmp_path):
    rows = ["date," + ",".join(ETT_COLUMNS)]
    for i in range(5):
        rows.append(f"2016-07-01 0{i}:00:00," + ",".join(str(i + k) for k in range(7)))
    table = load_csv(write(tmp_path, "\n".join(rows) + "\n"), ett_schema())
    assert (table.n_targets, table.n_future) == (1, 6)
    np.testing.assert_array_equal(table.targets[:, 0], np.arange(5) + 6)


def test_csv_round_trip(tmp_path):
    table = generate_synthetic(1, 400, SyntheticSpec(driver_coef=0.3))
    path = tmp_path / "s.csv"
    write_csv(table, path)
    back = load_csv(path, Schema(table.target_names, table.future_names))
    assert back.targets.tobytes() == table.targets.tobytes()
    assert back.future.tobytes() == table.future.tobytes()
    np.testing.assert_array_equal(back.timestamps, table.timestamps)


def test_schema_rejects_double_role():
    with pytest.raises(ParameterError):
        Schema(("a",), ("a",))


# -- normalization ---------------------------------------------------------------
def test_fit_normalizer_hand_values():
    stats = fit_normalizer(table_from([[1.0], [3.0]]), range(0, 2))
    assert stats.target_mean.tolist() == [2.0] and stats.target_std.tolist() == [1.0]


def test_constant_channel_clamped():
    stats = fit_normalizer(table_from([5.0, 5.0, 5.0]), (0, 3))
    assert stats.target_mean.tolist() == [5.0] and stats.target_std.tolist() == [STD_FLOOR]


def test_train_rows_only():
    stats = fit_normalizer(table_from([1.0, 3.0, 1000.0]), (0, 2))
    assert stats.target_mean.tolist() == [2.0]


def test_channels_independent():
    a = np.array([[1.0, 10.0], [3.0, 30.0], [2.0, 50.0]])
    both = fit_normalizer(table_from(a), (0, 3))
    single = fit_normalizer(table_from(a[:, :1]), (0, 3))
    assert both.target_mean[0] == single.target_mean[0] and both.target_std[0] == single.target_std[0]


def test_empty_range():
    with pytest.raises(ParameterError):
        fit_normalizer(table_from([1.0, 2.0]), (1, 1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-1e4, 1e4)))
def test_normalize_round_trip(x):
    stats = fit_normalizer(table_from(x), (0, 6))
    ok = stats.target_std > STD_FLOOR
    back = stats.denormalize_targets(stats.normalize_targets(x))
    scale = 1 + np.abs(x).max()
    np.testing.assert_allclose(back[:, ok], x[:, ok], rtol=1e-10, atol=1e-10 * scale)


# -- windows -------------------------------------------------------------------
def test_window_count_hand_value():
    table = table_from(np.arange(10.0))
    ws = make_windows(table, NormalizationStats.identity(1, 0), 4, 2)
    assert len(ws) == 5 == count_windows(10, 4, 2)


def test_exact_length_gives_one_window():
    assert len(make_windows(table_from(np.arange(6.0)), NormalizationStats.identity(1, 0), 4, 2)) == 1


@pytest.mark.parametrize("t", [20, 23, 31])
def test_stride_equal_horizon(t):
    L, H = 5, 3
    ws = make_windows(table_from(np.arange(float(t))), NormalizationStats.identity(1, 0), L, H, stride=H)
    assert len(ws) == (t - L - H) // H + 1
    targets = ws.y[:, :, 0].ravel()
    assert len(set(targets)) == targets.size  # targets never overlap


def test_too_short_states_required_length():
    with pytest.raises(ParameterError, match="at least 12"):
        make_windows(table_from(np.arange(10.0)), NormalizationStats.identity(1, 0), 8, 4)


def test_window_contents_and_future_alignment():
    table = table_from(np.arange(12.0), future=100 + np.arange(12.0))
    ws = make_windows(table, NormalizationStats.identity(1, 1), 4, 3)
    s = ws[2]
    np.testing.assert_array_equal(s.x[:, 0], [2, 3, 4, 5])
    np.testing.assert_array_equal(s.y[:, 0], [6, 7, 8])
    np.testing.assert_array_equal(s.z[:, 0], [106, 107, 108])
    assert s.inst_mean.tolist() == [3.5]
    np.testing.assert_allclose(s.inst_std, np.sqrt(1.25 + 1e-5))


def test_instance_norm_off():
    ws = make_windows(table_from(np.arange(12.0)), NormalizationStats.identity(1, 0), 4, 3, instance_norm=False)
    assert np.all(ws.inst_mean == 0) and np.all(ws.inst_std == 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 10))
def test_overlapping_windows_agree(L, H, extra):
    values = np.random.default_rng(L * 31 + H).normal(size=(L + H + extra, 2))
    ws = make_windows(table_from(values), NormalizationStats.identity(2, 0), L, H)
    for i, s in enumerate(ws):
        np.testing.assert_array_equal(s.x, values[i:i + L])
        np.testing.assert_array_equal(s.y, values[i + L:i + L + H])


def test_window_set_helpers():
    ws = make_windows(table_from(np.arange(20.0), future=np.arange(20.0)), NormalizationStats.identity(1, 1), 5, 4)
    assert isinstance(ws, WindowSet)
    assert ws.truncate(2).y.shape == (len(ws), 2, 1)
    assert ws.without_future().n_future == 0
    stacked = WindowSet.stack([ws[0], ws[3]])
    np.testing.assert_array_equal(stacked.x, ws.x[[0, 3]])
    x, y = ws.model_inputs()
    np.testing.assert_allclose(x.mean(axis=1), 0.0, atol=1e-12)


# -- splitting ---------------------------------------------------------------
def test_split_ten_windows():
    sp = chronological_split(10)
    assert (list(sp.train), list(sp.val), list(sp.test)) == ([0, 1, 2, 3, 4, 5, 6], [7], [8, 9])


def test_split_hundred_windows():
    sp = chronological_split(100)
    assert (len(sp.train), len(sp.val), len(sp.test)) == (70, 10, 20)


@pytest.mark.parametrize("ratios", [(1, 0, 0), (0.5, 0.5), (0.6, 0.3, 0.3)])
def test_split_bad_ratios(ratios):
    with pytest.raises(ParameterError):
        chronological_split(100, ratios)


def test_split_empty_range():
    with pytest.raises(ParameterError):
        chronological_split(3)


@settings(max_examples=50, deadline=None)
@given(st.integers(30, 500), st.integers(1, 8), st.integers(1, 8))
def test_purged_split_has_no_leakage(n, L, H):
    gap = H - 1
    sp = chronological_split(n + 2 * gap, gap=gap)
    assert sp.train.stop <= sp.val.start and sp.val.stop <= sp.test.start
    # no target row is shared between consecutive splits
    assert sp.val.start + L > sp.train.stop - 1 + L + H - 1
    assert sp.test.start + L > sp.val.stop - 1 + L + H - 1
    # earliest test window starts after the last training window
    assert sp.test.start > sp.train.stop - 1


# -- de-normalization ----------------------------------------------------------
def test_denormalize_identity():
    m, v = np.ones((3, 2)), np.full((3, 2), 0.5)
    dm, dv = denormalize_forecast(m, v, NormalizationStats.identity(2, 0), np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(dm, m)
    np.testing.assert_array_equal(dv, v)


def test_denormalize_variance_scaling():
    stats = NormalizationStats(np.array([0.0]), np.array([2.0]), np.zeros(0), np.ones(0))
    _, v = denormalize_forecast(np.zeros((1, 1)), np.ones((1, 1)), stats, np.zeros(1), np.array([3.0]))
    assert v.item() == 36.0


def test_shift_does_not_change_variance():
    stats = NormalizationStats(np.array([7.0]), np.array([1.0]), np.zeros(0), np.ones(0))
    _, v = denormalize_forecast(np.zeros((2, 1)), np.full((2, 1), 0.3), stats, np.array([5.0]), np.ones(1))
    np.testing.assert_array_equal(v, 0.3)


def test_denormalize_mean_order():
    stats = NormalizationStats(np.array([10.0]), np.array([2.0]), np.zeros(0), np.ones(0))
    m, _ = denormalize_forecast(np.ones((1, 1)), np.ones((1, 1)), stats, np.array([1.0]), np.array([3.0]))
    assert m.item() == (1 * 3 + 1) * 2 + 10


# -- synthetic ------------------------------------------------------------------
def test_synthetic_deterministic():
    a = generate_synthetic(4, 400, SyntheticSpec(driver_coef=0.5))
    b = generate_synthetic(4, 400, SyntheticSpec(driver_coef=0.5))
    assert a.targets.tobytes() == b.targets.tobytes() and a.future.tobytes() == b.future.tobytes()


def test_noiseless_is_periodic():
    t = generate_synthetic(0, 1000, SyntheticSpec(noise_std=0.0))
    np.testing.assert_allclose(t.targets[168:], t.targets[:-168], atol=1e-12)
    daily_only = generate_synthetic(0, 400, SyntheticSpec(noise_std=0.0, weekly_amp=0.0))
    np.testing.assert_allclose(daily_only.targets[24:], daily_only.targets[:-24], atol=1e-12)


def test_short_series_warns_but_keeps_weekly():
    with pytest.warns(UserWarning, match="336"):
        t = generate_synthetic(0, 100, SyntheticSpec(noise_std=0.0, daily_amp=0.0))
    np.testing.assert_allclose(t.targets[:, 0], 0.5 * np.sin(2 * np.pi * np.arange(100) / 168), atol=1e-12)


def test_driver_regression_oracle():
    t = generate_synthetic(9, 2000, SyntheticSpec(daily_amp=0.0, weekly_amp=0.0, driver_coef=1.0, noise_std=0.01))
    design = np.column_stack([t.future[:, 0], np.ones(t.n_steps)])
    coef, *_ = np.linalg.lstsq(design, t.targets[:, 0], rcond=None)
    resid = t.targets[:, 0] - design @ coef
    assert 1 - resid.var() / t.targets[:, 0].var() >= 0.99


def test_driver_is_unit_variance_ar1():
    t = generate_synthetic(2, 50_000, SyntheticSpec(driver_phi=0.8))
    d = t.future[:, 0]
    assert abs(d.var() - 1.0) < 0.05
    assert abs(np.corrcoef(d[1:], d[:-1])[0, 1] - 0.8) < 0.02


def test_synthetic_channel_names():
    assert generate_synthetic(0, 400).target_names == ("target",)
    t = generate_synthetic(0, 400, SyntheticSpec(n_targets=3))
    assert t.target_names == ("target_0", "target_1", "target_2") and t.future_names == ("driver",)
