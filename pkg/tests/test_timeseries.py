from datetime import datetime, timezone

import numpy as np
import pytest

from thermoseed import timeseries as ts

START = datetime(2021, 1, 1, tzinfo=timezone.utc)


def table_1min(values, channel="irradiation"):
    return ts.TimeSeriesTable(START, 60, {channel: np.asarray(values, dtype=np.float64)})


class TestLoadCsv:
    def test_missing_cell_becomes_nan(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(
            "timestamp,temperature\n"
            "2021-01-01T00:00:00+00:00,20.0\n"
            "2021-01-01T00:01:00+00:00,\n"
            "2021-01-01T00:02:00+00:00,21.5\n"
        )
        table = ts.load_csv(p, ["temperature"], step=60)
        assert table.length == 3
        values = table.channel("temperature")
        assert np.isnan(values[1]) and values[2] == 21.5

    def test_decreasing_timestamp_rejected_with_row(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text(
            "timestamp,temperature\n"
            "2021-01-01T00:01:00+00:00,20.0\n"
            "2021-01-01T00:00:00+00:00,20.0\n"
        )
        with pytest.raises(ts.GridError, match="row 1"):
            ts.load_csv(p, ["temperature"], step=60)

    def test_full_day_at_one_minute(self, tmp_path):
        p = tmp_path / "t.csv"
        rows = ["timestamp,power"]
        for i in range(1440):
            rows.append(f"2021-01-01T{i // 60:02d}:{i % 60:02d}:00+00:00,{float(i)}")
        p.write_text("\n".join(rows) + "\n")
        table = ts.load_csv(p, ["power"], step=60)
        assert table.length == 1440 and table.step == 60

    def test_roundtrip_through_write_csv(self, tmp_path):
        table = table_1min([1.0, np.nan, 3.0], channel="power")
        p = tmp_path / "out.csv"
        ts.write_csv(table, p)
        back = ts.load_csv(p, ["power"], step=60)
        np.testing.assert_array_equal(back.channel("power"), table.channel("power"))


class TestConstantStreaks:
    def test_21h_irradiation_streak_deleted(self):
        n = 21 * 60
        values = np.concatenate([[1.0, 2.0], np.full(n, 5.0), [3.0]])
        table = ts.delete_constant_streaks(table_1min(values), "irradiation", ts.STREAK_THRESHOLDS["irradiation"])
        out = table.channel("irradiation")
        assert np.isnan(out[2 : 2 + n]).all()
        assert out[0] == 1.0 and out[-1] == 3.0

    def test_exactly_30min_outside_temperature_unchanged(self):
        values = np.concatenate([[1.0], np.full(30, 5.0), [3.0]])
        table = ts.delete_constant_streaks(
            table_1min(values, "temperature_out"), "temperature_out", ts.STREAK_THRESHOLDS["temperature_out"]
        )
        np.testing.assert_array_equal(table.channel("temperature_out"), values)

    def test_alternating_values_unchanged(self):
        values = np.tile([1.0, 2.0], 100)
        table = ts.delete_constant_streaks(table_1min(values), "irradiation", 20 * 60)
        np.testing.assert_array_equal(table.channel("irradiation"), values)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        values = rng.integers(0, 3, size=500).astype(float)
        once = ts.delete_constant_streaks(table_1min(values), "irradiation", 5 * 60)
        twice = ts.delete_constant_streaks(once, "irradiation", 5 * 60)
        np.testing.assert_array_equal(once.channel("irradiation"), twice.channel("irradiation"))

    def test_unknown_channel(self):
        with pytest.raises(KeyError):
            ts.delete_constant_streaks(table_1min([1.0]), "nope", 60)


class TestClip:
    def test_negatives_zeroed(self):
        table = ts.clip_nonnegative(table_1min([-1.0, 0.0, 2.0]), "irradiation")
        np.testing.assert_array_equal(table.channel("irradiation"), [0.0, 0.0, 2.0])

    def test_positive_unchanged_and_nan_preserved(self):
        table = ts.clip_nonnegative(table_1min([1.0, np.nan, 2.0]), "irradiation")
        out = table.channel("irradiation")
        assert out[0] == 1.0 and np.isnan(out[1]) and out[2] == 2.0


class TestGaussianSmooth:
    def test_constant_series_unchanged(self):
        table = ts.gaussian_smooth(table_1min(np.full(100, 7.25)), "irradiation", sigma=2)
        np.testing.assert_allclose(table.channel("irradiation"), 7.25, rtol=1e-12)

    def test_impulse_center_weight(self):
        values = np.zeros(41)
        values[20] = 1.0
        table = ts.gaussian_smooth(table_1min(values), "irradiation", sigma=2)
        expected_center = 1.0 / np.exp(-np.arange(-8, 9) ** 2 / 8.0).sum()
        assert table.channel("irradiation")[20] == pytest.approx(expected_center, rel=1e-12)

    def test_missing_run_preserved_and_neighbors_renormalized(self):
        values = np.ones(60)
        values[20:30] = np.nan
        table = ts.gaussian_smooth(table_1min(values), "irradiation", sigma=2)
        out = table.channel("irradiation")
        assert np.isnan(out[20:30]).all()
        # constant away from the gap stays constant because weights renormalize
        np.testing.assert_allclose(out[~np.isnan(out)], 1.0, rtol=1e-12)

    def test_mean_preserved_for_interior_support(self):
        rng = np.random.default_rng(1)
        values = np.zeros(500)
        values[20:480] = rng.normal(size=460)  # zero margin wider than 2*radius
        table = ts.gaussian_smooth(table_1min(values), "irradiation", sigma=2)
        assert table.channel("irradiation").mean() == pytest.approx(values.mean(), rel=1e-9)


class TestInterpolateGaps:
    def test_single_midpoint(self):
        table = ts.interpolate_gaps(table_1min([10.0, np.nan, 12.0]))
        np.testing.assert_allclose(table.channel("irradiation"), [10.0, 11.0, 12.0])

    def test_30min_gap_untouched(self):
        values = np.concatenate([[1.0], np.full(30, np.nan), [2.0]])
        table = ts.interpolate_gaps(table_1min(values), max_gap=30 * 60)
        assert np.isnan(table.channel("irradiation")[1:31]).all()

    def test_29min_gap_filled(self):
        values = np.concatenate([[0.0], np.full(29, np.nan), [30.0]])
        table = ts.interpolate_gaps(table_1min(values), max_gap=30 * 60)
        np.testing.assert_allclose(table.channel("irradiation"), np.arange(31, dtype=float))

    def test_leading_gap_untouched(self):
        table = ts.interpolate_gaps(table_1min([np.nan, np.nan, 5.0]))
        assert np.isnan(table.channel("irradiation")[:2]).all()


class TestSubsample:
    def test_fifteen_ones(self):
        table = ts.subsample_15min(table_1min(np.ones(15)))
        np.testing.assert_array_equal(table.channel("irradiation"), [1.0])
        assert table.step == 900

    def test_mean_of_one_to_fifteen(self):
        table = ts.subsample_15min(table_1min(np.arange(1.0, 16.0)))
        np.testing.assert_array_equal(table.channel("irradiation"), [8.0])

    def test_all_missing_block(self):
        table = ts.subsample_15min(table_1min(np.full(15, np.nan)))
        assert np.isnan(table.channel("irradiation")[0])

    def test_partial_missing_uses_observed_mean(self):
        values = np.full(15, np.nan)
        values[:5] = [1.0, 2.0, 3.0, 4.0, 5.0]
        table = ts.subsample_15min(table_1min(values))
        np.testing.assert_allclose(table.channel("irradiation"), [3.0])

    def test_trailing_remainder_dropped(self):
        table = ts.subsample_15min(table_1min(np.ones(20)))
        assert table.length == 1

    def test_wrong_step_rejected(self):
        t15 = ts.TimeSeriesTable(START, 900, {"x": np.ones(4)})
        with pytest.raises(ts.GridError):
            ts.subsample_15min(t15)


class TestEncodeTime:
    def test_december_wraps_to_full_circle(self):
        ms, mc, *_ = ts.encode_time(datetime(2021, 12, 5, 0, 0, tzinfo=timezone.utc))
        assert ms == pytest.approx(0.0, abs=1e-12)
        assert mc == pytest.approx(1.0, abs=1e-12)

    def test_march_is_quarter_circle(self):
        ms, mc, *_ = ts.encode_time(datetime(2021, 3, 5, 0, 0, tzinfo=timezone.utc))
        assert ms == pytest.approx(1.0, abs=1e-12)
        assert mc == pytest.approx(0.0, abs=1e-12)

    def test_six_am_slot(self):
        _, _, tsin, tcos, _ = ts.encode_time(datetime(2021, 3, 5, 6, 0, tzinfo=timezone.utc))
        assert tsin == pytest.approx(1.0, abs=1e-12)
        assert tcos == pytest.approx(0.0, abs=1e-12)

    def test_weekday_scaling(self):
        assert ts.encode_time(datetime(2021, 1, 4, tzinfo=timezone.utc))[4] == 0.0  # Monday
        assert ts.encode_time(datetime(2021, 1, 10, tzinfo=timezone.utc))[4] == 1.0  # Sunday

    def test_off_grid_rejected(self):
        with pytest.raises(ts.GridError):
            ts.encode_time(datetime(2021, 1, 1, 0, 7, tzinfo=timezone.utc))

    def test_unit_circle_property(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            stamp = datetime(2021, int(rng.integers(1, 13)), int(rng.integers(1, 28)),
                             int(rng.integers(0, 24)), int(rng.integers(0, 4)) * 15, tzinfo=timezone.utc)
            ms, mc, tsin, tcos, wd = ts.encode_time(stamp)
            assert ms * ms + mc * mc == pytest.approx(1.0, abs=1e-12)
            assert tsin * tsin + tcos * tcos == pytest.approx(1.0, abs=1e-12)
            assert 0.0 <= wd <= 1.0


class TestNormalizer:
    def fitted(self):
        table = ts.TimeSeriesTable(START, 900, {"temperature": np.array([10.0, 15.0, 20.0])})
        return ts.Normalizer().fit(table)

    def test_bounds_map_to_target_range(self):
        norm = self.fitted()
        assert norm.normalize_values("temperature", 10.0) == pytest.approx(0.1)
        assert norm.normalize_values("temperature", 20.0) == pytest.approx(0.9)
        assert norm.normalize_values("temperature", 15.0) == pytest.approx(0.5)

    def test_roundtrip_identity(self):
        norm = self.fitted()
        rng = np.random.default_rng(3)
        v = rng.uniform(10.0, 20.0, size=100)
        back = norm.denormalize_values("temperature", norm.normalize_values("temperature", v))
        np.testing.assert_allclose(back, v, rtol=1e-12)

    def test_degenerate_channel_rejected(self):
        table = ts.TimeSeriesTable(START, 900, {"x": np.full(5, 3.0)})
        with pytest.raises(ValueError, match="degenerate"):
            ts.Normalizer().fit(table)

    def test_shared_group_uses_common_scale(self):
        table = ts.TimeSeriesTable(
            START, 900,
            {"temperature": np.array([18.0, 24.0]), "temperature_out": np.array([-5.0, 15.0])},
        )
        norm = ts.Normalizer(shared=("temperature", "temperature_out")).fit(table)
        assert norm.bounds_["temperature"] == norm.bounds_["temperature_out"] == (-5.0, 24.0)

    def test_zero_channel_preserves_raw_zero(self):
        table = ts.TimeSeriesTable(START, 900, {"power": np.array([-500.0, 0.0, 1500.0])})
        norm = ts.Normalizer(zero_channels=("power",)).fit(table)
        assert norm.normalize_values("power", 0.0) == 0.0
        v = np.array([-400.0, 0.0, 900.0])
        np.testing.assert_allclose(norm.denormalize_values("power", norm.normalize_values("power", v)), v, rtol=1e-12)

    def test_save_load_roundtrip(self, tmp_path):
        table = ts.TimeSeriesTable(
            START, 900,
            {"temperature": np.array([10.0, 20.0]), "power": np.array([0.0, 1500.0])},
        )
        norm = ts.Normalizer(shared=("temperature",), zero_channels=("power",)).fit(table)
        path = tmp_path / "norm.txt"
        norm.save(path)
        back = ts.Normalizer.load(path)
        assert back.bounds_ == norm.bounds_
        assert back.zero_channels == norm.zero_channels
        assert back.normalize_values("power", 750.0) == norm.normalize_values("power", 750.0)

    def test_get_params_sklearn_contract(self):
        params = ts.Normalizer().get_params()
        assert params["lo"] == 0.1 and params["hi"] == 0.9


class TestDisaggregation:
    def test_equal_rooms_split_equally(self):
        d = ts.DisaggregationInput(
            total_power=np.array([1000.0]),
            openings=np.full((1, 5), 0.7),
            mass_flows=np.full(5, 2.0),
        )
        np.testing.assert_allclose(ts.disaggregate_power(d).room_power, np.full((1, 5), 200.0))

    def test_single_open_valve_takes_all(self):
        d = ts.DisaggregationInput(
            total_power=np.array([840.0]),
            openings=np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]),
            mass_flows=np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
        )
        np.testing.assert_allclose(ts.disaggregate_power(d).room_power[0], [840.0, 0, 0, 0, 0])

    def test_worked_example(self):
        d = ts.DisaggregationInput(
            total_power=np.array([300.0]),
            openings=np.array([[0.5, 0.25, 0.0, 0.0, 0.0]]),
            mass_flows=np.array([2.0, 4.0, 1.0, 1.0, 1.0]),
        )
        np.testing.assert_allclose(ts.disaggregate_power(d).room_power[0], [150.0, 150.0, 0, 0, 0])

    def test_conservation_where_denominator_nonzero(self):
        rng = np.random.default_rng(4)
        d = ts.DisaggregationInput(
            total_power=rng.uniform(0, 2000, size=200),
            openings=rng.uniform(0, 1, size=(200, 5)),
            mass_flows=rng.uniform(0.5, 3.0, size=5),
        )
        result = ts.disaggregate_power(d)
        np.testing.assert_allclose(result.room_power.sum(axis=1), d.total_power, rtol=1e-12)

    def test_all_closed_row_is_unattributed(self):
        d = ts.DisaggregationInput(
            total_power=np.array([500.0, 100.0]),
            openings=np.array([[0.0] * 5, [0.5] * 5]),
            mass_flows=np.ones(5),
        )
        result = ts.disaggregate_power(d)
        np.testing.assert_array_equal(result.room_power[0], np.zeros(5))
        assert result.unattributed_rows == 1
        assert result.unattributed_power == 500.0

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            ts.DisaggregationInput(np.array([1.0]), np.array([[0.5]]), np.array([-1.0]))
        with pytest.raises(ValueError):
            ts.DisaggregationInput(np.array([1.0]), np.array([[1.5]]), np.array([1.0]))
