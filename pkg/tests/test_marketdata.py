import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trihjm.errors import ValidationError
from trihjm.marketdata import (ConstituentPanel, CurvePanel, IndexSeries, PillarGrid, align_panels,
                               generate_synthetic_history, load_constituents, load_curve_panel,
                               load_index_series, month_end_levels, shift_family_dates, to_weekly,
                               write_curve_panel, write_history, write_index_series)


def _panel(n=10, kind="nominal_fwd", start="2024-01-01", step=1, tenors=(1.0, 2.0, 5.0)):
    dates = np.datetime64(start) + step * np.arange(n)
    vals = 0.1 + 0.001 * np.arange(n * len(tenors)).reshape(n, len(tenors))
    return CurvePanel(dates, PillarGrid(tenors), vals, kind)


class TestPillarGrid:
    def test_index_and_subset(self):
        g = PillarGrid((0.5, 1.0, 3.0))
        assert g.index(1.0) == 1
        assert g.subset((3.0, 0.5)).tenors == (0.5, 3.0)

    @pytest.mark.parametrize("tenors", [(), (1.0, 1.0), (2.0, 1.0), (0.0, 1.0), (float("nan"),)])
    def test_rejects_bad_grids(self, tenors):
        with pytest.raises(ValidationError):
            PillarGrid(tenors)

    def test_unknown_tenor(self):
        with pytest.raises(ValidationError):
            PillarGrid((1.0,)).index(2.0)


class TestCurvePanel:
    def test_rate_panel_rejects_nan(self):
        vals = np.array([[0.1, np.nan]])
        with pytest.raises(ValidationError):
            CurvePanel(np.array(["2024-01-01"], "datetime64[D]"), PillarGrid((1.0, 2.0)), vals, "nominal_fwd")

    def test_spread_panel_allows_nan(self):
        vals = np.array([[0.01, np.nan]])
        p = CurvePanel(np.array(["2024-01-01"], "datetime64[D]"), PillarGrid((1.0, 2.0)), vals, "cdi_spread")
        assert p.is_spread

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            _panel(kind="bogus")

    def test_window_is_inclusive(self):
        p = _panel(10)
        w = p.window("2024-01-03", "2024-01-05")
        assert len(w) == 3
        assert str(w.dates[0]) == "2024-01-03"

    def test_with_tenors(self):
        p = _panel().with_tenors((5.0, 1.0))
        assert p.grid.tenors == (1.0, 5.0)
        assert p.values.shape[1] == 2

    def test_csv_round_trip(self, tmp_path):
        p = _panel(6)
        write_curve_panel(p, tmp_path / "p.csv")
        q = load_curve_panel(tmp_path / "p.csv", "nominal_fwd")
        np.testing.assert_array_equal(q.values, p.values)
        np.testing.assert_array_equal(q.dates, p.dates)
        assert q.grid == p.grid


class TestLoadErrors:
    def _write(self, tmp_path, text):
        f = tmp_path / "x.csv"
        f.write_text(text)
        return f

    def test_empty(self, tmp_path):
        with pytest.raises(ValidationError, match="no data rows"):
            load_curve_panel(self._write(tmp_path, "date,1,2\n"), "nominal_fwd")

    def test_duplicate_date(self, tmp_path):
        f = self._write(tmp_path, "date,1\n2024-01-02,0.1\n2024-01-02,0.1\n")
        with pytest.raises(ValidationError, match="duplicate date 2024-01-02"):
            load_curve_panel(f, "nominal_fwd")

    def test_non_monotone(self, tmp_path):
        f = self._write(tmp_path, "date,1\n2024-01-03,0.1\n2024-01-02,0.1\n")
        with pytest.raises(ValidationError, match="non-monotone"):
            load_curve_panel(f, "nominal_fwd")

    def test_missing_rate_cell(self, tmp_path):
        f = self._write(tmp_path, "date,1,2\n2024-01-02,0.1,\n")
        with pytest.raises(ValidationError):
            load_curve_panel(f, "nominal_fwd")

    def test_missing_spread_cell_is_nan(self, tmp_path):
        f = self._write(tmp_path, "date,1,2\n2024-01-02,0.01,\n")
        p = load_curve_panel(f, "cdi_spread")
        assert np.isnan(p.values[0, 1])

    def test_bad_header(self, tmp_path):
        f = self._write(tmp_path, "date,one\n2024-01-02,0.1\n")
        with pytest.raises(ValidationError):
            load_curve_panel(f, "nominal_fwd")


class TestAlignAndWeekly:
    def test_align_intersects_dates(self):
        a, b = _panel(10), _panel(10, start="2024-01-05", kind="real_fwd")
        out = align_panels([a, b])
        assert all(len(p) == 6 for p in out)
        np.testing.assert_array_equal(out[0].dates, out[1].dates)

    def test_align_needs_overlap(self):
        with pytest.raises(ValidationError, match="no common dates"):
            align_panels([_panel(3), _panel(3, start="2025-01-01")])

    def test_align_needs_two(self):
        with pytest.raises(ValidationError):
            align_panels([_panel(3)])

    def test_weekly_takes_last_day_of_each_week(self):
        # 2024-01-01 is a Monday; business days only
        days = np.busday_offset(np.datetime64("2024-01-01"), np.arange(15), roll="forward")
        p = CurvePanel(days, PillarGrid((1.0,)), np.arange(15.0)[:, None] / 100, "nominal_fwd")
        w = to_weekly(p)
        assert [str(d) for d in w.dates] == ["2024-01-05", "2024-01-12", "2024-01-19"]

    def test_weekly_holiday_friday_uses_thursday(self):
        days = np.array(["2024-01-02", "2024-01-03", "2024-01-04", "2024-01-08", "2024-01-12"], "datetime64[D]")
        p = CurvePanel(days, PillarGrid((1.0,)), np.ones((5, 1)) * 0.1, "nominal_fwd")
        assert [str(d) for d in to_weekly(p).dates] == ["2024-01-04", "2024-01-12"]

    def test_weekly_partial_last_week(self):
        days = np.array(["2024-01-05", "2024-01-08", "2024-01-09"], "datetime64[D]")
        p = CurvePanel(days, PillarGrid((1.0,)), np.ones((3, 1)) * 0.1, "nominal_fwd")
        assert len(to_weekly(p)) == 2
        assert len(to_weekly(p, include_partial=False)) == 1

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 400), min_size=1, max_size=60, unique=True))
    def test_weekly_one_row_per_week(self, offsets):
        days = np.sort(np.datetime64("2023-01-02") + np.array(offsets))
        p = CurvePanel(days, PillarGrid((1.0,)), np.zeros((days.size, 1)), "nominal_fwd")
        w = to_weekly(p)
        weeks = (days - np.datetime64("2023-01-07")).astype(int) // 7
        assert len(w) == np.unique(weeks).size
        assert np.all(np.diff(w.dates) > np.timedelta64(0, "D"))


class TestConstituents:
    def _frame(self):
        return pd.DataFrame({
            "date": ["2024-01-02", "2024-01-02", "2024-01-03"],
            "family": ["cdi", "IPCA", "CDI"],
            "issuer": ["A", "A", "A"],
            "ticker": ["A1", "A2", "A1"],
            "spread": [0.02, 0.01, 0.021],
            "duration": [3.0, 4.0, 3.0],
            "weight": [1.0, 2.0, 1.0],
        })

    def test_normalizes_family(self):
        p = ConstituentPanel(self._frame())
        assert set(p.frame["family"]) == {"CDI", "IPCA"}
        assert len(p.family("cdi")) == 2

    def test_missing_column(self):
        with pytest.raises(ValidationError, match="missing columns"):
            ConstituentPanel(self._frame().drop(columns="weight"))

    def test_duplicate_row(self):
        f = pd.concat([self._frame(), self._frame().iloc[:1]])
        with pytest.raises(ValidationError, match="duplicate"):
            ConstituentPanel(f)

    def test_bad_values(self):
        f = self._frame()
        f.loc[0, "duration"] = 0.0
        with pytest.raises(ValidationError):
            ConstituentPanel(f)

    def test_lag_shifts_ipca_business_days(self, tmp_path):
        self._frame().to_csv(tmp_path / "c.csv", index=False)
        p = load_constituents(tmp_path / "c.csv", ipca_lag_days=3)
        d = p.family("IPCA")["date"].iloc[0]
        assert d == pd.Timestamp("2024-01-05")
        q = shift_family_dates(p, "IPCA", -3)
        assert q.family("IPCA")["date"].iloc[0] == pd.Timestamp("2024-01-02")


class TestIndexSeries:
    def test_round_trip_and_returns(self, tmp_path):
        s = IndexSeries(np.array(["2024-01-31", "2024-02-29", "2024-03-31"], "datetime64[D]"),
                        np.array([100.0, 101.0, 102.01]))
        write_index_series(s, tmp_path / "i.csv")
        t = load_index_series(tmp_path / "i.csv")
        d, r = t.log_returns()
        np.testing.assert_allclose(r, np.log([1.01, 1.01]), rtol=0, atol=1e-15)
        assert d.size == 2

    def test_month_end(self):
        d = np.array(["2024-01-10", "2024-01-31", "2024-02-05", "2024-02-20"], "datetime64[D]")
        s = month_end_levels(d, [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(s.levels, [2.0, 4.0])

    def test_rejects_non_positive(self):
        with pytest.raises(ValidationError):
            IndexSeries(np.array(["2024-01-31"], "datetime64[D]"), np.array([0.0]))


class TestSynthetic:
    def test_shapes_and_triangle(self, model_a_spec, init_curves, tmp_path):
        h = generate_synthetic_history(model_a_spec, init_curves, 40, seed=1)
        assert len(h.nominal) == 40
        assert h.nominal.dates[0] == np.datetime64(dt.date(2021, 1, 8))
        j = [h.nominal.grid.index(t) for t in h.cdi.grid.tenors]
        gap = h.ipca.values - h.cdi.values - (h.nominal.values[:, j] - h.real.values[:, j])
        assert np.max(np.abs(gap)) < 1e-12
        paths = write_history(h, tmp_path)
        assert all(p.exists() for p in paths.values())

    def test_deterministic(self, model_a_spec, init_curves):
        a = generate_synthetic_history(model_a_spec, init_curves, 30, seed=5)
        b = generate_synthetic_history(model_a_spec, init_curves, 30, seed=5)
        np.testing.assert_array_equal(a.nominal.values, b.nominal.values)

    def test_too_short(self, model_a_spec, init_curves):
        with pytest.raises(ValidationError, match="too short"):
            generate_synthetic_history(model_a_spec, init_curves, 10, seed=0)
