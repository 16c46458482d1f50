import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trihjm.curves import (ForwardCurve, SvenssonParams, ZeroCurve, bootstrap_discount, bucket_spreads,
                           fit_svensson, forward_from_zero, interp_flat_forward, real_forward_curve)
from trihjm.errors import CalibrationError, ValidationError
from trihjm.marketdata import ConstituentPanel, PillarGrid

GRID = PillarGrid((0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0))


class TestBootstrap:
    def test_business_day_convention(self):
        z = bootstrap_discount([0.10, 0.11], [126, 504])
        # P = (1 + y)^(-du/252)
        np.testing.assert_allclose(z.discount(np.array([0.5, 2.0])), [1.10 ** -0.5, 1.11 ** -2.0], rtol=1e-14)

    @pytest.mark.parametrize("y, du", [([0.1], [0]), ([0.1, 0.1], [10, 5]), ([-1.0], [10]), ([0.1], [1, 2])])
    def test_rejects(self, y, du):
        with pytest.raises(ValidationError):
            bootstrap_discount(y, du)


class TestFlatForward:
    def test_forward_round_trip(self):
        z = ZeroCurve(GRID, np.linspace(0.10, 0.12, len(GRID)))
        f = forward_from_zero(z)
        np.testing.assert_allclose(f.zero_curve().zeros, z.zeros, rtol=0, atol=1e-9)

    def test_forwards_equal_segment_forwards(self):
        z = ZeroCurve(GRID, np.array([0.1, 0.105, 0.11, 0.112, 0.113, 0.115, 0.116, 0.117]))
        np.testing.assert_allclose(forward_from_zero(z).fwds, z.segment_forwards(), rtol=0, atol=1e-12)

    def test_bump_bounds(self):
        z = ZeroCurve(GRID, np.full(len(GRID), 0.1))
        with pytest.raises(ValidationError):
            forward_from_zero(z, h=0.0)
        with pytest.raises(ValidationError):
            forward_from_zero(z, h=0.25)

    def test_interp_beyond_last_node_is_flat(self):
        f = ForwardCurve(GRID, np.linspace(0.1, 0.12, len(GRID)))
        assert interp_flat_forward(f, 15.0) == f.fwds[-1]
        assert interp_flat_forward(f, 0.75) == f.fwds[2]

    def test_zero_interp_matches_integral(self):
        f = ForwardCurve(PillarGrid((1.0, 2.0)), np.array([0.10, 0.14]))
        # zero(1.5) = (0.10 * 1 + 0.14 * 0.5) / 1.5
        assert interp_flat_forward(f.zero_curve(), 1.5) == pytest.approx(0.17 / 1.5, abs=1e-15)

    def test_negative_tau(self):
        with pytest.raises(ValidationError):
            interp_flat_forward(ZeroCurve(GRID, np.full(len(GRID), 0.1)), -0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-0.02, 0.3), min_size=8, max_size=8))
    def test_round_trip_property(self, zs):
        z = ZeroCurve(GRID, np.asarray(zs))
        np.testing.assert_allclose(forward_from_zero(z).zero_curve().zeros, z.zeros, rtol=0, atol=1e-9)


class TestSvensson:
    TRUE = SvenssonParams(0.06, -0.01, 0.02, -0.015, 1.3, 0.25)

    def test_recovers_exact_curve(self):
        grid = PillarGrid((0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0))
        fit = fit_svensson(self.TRUE.zero_yield(grid.array), grid)
        assert fit.max_residual < 1e-8
        np.testing.assert_allclose(fit.params.zero_yield(grid.array), self.TRUE.zero_yield(grid.array), atol=1e-8)

    def test_forward_is_derivative_of_tau_times_yield(self):
        tau = np.array([0.3, 1.0, 4.0, 9.0])
        h = 1e-5
        g = lambda t: t * self.TRUE.zero_yield(t)
        numeric = (g(tau + h) - g(tau - h)) / (2 * h)
        np.testing.assert_allclose(self.TRUE.forward(tau), numeric, atol=1e-9)

    def test_underdetermined(self):
        grid = PillarGrid((1.0, 2.0, 3.0, 5.0, 10.0))
        with pytest.raises(ValidationError, match="underdetermined"):
            fit_svensson(np.full(5, 0.05), grid)

    def test_residual_cap(self):
        grid = PillarGrid((1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0))
        jagged = np.array([0.05, 0.09, 0.03, 0.10, 0.02, 0.11, 0.01, 0.12])
        with pytest.raises(CalibrationError, match="exceeds cap"):
            fit_svensson(jagged, grid)

    def test_real_forward_floor(self):
        f = real_forward_curve(self.TRUE, GRID, short_end_floor=1.0)
        assert f.grid.tenors[0] == 1.0
        np.testing.assert_allclose(f.fwds, self.TRUE.forward(f.grid.array))

    def test_json(self):
        assert '"lam2": 0.25' in self.TRUE.to_json()


class TestBuckets:
    def _panel(self):
        rows = []
        for k in range(6):
            rows.append(("2024-01-02", "CDI", f"I{k}", f"T{k}", 0.01 * (k + 1), 2.8 + 0.1 * k, 1.0 + k))
        rows.append(("2024-01-02", "CDI", "Z", "Z1", 0.5, 9.0, 1.0))
        rows.append(("2024-01-03", "CDI", "A", "A1", 0.02, 3.0, 1.0))
        cols = list(ConstituentPanel.COLUMNS)
        return ConstituentPanel(pd.DataFrame(rows, columns=cols))

    def test_weighted_mean_and_min_count(self):
        out = bucket_spreads(self._panel(), "CDI", PillarGrid((3.0,)), [0.5], min_count=5)
        w = 1.0 + np.arange(6)
        s = 0.01 * (np.arange(6) + 1)
        assert out.values[0, 0] == pytest.approx(np.sum(w * s) / w.sum(), abs=1e-15)
        assert np.isnan(out.values[1, 0])

    def test_closed_bucket_edges(self):
        out = bucket_spreads(self._panel(), "CDI", PillarGrid((3.0,)), [0.2], min_count=1)
        # durations 2.8 and 3.2 sit exactly on the edges and are included
        w = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        s = np.array([0.01, 0.02, 0.03, 0.04, 0.05])
        assert out.values[0, 0] == pytest.approx(np.sum(w * s) / w.sum(), abs=1e-15)

    def test_rejects_bad_widths(self):
        with pytest.raises(ValidationError):
            bucket_spreads(self._panel(), "CDI", PillarGrid((3.0,)), [0.0])
