import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import data_path
from trihjm.calib import (CalibConfig, FactorScores, PcaResult, Retention, calibrate, calibrate_sigma_I,
                          calibrate_sigma_J, chi_adjust, correlation_matrix, deseasonalize,
                          eigen_clip_correlation, factor_scores, fit_loadings, fit_spread_block,
                          nearest_correlation, orient, pca_block, weekly_changes)
from trihjm.errors import CalibrationWarning, ValidationError
from trihjm.marketdata import CurvePanel, IndexSeries, PillarGrid, generate_synthetic_history
from trihjm.volarch import BP, ShapeFamily, shape_eval


def _fixture_changes():
    return np.loadtxt(data_path("nominal_changes_fixture.csv"), delimiter=",", skiprows=1)


def _pca_from_loadings(block, tenors, loadings_bp):
    """PcaResult whose scaled loadings equal the given rows exactly."""
    tenors = np.asarray(tenors, float)
    y = np.asarray(loadings_bp, float)
    lam = np.sum(y ** 2, axis=1)
    vec = (y / np.sqrt(lam)[:, None]).T
    return PcaResult(block, tenors, lam, vec, y.shape[0], 100, 1 / 52, np.zeros((tenors.size,) * 2))


class TestWeeklyChanges:
    def test_differences_and_dates(self):
        dates = np.datetime64("2024-01-05") + 7 * np.arange(40)
        vals = np.cumsum(np.ones((40, 2)) * 0.001, axis=0)
        cm = weekly_changes(CurvePanel(dates, PillarGrid((1.0, 2.0)), vals, "nominal_fwd"))
        assert len(cm) == 39
        assert cm.dates[0] == dates[1]
        np.testing.assert_allclose(cm.values, 0.001, atol=1e-15)

    def test_spread_keeps_missing_cells(self):
        dates = np.datetime64("2024-01-05") + 7 * np.arange(40)
        vals = np.full((40, 2), 0.01)
        vals[5, 1] = np.nan
        cm = weekly_changes(CurvePanel(dates, PillarGrid((1.0, 2.0)), vals, "cdi_spread"))
        assert len(cm) == 39 and np.isnan(cm.values).sum() == 2
        assert len(cm.complete()) == 37

    def test_min_rows(self):
        dates = np.datetime64("2024-01-05") + 7 * np.arange(10)
        with pytest.raises(ValidationError, match="usable"):
            weekly_changes(CurvePanel(dates, PillarGrid((1.0,)), np.zeros((10, 1)), "nominal_fwd"))


class TestPca:
    def test_fixture_spectrum(self):
        # the fixture was built with a prescribed spectrum; eigh must recover it
        p = pca_block(_fixture_changes(), retention=Retention(3, 2), block="N")
        lam = [362589.0, 77330.0, 41972.0, 26305.0, 20000.0, 18000.0, 14000.0, 10810.0]
        np.testing.assert_allclose(p.eigenvalues, lam, rtol=1e-9)
        assert p.n_retained == 3

    def test_covariance_scaling(self):
        x = _fixture_changes()
        p = pca_block(x, dt=1 / 52)
        ref = np.cov(x, rowvar=False) * 52 / BP ** 2
        np.testing.assert_allclose(p.covariance, ref, rtol=1e-12)

    def test_orientation(self):
        p = pca_block(_fixture_changes())
        assert np.all(p.eigenvectors[-1] >= 0)
        np.testing.assert_allclose(p.eigenvectors.T @ p.eigenvectors, np.eye(8), atol=1e-12)

    def test_orient_uses_largest_entry_when_last_is_zero(self):
        v = orient(np.array([[0.2], [-0.9], [0.0]]))
        assert v[1, 0] == 0.9

    @pytest.mark.parametrize("shares, rule, k", [
        ([0.8, 0.1, 0.05, 0.05], Retention(3, 2), 3),
        ([0.8, 0.18, 0.02], Retention(3, 2), 2),
        ([0.95, 0.05], Retention(2, 1), 2),
        ([0.99, 0.01], Retention(2, 1), 1),
        ([0.9, 0.01], Retention(2), 2),
    ])
    def test_retention(self, shares, rule, k):
        assert rule.count(np.asarray(shares)) == k

    def test_too_few_rows(self):
        with pytest.raises(ValidationError):
            pca_block(np.zeros((3, 5)))

    def test_zero_variance(self):
        with pytest.raises(ValidationError):
            pca_block(np.zeros((40, 3)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.5, 50.0))
    def test_shares_scale_invariant(self, seed, k):
        x = np.random.default_rng(seed).standard_normal((60, 4)) * 1e-3
        a, b = pca_block(x), pca_block(k * x)
        np.testing.assert_allclose(a.shares, b.shares, atol=1e-10)
        assert abs(a.shares.sum() - 1) < 1e-12


class TestFitLoadings:
    TENORS = (0.25, 0.5, 1, 2, 3, 5, 7, 10)

    def test_recovers_exact_shapes(self):
        fam = ShapeFamily(0.7, 2.5, 1.0)
        amp = np.array([[120.0, 60.0, -40.0], [-30.0, 90.0, 20.0], [10.0, -15.0, 70.0]])
        y = amp @ shape_eval(fam, "N", np.array(self.TENORS)).T
        fit = fit_loadings(_pca_from_loadings("N", self.TENORS, y))
        assert fit.shape.b2 == pytest.approx(0.7, rel=1e-6)
        assert fit.shape.b3 == pytest.approx(2.5, rel=1e-6)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(fit.amplitudes.entries / BP, amp, rtol=1e-6)

    def test_shared_decays(self):
        fam = ShapeFamily(0.7, 2.5, 1.0)
        amp = np.array([[80.0, 30.0, 10.0]])
        y = amp @ shape_eval(fam, "R", np.array(self.TENORS)).T
        fit = fit_loadings(_pca_from_loadings("R", self.TENORS, y), shared_decays=fam)
        np.testing.assert_allclose(fit.amplitudes.entries / BP, amp, rtol=1e-10)

    def test_spread_block_and_cap_fallback(self):
        tenors = (1.0, 2.0, 3.0, 5.0)
        y = np.array([[40.0, 25.0]]) @ shape_eval(ShapeFamily(1, 1, 0.8), "S", np.array(tenors)).T
        fit = fit_spread_block(_pca_from_loadings("S", tenors, y))
        assert fit.c2 == pytest.approx(0.8, rel=1e-6) and not fit.fallback
        # a spike at the shortest pillar drives c2 to its cap
        spike = np.array([[60.0, 1.0, 1.0, 1.0]])
        with pytest.warns(CalibrationWarning, match="cap"):
            fb = fit_spread_block(_pca_from_loadings("S", tenors, spike), c2_cap=2.0)
        assert fb.fallback and fb.empirical is not None and fb.amplitudes is None

    def test_model_b_is_empirical(self):
        tenors = (2.0, 3.0, 5.0)
        y = np.array([[30.0, 20.0, 10.0]])
        fit = fit_spread_block(_pca_from_loadings("S", tenors, y), model="B")
        np.testing.assert_allclose(fit.empirical.values / BP, y, rtol=1e-12)


def _corr_strategy():
    n = st.integers(3, 7)
    return n.flatmap(lambda k: st.lists(st.floats(-0.99, 0.99), min_size=k * (k - 1) // 2,
                                        max_size=k * (k - 1) // 2).map(lambda v: _sym(k, v)))


def _sym(k, vals):
    a = np.eye(k)
    a[np.triu_indices(k, 1)] = vals
    return np.triu(a) + np.triu(a, 1).T


class TestNearestCorrelation:
    @settings(max_examples=60, deadline=None)
    @given(_corr_strategy())
    def test_properties_against_clipping_oracle(self, a):
        floor = 1e-8
        x = nearest_correlation(a, floor)
        np.testing.assert_array_equal(x, x.T)
        np.testing.assert_allclose(np.diag(x), 1.0, atol=1e-12)
        assert np.linalg.eigvalsh(x)[0] >= floor
        oracle = eigen_clip_correlation(a, floor)
        assert np.linalg.norm(x - a) <= np.linalg.norm(oracle - a) + 1e-8

    def test_known_three_by_three(self):
        # pairwise correlations 0.9, 0.9, -0.9: by sign symmetry the answer has
        # equal-magnitude off-diagonals c, and semidefiniteness forces c <= 1/2
        a = _sym(3, [0.9, 0.9, -0.9])
        x = nearest_correlation(a, 0.0)
        np.testing.assert_allclose(x, _sym(3, [0.5, 0.5, -0.5]), atol=1e-6)

    def test_fixed_zero_entries(self):
        a = _sym(4, [0.0, 0.9, 0.9, 0.9, -0.9, 0.5])
        mask = np.zeros((4, 4), bool)
        mask[0, 1] = mask[1, 0] = True
        x = nearest_correlation(a, 1e-6, fixed_zero=mask)
        assert x[0, 1] == 0.0 and x[1, 0] == 0.0
        assert np.linalg.eigvalsh(x)[0] >= 1e-6

    def test_identity_on_valid_input(self):
        rho_hat = np.loadtxt(data_path("model_a_rho_hat.csv"), delimiter=",", skiprows=1)
        np.testing.assert_array_equal(nearest_correlation(rho_hat), rho_hat)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            nearest_correlation(np.array([[1.0, 0.2], [0.3, 1.0]]))


class TestScoresAndCorrelation:
    def test_factor_scores_and_within_block_warning(self):
        rng = np.random.default_rng(3)
        dates = np.datetime64("2024-01-05") + 7 * np.arange(80)
        x = rng.standard_normal((80, 3)) * 1e-3
        from trihjm.calib import ChangeMatrix
        cm = ChangeMatrix(dates, np.array([1.0, 2.0, 3.0]), x, "nominal_fwd")
        p = pca_block(cm, retention=2, block="N")
        sc = factor_scores({"N": cm}, {"N": p})
        assert sc.labels == ("N1", "N2") and sc.dims == (2, 0, 0)
        # principal scores are uncorrelated in sample
        rho = correlation_matrix(sc)
        assert abs(rho[0, 1]) < 1e-10
        skewed = FactorScores(dates, np.column_stack([x[:, 0], x[:, 0] + 0.1 * x[:, 1]]), ("N1", "N2"), (2, 0, 0))
        with pytest.warns(CalibrationWarning, match="within-block"):
            correlation_matrix(skewed)


class TestChi:
    def test_constant_fit(self):
        gap = np.array([1e-4, 2e-4, 3e-4])
        chi = chi_adjust(gap, [1.0, 2.0, 3.0])
        assert chi(2.0)[0] == pytest.approx(2e-4, abs=1e-16)
        assert chi.sup_norm == pytest.approx(2e-4, abs=1e-16)

    def test_weights_and_alarm(self):
        with pytest.warns(CalibrationWarning, match="alarm"):
            chi = chi_adjust([0.02, 0.0], [1.0, 2.0], weights=[1.0, 0.0])
        assert chi.coefficients[0] == pytest.approx(0.02)

    def test_spline_reproduces_cubic(self):
        tau = np.array([0.5, 1, 2, 3, 5, 7, 10.0])
        gap = 1e-4 * (1 + tau - 0.1 * tau ** 2 + 0.005 * tau ** 3)
        chi = chi_adjust(gap, tau, basis="spline", knots=(3.0,))
        np.testing.assert_allclose(chi.residual, 0.0, atol=1e-15)

    @pytest.mark.parametrize("kw", [{"degree": 4}, {"basis": "spline", "knots": (1, 2, 3, 4, 5)},
                                    {"basis": "fourier"}, {"weights": [-1.0, 1.0, 1.0]}])
    def test_rejects(self, kw):
        with pytest.raises(ValidationError):
            chi_adjust([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], **kw)

    def test_underdetermined(self):
        with pytest.raises(ValidationError, match="underdetermined"):
            chi_adjust([0.0, 0.0], [1.0, 2.0], degree=2)


class TestFxLoadings:
    def _scores(self, n=300, seed=0):
        rng = np.random.default_rng(seed)
        dates = np.datetime64("2020-01-03") + 7 * np.arange(n)
        return FactorScores(dates, rng.standard_normal((n, 3)), ("N1", "R1", "S1"), (1, 1, 1))

    def test_sigma_J_exact_linear_relation(self):
        sc = self._scores()
        z = sc.standardized()
        ds = 0.002 * z[:, 0] + 0.001 * z[:, 2]
        level = 0.02 + np.r_[0.0, np.cumsum(ds)]
        dates = np.r_[sc.dates[0] - 7, sc.dates]
        panel = CurvePanel(dates, PillarGrid((1.0,)), level[:, None], "cdi_spread")
        load, diag = calibrate_sigma_J(panel, sc, 1.0)
        total = np.sqrt(52) * ds.std(ddof=1)
        assert diag.total_vol == pytest.approx(total, rel=1e-12)
        assert diag.r2 == pytest.approx(1.0, abs=1e-12)
        assert load.alpha[1] == 0.0
        assert np.linalg.norm(load.alpha) == pytest.approx(total, rel=1e-12)
        assert load.alpha[0] / load.alpha[2] == pytest.approx(2.0, rel=1e-9)

    def test_sigma_I_total_from_deseasonalized_returns(self):
        sc = self._scores(n=520)
        months = np.arange(np.datetime64("2020-01"), np.datetime64("2029-12"))
        dates = (months + 1).astype("datetime64[D]") - 1
        rng = np.random.default_rng(1)
        r = 0.004 + 0.003 * rng.standard_normal(dates.size - 1)
        levels = 100 * np.exp(np.r_[0.0, np.cumsum(r)])
        load, diag = calibrate_sigma_I(IndexSeries(dates, levels), sc)
        resid = deseasonalize(dates[1:], np.diff(np.log(levels)))
        assert diag.total_vol == pytest.approx(np.sqrt(12 * resid.var(ddof=1)), rel=1e-12)
        assert load.alpha[2] == 0.0
        assert np.linalg.norm(load.alpha) == pytest.approx(diag.total_vol, rel=1e-12)

    def test_deseasonalize_removes_month_means(self):
        d = np.array(["2020-01-31", "2020-02-29", "2021-01-31", "2021-02-28"], "datetime64[D]")
        np.testing.assert_allclose(deseasonalize(d, [1.0, 5.0, 3.0, 7.0]), [-1, -1, 1, 1])


class TestConfig:
    def test_from_dict(self):
        cfg = CalibConfig.from_dict({"model": "b", "retention": {"S": 2}, "real_pillars": [1, 2]})
        assert cfg.model == "B" and cfg.retention["S"] == Retention(2)
        assert cfg.real_pillars == (1.0, 2.0) and cfg.sigma_J_ref == 3.0

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="unknown"):
            CalibConfig.from_dict({"modle": "A"})

    def test_bad_model(self):
        with pytest.raises(ValidationError):
            CalibConfig(model="C")


@pytest.fixture(scope="module")
def synthetic_fit(model_a_spec, init_curves):
    h = generate_synthetic_history(model_a_spec, init_curves, 300, seed=11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        return calibrate(h.nominal, h.real, h.cdi, h.ipca, h.inflation_index)


class TestCalibrateSynthetic:
    def test_spec_structure(self, synthetic_fit):
        s = synthetic_fit.spec
        assert s.dims[1] == 2 and s.dims[0] in (2, 3) and s.dims[2] in (1, 2)
        assert np.linalg.eigvalsh(s.rho)[0] >= 1e-8
        assert synthetic_fit.report["fit"]["N_r2"] > 0.9

    def test_chi_small_on_consistent_data(self, synthetic_fit):
        # simulated panels satisfy the triangle identity, so the gap is zero
        assert synthetic_fit.chi.sup_norm < 1e-12

    def test_spec_round_trips(self, synthetic_fit, tmp_path):
        from trihjm.volarch import load_spec
        synthetic_fit.spec.to_json(tmp_path / "s.json")
        assert load_spec(tmp_path / "s.json").dims == synthetic_fit.spec.dims

    def test_model_b_requires_ipca(self, model_a_spec, init_curves):
        h = generate_synthetic_history(model_a_spec, init_curves, 60, seed=2)
        with pytest.raises(ValidationError, match="IPCA"):
            calibrate(h.nominal, h.real, h.cdi, None, None, CalibConfig(model="B"))
