"""Calibration of the block volatility specification from curve histories.

The pipeline runs per-block PCA on weekly constant-maturity changes, maps
the retained loadings to the exponential shape family by nonlinear least
squares, estimates cross-block factor correlations (with a nearest
correlation repair when needed) and identifies the two exchange-rate
loadings from realized volatilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import product
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import CalibrationError, CalibrationWarning, ValidationError
from .marketdata import CurvePanel, IndexSeries, to_weekly
from .volarch import (BLOCKS, BP, AmplitudeMatrix, BlockVolSpec, EmpiricalSpreadLoading,
                      FxLoading, ShapeFamily, assemble_rho, fx_mask, shape_eval)

BP2 = 1e8  # decimal^2 -> bp^2
WEEKS_PER_YEAR = 52
MIN_ROWS = 30
DECAY_BOUNDS = (0.05, 10.0)
SPREAD_DECAY_CAP = 5.0
WITHIN_BLOCK_WARN = 0.15


# weekly changes -------------------------------------------------------------

@dataclass(frozen=True)
class ChangeMatrix:
    """Weekly changes at constant time to maturity; row dates are the later observation."""

    dates: np.ndarray
    tenors: np.ndarray
    values: np.ndarray
    kind: str

    def complete(self) -> "ChangeMatrix":
        ok = ~np.isnan(self.values).any(axis=1)
        return ChangeMatrix(self.dates[ok], self.tenors, self.values[ok], self.kind)

    def __len__(self) -> int:
        return self.dates.size


def weekly_changes(panel: CurvePanel, min_rows: int = MIN_ROWS) -> ChangeMatrix:
    """First differences of a weekly panel at each pillar.

    Panels are stored on fixed time-to-maturity pillars, so consecutive
    rows already refer to the same maturity offset. Rate panels keep only
    complete rows; spread panels keep missing cells (pairwise deletion).
    """
    if len(panel) < 2:
        raise ValidationError("need at least two observations for changes")
    dx = np.diff(panel.values, axis=0)
    cm = ChangeMatrix(panel.dates[1:], panel.grid.array, dx, panel.kind)
    if not panel.is_spread:
        cm = cm.complete()
    usable = (~np.isnan(cm.values)).any(axis=1).sum()
    if usable < min_rows:
        raise ValidationError(f"only {usable} usable change rows (< {min_rows})")
    return cm


# PCA ------------------------------------------------------------------------

@dataclass(frozen=True)
class Retention:
    """Keep `n_min` factors, plus up to `n_max` if each extra one explains >= `min_share`."""

    n_max: int
    n_min: int | None = None
    min_share: float = 0.03

    def count(self, shares: np.ndarray) -> int:
        n_min = self.n_max if self.n_min is None else self.n_min
        k = min(n_min, shares.size)
        while k < min(self.n_max, shares.size) and shares[k] >= self.min_share:
            k += 1
        return k


DEFAULT_RETENTION = {"N": Retention(3, 2), "R": Retention(2), "S": Retention(2, 1)}


@dataclass(frozen=True)
class PcaResult:
    """Eigen-decomposition of the annualized covariance of weekly changes.

    Eigenvalues are in bp^2/yr, descending; `eigenvectors[:, k]` is the k-th
    unit-norm loading vector over `tenors`.
    """

    block: str
    tenors: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_retained: int
    n_obs: int
    dt: float
    covariance: np.ndarray = field(repr=False)

    @property
    def shares(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()

    @property
    def cumulative_share(self) -> float:
        return float(self.shares[: self.n_retained].sum())

    @property
    def retained_vectors(self) -> np.ndarray:
        return self.eigenvectors[:, : self.n_retained]

    def scaled_loadings(self) -> np.ndarray:
        """sqrt(lambda_k) v_k in bp/sqrt(yr), shape (n_retained, n_tenors)."""
        k = self.n_retained
        return np.sqrt(self.eigenvalues[:k])[:, None] * self.eigenvectors[:, :k].T


def orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the longest-tenor entry is >= 0 (largest-|.| entry if it is 0)."""
    v = np.array(vectors, dtype=float)
    for k in range(v.shape[1]):
        last = v[-1, k]
        ref = last if abs(last) > 1e-14 else v[np.argmax(np.abs(v[:, k])), k]
        if ref < 0:
            v[:, k] = -v[:, k]
    return v


def pca_block(changes, dt: float = 1.0 / WEEKS_PER_YEAR, retention: Retention | int = 3,
              block: str = "N", tenors: Sequence[float] | None = None) -> PcaResult:
    """PCA of mean-centred changes with covariance X'X / (dt (L - 1)), L = change rows."""
    if isinstance(changes, ChangeMatrix):
        tenors = changes.tenors if tenors is None else tenors
        x = changes.complete().values
    else:
        x = np.asarray(changes, dtype=float)
    if x.ndim != 2:
        raise ValidationError("change matrix must be 2-d")
    if np.isnan(x).any():
        raise ValidationError("change matrix has missing cells")
    n, p = x.shape
    if n < p or n < 2:
        raise ValidationError(f"need at least as many rows as columns ({n} < {p})")
    if tenors is None:
        tenors = np.arange(1, p + 1, dtype=float)
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (dt * (n - 1)) * BP2
    if np.trace(cov) <= 0:
        raise ValidationError("rank-deficient change matrix with zero variance")
    lam, vec = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vec = orient(vec[:, order])
    if isinstance(retention, int):
        retention = Retention(retention)
    k = retention.count(lam / lam.sum())
    return PcaResult(block, np.asarray(tenors, float), lam, vec, k, n, dt, cov)


# loadings NLS -----------------------------------------------------------------

@dataclass(frozen=True)
class LoadingFit:
    amplitudes: AmplitudeMatrix
    shape: ShapeFamily
    r2: float
    converged: bool = True
    at_bound: bool = False


def _basis(block: str, decays: np.ndarray, tenors: np.ndarray) -> np.ndarray:
    if block == "S":
        fam = ShapeFamily(1.0, 1.0, decays[0])
    else:
        fam = ShapeFamily(decays[0], decays[1], 1.0)
    return shape_eval(fam, "S" if block == "S" else "N", tenors)


def _solve_amplitudes(basis: np.ndarray, targets: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(basis, targets.T, rcond=None)
    return coef.T


def fit_loadings(pca: PcaResult, init: ShapeFamily | None = None,
                 shared_decays: ShapeFamily | None = None,
                 bounds: tuple[float, float] = DECAY_BOUNDS) -> LoadingFit:
    """Fit sqrt(lambda_p) v_p(tau_i) ~ sum_q A_pq shape_q(tau_i) by least squares.

    The amplitudes are linear given the decays, so they are solved exactly
    inside the objective and the search runs over the decays only (log
    scale, within `bounds`). With `shared_decays` only the amplitudes are
    fitted. R^2 is 1 - SSR / sum of squared target loadings. Amplitudes are
    returned in decimal units.
    """
    if pca.n_retained < 1:
        raise ValidationError("PCA retained no factors")
    block = pca.block
    y = pca.scaled_loadings()
    tau = pca.tenors
    total = float(np.sum(y ** 2))

    def amplitudes(decays):
        basis = _basis(block, decays, tau)
        a = _solve_amplitudes(basis, y)
        return a, y - a @ basis.T

    if shared_decays is not None:
        decays = np.array([shared_decays.c2] if block == "S" else [shared_decays.b2, shared_decays.b3])
        a, r = amplitudes(decays)
        return LoadingFit(AmplitudeMatrix(block, a * BP), shared_decays, 1 - float(np.sum(r ** 2)) / total)

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    if block == "S":
        grid = [(c,) for c in (0.2, 0.5, 1.0, 2.0, 4.0)]
        if init is not None:
            grid.insert(0, (init.c2,))
    else:
        grid = [(a, b) for a, b in product((0.1, 0.3, 1.0, 3.0), (0.3, 1.0, 3.0, 6.0)) if a != b]
        if init is not None:
            grid.insert(0, (init.b2, init.b3))
        grid.insert(0, _decay_initializers(y, tau))

    def resid(log_d):
        return amplitudes(np.exp(log_d))[1].ravel()

    best = None
    for start in grid:
        x0 = np.clip(np.log(np.asarray(start, float)), lo + 1e-9, hi - 1e-9)
        try:
            res = least_squares(resid, x0, bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=500)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise CalibrationError(f"loading fit for block {block} did not converge")
    decays = np.exp(best.x)
    a, r = amplitudes(decays)
    at_bound = bool(np.any(np.isclose(best.x, lo, atol=1e-6) | np.isclose(best.x, hi, atol=1e-6)))
    base = init or ShapeFamily(1.0, 1.0, 1.0)
    if block == "S":
        shape = ShapeFamily(base.b2, base.b3, float(decays[0]))
    else:
        shape = ShapeFamily(float(decays[0]), float(decays[1]), base.c2)
    return LoadingFit(AmplitudeMatrix(block, a * BP), shape, 1 - float(np.sum(r ** 2)) / total,
                      bool(best.success), at_bound)


def _decay_initializers(y: np.ndarray, tau: np.ndarray) -> tuple[float, float]:
    """b2 from the half-life of the slope loading, b3 from the curvature peak."""
    b2, b3 = 0.5, 2.0
    if y.shape[0] >= 2:
        slope = np.abs(y[1] - y[1][-1])
        if slope[0] > 0:
            half = np.flatnonzero(slope <= slope[0] / 2)
            if half.size:
                b2 = np.log(2) / max(tau[half[0]], 1e-3)
    if y.shape[0] >= 3:
        peak = tau[np.argmax(np.abs(y[2]))]
        b3 = 1.0 / max(peak, 0.1)
    lo, hi = DECAY_BOUNDS
    return float(np.clip(b2, lo, hi)), float(np.clip(b3, lo, hi))


@dataclass(frozen=True)
class SpreadFit:
    """Spread-block loadings: parametric (A_S, c2) or empirical per-vertex values."""

    model: str
    amplitudes: AmplitudeMatrix | None
    empirical: EmpiricalSpreadLoading | None
    c2: float | None
    r2: float | None
    fallback: bool = False


def fit_spread_block(pca: PcaResult, model: str = "A", init_c2: float = 1.0,
                     c2_cap: float = SPREAD_DECAY_CAP) -> SpreadFit:
    """Model A: level/decay shapes with c2 <= cap. Model B: sqrt(lambda) v at each vertex.

    A Model A fit that ends on the c2 cap falls back to empirical loadings
    with a warning.
    """
    model = model.upper()
    if model not in ("A", "B"):
        raise ValidationError(f"unknown spread model {model!r}")
    if pca.block != "S":
        pca = PcaResult("S", pca.tenors, pca.eigenvalues, pca.eigenvectors, pca.n_retained,
                        pca.n_obs, pca.dt, pca.covariance)
    empirical = EmpiricalSpreadLoading(tuple(pca.tenors), pca.scaled_loadings() * BP)
    if model == "B":
        return SpreadFit("B", None, empirical, None, None)
    fit = fit_loadings(pca, ShapeFamily(1.0, 1.0, init_c2), bounds=(DECAY_BOUNDS[0], c2_cap))
    if fit.shape.c2 >= c2_cap * (1 - 1e-6):
        warnings.warn(f"spread decay c2 reached its cap {c2_cap}; using empirical loadings",
                      CalibrationWarning, stacklevel=2)
        return SpreadFit("A", None, empirical, c2_cap, fit.r2, fallback=True)
    return SpreadFit("A", fit.amplitudes, None, fit.shape.c2, fit.r2)


# factor scores and correlations ---------------------------------------------

@dataclass(frozen=True)
class FactorScores:
    """Per-date factor innovations stacked across blocks (N, R, S order)."""

    dates: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]
    dims: tuple[int, int, int]

    def __len__(self) -> int:
        return self.dates.size

    def standardized(self) -> np.ndarray:
        sd = self.values.std(axis=0, ddof=1)
        if np.any(sd <= 0):
            raise ValidationError("zero-variance factor score")
        return self.values / sd

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]


def factor_scores(changes: Mapping[str, ChangeMatrix], pcas: Mapping[str, PcaResult]) -> FactorScores:
    """Project each block's changes on its retained eigenvectors over the common complete dates."""
    blocks = [b for b in BLOCKS if b in pcas]
    if not blocks:
        raise ValidationError("no blocks supplied")
    complete = {b: changes[b].complete() if isinstance(changes[b], ChangeMatrix) else changes[b] for b in blocks}
    common = complete[blocks[0]].dates
    for b in blocks[1:]:
        common = np.intersect1d(common, complete[b].dates)
    if common.size == 0:
        raise ValidationError("blocks share no complete change dates")
    cols, labels, dims = [], [], []
    for b in blocks:
        cm = complete[b]
        if cm.values.shape[1] != pcas[b].tenors.size:
            raise ValidationError(f"block {b}: changes and PCA tenors differ")
        rows = np.isin(cm.dates, common)
        cols.append(cm.values[rows] @ pcas[b].retained_vectors)
        labels += [f"{b}{k + 1}" for k in range(pcas[b].n_retained)]
        dims.append(pcas[b].n_retained)
    dims += [0] * (3 - len(dims))
    return FactorScores(common, np.hstack(cols), tuple(labels), tuple(dims))


def correlation_matrix(scores: FactorScores, min_rows: int = MIN_ROWS) -> np.ndarray:
    """Sample correlation of stacked scores, without zeroing within-block entries."""
    if len(scores) < min_rows:
        raise ValidationError(f"only {len(scores)} score rows (< {min_rows})")
    sd = scores.values.std(axis=0, ddof=1)
    if np.any(sd <= 1e-300):
        bad = [scores.labels[i] for i in np.flatnonzero(sd <= 1e-300)]
        raise ValidationError(f"zero-variance score column(s) {bad}")
    rho = np.corrcoef(scores.values, rowvar=False)
    bounds = np.cumsum(np.r_[0, list(scores.dims)])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sub = rho[lo:hi, lo:hi] - np.eye(hi - lo)
        if sub.size and np.max(np.abs(sub)) > WITHIN_BLOCK_WARN:
            warnings.warn(f"within-block score correlation {np.max(np.abs(sub)):.2f} exceeds "
                          f"{WITHIN_BLOCK_WARN}", CalibrationWarning, stacklevel=2)
    return rho


def _psd_clip(x: np.ndarray, floor: float = 0.0) -> np.ndarray:
    lam, vec = np.linalg.eigh((x + x.T) / 2)
    out = (vec * np.maximum(lam, floor)) @ vec.T
    return (out + out.T) / 2


def _unit_diag(x: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(x))
    out = x / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return (out + out.T) / 2


def nearest_correlation(rho_hat, eig_floor: float = 1e-8, fixed_zero: np.ndarray | None = None,
                        max_iter: int = 10_000, tol: float = 1e-12) -> np.ndarray:
    """Frobenius-nearest correlation matrix with minimum eigenvalue >= eig_floor.

    Alternating projections with Dykstra's correction between the unit
    diagonal set and the semidefinite cone, followed by an eigenvalue floor
    and re-normalization to unit diagonal. Inputs that already satisfy the
    floor are returned unchanged. `fixed_zero` marks off-diagonal entries
    that must stay exactly zero; the cone is then shifted to X >= 2 floor I
    so the affine iterate can be returned directly.
    """
    a = np.array(rho_hat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("correlation input must be square")
    if not np.allclose(a, a.T, atol=1e-10, rtol=0):
        raise ValidationError("correlation input must be symmetric")
    a = (a + a.T) / 2
    mask = np.zeros(a.shape, dtype=bool) if fixed_zero is None else np.asarray(fixed_zero, bool)
    if mask.any():
        a[mask] = 0.0
    np.fill_diagonal(a, 1.0)
    if np.linalg.eigvalsh(a)[0] >= eig_floor and (fixed_zero is None or np.all(np.asarray(rho_hat)[mask] == 0)):
        return np.array(rho_hat, dtype=float) if fixed_zero is None else a

    cone_floor = 2 * eig_floor if mask.any() else 0.0
    y = a.copy()
    ds = np.zeros_like(a)
    for _ in range(max_iter):
        r = y - ds
        x = _psd_clip(r, cone_floor)
        ds = x - r
        y_new = x.copy()
        np.fill_diagonal(y_new, 1.0)
        y_new[mask] = 0.0
        change = np.linalg.norm(y_new - y, "fro")
        y = y_new
        if change < tol and np.linalg.norm(y - x, "fro") < max(tol, 1e-3 * eig_floor):
            break
    else:
        raise CalibrationError("nearest-correlation iteration did not converge")

    if mask.any():
        if np.linalg.eigvalsh(y)[0] < eig_floor:
            raise CalibrationError("nearest-correlation result violates the eigenvalue floor")
        return y
    out = y
    margin = 1e-14
    for _ in range(60):
        if np.linalg.eigvalsh(out)[0] >= eig_floor:
            return out
        out = _unit_diag(_psd_clip(out, eig_floor + margin))
        margin *= 4
    raise CalibrationError("could not enforce the eigenvalue floor")


def eigen_clip_correlation(rho_hat, eig_floor: float = 1e-8) -> np.ndarray:
    """Simple repair: clip eigenvalues at the floor and rescale to unit diagonal."""
    return _unit_diag(_psd_clip(np.asarray(rho_hat, float), eig_floor))


# reconciliation adjustment -----------------------------------------------------

@dataclass(frozen=True)
class ChiAdjustment:
    """Smooth deterministic adjustment chi(tau) in decimal p.a."""

    basis: str
    knots: tuple[float, ...]
    degree: int
    coefficients: np.ndarray
    sup_norm: float
    residual: np.ndarray
    tenors: np.ndarray

    def __call__(self, tau) -> np.ndarray:
        return _chi_design(np.asarray(tau, float), self.basis, self.degree, self.knots) @ self.coefficients


def _chi_design(tau: np.ndarray, basis: str, degree: int, knots: Sequence[float]) -> np.ndarray:
    t = np.atleast_1d(tau)
    cols = [t ** d for d in range(degree + 1)]
    if basis == "spline":
        cols += [np.maximum(t - k, 0.0) ** 3 for k in knots]
    return np.column_stack(cols)


def chi_adjust(gap, tenors, weights=None, basis: str = "poly", degree: int = 0,
               knots: Sequence[float] = (), alarm: float = 10 * BP) -> ChiAdjustment:
    """Weighted least-squares fit of chi(tau) to a per-pillar gap.

    `basis="poly"` uses 1, tau, ..., tau^degree (degree <= 3); `"spline"` is a
    cubic regression spline with at most four interior knots. The sup norm
    is taken over [0, max tenor]; a warning is issued when it exceeds `alarm`.
    """
    gap = np.asarray(gap, dtype=float)
    tau = np.asarray(tenors, dtype=float)
    w = np.ones_like(gap) if weights is None else np.asarray(weights, dtype=float)
    if not (gap.shape == tau.shape == w.shape) or gap.ndim != 1:
        raise ValidationError("gap, tenors and weights must be equal-length vectors")
    if np.any(w < 0):
        raise ValidationError("weights must be >= 0")
    if basis == "poly":
        if not 0 <= degree <= 3:
            raise ValidationError("polynomial degree must be 0..3")
        knots = ()
    elif basis == "spline":
        degree = 3
        if len(knots) > 4:
            raise ValidationError("at most four spline knots")
    else:
        raise ValidationError(f"unknown basis {basis!r}")
    design = _chi_design(tau, basis, degree, knots)
    if np.count_nonzero(w) < design.shape[1]:
        raise ValidationError(f"underdetermined basis: {design.shape[1]} functions, "
                              f"{np.count_nonzero(w)} weighted pillars")
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], gap * sw, rcond=None)
    dense = np.linspace(0.0, tau.max(), 401)
    sup = float(np.max(np.abs(_chi_design(dense, basis, degree, knots) @ coef)))
    chi = ChiAdjustment(basis, tuple(float(k) for k in knots), degree, coef, sup, gap - design @ coef, tau)
    if sup > alarm:
        warnings.warn(f"|chi|_inf = {sup / BP:.1f} bp exceeds the {alarm / BP:.0f} bp alarm",
                      CalibrationWarning, stacklevel=2)
    return chi


# exchange-rate loadings ------------------------------------------------------

@dataclass(frozen=True)
class FxDiagnostics:
    total_vol: float
    spanned_vol: float
    residual_vol: float
    r2: float
    n_obs: int
    regression_obs: int

    def as_bp(self) -> dict:
        return {"total_bp": self.total_vol / BP, "spanned_bp": self.spanned_vol / BP,
                "residual_bp": self.residual_vol / BP, "r2": self.r2, "n_obs": self.n_obs,
                "regression_obs": self.regression_obs}


def _ols(y: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Slopes, residuals and R^2 of y on [1, x]."""
    design = np.column_stack([np.ones(len(y)), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(np.sum(resid ** 2)) / tss if tss > 0 else 0.0
    return coef[1:], resid, r2


def _direction_loading(beta_cols: np.ndarray, cols: np.ndarray, m: int, total: float,
                       rho: np.ndarray | None) -> tuple[np.ndarray, float]:
    alpha = np.zeros(m)
    alpha[cols] = beta_cols * np.sqrt(WEEKS_PER_YEAR)
    r = np.eye(m) if rho is None else rho
    spanned = float(np.sqrt(max(alpha @ r @ alpha, 0.0)))
    if spanned == 0.0 or total == 0.0:
        return np.zeros(m), spanned
    return alpha / spanned * total, spanned


def _columns(target: str, dims: tuple[int, int, int], restricted: bool) -> np.ndarray:
    m = sum(dims)
    return np.flatnonzero(fx_mask(target, dims)) if restricted else np.arange(m)


def deseasonalize(dates: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Subtract calendar-month means."""
    months = (dates.astype("datetime64[M]").astype(int) % 12)
    out = np.array(values, dtype=float)
    for mth in np.unique(months):
        sel = months == mth
        out[sel] -= out[sel].mean()
    return out


def calibrate_sigma_I(index: IndexSeries, scores: FactorScores, rho: np.ndarray | None = None,
                      restricted: bool = True, min_months: int = 24) -> tuple[FxLoading, FxDiagnostics]:
    """Inflation exchange-rate loading from monthly index log-returns.

    |sigma_I|^2 = 12 Var(deseasonalized log-returns). The direction comes from
    OLS of those residuals on monthly sums of unit-variance weekly scores and
    is rescaled to the total volatility.
    """
    dates, r = index.log_returns()
    if r.size < min_months:
        raise ValidationError(f"{r.size} monthly returns (< {min_months})")
    resid = deseasonalize(dates, r)
    total = float(np.sqrt(12 * resid.var(ddof=1)))
    m = sum(scores.dims)
    cols = _columns("I", scores.dims, restricted)
    z = scores.standardized()[:, cols]
    score_month = scores.dates.astype("datetime64[M]")
    months = dates.astype("datetime64[M]")
    keep = np.isin(months, score_month)
    agg = np.array([z[score_month == mth].sum(axis=0) for mth in months[keep]])
    y = resid[keep]
    if y.size <= len(cols) + 1:
        raise ValidationError("too few months overlapping the factor scores")
    beta, e, r2 = _ols(y, agg)
    sub_rho = None if rho is None else rho
    alpha, spanned = _direction_loading(beta, cols, m, total, sub_rho)
    diag = FxDiagnostics(total, spanned, float(np.sqrt(12 * e.var(ddof=1))), r2, int(r.size), int(y.size))
    return FxLoading("I", alpha, restricted), diag


def calibrate_sigma_J(spread_panel: CurvePanel, scores: FactorScores, ref_pillar: float,
                      rho: np.ndarray | None = None, restricted: bool = True,
                      min_obs: int = MIN_ROWS) -> tuple[FxLoading, FxDiagnostics]:
    """Credit exchange-rate loading pinned to the realized volatility of one spread pillar.

    |sigma_J| = sqrt(52) std(weekly change at `ref_pillar`); the direction
    comes from OLS on unit-variance weekly scores.
    """
    ds = np.diff(spread_panel.column(ref_pillar))
    d_dates = spread_panel.dates[1:]
    ok = ~np.isnan(ds)
    if ok.sum() < min_obs:
        raise ValidationError(f"reference pillar {ref_pillar:g}y has {ok.sum()} weekly changes (< {min_obs})")
    ds, d_dates = ds[ok], d_dates[ok]
    total = float(np.sqrt(WEEKS_PER_YEAR) * ds.std(ddof=1))
    m = sum(scores.dims)
    cols = _columns("J", scores.dims, restricted)
    z = scores.standardized()[:, cols]
    common, i_s, i_z = np.intersect1d(d_dates, scores.dates, return_indices=True)
    if common.size <= len(cols) + 1:
        raise ValidationError("too few weeks overlapping the factor scores")
    beta, e, r2 = _ols(ds[i_s], z[i_z])
    alpha, spanned = _direction_loading(beta, cols, m, total, rho)
    diag = FxDiagnostics(total, spanned, float(np.sqrt(WEEKS_PER_YEAR) * e.std(ddof=1)), r2,
                         int(ds.size), int(common.size))
    return FxLoading("J", alpha, restricted), diag


# pipeline ------------------------------------------------------------------

@dataclass(frozen=True)
class CalibConfig:
    model: str = "A"
    start: str | None = None
    end: str | None = None
    nominal_pillars: tuple[float, ...] | None = None
    real_pillars: tuple[float, ...] | None = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
    spread_pillars: tuple[float, ...] | None = None
    retention: Mapping[str, Retention] = field(default_factory=lambda: dict(DEFAULT_RETENTION))
    sigma_J_pillar: float | None = None
    eig_floor: float = 1e-8
    restricted_fx: bool = True
    weekly: bool = True
    chi_basis: str = "poly"
    chi_degree: int = 0
    chi_alarm: float = 10 * BP

    def __post_init__(self):
        if self.model.upper() not in ("A", "B"):
            raise ValidationError(f"model must be A or B, got {self.model!r}")
        object.__setattr__(self, "model", self.model.upper())

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibConfig":
        d = dict(d)
        if "retention" in d:
            d["retention"] = {b: Retention(**r) if isinstance(r, Mapping) else Retention(int(r))
                              for b, r in d["retention"].items()}
        for k in ("nominal_pillars", "real_pillars", "spread_pillars"):
            if d.get(k) is not None:
                d[k] = tuple(float(x) for x in d[k])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown calibration settings {sorted(unknown)}")
        return cls(**d)

    @property
    def spread_default(self) -> tuple[float, ...]:
        return (1.0, 2.0, 3.0, 5.0) if self.model == "A" else (2.0, 3.0, 5.0)

    @property
    def sigma_J_ref(self) -> float:
        if self.sigma_J_pillar is not None:
            return self.sigma_J_pillar
        return 1.0 if self.model == "A" else 3.0


@dataclass
class CalibrationResult:
    spec: BlockVolSpec
    pcas: dict[str, PcaResult]
    scores: FactorScores
    rho_hat: np.ndarray
    report: dict
    chi: ChiAdjustment | None = None


def _prepare(panel: CurvePanel, cfg: CalibConfig, tenors) -> CurvePanel:
    p = panel.window(cfg.start, cfg.end)
    if cfg.weekly:
        p = to_weekly(p)
    return p.with_tenors(tenors) if tenors is not None else p


def calibrate(nominal: CurvePanel, real: CurvePanel, cdi: CurvePanel, ipca: CurvePanel | None = None,
              inflation_index: IndexSeries | None = None, cfg: CalibConfig = CalibConfig()) -> CalibrationResult:
    """Full calibration from curve and spread histories to a BlockVolSpec."""
    dt = 1.0 / WEEKS_PER_YEAR
    spread_src = cdi if cfg.model == "A" else ipca
    if spread_src is None:
        raise ValidationError(f"model {cfg.model} needs the {'CDI' if cfg.model == 'A' else 'IPCA'} spread panel")
    panels = {
        "N": _prepare(nominal, cfg, cfg.nominal_pillars),
        "R": _prepare(real, cfg, cfg.real_pillars),
        "S": _prepare(spread_src, cfg, cfg.spread_pillars or cfg.spread_default),
    }
    changes = {b: weekly_changes(p) for b, p in panels.items()}
    pcas = {b: pca_block(changes[b], dt, cfg.retention.get(b, DEFAULT_RETENTION[b]), block=b)
            for b in BLOCKS}

    fit_n = fit_loadings(pcas["N"])
    fit_r = fit_loadings(pcas["R"], shared_decays=fit_n.shape)
    spread = fit_spread_block(pcas["S"], cfg.model)

    scores = factor_scores(changes, pcas)
    rho_hat = correlation_matrix(scores)
    rho = assemble_rho(rho_hat, scores.dims, cfg.eig_floor)

    m = sum(scores.dims)
    if inflation_index is not None:
        idx = inflation_index
        if cfg.start or cfg.end:
            sel = np.ones(idx.dates.size, dtype=bool)
            if cfg.start:
                sel &= idx.dates >= np.datetime64(cfg.start, "M").astype("datetime64[D]")
            if cfg.end:
                sel &= idx.dates <= np.datetime64(cfg.end, "D")
            idx = IndexSeries(idx.dates[sel], idx.levels[sel])
        sig_i, diag_i = calibrate_sigma_I(idx, scores, rho, cfg.restricted_fx)
    else:
        sig_i, diag_i = FxLoading("I", np.zeros(m), cfg.restricted_fx), None
    sig_j, diag_j = calibrate_sigma_J(panels["S"], scores, cfg.sigma_J_ref, rho, cfg.restricted_fx)

    chi = None
    if ipca is not None:
        chi = _reconcile(panels["N"], panels["R"], _prepare(cdi, cfg, None), _prepare(ipca, cfg, None), cfg)

    shape = ShapeFamily(fit_n.shape.b2, fit_n.shape.b3, spread.c2 if spread.c2 else 1.0)
    spec = BlockVolSpec(shape, fit_n.amplitudes, fit_r.amplitudes, spread.amplitudes, sig_i, sig_j, rho,
                        spread_empirical=spread.empirical,
                        meta={"model": cfg.model, "window": [cfg.start, cfg.end]})
    report = {
        "model": cfg.model,
        "window": {"start": cfg.start, "end": cfg.end},
        "blocks": {b: {"tenors": pcas[b].tenors.tolist(), "eigenvalues_bp2": pcas[b].eigenvalues.tolist(),
                       "shares": pcas[b].shares.tolist(), "retained": pcas[b].n_retained,
                       "n_obs": pcas[b].n_obs} for b in BLOCKS},
        "fit": {"N_r2": fit_n.r2, "R_r2": fit_r.r2, "S_r2": spread.r2, "b2": fit_n.shape.b2,
                "b3": fit_n.shape.b3, "c2": spread.c2, "spread_fallback": spread.fallback},
        "correlation": {"labels": list(scores.labels), "rho_hat": rho_hat.tolist(),
                        "min_eigenvalue_hat": float(np.linalg.eigvalsh(rho_hat)[0]),
                        "min_eigenvalue": float(np.linalg.eigvalsh(rho)[0]), "n_obs": len(scores)},
        "sigma_I": None if diag_i is None else diag_i.as_bp(),
        "sigma_J": {"ref_pillar": cfg.sigma_J_ref, **diag_j.as_bp()},
        "chi": None if chi is None else {"sup_norm_bp": chi.sup_norm / BP,
                                         "coefficients": chi.coefficients.tolist(),
                                         "residual_bp": (chi.residual / BP).tolist(),
                                         "tenors": chi.tenors.tolist()},
    }
    return CalibrationResult(spec, pcas, scores, rho_hat, report, chi)


def _reconcile(nom: CurvePanel, real: CurvePanel, cdi: CurvePanel, ipca: CurvePanel,
               cfg: CalibConfig) -> ChiAdjustment | None:
    """chi fitted at the last common date to s_IPCA(market) - [s_CDI + f_N - f_R]."""
    common = np.intersect1d(np.intersect1d(nom.dates, real.dates), np.intersect1d(cdi.dates, ipca.dates))
    if common.size == 0:
        return None
    t0 = common[-1]
    tau, gap = [], []
    for t in ipca.grid.tenors:
        try:
            vals = [p.values[np.searchsorted(p.dates, t0), p.grid.index(t)] for p in (nom, real, cdi, ipca)]
        except ValidationError:
            continue
        if np.all(np.isfinite(vals)):
            fn, fr, sc, si = vals
            tau.append(t)
            gap.append(si - (sc + fn - fr))
    if len(tau) < cfg.chi_degree + 1:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return chi_adjust(np.array(gap), np.array(tau), basis=cfg.chi_basis, degree=cfg.chi_degree,
                          alarm=cfg.chi_alarm)
