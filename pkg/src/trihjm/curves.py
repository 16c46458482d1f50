"""Zero and forward curve construction: business-day bootstrap, flat-forward
interpolation, Svensson fits for real yields and duration-bucketed spreads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import CalibrationError, ValidationError
from .marketdata import ConstituentPanel, CurvePanel, PillarGrid

BUSINESS_DAYS_PER_YEAR = 252
DEFAULT_BUMP = 1.0 / BUSINESS_DAYS_PER_YEAR


@dataclass(frozen=True)
class ZeroCurve:
    """Continuously compounded zero rates on a pillar grid."""

    grid: PillarGrid
    zeros: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.zeros, dtype=float)
        if z.shape != (len(self.grid),) or not np.all(np.isfinite(z)):
            raise ValidationError("zero rates must be finite, one per tenor")
        object.__setattr__(self, "zeros", z)

    def log_discount(self, tau) -> np.ndarray:
        """ln P(tau) under piecewise-constant forwards, flat beyond the last node."""
        t = self.grid.array
        nodes = np.r_[0.0, t]
        cum = np.r_[0.0, self.zeros * t]
        seg_fwd = np.diff(cum) / np.diff(nodes)
        tau = np.asarray(tau, dtype=float)
        k = np.clip(np.searchsorted(nodes, tau, side="left") - 1, 0, t.size - 1)
        return -(cum[k] + seg_fwd[k] * (tau - nodes[k]))

    def discount(self, tau) -> np.ndarray:
        return np.exp(self.log_discount(tau))

    def segment_forwards(self) -> np.ndarray:
        """Forward on each interval (T_{i-1}, T_i], with T_{-1} = 0."""
        t = self.grid.array
        return np.diff(np.r_[0.0, self.zeros * t]) / np.diff(np.r_[0.0, t])


@dataclass(frozen=True)
class ForwardCurve:
    """Instantaneous forwards at pillar nodes.

    Between nodes the forward is piecewise constant with each open interval
    (T_{i-1}, T_i) owned by its right node; beyond the last node it is flat.
    """

    grid: PillarGrid
    fwds: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fwds, dtype=float)
        if f.shape != (len(self.grid),) or not np.all(np.isfinite(f)):
            raise ValidationError("forwards must be finite, one per tenor")
        object.__setattr__(self, "fwds", f)

    def zero_curve(self) -> ZeroCurve:
        t = self.grid.array
        cum = np.cumsum(self.fwds * np.diff(np.r_[0.0, t]))
        return ZeroCurve(self.grid, cum / t)


def bootstrap_discount(yields: Sequence[float], business_days: Sequence[int]) -> ZeroCurve:
    """Zero curve from annualized business-day yields: P = (1+y)^(-du/252)."""
    y = np.asarray(yields, dtype=float)
    du = np.asarray(business_days)
    if y.shape != du.shape or y.ndim != 1 or y.size == 0:
        raise ValidationError("yields and business_days must be equal-length 1-d sequences")
    if np.any(du <= 0) or np.any(np.diff(du) <= 0):
        raise ValidationError("business_days must be positive and strictly increasing")
    if np.any(y <= -1):
        raise ValidationError("yields must exceed -1")
    tau = du / BUSINESS_DAYS_PER_YEAR
    log_p = -tau * np.log1p(y)
    return ZeroCurve(PillarGrid(tuple(tau)), -log_p / tau)


def forward_from_zero(curve: ZeroCurve, h: float = DEFAULT_BUMP) -> ForwardCurve:
    """Node forwards by finite differences of ln P on the flat-forward curve.

    The stencil at each node is [T_i - h, T_i], which stays inside the
    interval the node owns, so integrating the result back reproduces the
    input zeros exactly. A centred stencil would straddle the kink at the
    node and return the average of two adjacent segment forwards.
    """
    if h <= 0:
        raise ValidationError("bump h must be > 0")
    t = curve.grid.array
    spacing = np.diff(np.r_[0.0, t]).min()
    if h >= spacing:
        raise ValidationError(f"bump h={h} must be below the minimum tenor spacing {spacing}")
    f = -(curve.log_discount(t) - curve.log_discount(t - h)) / h
    return ForwardCurve(curve.grid, f)


def interp_flat_forward(curve: ZeroCurve | ForwardCurve, tau):
    """Flat-forward interpolation.

    For a ForwardCurve returns the instantaneous forward at `tau`; for a
    ZeroCurve returns the zero rate implied by integrating the piecewise
    constant forwards. Beyond the last node the last forward is held flat.
    """
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise ValidationError("tau must be >= 0")
    t = curve.grid.array
    if isinstance(curve, ForwardCurve):
        k = np.minimum(np.searchsorted(t, tau_arr, side="left"), t.size - 1)
        out = curve.fwds[k]
    else:
        seg = curve.segment_forwards()
        safe = np.where(tau_arr > 0, tau_arr, 1.0)
        out = np.where(tau_arr > 0, -curve.log_discount(safe) / safe, seg[0])
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SvenssonParams:
    """Svensson zero-yield parameters; decays lam1, lam2 are in 1/years."""

    beta0: float
    beta1: float
    beta2: float
    beta3: float
    lam1: float
    lam2: float

    def __post_init__(self):
        if not (self.lam1 > 0 and self.lam2 > 0):
            raise ValidationError("Svensson decays must be > 0")

    def zero_yield(self, tau) -> np.ndarray:
        return _svensson_basis(np.asarray(tau, float), self.lam1, self.lam2) @ self.betas

    def forward(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        e1, e2 = np.exp(-self.lam1 * tau), np.exp(-self.lam2 * tau)
        return (self.beta0 + self.beta1 * e1 + self.beta2 * self.lam1 * tau * e1
                + self.beta3 * self.lam2 * tau * e2)

    @property
    def betas(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2, self.beta3])

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _loading(x: np.ndarray) -> np.ndarray:
    # (1 - e^-x)/x with the x -> 0 limit
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2, -np.expm1(-xs) / xs)


def _svensson_basis(tau: np.ndarray, lam1: float, lam2: float) -> np.ndarray:
    l1, l2 = _loading(lam1 * tau), _loading(lam2 * tau)
    return np.column_stack([np.ones_like(tau), l1, l1 - np.exp(-lam1 * tau),
                            l2 - np.exp(-lam2 * tau)])


@dataclass(frozen=True)
class SvenssonFit:
    params: SvenssonParams
    max_residual: float
    rmse: float


def fit_svensson(yields: Sequence[float], grid: PillarGrid, max_residual_cap: float = 0.005,
                 lam_bounds: tuple[float, float] = (0.02, 10.0), max_nfev: int = 2000) -> SvenssonFit:
    """Least-squares Svensson fit to zero yields.

    The betas enter linearly and are solved exactly for each pair of decays,
    so the nonlinear search runs over (lam1, lam2) only. Starts at
    (1.0, 0.3) and then a grid of decays; the best fit is kept.
    """
    y = np.asarray(yields, dtype=float)
    tau = grid.array
    if y.shape != tau.shape:
        raise ValidationError("one yield per tenor required")
    if tau.size < 6:
        raise ValidationError(f"underdetermined: {tau.size} tenors for 6 Svensson parameters")

    def betas(lams):
        basis = _svensson_basis(tau, *lams)
        b, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return basis, b

    def resid(log_lams):
        basis, b = betas(np.exp(log_lams))
        return basis @ b - y

    lo, hi = np.log(lam_bounds[0]), np.log(lam_bounds[1])
    starts = [(1.0, 0.3)] + [(a, b) for a, b in product((0.1, 0.5, 2.0, 5.0), repeat=2) if a != b]
    best = None
    for s in starts:
        res = least_squares(resid, np.log(s), bounds=(lo, hi), xtol=1e-15, ftol=1e-15,
                            gtol=1e-15, max_nfev=max_nfev)
        if best is None or res.cost < best.cost:
            best = res
        if np.max(np.abs(best.fun)) < 1e-12:
            break
    if best is None or not np.all(np.isfinite(best.x)):
        raise CalibrationError("Svensson fit did not converge")
    lams = np.exp(best.x)
    _, b = betas(lams)
    r = resid(best.x)
    max_res = float(np.max(np.abs(r)))
    if max_res > max_residual_cap:
        raise CalibrationError(f"Svensson fit max residual {max_res:.6f} exceeds cap {max_residual_cap}")
    return SvenssonFit(SvenssonParams(*map(float, b), float(lams[0]), float(lams[1])),
                       max_res, float(np.sqrt(np.mean(r ** 2))))


def real_forward_curve(params: SvenssonParams, grid: PillarGrid, short_end_floor: float = 1.0) -> ForwardCurve:
    """Svensson instantaneous forwards on the tenors at or above the floor."""
    if short_end_floor < 0:
        raise ValidationError("short_end_floor must be >= 0")
    keep = [t for t in grid.tenors if t >= short_end_floor - 1e-12]
    if not keep:
        raise ValidationError(f"all tenors below short_end_floor={short_end_floor}")
    sub = PillarGrid(tuple(keep))
    return ForwardCurve(sub, params.forward(sub.array))


def bucket_spreads(panel: ConstituentPanel, family: str, vertices: PillarGrid,
                   half_widths: Sequence[float], min_count: int = 5) -> CurvePanel:
    """Weight-averaged constituent spreads in duration buckets around each vertex.

    Bucket membership is |duration - vertex| <= half_width (closed on both
    sides). A cell is missing when fewer than `min_count` constituents fall
    in the bucket or their weights sum to zero.
    """
    df = panel.family(family)
    hw = np.asarray(half_widths, dtype=float)
    if hw.shape != (len(vertices),) or np.any(hw <= 0):
        raise ValidationError("one positive half-width per vertex required")
    if min_count < 1:
        raise ValidationError("min_count must be >= 1")
    kind = "cdi_spread" if family.upper() == "CDI" else "ipca_spread"
    dates = np.unique(df["date"].to_numpy().astype("datetime64[D]"))
    values = np.full((dates.size, len(vertices)), np.nan)
    if dates.size == 0:
        return CurvePanel(dates, vertices, values, kind)

    row = np.searchsorted(dates, df["date"].to_numpy().astype("datetime64[D]"))
    dur = df["duration"].to_numpy()
    w = df["weight"].to_numpy()
    s = df["spread"].to_numpy()
    for j, (v, h) in enumerate(zip(vertices.array, hw)):
        inside = np.abs(dur - v) <= h + 1e-12
        count = np.bincount(row[inside], minlength=dates.size)
        wsum = np.bincount(row[inside], weights=w[inside], minlength=dates.size)
        wsx = np.bincount(row[inside], weights=(w * s)[inside], minlength=dates.size)
        ok = (count >= min_count) & (wsum > 0)
        values[ok, j] = wsx[ok] / wsum[ok]
    return CurvePanel(dates, vertices, values, kind)
