"""Simulation and out-of-sample diagnostics: deflated-numeraire martingale
test, triangle identity, curve smoothness, volatility and correlation
reproduction, and Gaussian interval coverage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .calib import FactorScores, weekly_changes
from .errors import ValidationError
from .marketdata import CurvePanel
from .sim import SimOutput
from .volarch import BP, BlockVolSpec, total_vol

DEFAULT_HORIZONS = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0)
RATIO_NAMES = ("inflation", "credit")
VARIABLE_BLOCK = {"fN": "N", "fR": "R", "sCDI": "S"}


@dataclass(frozen=True)
class MartingaleReport:
    """Per horizon and ratio: sample mean, bias and standard error (bp of the target), z."""

    horizons: np.ndarray
    mean: dict[str, np.ndarray]
    bias_bp: dict[str, np.ndarray]
    se_bp: dict[str, np.ndarray]
    z: dict[str, np.ndarray]
    alpha: float
    n_paths: int

    @property
    def critical(self) -> float:
        return float(stats.norm.ppf(1 - self.alpha / 2))

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(v)) for v in self.z.values()))

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.critical

    def flags(self) -> dict[str, np.ndarray]:
        return {k: np.abs(v) > self.critical for k, v in self.z.items()}

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name in self.z:
            for k, h in enumerate(self.horizons):
                rows.append({"ratio": name, "horizon": float(h), "mean": float(self.mean[name][k]),
                             "bias_bp": float(self.bias_bp[name][k]), "se_bp": float(self.se_bp[name][k]),
                             "z": float(self.z[name][k])})
        return pd.DataFrame(rows)


def martingale_test(sim: SimOutput, horizons: Sequence[float] = DEFAULT_HORIZONS,
                    alpha: float = 0.05) -> MartingaleReport:
    """Compare sample means of I B_R / B_N and J B_C / B_N with their t = 0 values.

    Bias and standard error are relative to the target, in bp. A cell with
    zero standard error reports z = 0 when the bias is also zero.
    """
    idx = [sim.time_index(h) for h in horizons]
    live = ~sim.aborted
    mean, bias, se, z = {}, {}, {}, {}
    for name, ratio in zip(RATIO_NAMES, (sim.inflation_ratio(), sim.credit_ratio())):
        r = ratio[live]
        target = r[:, 0].mean()
        x = r[:, idx] / target
        n = x.shape[0]
        m = x.mean(axis=0)
        s = x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(idx))
        b = m - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            zz = np.where(s > 0, b / np.where(s > 0, s, 1.0), np.where(np.abs(b) < 1e-14, 0.0, np.inf))
        mean[name], bias[name], se[name], z[name] = m * target, b / BP, s / BP, zz
    return MartingaleReport(np.asarray(horizons, float), mean, bias, se, z, alpha, int(live.sum()))


@dataclass(frozen=True)
class TriangleResult:
    max_violation: float
    location: tuple[int, float, float] | None
    eps: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.eps


def triangle_check(sim: SimOutput, eps: float = 1e-10) -> TriangleResult:
    """max |sIPCA - sCDI - (fN - fR)| over paths, dates and recorded tenors."""
    c = sim.curves
    if not all(k in c for k in ("fN", "fR", "sCDI", "sIPCA")):
        raise ValidationError("simulation output carries no recorded curves")
    v = np.abs(c["sIPCA"] - c["sCDI"] - (c["fN"] - c["fR"]))
    v = np.where(np.isnan(v), np.inf, v)
    if v.size == 0:
        return TriangleResult(0.0, None, eps)
    p, k, j = np.unravel_index(np.argmax(v), v.shape)
    worst = float(v[p, k, j])
    loc = (int(p), float(sim.times[k]), float(sim.tenors[j])) if worst > 0 else None
    return TriangleResult(worst, loc, eps)


def second_difference(tenors: np.ndarray, f: np.ndarray) -> np.ndarray:
    """|Delta^2 f| / (Delta tau^2 max|f|) at interior nodes along the last axis.

    Delta^2 f is the divided second difference scaled by h- h+, so it is
    zero on any linear curve; Delta tau^2 = h- h+.
    """
    t = np.asarray(tenors, dtype=float)
    if t.size < 3:
        raise ValidationError("need at least three tenors for a second difference")
    hm, hp = np.diff(t)[:-1], np.diff(t)[1:]
    if np.any(hm <= 0) or np.any(hp <= 0):
        raise ValidationError("degenerate tenor grid")
    d2 = 2 * (hm * (f[..., 2:] - f[..., 1:-1]) - hp * (f[..., 1:-1] - f[..., :-2])) / (hm + hp)
    scale = np.max(np.abs(f), axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(d2) / (hm * hp) / np.where(scale > 0, scale, np.nan)


@dataclass(frozen=True)
class SmoothnessRow:
    curve: str
    window: str
    p95: float
    max: float
    baseline: float
    ratio: float


def smoothness_metric(sim: SimOutput, windows: Mapping[str, tuple[float, float]] | None = None,
                      ) -> list[SmoothnessRow]:
    """Per curve and tenor window: p95 and max of the normalized second difference.

    Simulated statistics pool all (path, date) pairs after t = 0; the ratio
    divides the simulated p95 by the same statistic on the t = 0 curve. Curves: fN, fR, sCDI, sIPCA and the credit forward fN + sCDI.
    """
    windows = windows or {"short": (0.0, 2.0), "long": (2.0, 10.0)}
    c = dict(sim.curves)
    if "fN" not in c:
        raise ValidationError("simulation output carries no recorded curves")
    c["fC"] = c["fN"] + c["sCDI"]
    rows = []
    for wname, (lo, hi) in windows.items():
        sel = (sim.tenors >= lo - 1e-12) & (sim.tenors <= hi + 1e-12)
        if sel.sum() < 3:
            raise ValidationError(f"window {wname} has fewer than three tenors")
        t = sim.tenors[sel]
        for name in ("fN", "fR", "sCDI", "sIPCA", "fC"):
            vals = second_difference(t, c[name][..., sel])
            base = float(np.nanpercentile(vals[:, 0], 95))
            after = vals[:, 1:] if vals.shape[1] > 1 else vals
            p95 = float(np.nanpercentile(after, 95))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = p95 / base if base > 0 else (0.0 if p95 == 0 else np.inf)
            rows.append(SmoothnessRow(name, wname, p95, float(np.nanmax(after)), base, float(ratio)))
    return rows


@dataclass(frozen=True)
class CoverageRow:
    variable: str
    tenor: float
    coverage: float
    n_inside: int
    n_obs: int


@dataclass(frozen=True)
class CoverageReport:
    level: float
    rows: list[CoverageRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows])

    def cell(self, variable: str, tenor: float) -> CoverageRow:
        for r in self.rows:
            if r.variable == variable and abs(r.tenor - tenor) < 1e-9:
                return r
        raise KeyError((variable, tenor))


def _changes(obj) -> tuple[np.ndarray, np.ndarray]:
    """(tenors, change matrix) from a panel or a raw change array with tenors."""
    if isinstance(obj, CurvePanel):
        cm = weekly_changes(obj, min_rows=0)
        return cm.tenors, cm.values
    tenors, values = obj
    return np.asarray(tenors, float), np.asarray(values, float)


def coverage_test(model_vol: Mapping[tuple[str, float], float], oos_changes: Mapping[str, object],
                  level: float = 0.90, dt: float = 1.0 / 52, min_obs: int = 30) -> CoverageReport:
    """Fraction of weekly changes inside +/- z sigma_model sqrt(dt), centred at zero.

    `model_vol` maps (variable, tenor) to an annualized volatility in
    decimal units; `oos_changes` maps the variable to a weekly CurvePanel or
    a (tenors, changes) pair. Missing changes are skipped.
    """
    if not 0 < level < 1:
        raise ValidationError("level must be in (0, 1)")
    zq = float(stats.norm.ppf(0.5 + level / 2))
    rows = []
    cache = {v: _changes(p) for v, p in oos_changes.items()}
    for (var, tenor), sig in model_vol.items():
        if var not in cache:
            raise ValidationError(f"no out-of-sample changes for {var}")
        tenors, x = cache[var]
        j = np.flatnonzero(np.isclose(tenors, tenor, rtol=0, atol=1e-9))
        if j.size == 0:
            raise ValidationError(f"tenor {tenor} missing for {var}")
        d = x[:, j[0]]
        d = d[~np.isnan(d)]
        if d.size < min_obs:
            raise ValidationError(f"{var} {tenor:g}y has {d.size} out-of-sample changes (< {min_obs})")
        half = zq * sig * np.sqrt(dt)
        inside = int(np.sum(np.abs(d) <= half))
        rows.append(CoverageRow(var, float(tenor), inside / d.size, inside, int(d.size)))
    return CoverageReport(level, rows)


def binomial_band(n: int, p: float = 0.90, confidence: float = 0.99) -> tuple[float, float]:
    """Central binomial interval for the coverage fraction k/n."""
    lo = stats.binom.ppf((1 - confidence) / 2, n, p)
    hi = stats.binom.ppf(1 - (1 - confidence) / 2, n, p)
    return float(lo) / n, float(hi) / n


def model_vols(spec: BlockVolSpec, tenors: Mapping[str, Sequence[float]]) -> dict[tuple[str, float], float]:
    """Annualized model vol per (variable, tenor): sqrt(sigma . sigma) of the driving block."""
    out = {}
    for var, ts in tenors.items():
        if var not in VARIABLE_BLOCK:
            raise ValidationError(f"no model volatility for {var}")
        for t in ts:
            out[(var, float(t))] = float(total_vol(spec, VARIABLE_BLOCK[var], t))
    return out


def realized_vol(changes: np.ndarray, periods_per_year: int = 52) -> np.ndarray:
    """sqrt(periods) * sample std of changes per column, ignoring missing cells."""
    x = np.asarray(changes, dtype=float)
    n = np.sum(~np.isnan(x), axis=0)
    out = np.full(x.shape[1], np.nan)
    ok = n >= 2
    out[ok] = np.sqrt(periods_per_year) * np.nanstd(x[:, ok], axis=0, ddof=1)
    return out


def vol_reproduction(spec: BlockVolSpec, oos_changes: Mapping[str, object],
                     tenors: Sequence[float] = (1.0, 3.0, 5.0)) -> pd.DataFrame:
    """Model vs realized annualized vol (bp/sqrt(yr)) with their ratio realized / model."""
    rows = []
    for var, obj in oos_changes.items():
        ten, x = _changes(obj)
        real = realized_vol(x)
        for t in tenors:
            j = np.flatnonzero(np.isclose(ten, t, rtol=0, atol=1e-9))
            if j.size == 0:
                continue
            model = float(total_vol(spec, VARIABLE_BLOCK[var], t)) / BP if var in VARIABLE_BLOCK else np.nan
            rows.append({"variable": var, "tenor": float(t), "model_bp": model,
                         "realized_bp": float(real[j[0]]) / BP})
    return derive_vol_ratios(pd.DataFrame(rows, columns=["variable", "tenor", "model_bp", "realized_bp"]))


def derive_vol_ratios(table: pd.DataFrame) -> pd.DataFrame:
    """Add `ratio` = realized / model (missing where the model vol is missing or zero)."""
    out = table.copy()
    model = out["model_bp"].astype(float)
    out["ratio"] = np.where(model > 0, out["realized_bp"].astype(float) / model.where(model > 0, 1.0), np.nan)
    return out


def corr_reproduction(in_sample: FactorScores, oos: FactorScores,
                      pairs: Sequence[tuple[str, str]]) -> pd.DataFrame:
    """Score correlation for each labelled pair on both windows and their difference."""
    rows = []
    for a, b in pairs:
        vals = []
        for sc in (in_sample, oos):
            try:
                vals.append(float(np.corrcoef(sc.column(a), sc.column(b))[0, 1]))
            except ValueError as exc:
                raise ValidationError(f"unknown factor label in pair ({a}, {b})") from exc
        rows.append({"pair": f"{a}-{b}", "in_sample": vals[0], "oos": vals[1]})
    return derive_corr_diffs(pd.DataFrame(rows))


def derive_corr_diffs(table: pd.DataFrame) -> pd.DataFrame:
    out = table.copy()
    out["diff"] = out["oos"].astype(float) - out["in_sample"].astype(float)
    return out


def coverage_percent(n_inside, n_obs) -> np.ndarray:
    """Coverage in percent from counts."""
    return 100.0 * np.asarray(n_inside, float) / np.asarray(n_obs, float)


def moments(x: np.ndarray) -> dict[str, float]:
    """Descriptive skewness and excess kurtosis (reported, never gated)."""
    x = np.asarray(x, float)
    x = x[~np.isnan(x)]
    return {"n": int(x.size), "skew": float(stats.skew(x)) if x.size > 2 else np.nan,
            "excess_kurtosis": float(stats.kurtosis(x)) if x.size > 3 else np.nan}


def simulated_changes(sim: SimOutput, variable: str, path: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Weekly constant-maturity changes of one recorded curve along one path."""
    if variable not in sim.curves:
        raise ValidationError(f"{variable} not recorded")
    return sim.tenors, np.diff(sim.curves[variable][path], axis=0)
