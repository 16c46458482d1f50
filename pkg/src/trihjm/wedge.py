"""Within-issuer triangle residual for issuers listed in both the CDI and the
IPCA debenture families: breakeven matching, retail-tax benchmarks,
per-issuer decomposition, cross-sectional regression and regime split.

All rates and spreads are decimals; report helpers convert to bp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ValidationError
from .marketdata import ConstituentPanel, PillarGrid
from .volarch import BP

TAU_PF = 0.15
SCHEMES = ("nearest", "interp_mid", "split_side")
MODES = ("linear", "exact")


@dataclass(frozen=True)
class BreakevenPanel:
    """Nominal and real forwards per date on common pillars; BE = fN - fR."""

    dates: np.ndarray
    grid: PillarGrid
    fN: np.ndarray
    fR: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dates).astype("datetime64[D]")
        fN, fR = np.asarray(self.fN, float), np.asarray(self.fR, float)
        shape = (d.size, len(self.grid))
        if fN.shape != shape or fR.shape != shape:
            raise ValidationError("breakeven panel arrays must be (dates, tenors)")
        if not (np.all(np.isfinite(fN)) and np.all(np.isfinite(fR))):
            raise ValidationError("breakeven panel has missing values")
        if d.size and np.any(np.diff(d) <= np.timedelta64(0, "D")):
            raise ValidationError("breakeven dates must be strictly increasing")
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "fN", fN)
        object.__setattr__(self, "fR", fR)

    @property
    def be(self) -> np.ndarray:
        return self.fN - self.fR


def load_breakevens(path) -> BreakevenPanel:
    """Long CSV with columns date, tenor, fN, fR (decimals)."""
    df = pd.read_csv(path, float_precision="round_trip")
    need = {"date", "tenor", "fN", "fR"}
    if not need <= set(df.columns):
        raise ValidationError(f"{path}: breakeven file needs columns {sorted(need)}")
    if df.empty:
        raise ValidationError(f"{path}: no data rows")
    df["date"] = pd.to_datetime(df["date"])
    if df.duplicated(["date", "tenor"]).any():
        raise ValidationError(f"{path}: duplicate (date, tenor) rows")
    fN = df.pivot(index="date", columns="tenor", values="fN").sort_index()
    fR = df.pivot(index="date", columns="tenor", values="fR").sort_index()
    if fN.isna().any().any() or fR.isna().any().any():
        raise ValidationError(f"{path}: every date needs every tenor")
    return BreakevenPanel(fN.index.to_numpy().astype("datetime64[D]"),
                          PillarGrid(tuple(float(t) for t in fN.columns)), fN.to_numpy(), fR.to_numpy())


def write_breakevens(panel: BreakevenPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "tenor", "fN", "fR"])
        for i, d in enumerate(panel.dates):
            for j, t in enumerate(panel.grid.tenors):
                w.writerow([str(d), repr(float(t)), repr(float(panel.fN[i, j])), repr(float(panel.fR[i, j]))])


@dataclass(frozen=True)
class IssuerSeries:
    """Per-date family averages for one issuer, plus matched curves once set."""

    issuer: str
    dates: np.ndarray
    s_cdi: np.ndarray
    s_ipca: np.ndarray
    dur_cdi: np.ndarray
    dur_ipca: np.ndarray
    fN: np.ndarray | None = None
    be: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.dates)
        for name in ("s_cdi", "s_ipca", "dur_cdi", "dur_ipca", "fN", "be"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, float)
            if v.shape != (n,):
                raise ValidationError(f"{self.issuer}: {name} must have one value per date")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "dates", np.asarray(self.dates).astype("datetime64[D]"))

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def mid_duration(self) -> np.ndarray:
        return 0.5 * (self.dur_cdi + self.dur_ipca)

    @property
    def matched(self) -> bool:
        return self.be is not None

    @property
    def delta(self) -> np.ndarray:
        if self.be is None:
            raise ValidationError(f"{self.issuer}: breakeven not matched")
        return self.s_ipca - self.s_cdi - self.be

    def window(self, start=None, end=None) -> "IssuerSeries":
        """Dates in [start, end)."""
        keep = np.ones(len(self), bool)
        if start is not None:
            keep &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            keep &= self.dates < np.datetime64(end, "D")
        return self._select(keep)

    def _select(self, keep) -> "IssuerSeries":
        pick = lambda v: None if v is None else v[keep]
        return IssuerSeries(self.issuer, self.dates[keep], self.s_cdi[keep], self.s_ipca[keep],
                            self.dur_cdi[keep], self.dur_ipca[keep], pick(self.fN), pick(self.be))


def _family_means(df: pd.DataFrame) -> pd.DataFrame:
    df = df[df["weight"] > 0].assign(ws=lambda d: d["weight"] * d["spread"],
                                     wd=lambda d: d["weight"] * d["duration"])
    g = df.groupby(["issuer", "date"])[["weight", "ws", "wd"]].sum()
    return pd.DataFrame({"spread": g["ws"] / g["weight"], "duration": g["wd"] / g["weight"]})


def issuer_panel(constituents: ConstituentPanel, min_joint_days: int = 800) -> list[IssuerSeries]:
    """Issuers observed in both families on at least `min_joint_days` dates.

    Spreads and durations are weight-averaged over the issuer's tickers in
    each family on each date. Ordered by joint-day count, then name.
    """
    cdi = _family_means(constituents.family("CDI"))
    ipca = _family_means(constituents.family("IPCA"))
    joint = cdi.join(ipca, how="inner", lsuffix="_cdi", rsuffix="_ipca")
    out = []
    for issuer, g in joint.groupby(level="issuer", sort=False):
        if len(g) < min_joint_days:
            continue
        d = g.index.get_level_values("date").to_numpy().astype("datetime64[D]")
        out.append(IssuerSeries(str(issuer), d, g["spread_cdi"].to_numpy(), g["spread_ipca"].to_numpy(),
                                g["duration_cdi"].to_numpy(), g["duration_ipca"].to_numpy()))
    out.sort(key=lambda s: (-len(s), s.issuer))
    return out


def _interp_rows(tenors: np.ndarray, curves: np.ndarray, x: np.ndarray) -> np.ndarray:
    # row-wise linear interpolation, flat beyond the end pillars
    k = np.clip(np.searchsorted(tenors, x, side="right") - 1, 0, tenors.size - 2)
    w = np.clip((x - tenors[k]) / (tenors[k + 1] - tenors[k]), 0.0, 1.0)
    rows = np.arange(x.size)
    return curves[rows, k] * (1 - w) + curves[rows, k + 1] * w


def _match(tenors: np.ndarray, curves: np.ndarray, dur_a: np.ndarray, dur_b: np.ndarray,
           scheme: str) -> np.ndarray:
    mid = 0.5 * (dur_a + dur_b)
    if scheme == "nearest":
        j = np.argmin(np.abs(mid[:, None] - tenors[None, :]), axis=1)
        return curves[np.arange(mid.size), j]
    if tenors.size < 2:
        return curves[:, 0].copy()
    if scheme == "interp_mid":
        return _interp_rows(tenors, curves, mid)
    return 0.5 * (_interp_rows(tenors, curves, dur_a) + _interp_rows(tenors, curves, dur_b))


def match_breakeven(issuer: IssuerSeries, curves: BreakevenPanel, scheme: str = "nearest") -> IssuerSeries:
    """Attach the breakeven (and nominal forward) matched to the issuer's durations.

    nearest: pillar closest to the mid-duration; interp_mid: linear in tenor
    at the mid-duration; split_side: mean of the values interpolated at each
    family's own duration. Issuer dates absent from `curves` are dropped.
    """
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown matching scheme {scheme!r}; expected one of {SCHEMES}")
    t = curves.grid.array
    lo, hi = t[0] - 1.0, t[-1] + 1.0
    durs = np.r_[issuer.dur_cdi, issuer.dur_ipca]
    if durs.size and (durs.min() < lo or durs.max() > hi):
        raise ValidationError(f"{issuer.issuer}: durations outside [{lo:g}, {hi:g}] years")
    common, ia, ib = np.intersect1d(issuer.dates, curves.dates, return_indices=True)
    s = issuer._select(ia)
    be = _match(t, curves.be[ib], s.dur_cdi, s.dur_ipca, scheme)
    fN = _match(t, curves.fN[ib], s.dur_cdi, s.dur_ipca, scheme)
    return replace(s, fN=fN, be=be)


@dataclass(frozen=True)
class IssuerSummary:
    """Time-series summary of one issuer's residual; decimals except n_obs and durations."""

    issuer: str
    mean: float
    median: float
    std: float
    n_obs: int
    avg_duration: float
    dur_diff: float = float("nan")
    fN: float = float("nan")
    be: float = float("nan")
    s_cdi: float = float("nan")
    tau_fiscal: float | None = None


def compute_delta(issuer: IssuerSeries) -> IssuerSummary:
    """Mean, median and sample std (ddof=1) of the per-date residual."""
    d = issuer.delta
    if d.size == 0:
        raise ValidationError(f"{issuer.issuer}: no matched dates")
    std = float(np.std(d, ddof=1)) if d.size > 1 else float("nan")
    return IssuerSummary(issuer.issuer, float(d.mean()), float(np.median(d)), std, int(d.size),
                         float(issuer.mid_duration.mean()),
                         float(issuer.dur_ipca.mean() - issuer.dur_cdi.mean()),
                         float(issuer.fN.mean()), float(issuer.be.mean()), float(issuer.s_cdi.mean()))


def summary_stats(means: Sequence[float], stds: Sequence[float] | None = None) -> dict[str, float]:
    """Mean of means, across-issuer std (ddof=1), its SE, and mean of stds."""
    m = np.asarray(means, float)
    n = m.size
    sd = float(np.std(m, ddof=1)) if n > 1 else float("nan")
    out = {"n_issuers": n, "mean": float(m.mean()) if n else float("nan"), "sd": sd,
           "se": sd / np.sqrt(n) if n > 1 else float("nan")}
    if stds is not None:
        out["mean_std"] = float(np.mean(stds)) if n else float("nan")
    return out


# tax benchmarks ---------------------------------------------------------------

def tax_benchmark_linear(fN, fR, sCDI, tau_pf: float = TAU_PF):
    """(raw, delta) predictions: raw = -tau (fN + sCDI), delta = -(fN - fR) + raw."""
    if not 0 <= tau_pf < 1:
        raise ValidationError("tau_pf must be in [0, 1)")
    raw = -tau_pf * (np.asarray(fN, float) + np.asarray(sCDI, float))
    delta = -(np.asarray(fN, float) - np.asarray(fR, float)) + raw
    if np.ndim(raw) == 0:
        return float(raw), float(delta)
    return raw, delta


@dataclass(frozen=True)
class ExactTax:
    after_tax: float
    linear_after_tax: float

    @property
    def correction(self) -> float:
        """Exact minus linear after-tax yield (>= 0 for y > 0)."""
        return self.after_tax - self.linear_after_tax


def tax_benchmark_exact(y, D, tau_pf: float = TAU_PF) -> ExactTax:
    """After-tax continuously compounded yield when the tax hits the payoff at D.

    (1/D) ln[1 + (1 - tau)(e^{yD} - 1)], evaluated with log1p/expm1.
    """
    if not 0 <= tau_pf < 1:
        raise ValidationError("tau_pf must be in [0, 1)")
    D = np.asarray(D, float)
    if np.any(D <= 0):
        raise ValidationError("holding period D must be > 0")
    y = np.asarray(y, float)
    after = np.log1p((1 - tau_pf) * np.expm1(y * D)) / D
    lin = (1 - tau_pf) * y
    if np.ndim(after) == 0:
        return ExactTax(float(after), float(lin))
    return ExactTax(after, lin)


def tau_fiscal_exact(fN, fR, sCDI, D, tau_pf: float = TAU_PF):
    """Residual benchmark with the exact after-tax CDI yield: -BE - (y - y_after)."""
    y = np.asarray(fN, float) + np.asarray(sCDI, float)
    ex = tax_benchmark_exact(y, D, tau_pf)
    out = -(np.asarray(fN, float) - np.asarray(fR, float)) - (y - np.asarray(ex.after_tax))
    return float(out) if np.ndim(out) == 0 else out


# decomposition ----------------------------------------------------------------

@dataclass(frozen=True)
class WedgeReport:
    mode: str
    tau_pf: float
    rows: pd.DataFrame
    summary: dict[str, float] = field(default_factory=dict)

    @property
    def eta(self) -> np.ndarray:
        return self.rows["eta"].to_numpy()

    def to_dict(self, bp: bool = True) -> dict:
        scale = 1 / BP if bp else 1.0
        money = ("mean", "median", "std", "tau_fiscal", "eta", "correction", "fN", "be", "s_cdi")
        rows = []
        for r in self.rows.to_dict("records"):
            rows.append({k: (_num(v * scale) if k in money else _num(v)) for k, v in r.items()})
        summ = {k: _num(v * scale) if k not in ("n_issuers", "total_obs") else _num(v)
                for k, v in self.summary.items()}
        return {"mode": self.mode, "tau_pf": self.tau_pf, "units": "bp" if bp else "decimal",
                "issuers": rows, "summary": summ}


def _num(v):
    if isinstance(v, (str, type(None))):
        return v
    if isinstance(v, (np.integer, int)):
        return int(v)
    v = float(v)
    return None if not np.isfinite(v) else v


def decompose(summaries: Sequence[IssuerSummary], mode: str = "linear", tau_pf: float = TAU_PF,
              cdi_yield: float | None = None) -> WedgeReport:
    """Per-issuer eta = mean residual - tau_fiscal, plus across-issuer means and SEs.

    tau_fiscal comes from the summary when already set, else from the
    issuer's time-averaged fN, BE and sCDI. In exact mode the finite-horizon
    correction at the issuer's average duration is added; its yield is
    fN + sCDI when available, else `cdi_yield`.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not summaries:
        raise ValidationError("no issuers to decompose")
    recs = []
    for s in summaries:
        if s.tau_fiscal is not None:
            tau_lin = s.tau_fiscal
        elif np.isfinite([s.fN, s.be, s.s_cdi]).all():
            tau_lin = tax_benchmark_linear(s.fN, s.fN - s.be, s.s_cdi, tau_pf)[1]
        else:
            raise ValidationError(f"{s.issuer}: need tau_fiscal or fN, BE and sCDI")
        corr = 0.0
        if mode == "exact":
            y = s.fN + s.s_cdi if np.isfinite([s.fN, s.s_cdi]).all() else cdi_yield
            if y is None:
                raise ValidationError(f"{s.issuer}: exact mode needs the CDI yield")
            corr = tax_benchmark_exact(y, s.avg_duration, tau_pf).correction
        tau = tau_lin + corr
        recs.append({"issuer": s.issuer, "mean": s.mean, "median": s.median, "std": s.std,
                     "n_obs": s.n_obs, "avg_duration": s.avg_duration, "dur_diff": s.dur_diff,
                     "fN": s.fN, "be": s.be, "s_cdi": s.s_cdi,
                     "tau_fiscal": tau, "correction": corr, "eta": s.mean - tau})
    rows = pd.DataFrame(recs)
    d = summary_stats(rows["mean"], rows["std"])
    t = summary_stats(rows["tau_fiscal"])
    e = summary_stats(rows["eta"])
    summary = {"n_issuers": d["n_issuers"], "mean_delta": d["mean"], "sd_delta": d["sd"], "se_delta": d["se"],
               "mean_std": d["mean_std"], "total_obs": int(rows["n_obs"].sum()),
               "mean_tau_fiscal": t["mean"], "se_tau_fiscal": t["se"],
               "mean_eta": e["mean"], "se_eta": e["se"], "mean_correction": float(rows["correction"].mean())}
    return WedgeReport(mode, tau_pf, rows, summary)


# regression -------------------------------------------------------------------

@dataclass(frozen=True)
class RegressionResult:
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    r2: float
    adj_r2: float
    p_beta_one: float
    n: int

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def to_dict(self) -> dict:
        return {"coef": dict(zip(self.names, map(float, self.coef))),
                "se": dict(zip(self.names, map(float, self.se))),
                "r2": self.r2, "adj_r2": self.adj_r2, "p_beta_one": self.p_beta_one, "n": self.n}


def ols(y: np.ndarray, X: np.ndarray, names: Sequence[str], test_index: int = 1,
        test_value: float = 1.0) -> RegressionResult:
    """OLS with intercept already in X, classical SEs, two-sided t test of one coefficient."""
    y, X = np.asarray(y, float), np.asarray(X, float)
    n, k = X.shape
    if n < k + 1:
        raise ValidationError(f"need at least {k + 1} observations for {k} coefficients")
    if np.linalg.matrix_rank(X) < k:
        raise ValidationError("collinear regressors")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ coef
    dof = n - k
    s2 = r @ r / dof
    se = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
    tss = np.sum((y - y.mean()) ** 2)
    r2 = 1 - (r @ r) / tss if tss > 0 else 1.0
    adj = 1 - (1 - r2) * (n - 1) / dof
    if se[test_index] > 0:
        p = float(2 * stats.t.sf(abs((coef[test_index] - test_value) / se[test_index]), dof))
    else:
        p = 1.0 if coef[test_index] == test_value else 0.0
    return RegressionResult(tuple(names), coef, se, float(r2), float(adj), p, n)


def cross_section_regression(report: WedgeReport, include_duration_diff: bool = False) -> RegressionResult:
    """Delta_i = alpha + beta tau_fiscal(i) [+ gamma (dur_ipca - dur_cdi)] + e; tests beta = 1."""
    rows = report.rows
    cols = [np.ones(len(rows)), rows["tau_fiscal"].to_numpy(float)]
    names = ["alpha", "beta"]
    if include_duration_diff:
        dd = rows["dur_diff"].to_numpy(float)
        if not np.all(np.isfinite(dd)):
            raise ValidationError("duration differential missing for some issuers")
        cols.append(dd)
        names.append("gamma")
    return ols(rows["mean"].to_numpy(float), np.column_stack(cols), names)


# regimes ----------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeSplit:
    break_date: np.datetime64
    reports: dict[str, WedgeReport]
    flagged: dict[str, list[str]]
    obs_per_issuer: dict[str, float]

    def difference_z(self) -> float:
        a, b = self.reports["before"].summary, self.reports["after"].summary
        return difference_z(a["mean_delta"], a["se_delta"], b["mean_delta"], b["se_delta"])


def difference_z(m1: float, se1: float, m2: float, se2: float) -> float:
    """z of m1 - m2 under independent errors."""
    return float((m1 - m2) / np.hypot(se1, se2))


def regime_split(issuers: Sequence[IssuerSeries], break_date, mode: str = "linear",
                 tau_pf: float = TAU_PF, min_days: int = 30) -> RegimeSplit:
    """Recompute residual statistics and tax benchmarks before and after `break_date`.

    The issuer set is fixed; an issuer with fewer than `min_days` dates in a
    window is flagged and left out of that window's report.
    """
    if not issuers:
        raise ValidationError("no issuers")
    if any(not s.matched for s in issuers):
        raise ValidationError("issuers must be matched to breakevens first")
    bd = np.datetime64(break_date, "D")
    reports, flagged, obs = {}, {}, {}
    for name, (start, end) in {"before": (None, bd), "after": (bd, None), "full": (None, None)}.items():
        parts = [s.window(start, end) for s in issuers]
        if all(len(p) == 0 for p in parts):
            raise ValidationError(f"regime {name!r} is empty for break date {bd}")
        keep = [p for p in parts if len(p) >= min_days]
        flagged[name] = [p.issuer for p in parts if len(p) < min_days]
        if not keep:
            raise ValidationError(f"regime {name!r}: no issuer has {min_days} dates")
        reports[name] = decompose([compute_delta(p) for p in keep], mode, tau_pf)
        obs[name] = float(np.mean([len(p) for p in keep]))
    return RegimeSplit(bd, reports, flagged, obs)


def delta_frame(issuers: Sequence[IssuerSeries]) -> pd.DataFrame:
    """Long per-issuer per-date residual series for plotting."""
    parts = [pd.DataFrame({"issuer": s.issuer, "date": s.dates.astype(str), "delta": s.delta,
                           "be": s.be, "s_cdi": s.s_cdi, "s_ipca": s.s_ipca})
             for s in issuers]
    cols = ["issuer", "date", "delta", "be", "s_cdi", "s_ipca"]
    return pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=cols)


# bundled per-issuer table -----------------------------------------------------

def load_wedge_fixture(path=None) -> list[IssuerSummary]:
    """Per-issuer rows (bp, durations in years) as IssuerSummary in decimals.

    tau_fiscal is taken from the file; mean, median, std and n_obs come from
    the time-series statistics columns.
    """
    if path is None:
        path = resources.files("trihjm") / "data" / "wedge_issuers.csv"
    df = pd.read_csv(path, float_precision="round_trip")
    need = {"issuer", "mean_bp", "median_bp", "std_bp", "n_obs", "tau_fiscal_bp", "avg_duration"}
    if not need <= set(df.columns):
        raise ValidationError(f"wedge fixture needs columns {sorted(need)}")
    return [IssuerSummary(r.issuer, r.mean_bp * BP, r.median_bp * BP, r.std_bp * BP, int(r.n_obs),
                          float(r.avg_duration), tau_fiscal=r.tau_fiscal_bp * BP)
            for r in df.itertuples()]


# synthetic inputs -------------------------------------------------------------

def synthetic_constituents(nominal, real, cdi, n_issuers: int = 6, seed: int = 0,
                           wedge: float = -640 * BP, issuer_sd: float = 25 * BP,
                           noise_sd: float = 60 * BP, tickers_per_family: int = 2,
                           ) -> tuple[ConstituentPanel, BreakevenPanel]:
    """Dual-listed constituents built on top of curve histories.

    Each issuer has a fixed duration per ticker; its CDI spread is the index
    spread at the nearest spread pillar plus noise, and its IPCA spread is
    set so the residual against the nearest-pillar breakeven is
    wedge + issuer effect + noise. Returns the constituents and the
    breakeven panel on the common dates and rate pillars of both curves.
    """
    rng = np.random.default_rng(seed)
    common = np.intersect1d(np.intersect1d(nominal.dates, real.dates), cdi.dates)
    tenors = [t for t in nominal.grid.tenors if t in real.grid.tenors]
    fN = nominal.values[np.searchsorted(nominal.dates, common)][:, [nominal.grid.index(t) for t in tenors]]
    fR = real.values[np.searchsorted(real.dates, common)][:, [real.grid.index(t) for t in tenors]]
    be_panel = BreakevenPanel(common, PillarGrid(tuple(tenors)), fN, fR)
    s_rows = cdi.values[np.searchsorted(cdi.dates, common)]
    s_tenors = cdi.grid.array
    rows = []
    for i in range(n_issuers):
        name = f"ISSUER{i + 1:02d}"
        effect = rng.normal(0.0, issuer_sd)
        dur = {fam: rng.uniform(2.5, 4.5, tickers_per_family) for fam in ("CDI", "IPCA")}
        for fam, ds in dur.items():
            for k, d in enumerate(ds):
                s_base = s_rows[:, int(np.argmin(np.abs(s_tenors - d)))]
                s_base = np.where(np.isnan(s_base), np.nanmean(s_rows), s_base)
                if fam == "CDI":
                    spread = s_base + rng.normal(0.0, noise_sd / 4, common.size)
                else:
                    mid = 0.5 * (dur["CDI"].mean() + d)
                    be = be_panel.be[:, int(np.argmin(np.abs(np.asarray(tenors) - mid)))]
                    spread = s_base + be + wedge + effect + rng.normal(0.0, noise_sd, common.size)
                for j, day in enumerate(common):
                    rows.append((str(day), fam, name, f"{name}-{fam}{k}", spread[j], d, 1.0 + k))
    frame = pd.DataFrame(rows, columns=list(ConstituentPanel.COLUMNS))
    return ConstituentPanel(frame), be_panel


def write_constituents(panel: ConstituentPanel, path) -> None:
    df = panel.frame.copy()
    df["date"] = df["date"].dt.strftime("%Y-%m-%d")
    df.to_csv(path, index=False, float_format="%.17g")
