"""Curve, spread and constituent histories: CSV ingestion, alignment,
weekly sampling and synthetic generation."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError

RATE_KINDS = ("nominal_fwd", "real_fwd")
SPREAD_KINDS = ("cdi_spread", "ipca_spread")
SERIES_KINDS = RATE_KINDS + SPREAD_KINDS
FAMILIES = ("CDI", "IPCA")
FRIDAY = 4

DEFAULT_RATE_PILLARS = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
DEFAULT_SPREAD_PILLARS = (1.0, 2.0, 3.0, 5.0)


@dataclass(frozen=True)
class PillarGrid:
    """Strictly increasing, positive times to maturity in years."""

    tenors: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.tenors, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValidationError("pillar grid must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise ValidationError("pillar tenors must be finite and > 0")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("pillar tenors must be strictly increasing")
        object.__setattr__(self, "tenors", tuple(float(x) for x in t))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.tenors)

    def __len__(self) -> int:
        return len(self.tenors)

    def index(self, tenor: float) -> int:
        hits = np.flatnonzero(np.isclose(self.array, tenor, rtol=0, atol=1e-9))
        if hits.size == 0:
            raise ValidationError(f"tenor {tenor} not on grid {self.tenors}")
        return int(hits[0])

    def subset(self, tenors: Sequence[float]) -> "PillarGrid":
        """Grid of the listed tenors in increasing order."""
        return PillarGrid(tuple(self.tenors[i] for i in sorted({self.index(t) for t in tenors})))


def _as_dates(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]")


@dataclass(frozen=True)
class CurvePanel:
    """Date x tenor history of forwards or spreads (decimal p.a.).

    Missing cells are NaN and are only allowed for spread kinds.
    """

    dates: np.ndarray
    grid: PillarGrid
    values: np.ndarray
    kind: str

    def __post_init__(self):
        dates = _as_dates(self.dates)
        values = np.array(self.values, dtype=float)
        if self.kind not in SERIES_KINDS:
            raise ValidationError(f"unknown series kind {self.kind!r}")
        if values.ndim != 2 or values.shape != (dates.size, len(self.grid)):
            raise ValidationError(
                f"values shape {values.shape} does not match "
                f"{dates.size} dates x {len(self.grid)} tenors"
            )
        if dates.size > 1 and np.any(np.diff(dates).astype(int) <= 0):
            raise ValidationError("panel dates must be strictly increasing")
        if self.kind in RATE_KINDS and np.isnan(values).any():
            raise ValidationError(f"missing cells not allowed in {self.kind} panel")
        if np.isinf(values).any():
            raise ValidationError("panel values must be finite or missing")
        values.setflags(write=False)
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.dates.size

    @property
    def is_spread(self) -> bool:
        return self.kind in SPREAD_KINDS

    def select(self, mask) -> "CurvePanel":
        mask = np.asarray(mask)
        return CurvePanel(self.dates[mask], self.grid, self.values[mask], self.kind)

    def window(self, start=None, end=None) -> "CurvePanel":
        """Rows with start <= date <= end (either bound optional)."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            mask &= self.dates <= np.datetime64(end, "D")
        return self.select(mask)

    def with_tenors(self, tenors: Sequence[float]) -> "CurvePanel":
        idx = sorted({self.grid.index(t) for t in tenors})
        return CurvePanel(self.dates, self.grid.subset(tenors), self.values[:, idx], self.kind)

    def column(self, tenor: float) -> np.ndarray:
        return self.values[:, self.grid.index(tenor)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.values,
            index=pd.DatetimeIndex(self.dates, name="date"),
            columns=list(self.grid.tenors),
        )


def _fmt_tenor(t: float) -> str:
    return f"{t:g}"


def write_curve_panel(panel: CurvePanel, path) -> None:
    """Write a panel as `date,<tenor>,...`; floats use round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + [_fmt_tenor(t) for t in panel.grid.tenors])
        for d, row in zip(panel.dates, panel.values):
            w.writerow([str(d)] + ["" if np.isnan(v) else repr(float(v)) for v in row])


def load_curve_panel(path, kind: str) -> CurvePanel:
    """Read a curve/spread CSV with ISO dates and decimal-year tenor headers."""
    if kind not in SERIES_KINDS:
        raise ValidationError(f"unknown series kind {kind!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    header, body = rows[0], [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(header) < 2 or header[0].strip().lower() != "date":
        raise ValidationError(f"{path}: malformed header, expected 'date,<tenor>,...'")
    try:
        tenors = [float(h) for h in header[1:]]
    except ValueError:
        raise ValidationError(f"{path}: malformed header, tenor columns must be numeric")
    if np.any(np.diff(tenors) <= 0):
        raise ValidationError(f"{path}: tenor columns not increasing")
    if not body:
        raise ValidationError(f"{path}: no data rows")

    dates, values = [], []
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        try:
            d = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise ValidationError(f"{path}: row {i} has unparseable date {row[0]!r}")
        cells = []
        for c in row[1:]:
            c = c.strip()
            if c == "":
                if kind in RATE_KINDS:
                    raise ValidationError(f"{path}: row {i} ({d}) has a missing cell in a rate panel")
                cells.append(np.nan)
            else:
                try:
                    cells.append(float(c))
                except ValueError:
                    raise ValidationError(f"{path}: row {i} has non-numeric value {c!r}")
        dates.append(d)
        values.append(cells)

    seen = set()
    for i, d in enumerate(dates):
        if d in seen:
            raise ValidationError(f"{path}: duplicate date {d.isoformat()}")
        seen.add(d)
        if i and d < dates[i - 1]:
            raise ValidationError(f"{path}: non-monotone dates at {d.isoformat()}")
    return CurvePanel(np.array(dates, dtype="datetime64[D]"), PillarGrid(tuple(tenors)),
                      np.array(values, dtype=float), kind)


def align_panels(panels: Sequence[CurvePanel]) -> list[CurvePanel]:
    """Restrict every panel to the intersection of their dates."""
    if len(panels) < 2:
        raise ValidationError("need ≥2 panels")
    common = panels[0].dates
    for p in panels[1:]:
        common = np.intersect1d(common, p.dates)
    if common.size == 0:
        raise ValidationError("panels share no common dates")
    return [p.select(np.isin(p.dates, common)) for p in panels]


def to_weekly(panel: CurvePanel, anchor_weekday: int = FRIDAY,
              include_partial: bool = True) -> CurvePanel:
    """Keep the last observation on or before each anchor weekday.

    Weeks run from the day after one anchor through the next anchor. A
    trailing week that ends after the last observation is kept when
    `include_partial` is set (its row is the last available close).
    """
    if not 0 <= anchor_weekday <= 6:
        raise ValidationError("anchor_weekday must be in 0..6 (Mon..Sun)")
    if len(panel) == 0:
        return panel
    # numpy weekday: 1970-01-01 was a Thursday (weekday 3)
    wd = (panel.dates.astype("int64") + 3) % 7
    anchor = panel.dates + ((anchor_weekday - wd) % 7).astype("timedelta64[D]")
    last_in_week = np.r_[anchor[1:] != anchor[:-1], True]
    if not include_partial:
        last_in_week[-1] = anchor[-1] == panel.dates[-1]
    return panel.select(last_in_week)


@dataclass(frozen=True)
class ConstituentPanel:
    """Index constituents: one row per (date, family, ticker)."""

    frame: pd.DataFrame

    COLUMNS = ("date", "family", "issuer", "ticker", "spread", "duration", "weight")

    def __post_init__(self):
        df = self.frame
        missing = [c for c in self.COLUMNS if c not in df.columns]
        if missing:
            raise ValidationError(f"constituent panel missing columns {missing}")
        df = df.loc[:, list(self.COLUMNS)].copy()
        df["date"] = pd.to_datetime(df["date"]).dt.normalize()
        df["family"] = df["family"].astype(str).str.upper()
        bad = set(df["family"]) - set(FAMILIES)
        if bad:
            raise ValidationError(f"unknown family {sorted(bad)}")
        for c in ("spread", "duration", "weight"):
            df[c] = df[c].astype(float)
        if (df["weight"] < 0).any():
            raise ValidationError("constituent weights must be >= 0")
        if (df["duration"] <= 0).any():
            raise ValidationError("constituent durations must be > 0")
        dup = df.duplicated(["date", "family", "ticker"])
        if dup.any():
            r = df[dup].iloc[0]
            raise ValidationError(
                f"duplicate constituent row ({r['date'].date()}, {r['family']}, {r['ticker']})"
            )
        df = df.sort_values(["date", "family", "issuer", "ticker"], kind="stable").reset_index(drop=True)
        object.__setattr__(self, "frame", df)

    def family(self, family: str) -> pd.DataFrame:
        family = family.upper()
        if family not in FAMILIES:
            raise ValidationError(f"unknown family {family!r}")
        return self.frame[self.frame["family"] == family]


def load_constituents(path, ipca_lag_days: int = 0) -> ConstituentPanel:
    """Read `date,family,issuer,ticker,spread,duration,weight`.

    `ipca_lag_days` shifts IPCA-family observation dates by that many
    business days to align them with the nominal publication date.
    """
    df = pd.read_csv(path, dtype={"issuer": str, "ticker": str}, float_precision="round_trip")
    if df.empty:
        raise ValidationError(f"{path}: no data rows")
    panel = ConstituentPanel(df)
    if ipca_lag_days:
        panel = shift_family_dates(panel, "IPCA", ipca_lag_days)
    return panel


def shift_family_dates(panel: ConstituentPanel, family: str, n_business_days: int) -> ConstituentPanel:
    df = panel.frame.copy()
    rows = df["family"] == family.upper()
    d = df.loc[rows, "date"].to_numpy().astype("datetime64[D]")
    df.loc[rows, "date"] = pd.to_datetime(np.busday_offset(d, n_business_days, roll="forward"))
    return ConstituentPanel(df)


@dataclass(frozen=True)
class IndexSeries:
    """Price-index levels (e.g. monthly IPCA), one per date."""

    dates: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        dates = _as_dates(self.dates)
        levels = np.asarray(self.levels, dtype=float)
        if dates.shape != levels.shape:
            raise ValidationError("index dates and levels differ in length")
        if np.any(levels <= 0):
            raise ValidationError("index levels must be positive")
        if dates.size > 1 and np.any(np.diff(dates).astype(int) <= 0):
            raise ValidationError("index dates must be strictly increasing")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "levels", levels)

    def log_returns(self) -> tuple[np.ndarray, np.ndarray]:
        """(dates of the later observation, ln(I_t / I_{t-1}))."""
        return self.dates[1:], np.diff(np.log(self.levels))


def load_index_series(path) -> IndexSeries:
    df = pd.read_csv(path, float_precision="round_trip")
    if df.empty:
        raise ValidationError(f"{path}: no data rows")
    if list(df.columns[:2]) != ["date", "index"]:
        raise ValidationError(f"{path}: expected header 'date,index'")
    return IndexSeries(pd.to_datetime(df["date"]).to_numpy().astype("datetime64[D]"),
                       df["index"].to_numpy(float))


def write_index_series(series: IndexSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "index"])
        for d, v in zip(series.dates, series.levels):
            w.writerow([str(d), repr(float(v))])


def month_end_levels(dates, levels) -> IndexSeries:
    """Last level in each calendar month."""
    dates = _as_dates(dates)
    months = dates.astype("datetime64[M]")
    last = np.r_[months[1:] != months[:-1], True]
    return IndexSeries(dates[last], np.asarray(levels, dtype=float)[last])


@dataclass
class SyntheticHistory:
    nominal: CurvePanel
    real: CurvePanel
    cdi: CurvePanel
    ipca: CurvePanel
    inflation_index: IndexSeries
    credit_index: IndexSeries = field(repr=False, default=None)

    @property
    def panels(self) -> tuple[CurvePanel, CurvePanel, CurvePanel, CurvePanel]:
        return self.nominal, self.real, self.cdi, self.ipca


def generate_synthetic_history(spec, init, n_weeks: int, seed: int,
                               start: dt.date = dt.date(2021, 1, 8),
                               rate_pillars: Sequence[float] = DEFAULT_RATE_PILLARS,
                               spread_pillars: Sequence[float] = DEFAULT_SPREAD_PILLARS,
                               ) -> SyntheticHistory:
    """Run one weekly path from `init` under `spec` and record pillar histories.

    Row k is the state after k weekly steps, dated `start + 7k` days.
    """
    from .sim import SimConfig, run_paths

    if n_weeks < 30:
        raise ValidationError(f"n_weeks={n_weeks} too short for calibration round-trip (need >= 30)")
    record = tuple(sorted(set(rate_pillars) | set(spread_pillars)))
    cfg = SimConfig(dt=1.0 / 52.0, horizon=(n_weeks - 1) / 52.0, n_paths=1, seed=seed, record_tenors=record)
    out = run_paths(init, spec, cfg)
    dates = np.datetime64(start, "D") + 7 * np.arange(n_weeks)

    def panel(name, tenors, kind):
        idx = [record.index(t) for t in tenors]
        return CurvePanel(dates, PillarGrid(tuple(tenors)), out.curves[name][0][:, idx], kind)

    return SyntheticHistory(
        nominal=panel("fN", rate_pillars, "nominal_fwd"),
        real=panel("fR", rate_pillars, "real_fwd"),
        cdi=panel("sCDI", spread_pillars, "cdi_spread"),
        ipca=panel("sIPCA", spread_pillars, "ipca_spread"),
        inflation_index=IndexSeries(dates, out.I[0]),
        credit_index=IndexSeries(dates, out.J[0]),
    )


def generate_synthetic_panel(spec, init, n_weeks: int, seed: int, **kwargs):
    """Four weekly panels (nominal, real, CDI, IPCA) simulated from `spec`."""
    return generate_synthetic_history(spec, init, n_weeks, seed, **kwargs).panels


def write_history(history: SyntheticHistory, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "nominal": out_dir / "nominal_fwd.csv",
        "real": out_dir / "real_fwd.csv",
        "cdi": out_dir / "cdi_spread.csv",
        "ipca": out_dir / "ipca_spread.csv",
        "ipca_index": out_dir / "ipca_monthly.csv",
    }
    for key, p in zip(("nominal", "real", "cdi", "ipca"), history.panels):
        write_curve_panel(p, paths[key])
    inf = history.inflation_index
    write_index_series(month_end_levels(inf.dates, inf.levels), paths["ipca_index"])
    return paths
