"""Monte Carlo of the nominal / real / credit-spread forward curves on a
time-to-maturity grid, with the inflation and credit exchange rates."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SimulationError, ValidationError
from .volarch import (BlockVolSpec, block_vol, hjm_drift_own, real_drift,
                      spread_drift, weighted_inner)

CURVE_NAMES = ("fN", "fR", "sCDI")
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class InitialCurves:
    """Initial nominal forward, real forward and CDI spread curves at pillar tenors."""

    tenors: np.ndarray
    fN: np.ndarray
    fR: np.ndarray
    sCDI: np.ndarray
    I0: float = 1.0
    J0: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.tenors, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValidationError("initial-curve tenors must be increasing and >= 0")
        object.__setattr__(self, "tenors", t)
        for name in CURVE_NAMES:
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != t.shape or not np.all(np.isfinite(v)):
                raise ValidationError(f"initial {name} must be finite, one value per tenor")
            object.__setattr__(self, name, v)
        if not (self.I0 > 0 and self.J0 > 0):
            raise ValidationError("initial exchange rates must be > 0")

    def with_chi(self, chi) -> "InitialCurves":
        """Absorb a reconciliation adjustment chi(tau) into the initial CDI spread."""
        return replace(self, sCDI=self.sCDI + np.asarray(chi(self.tenors), dtype=float))

    def on_grid(self, grid: np.ndarray) -> dict[str, np.ndarray]:
        """Linear interpolation onto `grid`, flat outside the pillar range.

        Grid points that coincide with pillars receive the pillar values
        bit-for-bit.
        """
        out = {}
        pos = np.searchsorted(self.tenors, grid)
        hit = (pos < self.tenors.size) & (self.tenors[np.minimum(pos, self.tenors.size - 1)] == grid)
        for name in CURVE_NAMES:
            vals = np.interp(grid, self.tenors, getattr(self, name))
            vals[hit] = getattr(self, name)[pos[hit]]
            out[name] = vals
        return out


def load_initial_curves(path) -> InitialCurves:
    """Read `tau,fN,fR,sCDI` (decimal p.a.)."""
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"tau", "fN", "fR", "sCDI"} - set(df.columns)
    if missing:
        raise ValidationError(f"{path}: missing columns {sorted(missing)}")
    if df.empty:
        raise ValidationError(f"{path}: no data rows")
    return InitialCurves(df["tau"].to_numpy(float), df["fN"].to_numpy(float),
                         df["fR"].to_numpy(float), df["sCDI"].to_numpy(float))


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int
    record_tenors: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
    record_every: int = 1
    record_curves: bool = True
    antithetic: bool = False
    grid_max: float | None = None
    max_abort_fraction: float = 0.001
    chunk_size: int = 64

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be > 0")
        if self.horizon < self.dt * (1 - 1e-9):
            raise ValidationError("horizon must be >= dt")
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.antithetic and self.n_paths % 2:
            raise ValidationError("antithetic sampling needs an even number of paths")
        if self.record_every < 1:
            raise ValidationError("record_every must be >= 1")
        if any(t < 0 for t in self.record_tenors):
            raise ValidationError("record tenors must be >= 0")
        object.__setattr__(self, "record_tenors", tuple(float(t) for t in self.record_tenors))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.record_every)
        return steps if steps[-1] == self.n_steps else np.r_[steps, self.n_steps]


def build_grid(pillars: Sequence[float], dt: float, horizon: float, grid_max: float | None = None) -> np.ndarray:
    """Uniform grid of spacing min(dt, 0.25) from 0 to max(10, pillars) + horizon.

    Pillars are inserted exactly; a uniform node within `SNAP_TOL` of a
    pillar is replaced by it.
    """
    pillars = np.asarray(sorted(set(float(p) for p in pillars)), dtype=float)
    h = min(dt, 0.25)
    top = grid_max if grid_max is not None else max(10.0, pillars.max(initial=0.0)) + horizon
    n = int(np.ceil(top / h - 1e-9))
    grid = np.arange(n + 1) * h
    for p in pillars:
        k = int(np.argmin(np.abs(grid - p)))
        if abs(grid[k] - p) <= SNAP_TOL:
            grid[k] = p
        else:
            grid = np.sort(np.r_[grid, p])
    return grid


@dataclass(frozen=True)
class _Transport:
    """Linear interpolation of a grid function at tau + dt, flat beyond the last node."""

    idx: np.ndarray
    w: np.ndarray
    is_shift: bool

    @classmethod
    def build(cls, grid: np.ndarray, dt: float) -> "_Transport":
        target = grid + dt
        idx = np.clip(np.searchsorted(grid, target, side="right") - 1, 0, grid.size - 2)
        w = (target - grid[idx]) / (grid[idx + 1] - grid[idx])
        w = np.clip(w, 0.0, 1.0)
        w[np.abs(w) < SNAP_TOL] = 0.0
        w[np.abs(w - 1) < SNAP_TOL] = 1.0
        # express w == 1 as weight 0 on the next node so exact hits copy values
        hit = w == 1.0
        idx = np.where(hit & (idx + 1 < grid.size), idx + 1, idx)
        w = np.where(hit, 0.0, w)
        beyond = target >= grid[-1]
        idx[beyond], w[beyond] = grid.size - 1, 0.0
        shift = bool(np.all(w == 0.0) and np.array_equal(idx, np.minimum(np.arange(grid.size) + 1, grid.size - 1)))
        return cls(idx, w, shift)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        if self.is_shift:
            out = np.empty_like(f)
            out[..., :-1] = f[..., 1:]
            out[..., -1] = f[..., -1]
            return out
        nxt = np.minimum(self.idx + 1, self.w.size - 1)
        return f[..., self.idx] * (1.0 - self.w) + f[..., nxt] * self.w


def transport(values, grid, dt: float) -> np.ndarray:
    """Roll a curve forward by dt: new value at tau is the old value at tau + dt."""
    grid = np.asarray(grid, dtype=float)
    if dt >= grid[-1]:
        raise ValidationError("dt must be below the maximum grid tenor")
    return _Transport.build(grid, dt)(np.asarray(values, dtype=float))


def cholesky_factor(rho) -> np.ndarray:
    """Lower-triangular L with L L' = rho."""
    rho = np.asarray(rho, dtype=float)
    try:
        return np.linalg.cholesky(rho)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("correlation matrix is not positive definite") from exc


@dataclass(frozen=True)
class _Coefficients:
    """Deterministic per-grid drift and volatility terms for one (spec, grid, dt).

    `loads[c]` = (factor slice, matrix) for curve c in (fN, fR, sCDI); the
    matrix stacks the curve's block volatilities (one row per factor of its
    block) over a last row holding the drift, so that
    [dW_block, dt] @ matrix gives the drift-plus-shock increment.
    """

    grid: np.ndarray
    dt: float
    chol: np.ndarray
    loads: tuple[tuple[slice, np.ndarray], ...]
    sigma_I: np.ndarray
    sigma_J: np.ndarray
    half_var_I: float
    half_var_J: float
    transport: _Transport

    @classmethod
    def build(cls, spec: BlockVolSpec, grid: np.ndarray, dt: float) -> "_Coefficients":
        mu = (hjm_drift_own(spec, "N", grid), real_drift(spec, grid), spread_drift(spec, grid))
        sl = spec.block_slices
        loads = tuple((sl[b], np.vstack([block_vol(spec, b, grid).T[sl[b]], drift[None]]))
                      for b, drift in zip(("N", "R", "S"), mu))
        sI, sJ = spec.sigma_I.alpha, spec.sigma_J.alpha
        return cls(grid, dt, cholesky_factor(spec.rho), loads, np.asarray(sI), np.asarray(sJ),
                   0.5 * weighted_inner(spec, sI, sI), 0.5 * weighted_inner(spec, sJ, sJ),
                   _Transport.build(grid, dt))

    def drift(self, curve: int) -> np.ndarray:
        return self.loads[curve][1][-1]


def _pre_step(F: np.ndarray, X: np.ndarray, co: _Coefficients, xi: np.ndarray, node: int):
    rN = F[0, :, node].copy()
    rR = F[1, :, node].copy()
    rC = rN + F[2, :, node]
    dW = (xi @ co.chol.T) * np.sqrt(co.dt)
    dt_col = np.full((dW.shape[0], 1), co.dt)
    return rN, rR, rC, dW, dt_col


def _fx_update(X: np.ndarray, co: _Coefficients, dW: np.ndarray, rN, rR, rC) -> None:
    dt = co.dt
    X[:, 0] *= np.exp((rN - rR - co.half_var_I) * dt + dW @ co.sigma_I)
    X[:, 1] *= np.exp((rN - rC - co.half_var_J) * dt + dW @ co.sigma_J)
    X[:, 2] *= np.exp(rN * dt)
    X[:, 3] *= np.exp(rR * dt)
    X[:, 4] *= np.exp(rC * dt)


def _kernel(F: np.ndarray, X: np.ndarray, co: _Coefficients, xi: np.ndarray) -> None:
    """Advance curves F (3, n, G) and X = (I, J, BN, BR, BC) (n, 5) in place."""
    rN, rR, rC, dW, dt_col = _pre_step(F, X, co, xi, 0)
    F[...] = co.transport(F)
    for c, (sl, load) in enumerate(co.loads):
        F[c] += np.hstack([dW[:, sl], dt_col]) @ load
    _fx_update(X, co, dW, rN, rR, rC)


def _kernel_offset(F: np.ndarray, X: np.ndarray, co: _Coefficients, xi: np.ndarray,
                   offset: int, width: int, buf: np.ndarray) -> None:
    """Same update for a uniform grid where transport is a one-node shift.

    Grid node j lives at F[..., offset + j] before the step and at
    F[..., offset + 1 + j] after it, so the shift itself moves no data.
    Only the `width` nodes that can still reach a recorded tenor are
    updated. `buf` is scratch space of at least n * width elements.
    """
    rN, rR, rC, dW, dt_col = _pre_step(F, X, co, xi, offset)
    inc = buf[: dW.shape[0] * width].reshape(dW.shape[0], width)
    for c, (sl, load) in enumerate(co.loads):
        np.matmul(np.hstack([dW[:, sl], dt_col]), load[:, :width], out=inc)
        F[c, :, offset + 1: offset + 1 + width] += inc
    _fx_update(X, co, dW, rN, rR, rC)


def _finite(F: np.ndarray, X: np.ndarray, nodes) -> np.ndarray:
    """Per-path check of the exchange rates, bank accounts and the given curve nodes."""
    vals = F[:, :, nodes].sum(axis=(0, 2)) + X.sum(axis=1)
    return np.isfinite(vals) & (X > 0).all(axis=1)


@dataclass
class SimState:
    """State of one or more paths (leading axis = path when batched)."""

    grid: np.ndarray
    fN: np.ndarray
    fR: np.ndarray
    sCDI: np.ndarray
    I: np.ndarray | float
    J: np.ndarray | float
    BN: np.ndarray | float = 1.0
    BR: np.ndarray | float = 1.0
    BC: np.ndarray | float = 1.0
    t: float = 0.0

    @property
    def K(self):
        return self.J / self.I

    def short_rates(self):
        """(r_N, r_R, r_C) from the tau = 0 node."""
        rN = self.fN[..., 0]
        return rN, self.fR[..., 0], rN + self.sCDI[..., 0]

    @property
    def sIPCA(self):
        return self.sCDI + self.fN - self.fR

    @classmethod
    def initial(cls, init: InitialCurves, grid: np.ndarray) -> "SimState":
        g = np.asarray(grid, dtype=float)
        if g[0] != 0.0:
            raise ValidationError("simulation grid must start at tau = 0")
        c = init.on_grid(g)
        return cls(g, c["fN"], c["fR"], c["sCDI"], init.I0, init.J0)


def _stack(state: SimState) -> tuple[np.ndarray, np.ndarray]:
    F = np.stack([np.atleast_2d(state.fN), np.atleast_2d(state.fR), np.atleast_2d(state.sCDI)])
    X = np.column_stack([np.atleast_1d(np.asarray(v, dtype=float)) * np.ones(F.shape[1])
                         for v in (state.I, state.J, state.BN, state.BR, state.BC)])
    return F.astype(float, copy=True), X


def _advance(state: SimState, co: _Coefficients, xi: np.ndarray) -> SimState:
    batched = np.ndim(state.fN) == 2
    F, X = _stack(state)
    _kernel(F, X, co, np.atleast_2d(xi))
    if not batched:
        F, X = F[:, 0], X[0]
    return SimState(state.grid, F[0], F[1], F[2], X[..., 0], X[..., 1],
                    X[..., 2], X[..., 3], X[..., 4], state.t + co.dt)


def step(state: SimState, spec: BlockVolSpec, xi, dt: float) -> SimState:
    """One time step: transport, drift, correlated shock, FX and bank-account updates.

    Short rates are read before the step and used for both the exchange-rate
    drift and the bank-account accrual.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != spec.m:
        raise ValidationError(f"xi must have length {spec.m}")
    new = _advance(state, _Coefficients.build(spec, np.asarray(state.grid), dt), xi)
    if not _finite_rows(new).all():
        raise SimulationError("non-finite state after step")
    return new


def _finite_rows(s: SimState) -> np.ndarray:
    F, X = _stack(s)
    return _finite(F, X, slice(None))


@dataclass
class SimOutput:
    """Recorded path values; arrays are indexed (path, record time[, tenor])."""

    times: np.ndarray
    tenors: np.ndarray
    curves: dict[str, np.ndarray]
    I: np.ndarray
    J: np.ndarray
    BN: np.ndarray
    BR: np.ndarray
    BC: np.ndarray
    short_rates: dict[str, np.ndarray]
    aborted: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> np.ndarray:
        return self.J / self.I

    @property
    def n_paths(self) -> int:
        return self.I.shape[0]

    def inflation_ratio(self) -> np.ndarray:
        """I * B_R / B_N, a martingale under the nominal measure."""
        return self.I * self.BR / self.BN

    def credit_ratio(self) -> np.ndarray:
        """J * B_C / B_N, a martingale under the nominal measure."""
        return self.J * self.BC / self.BN

    def time_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if hits.size == 0:
            raise ValidationError(f"time {t} is not a recorded date")
        return int(hits[0])

    def to_csv(self, path) -> None:
        """One row per (path, record time); curve columns are `<name>_<tenor>`."""
        names = [n for n in ("fN", "fR", "sCDI", "sIPCA") if n in self.curves]
        cols = ["path", "t", "I", "J", "K", "BN", "BR", "BC", "rN", "rR", "rC"]
        cols += [f"{n}_{t:g}" for n in names for t in self.tenors]
        K = self.K
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for p in range(self.n_paths):
                for k, t in enumerate(self.times):
                    row = [p, repr(float(t))]
                    row += [repr(float(a[p, k])) for a in (self.I, self.J, K, self.BN, self.BR, self.BC,
                                                            self.short_rates["rN"], self.short_rates["rR"],
                                                            self.short_rates["rC"])]
                    for n in names:
                        row += [repr(float(v)) for v in self.curves[n][p, k]]
                    w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SimOutput":
        import pandas as pd

        df = pd.read_csv(path, float_precision="round_trip")
        need = {"path", "t", "I", "J", "BN", "BR", "BC"}
        if not need <= set(df.columns):
            raise ValidationError(f"{path}: missing columns {sorted(need - set(df.columns))}")
        df = df.sort_values(["path", "t"], kind="stable")
        n_paths = df["path"].nunique()
        times = np.sort(df["t"].unique())
        if len(df) != n_paths * times.size:
            raise ValidationError(f"{path}: ragged (path, t) layout")

        def arr(col):
            return df[col].to_numpy(float).reshape(n_paths, times.size)

        curves, tenors = {}, None
        for n in ("fN", "fR", "sCDI", "sIPCA"):
            cs = [c for c in df.columns if c.startswith(n + "_")]
            if cs:
                tenors = np.array([float(c.split("_", 1)[1]) for c in cs])
                curves[n] = df[cs].to_numpy(float).reshape(n_paths, times.size, len(cs))
        rates = {r: arr(r) for r in ("rN", "rR", "rC") if r in df.columns}
        return cls(times, np.zeros(0) if tenors is None else tenors, curves, arr("I"), arr("J"),
                   arr("BN"), arr("BR"), arr("BC"), rates, np.zeros(n_paths, dtype=bool))


def path_streams(seed: int, n_paths: int, antithetic: bool = False) -> list[np.random.SeedSequence]:
    """One child seed sequence per independent path (per antithetic pair)."""
    return np.random.SeedSequence(seed).spawn(n_paths // 2 if antithetic else n_paths)


def path_normals(seed: int, n_paths: int, n_steps: int, m: int, antithetic: bool = False,
                 first: int = 0, count: int | None = None,
                 streams: Sequence[np.random.SeedSequence] | None = None) -> np.ndarray:
    """Standard normals (count, n_steps, m) for paths first..first+count-1.

    Path i draws from the i-th child of SeedSequence(seed) (with antithetic
    sampling, path 2k+1 uses the negated draws of path 2k), so each path's
    shocks do not depend on how paths are batched.
    """
    count = n_paths - first if count is None else count
    children = path_streams(seed, n_paths, antithetic) if streams is None else streams
    out = np.empty((count, n_steps, m))
    for j, p in enumerate(range(first, first + count)):
        src = p // 2 if antithetic else p
        z = np.random.Generator(np.random.PCG64(children[src])).standard_normal((n_steps, m))
        out[j] = -z if antithetic and p % 2 else z
    return out


def run_paths(init: InitialCurves, spec: BlockVolSpec, cfg: SimConfig) -> SimOutput:
    """Simulate `cfg.n_paths` paths and record pillar values at the recording steps."""
    grid = build_grid(tuple(cfg.record_tenors) + tuple(init.tenors), cfg.dt, cfg.horizon, cfg.grid_max)
    if max(cfg.record_tenors, default=0.0) > grid[-1]:
        raise ValidationError("record tenors exceed the simulation grid")
    co = _Coefficients.build(spec, grid, cfg.dt)
    rec_steps = cfg.record_steps()
    rec_pos = {int(s): k for k, s in enumerate(rec_steps)}
    rec_cols = np.searchsorted(grid, cfg.record_tenors)
    if not np.allclose(grid[rec_cols], cfg.record_tenors, rtol=0, atol=SNAP_TOL):
        raise SimulationError("record tenors are not grid nodes")

    P, R, T = cfg.n_paths, rec_steps.size, len(cfg.record_tenors)
    curves = {n: np.empty((P, R, T)) for n in CURVE_NAMES} if cfg.record_curves else {}
    scal = {n: np.empty((P, R)) for n in ("I", "J", "BN", "BR", "BC", "rN", "rR", "rC")}
    aborted = np.zeros(P, dtype=bool)
    start = SimState.initial(init, grid)
    F0 = np.stack([start.fN, start.fR, start.sCDI])
    X0 = np.array([init.I0, init.J0, 1.0, 1.0, 1.0])
    # grid nodes that can still influence a recorded tenor after step i
    last_needed = int(rec_cols.max(initial=0))
    widths = last_needed + 1 + (cfg.n_steps - np.arange(cfg.n_steps + 1))
    use_offset = co.transport.is_shift and grid.size >= last_needed + 1 + cfg.n_steps
    watch = np.r_[0, rec_cols]
    buf = np.empty(min(cfg.chunk_size, P) * grid.size)
    streams = path_streams(cfg.seed, P, cfg.antithetic)

    for first in range(0, P, cfg.chunk_size):
        n = min(cfg.chunk_size, P - first)
        xi = path_normals(cfg.seed, P, cfg.n_steps, spec.m, cfg.antithetic, first, n, streams)
        F = np.repeat(F0[:, None, :], n, axis=1)
        X = np.repeat(X0[None], n, axis=0)
        bad = np.zeros(n, dtype=bool)
        rows = slice(first, first + n)

        def record(k, off):
            if cfg.record_curves:
                for c, name in enumerate(CURVE_NAMES):
                    curves[name][rows, k] = F[c][:, rec_cols + off]
            for c, key in enumerate(("I", "J", "BN", "BR", "BC")):
                scal[key][rows, k] = X[:, c]
            scal["rN"][rows, k] = F[0, :, off]
            scal["rR"][rows, k] = F[1, :, off]
            scal["rC"][rows, k] = F[0, :, off] + F[2, :, off]

        record(0, 0)
        for i in range(1, cfg.n_steps + 1):
            if use_offset:
                _kernel_offset(F, X, co, xi[:, i - 1], i - 1, int(widths[i]), buf)
                off = i
            else:
                _kernel(F, X, co, xi[:, i - 1])
                off = 0
            ok = _finite(F, X, watch + off)
            if not ok.all():
                bad |= ~ok
                F[:, bad] = np.nan
                X[bad] = np.nan
            if i in rec_pos:
                record(rec_pos[i], off)
        aborted[rows] = bad

    if aborted.mean() > cfg.max_abort_fraction:
        raise SimulationError(f"{aborted.sum()} of {P} paths produced non-finite state")
    if cfg.record_curves:
        curves["sIPCA"] = curves["sCDI"] + (curves["fN"] - curves["fR"])
    rates = {k: scal.pop(k) for k in ("rN", "rR", "rC")}
    out = SimOutput(rec_steps * cfg.dt, np.asarray(cfg.record_tenors), curves, scal["I"], scal["J"],
                    scal["BN"], scal["BR"], scal["BC"], rates, aborted, cfg.seed,
                    meta={"dt": cfg.dt, "n_steps": cfg.n_steps, "grid_size": int(grid.size),
                          "grid_max": float(grid[-1])})
    if cfg.record_curves:
        _check_initial(out, init)
    return out


def _check_initial(out: SimOutput, init: InitialCurves) -> None:
    """Recorded curves at t = 0 must equal the initial pillar values exactly."""
    for j, t in enumerate(out.tenors):
        hits = np.flatnonzero(init.tenors == t)
        if hits.size == 0:
            continue
        for name in CURVE_NAMES:
            if not np.all(out.curves[name][:, 0, j] == getattr(init, name)[hits[0]]):
                raise SimulationError(f"{name} at tau={t:g} differs from the initial curve at t=0")


def discount_from_forwards(tenors, fwds, T: float) -> float:
    """exp(-int_0^T f) with f linear between nodes and flat below the first node."""
    tenors = np.asarray(tenors, dtype=float)
    f = np.asarray(fwds, dtype=float)
    if T < 0:
        raise ValidationError("T must be >= 0")
    if T > tenors[-1] + 1e-12:
        raise ValidationError(f"T={T} beyond the last tenor {tenors[-1]}")
    if T == 0:
        return 1.0
    nodes = np.r_[0.0, tenors] if tenors[0] > 0 else tenors
    vals = np.interp(nodes, tenors, f)
    keep = nodes < T
    x = np.r_[nodes[keep], T]
    y = np.r_[vals[keep], np.interp(T, tenors, f)]
    return float(np.exp(-np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x))))
