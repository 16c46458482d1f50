"""Volatility architecture: exponential shape functions, block volatilities,
HJM drifts with cross-block spread terms and exchange-rate corrections.

Amplitudes and loadings are stored in decimal per sqrt(year) and serialized
in basis points per sqrt(year).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError

RATE_BLOCKS = ("N", "R")
BLOCKS = ("N", "R", "S")
BP = 1e-4
SPEC_SCHEMA_VERSION = 1
WITHIN_BLOCK_TOL = 1e-12


@dataclass(frozen=True)
class ShapeFamily:
    """Decay parameters (1/years) of the rate shapes (b2, b3) and spread shape (c2)."""

    b2: float
    b3: float
    c2: float

    def __post_init__(self):
        for name in ("b2", "b3", "c2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and > 0, got {v}")


def _tau(tau) -> np.ndarray:
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise ValidationError("tau must be finite and >= 0")
    return t


def _one_minus_exp_over(c: float, t: np.ndarray) -> np.ndarray:
    return -np.expm1(-c * t) / c


def _one_minus_poly_exp(x):
    """1 - (1 + x) e^{-x}, with a series near zero where the direct form cancels."""
    x = np.asarray(x, dtype=float)
    direct = -np.expm1(-x) - x * np.exp(-x)
    xs = np.minimum(x, 0.1)
    # sum over k >= 2 of (-1)^k (k - 1) x^k / k!
    series = np.zeros_like(xs)
    term = np.ones_like(xs)
    for k in range(1, 16):
        term = term * xs / k
        if k >= 2:
            series = series + (-1) ** k * (k - 1) * term
    return np.where(x < 0.1, series, direct)


def shape_eval(family: ShapeFamily, block: str, tau) -> np.ndarray:
    """Shape values, last axis (g1, g2, g3) for rate blocks or (h1, h2) for S."""
    t = _tau(tau)
    if block in RATE_BLOCKS:
        return np.stack([np.ones_like(t), np.exp(-family.b2 * t), t * np.exp(-family.b3 * t)], axis=-1)
    if block == "S":
        return np.stack([np.ones_like(t), np.exp(-family.c2 * t)], axis=-1)
    raise ValidationError(f"unknown block {block!r}")


def cum_integral(family: ShapeFamily, block: str, tau) -> np.ndarray:
    """Closed-form integrals over [0, tau] of the shapes from `shape_eval`."""
    t = _tau(tau)
    if block in RATE_BLOCKS:
        b3 = family.b3
        g3 = _one_minus_poly_exp(b3 * t) / b3 ** 2
        return np.stack([t, _one_minus_exp_over(family.b2, t), g3], axis=-1)
    if block == "S":
        return np.stack([t, _one_minus_exp_over(family.c2, t)], axis=-1)
    raise ValidationError(f"unknown block {block!r}")


@dataclass(frozen=True)
class AmplitudeMatrix:
    """Per-block amplitudes: rows are factors, columns are shapes (decimal/sqrt(yr))."""

    block: str
    entries: np.ndarray

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ValidationError(f"unknown block {self.block!r}")
        a = np.atleast_2d(np.asarray(self.entries, dtype=float))
        n_shapes = 3 if self.block in RATE_BLOCKS else 2
        if a.ndim != 2 or a.shape[1] != n_shapes or a.shape[0] < 1:
            raise ValidationError(f"{self.block} amplitude matrix must be m x {n_shapes}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def from_bp(cls, block: str, entries_bp) -> "AmplitudeMatrix":
        return cls(block, np.asarray(entries_bp, dtype=float) * BP)

    @property
    def n_factors(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class EmpiricalSpreadLoading:
    """Spread-factor loadings given at vertices, linear in between and flat outside.

    `values` is m_S x n_vertices in decimal/sqrt(yr).
    """

    vertices: tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.ndim != 1 or v.size < 1 or np.any(np.diff(v) <= 0) or np.any(v < 0):
            raise ValidationError("empirical loading vertices must be increasing and >= 0")
        if vals.shape[1] != v.size or not np.all(np.isfinite(vals)):
            raise ValidationError("empirical loadings must be finite, one column per vertex")
        vals.setflags(write=False)
        object.__setattr__(self, "vertices", tuple(float(x) for x in v))
        object.__setattr__(self, "values", vals)

    @property
    def n_factors(self) -> int:
        return self.values.shape[0]

    def vol(self, t: np.ndarray) -> np.ndarray:
        v = np.asarray(self.vertices)
        return np.stack([np.interp(t, v, row) for row in self.values], axis=-1)

    def cum(self, t: np.ndarray) -> np.ndarray:
        """Exact integral of the piecewise-linear, flat-extrapolated loading."""
        v = np.asarray(self.vertices)
        nodes = np.r_[0.0, v] if v[0] > 0 else v
        out = []
        for row in self.values:
            y = np.interp(nodes, v, row)
            cum_nodes = np.r_[0.0, np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(nodes))]
            tc = np.minimum(t, nodes[-1])
            k = np.clip(np.searchsorted(nodes, tc, side="right") - 1, 0, max(nodes.size - 2, 0))
            yt = np.interp(tc, v, row)
            partial = 0.5 * (y[k] + yt) * (tc - nodes[k])
            beyond = np.maximum(t - nodes[-1], 0.0) * y[-1]
            out.append(cum_nodes[k] + partial + beyond)
        return np.stack(out, axis=-1)


@dataclass(frozen=True)
class FxLoading:
    """Exchange-rate loading on the m Brownian factors (decimal/sqrt(yr)).

    With `restricted` set, I may load only on the real block and the nominal
    level factor, and J only on the spread block and the nominal level factor.
    """

    target: str
    alpha: np.ndarray
    restricted: bool = True

    def __post_init__(self):
        if self.target not in ("I", "J"):
            raise ValidationError(f"FX target must be I or J, got {self.target!r}")
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise ValidationError("FX loading must be a finite vector")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    def permitted(self, dims: tuple[int, int, int]) -> np.ndarray:
        mn, mr, ms = dims
        mask = np.zeros(mn + mr + ms, dtype=bool)
        mask[0] = True
        if self.target == "I":
            mask[mn:mn + mr] = True
        else:
            mask[mn + mr:] = True
        return mask


def fx_mask(target: str, dims: tuple[int, int, int]) -> np.ndarray:
    return FxLoading(target, np.zeros(sum(dims))).permitted(dims)


@dataclass(frozen=True)
class BlockVolSpec:
    """Full volatility specification of the three-curve system.

    The spread block is parametric (A_S with h-shapes) unless
    `spread_empirical` is given, in which case it replaces A_S.
    """

    shape: ShapeFamily
    A_N: AmplitudeMatrix
    A_R: AmplitudeMatrix
    A_S: AmplitudeMatrix | None
    sigma_I: FxLoading
    sigma_J: FxLoading
    rho: np.ndarray
    spread_empirical: EmpiricalSpreadLoading | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.A_N.block != "N" or self.A_R.block != "R":
            raise ValidationError("A_N and A_R must carry blocks N and R")
        if (self.A_S is None) == (self.spread_empirical is None):
            raise ValidationError("exactly one of A_S and spread_empirical must be given")
        if self.A_S is not None and self.A_S.block != "S":
            raise ValidationError("A_S must carry block S")
        m = sum(self.dims)
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (m, m):
            raise ValidationError(f"rho must be {m}x{m}, got {rho.shape}")
        if not np.all(np.isfinite(rho)) or not np.allclose(rho, rho.T, atol=1e-12, rtol=0):
            raise ValidationError("rho must be finite and symmetric")
        if np.max(np.abs(np.diag(rho) - 1)) > 1e-12:
            raise ValidationError("rho must have unit diagonal")
        for sl in self.block_slices.values():
            sub = rho[sl, sl]
            if np.max(np.abs(sub - np.eye(sub.shape[0]))) > WITHIN_BLOCK_TOL:
                raise ValidationError("within-block correlations must be zero")
        min_eig = float(np.linalg.eigvalsh(rho)[0])
        if min_eig <= 0:
            raise ValidationError(f"rho is not positive definite (min eigenvalue {min_eig:.3g})")
        for fx in (self.sigma_I, self.sigma_J):
            if fx.alpha.shape != (m,):
                raise ValidationError(f"sigma_{fx.target} must have length {m}")
            if fx.restricted and np.any(fx.alpha[~fx.permitted(self.dims)] != 0):
                raise ValidationError(f"sigma_{fx.target} loads outside its permitted blocks")
        if self.sigma_I.target != "I" or self.sigma_J.target != "J":
            raise ValidationError("sigma_I/sigma_J targets mismatched")
        rho = (rho + rho.T) / 2
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def dims(self) -> tuple[int, int, int]:
        ms = self.A_S.n_factors if self.A_S is not None else self.spread_empirical.n_factors
        return self.A_N.n_factors, self.A_R.n_factors, ms

    @property
    def m(self) -> int:
        return sum(self.dims)

    @property
    def block_slices(self) -> dict[str, slice]:
        mn, mr, ms = self.dims
        return {"N": slice(0, mn), "R": slice(mn, mn + mr), "S": slice(mn + mr, mn + mr + ms)}

    def factor_labels(self) -> list[str]:
        return [f"{b}{k + 1}" for b, n in zip(BLOCKS, self.dims) for k in range(n)]

    def amplitude(self, block: str) -> AmplitudeMatrix | None:
        return {"N": self.A_N, "R": self.A_R, "S": self.A_S}[block]

    def replace(self, **changes) -> "BlockVolSpec":
        kw = dict(shape=self.shape, A_N=self.A_N, A_R=self.A_R, A_S=self.A_S, sigma_I=self.sigma_I,
                  sigma_J=self.sigma_J, rho=self.rho, spread_empirical=self.spread_empirical,
                  meta=dict(self.meta))
        kw.update(changes)
        return BlockVolSpec(**kw)

    def scaled(self, factor: float) -> "BlockVolSpec":
        """All amplitudes and FX loadings multiplied by `factor`."""
        emp = self.spread_empirical
        return self.replace(
            A_N=AmplitudeMatrix("N", self.A_N.entries * factor),
            A_R=AmplitudeMatrix("R", self.A_R.entries * factor),
            A_S=None if self.A_S is None else AmplitudeMatrix("S", self.A_S.entries * factor),
            spread_empirical=None if emp is None else EmpiricalSpreadLoading(emp.vertices, emp.values * factor),
            sigma_I=FxLoading("I", self.sigma_I.alpha * factor, self.sigma_I.restricted),
            sigma_J=FxLoading("J", self.sigma_J.alpha * factor, self.sigma_J.restricted),
        )

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "schema_version": SPEC_SCHEMA_VERSION,
            "units": {"amplitudes": "bp_per_sqrt_year", "decays": "per_year"},
            "dims": list(self.dims),
            "shape": {"b2": self.shape.b2, "b3": self.shape.b3, "c2": self.shape.c2},
            "A_N": (self.A_N.entries / BP).tolist(),
            "A_R": (self.A_R.entries / BP).tolist(),
            "A_S": None if self.A_S is None else (self.A_S.entries / BP).tolist(),
            "spread_empirical": None,
            "sigma_I": {"alpha": (self.sigma_I.alpha / BP).tolist(), "restricted": self.sigma_I.restricted},
            "sigma_J": {"alpha": (self.sigma_J.alpha / BP).tolist(), "restricted": self.sigma_J.restricted},
            "rho": self.rho.tolist(),
            "factor_labels": self.factor_labels(),
            "meta": self.meta,
        }
        if self.spread_empirical is not None:
            d["spread_empirical"] = {"vertices": list(self.spread_empirical.vertices),
                                     "loadings": (self.spread_empirical.values / BP).tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlockVolSpec":
        try:
            emp = d.get("spread_empirical")
            return cls(
                shape=ShapeFamily(**d["shape"]),
                A_N=AmplitudeMatrix.from_bp("N", d["A_N"]),
                A_R=AmplitudeMatrix.from_bp("R", d["A_R"]),
                A_S=None if d.get("A_S") is None else AmplitudeMatrix.from_bp("S", d["A_S"]),
                sigma_I=FxLoading("I", np.asarray(d["sigma_I"]["alpha"], float) * BP,
                                  bool(d["sigma_I"].get("restricted", True))),
                sigma_J=FxLoading("J", np.asarray(d["sigma_J"]["alpha"], float) * BP,
                                  bool(d["sigma_J"].get("restricted", True))),
                rho=np.asarray(d["rho"], dtype=float),
                spread_empirical=None if emp is None else EmpiricalSpreadLoading(
                    tuple(emp["vertices"]), np.asarray(emp["loadings"], float) * BP),
                meta=dict(d.get("meta", {})),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed spec document: {exc}") from exc

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "BlockVolSpec":
        p = Path(source) if not str(source).lstrip().startswith("{") else None
        text = p.read_text() if p is not None else str(source)
        return cls.from_dict(json.loads(text))


def load_spec(path) -> BlockVolSpec:
    return BlockVolSpec.from_json(Path(path))


# block volatilities -------------------------------------------------------

def _block_local(spec: BlockVolSpec, block: str, t: np.ndarray, integrated: bool) -> np.ndarray:
    if block == "S" and spec.spread_empirical is not None:
        emp = spec.spread_empirical
        return emp.cum(t) if integrated else emp.vol(t)
    shapes = (cum_integral if integrated else shape_eval)(spec.shape, block, t)
    return shapes @ spec.amplitude(block).entries.T


def _embed(spec: BlockVolSpec, block: str, local: np.ndarray) -> np.ndarray:
    out = np.zeros(local.shape[:-1] + (spec.m,))
    out[..., spec.block_slices[block]] = local
    return out


def block_vol(spec: BlockVolSpec, block: str, tau) -> np.ndarray:
    """m-vector volatility of block N, R or S at tau (last axis = factor)."""
    if block not in BLOCKS:
        raise ValidationError(f"unknown block {block!r}")
    return _embed(spec, block, _block_local(spec, block, _tau(tau), False))


def block_cum_vol(spec: BlockVolSpec, block: str, tau) -> np.ndarray:
    """Integral over [0, tau] of `block_vol`."""
    if block not in BLOCKS:
        raise ValidationError(f"unknown block {block!r}")
    return _embed(spec, block, _block_local(spec, block, _tau(tau), True))


def credit_vol(spec: BlockVolSpec, tau) -> np.ndarray:
    """sigma_C = sigma_N + sigma_S."""
    return block_vol(spec, "N", tau) + block_vol(spec, "S", tau)


def weighted_inner(spec: BlockVolSpec, x, y) -> np.ndarray:
    """x' rho y along the last axis (broadcasting over leading axes)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != spec.m or y.shape[-1] != spec.m:
        raise ValidationError(f"vectors must have length {spec.m}")
    out = np.einsum("...i,ij,...j->...", x, spec.rho, y)
    return float(out) if np.ndim(out) == 0 else out


def hjm_drift_own(spec: BlockVolSpec, block: str, tau):
    """sigma_j(tau) . int_0^tau sigma_j for block j."""
    return weighted_inner(spec, block_vol(spec, block, tau), block_cum_vol(spec, block, tau))


def fx_drift_correction(spec: BlockVolSpec, block: str, tau):
    """sigma_R . sigma_I for block R, or sigma_C . sigma_J for block C."""
    if block == "R":
        v, fx = block_vol(spec, "R", tau), spec.sigma_I.alpha
    elif block == "C":
        v, fx = credit_vol(spec, tau), spec.sigma_J.alpha
    else:
        raise ValidationError(f"FX correction defined for blocks R and C, got {block!r}")
    return weighted_inner(spec, v, np.broadcast_to(fx, v.shape))


def spread_drift_terms(spec: BlockVolSpec, tau) -> dict[str, np.ndarray]:
    """The four pieces of the spread drift, returned separately."""
    sn, ss = block_vol(spec, "N", tau), block_vol(spec, "S", tau)
    an, as_ = block_cum_vol(spec, "N", tau), block_cum_vol(spec, "S", tau)
    return {
        "nominal_x_spread": weighted_inner(spec, sn, as_),
        "spread_x_nominal": weighted_inner(spec, ss, an),
        "within": weighted_inner(spec, ss, as_),
        "fx_correction": fx_drift_correction(spec, "C", tau),
    }


def spread_drift(spec: BlockVolSpec, tau):
    """sigma_N.A_S + sigma_S.A_N + sigma_S.A_S - sigma_C.sigma_J."""
    p = spread_drift_terms(spec, tau)
    return p["nominal_x_spread"] + p["spread_x_nominal"] + p["within"] - p["fx_correction"]


def real_drift(spec: BlockVolSpec, tau):
    return hjm_drift_own(spec, "R", tau) - fx_drift_correction(spec, "R", tau)


def total_vol(spec: BlockVolSpec, block: str, tau) -> np.ndarray:
    """sqrt(sigma . sigma) of a block (equals the Euclidean norm, within-block rho = I)."""
    v = block_vol(spec, block, tau)
    return np.sqrt(np.maximum(weighted_inner(spec, v, v), 0.0))


def fx_vol(spec: BlockVolSpec, target: str) -> float:
    a = spec.sigma_I.alpha if target == "I" else spec.sigma_J.alpha
    return float(np.sqrt(max(weighted_inner(spec, a, a), 0.0)))


def assemble_rho(rho_hat: np.ndarray, dims: Sequence[int], eig_floor: float = 1e-8) -> np.ndarray:
    """Set within-block sub-matrices to the identity, repairing definiteness if needed."""
    from .calib import nearest_correlation

    rho = np.array(rho_hat, dtype=float)
    rho = (rho + rho.T) / 2
    bounds = np.cumsum(np.r_[0, list(dims)])
    mask = np.zeros(rho.shape, dtype=bool)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        rho[lo:hi, lo:hi] = np.eye(hi - lo)
        mask[lo:hi, lo:hi] = True
    np.fill_diagonal(mask, False)
    if np.linalg.eigvalsh(rho)[0] >= eig_floor:
        return rho
    return nearest_correlation(rho, eig_floor=eig_floor, fixed_zero=mask)
