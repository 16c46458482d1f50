"""Command-line entry point: synth, calibrate, simulate, diagnose, wedge.

Exit codes: 0 success, 1 validation or usage error, 2 diagnostic gate failure.
Heavy imports happen inside the commands so that `--threads` can take effect
before numerical libraries start their thread pools.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path

from .errors import TrihjmError

CONFIG_DIR_ENV = "TRIHJM_CONFIG_DIR"
EXIT_OK, EXIT_INVALID, EXIT_GATE = 0, 1, 2
TIMESTAMP_KEY = "generated_at"
SIM_DEFAULTS = {"dt": 1.0 / 52, "horizon": 5.0, "n_paths": 2000, "seed": 0,
                "record_tenors": (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)}
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _resolve_config(path: str) -> Path:
    """Use `path` if it exists, else look it up in the default config directory."""
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and not p.is_absolute() and (Path(base) / p).exists():
        return Path(base) / p
    raise TrihjmError(f"config file not found: {path}")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise TrihjmError(f"{path}: invalid JSON ({exc})") from exc


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) + 0.0 if np.isfinite(obj) else None
    return obj


def _write_json(path, payload: dict, stamp: bool = True) -> None:
    out = _clean(payload)
    if stamp:
        out[TIMESTAMP_KEY] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .marketdata import generate_synthetic_history, write_history
    from .sim import load_initial_curves
    from .volarch import load_spec
    from .wedge import synthetic_constituents, write_breakevens, write_constituents

    spec = load_spec(args.spec) if args.spec else _bundled_spec()
    init = load_initial_curves(args.init) if args.init else _bundled_init()
    hist = generate_synthetic_history(spec, init, args.weeks, args.seed)
    out = Path(args.out)
    files = {k: str(v) for k, v in write_history(hist, out).items()}
    if args.issuers:
        cons, be = synthetic_constituents(hist.nominal, hist.real, hist.cdi, n_issuers=args.issuers,
                                          seed=args.seed)
        write_constituents(cons, out / "constituents.csv")
        write_breakevens(be, out / "breakevens.csv")
        files.update(constituents=str(out / "constituents.csv"), breakevens=str(out / "breakevens.csv"))
    _write_json(out / "manifest.json", {"command": "synth", "seed": args.seed, "weeks": args.weeks,
                                        "files": files})
    return EXIT_OK


def _bundled_spec():
    from importlib import resources

    from .volarch import BlockVolSpec

    return BlockVolSpec.from_json((resources.files("trihjm") / "data" / "model_a_spec.json").read_text())


def _bundled_init():
    from importlib import resources

    from .sim import load_initial_curves

    with resources.as_file(resources.files("trihjm") / "data" / "init_curves.csv") as p:
        return load_initial_curves(p)


def cmd_calibrate(args) -> int:
    from .calib import CalibConfig, calibrate
    from .marketdata import load_curve_panel, load_index_series

    cfg_path = _resolve_config(args.config)
    raw = _read_json(cfg_path)
    data = raw.get("data", {})
    base = Path(args.data) if args.data else cfg_path.parent
    defaults = {"nominal": "nominal_fwd.csv", "real": "real_fwd.csv", "cdi": "cdi_spread.csv",
                "ipca": "ipca_spread.csv", "inflation_index": "ipca_monthly.csv"}

    def path_of(key, required):
        p = base / data.get(key, defaults[key])
        if not p.exists():
            if required:
                raise TrihjmError(f"missing input file for {key}: {p}")
            return None
        return p

    cfg = CalibConfig.from_dict(raw.get("calibration", {}))
    kinds = {"nominal": "nominal_fwd", "real": "real_fwd", "cdi": "cdi_spread", "ipca": "ipca_spread"}
    panels = {}
    for key, kind in kinds.items():
        p = path_of(key, required=key in ("nominal", "real") or (key == "cdi") == (cfg.model == "A"))
        panels[key] = None if p is None else load_curve_panel(p, kind)
    idx_path = path_of("inflation_index", required=False)
    index = None if idx_path is None else load_index_series(idx_path)
    res = calibrate(panels["nominal"], panels["real"], panels["cdi"], panels["ipca"], index, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.spec.to_json(out / "spec.json")
    _write_json(out / "report.json", {"command": "calibrate", **res.report})
    return EXIT_OK


def _sim_config(args):
    from .sim import SimConfig

    raw = _read_json(_resolve_config(args.config)) if args.config else {}
    for key, val in (("n_paths", args.paths), ("horizon", args.horizon), ("dt", args.dt), ("seed", args.seed),
                     ("record_tenors", args.record_tenors), ("record_every", args.record_every)):
        if val is not None:
            raw[key] = val
    if args.antithetic:
        raw["antithetic"] = True
    if "record_tenors" in raw:
        raw["record_tenors"] = tuple(float(t) for t in raw["record_tenors"])
    known = set(SimConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise TrihjmError(f"unknown simulation settings {sorted(unknown)}")
    for key, val in SIM_DEFAULTS.items():
        raw.setdefault(key, val)
    return SimConfig(**raw)


def cmd_simulate(args) -> int:
    from .diagnostics import triangle_check
    from .sim import load_initial_curves, run_paths
    from .volarch import load_spec

    spec = load_spec(args.spec)
    init = load_initial_curves(args.init) if args.init else _bundled_init()
    cfg = _sim_config(args)
    sim = run_paths(init, spec, cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sim.to_csv(args.out)
    if args.summary:
        tri = triangle_check(sim)
        _write_json(args.summary, {
            "command": "simulate", "seed": cfg.seed, "n_paths": cfg.n_paths, "n_steps": cfg.n_steps,
            "dt": cfg.dt, "horizon": cfg.horizon, "record_tenors": list(cfg.record_tenors),
            "aborted": int(sim.aborted.sum()), "triangle_max_violation": tri.max_violation,
        })
    return EXIT_OK


def cmd_diagnose(args) -> int:
    import numpy as np
    import pandas as pd

    from .diagnostics import (DEFAULT_HORIZONS, coverage_test, martingale_test, model_vols, moments,
                              smoothness_metric, triangle_check, vol_reproduction)
    from .marketdata import load_curve_panel, to_weekly
    from .sim import SimOutput
    from .volarch import load_spec

    sim = SimOutput.from_csv(args.sim)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizons = args.horizons or tuple(h for h in DEFAULT_HORIZONS if h <= sim.times[-1] + 1e-9)
    report: dict = {"command": "diagnose", "n_paths": sim.n_paths}

    mart = martingale_test(sim, horizons, args.alpha) if horizons else None
    if mart is not None:
        report["martingale"] = {"alpha": mart.alpha, "critical": mart.critical, "max_abs_z": mart.max_abs_z,
                                "passed": mart.passed, "cells": mart.to_frame().to_dict("records")}
        mart.to_frame().to_csv(out / "martingale.csv", index=False)
    tri = triangle_check(sim, args.eps) if sim.curves else None
    if tri is not None:
        report["triangle"] = {"max_violation": tri.max_violation, "eps": tri.eps, "passed": tri.passed,
                              "location": None if tri.location is None else
                              dict(zip(("path", "t", "tenor"), tri.location))}
        if sim.tenors.size >= 3 and sim.tenors.max() > 2:
            report["smoothness"] = [r.__dict__ for r in smoothness_metric(sim)]
    ratios = pd.DataFrame({"t": sim.times, "inflation_ratio_mean": sim.inflation_ratio().mean(axis=0),
                           "credit_ratio_mean": sim.credit_ratio().mean(axis=0)})
    ratios.to_csv(out / "ratios.csv", index=False, float_format="%.17g")

    if args.oos_dir:
        if not args.spec:
            raise TrihjmError("--oos-dir needs --spec for model volatilities")
        spec = load_spec(args.spec)
        files = {"fN": ("nominal_fwd.csv", "nominal_fwd"), "fR": ("real_fwd.csv", "real_fwd"),
                 "sCDI": ("cdi_spread.csv", "cdi_spread")}
        oos = {}
        for var, (name, kind) in files.items():
            p = Path(args.oos_dir) / name
            if p.exists():
                panel = load_curve_panel(p, kind)
                oos[var] = to_weekly(panel) if args.weekly else panel
        if not oos:
            raise TrihjmError(f"no out-of-sample panels in {args.oos_dir}")
        vols = vol_reproduction(spec, oos, args.vol_tenors)
        vols.to_csv(out / "vol_reproduction.csv", index=False, float_format="%.17g")
        wanted = {v: [t for t in args.coverage_tenors if t in p.grid.tenors] for v, p in oos.items()}
        cov = coverage_test(model_vols(spec, wanted), oos, level=args.level)
        cov.to_frame().to_csv(out / "coverage.csv", index=False, float_format="%.17g")
        report["vol_reproduction"] = vols.to_dict("records")
        report["coverage"] = {"level": cov.level, "cells": cov.to_frame().to_dict("records")}
        report["moments"] = {v: moments(np.diff(p.values, axis=0).ravel()) for v, p in oos.items()}

    gate_ok = (mart is None or mart.passed) and (tri is None or tri.passed)
    report["gate"] = {"enabled": bool(args.gate), "passed": bool(gate_ok)}
    _write_json(out / "report.json", report)
    if args.gate and not gate_ok:
        print("diagnostic gate failed", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_wedge(args) -> int:
    from .marketdata import load_constituents
    from .wedge import (compute_delta, cross_section_regression, decompose, delta_frame, issuer_panel,
                        load_breakevens, match_breakeven, regime_split)

    cons = load_constituents(args.constituents, ipca_lag_days=args.ipca_lag)
    be = load_breakevens(args.breakevens)
    issuers = [match_breakeven(s, be, args.scheme) for s in issuer_panel(cons, args.min_joint_days)]
    issuers = [s for s in issuers if len(s)]
    if not issuers:
        raise TrihjmError(f"no issuer has {args.min_joint_days} joint dates in both families")
    report = decompose([compute_delta(s) for s in issuers], args.mode, args.tau_pf)
    payload = {"command": "wedge", "scheme": args.scheme, **report.to_dict()}
    if len(issuers) >= 3:
        payload["regression"] = {"M1": cross_section_regression(report).to_dict()}
        if len(issuers) >= 4:
            try:
                payload["regression"]["M2"] = cross_section_regression(report, True).to_dict()
            except TrihjmError as exc:
                payload["regression"]["M2"] = {"error": str(exc)}
    if args.split:
        rs = regime_split(issuers, args.split, args.mode, args.tau_pf)
        payload["regimes"] = {k: r.to_dict()["summary"] for k, r in rs.reports.items()}
        payload["regimes"]["flagged"] = rs.flagged
        payload["regimes"]["difference_z"] = rs.difference_z()
    _write_json(args.out, payload)
    if args.series:
        delta_frame(issuers).to_csv(args.series, index=False, float_format="%.17g")
    return EXIT_OK


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trihjm", description="Three-block HJM calibration, simulation and diagnostics.")
    p.add_argument("--threads", type=_positive_int, help="cap numerical library threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="simulate synthetic curve histories from a spec")
    s.add_argument("--spec", help="spec JSON (default: bundled Model A)")
    s.add_argument("--init", help="initial curves CSV (default: bundled)")
    s.add_argument("--weeks", type=_positive_int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--issuers", type=int, default=0, help="also write dual-listed constituents")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("calibrate", help="calibrate a spec from curve histories")
    c.add_argument("--config", required=True, help="calibration config JSON")
    c.add_argument("--data", help="input directory (default: the config's directory)")
    c.add_argument("--out", required=True, help="output directory for spec.json and report.json")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("simulate", help="Monte Carlo paths from a spec")
    m.add_argument("--spec", required=True)
    m.add_argument("--init", help="initial curves CSV (default: bundled)")
    m.add_argument("--config", help="simulation config JSON")
    m.add_argument("--paths", type=_positive_int)
    m.add_argument("--horizon", type=float)
    m.add_argument("--dt", type=float)
    m.add_argument("--seed", type=int)
    m.add_argument("--record-tenors", type=_floats)
    m.add_argument("--record-every", type=_positive_int)
    m.add_argument("--antithetic", action="store_true")
    m.add_argument("--out", required=True, help="simulation CSV")
    m.add_argument("--summary", help="summary JSON")
    m.set_defaults(func=cmd_simulate)

    d = sub.add_parser("diagnose", help="diagnostics on a simulation CSV")
    d.add_argument("--sim", required=True)
    d.add_argument("--spec")
    d.add_argument("--oos-dir", help="directory with out-of-sample panels")
    d.add_argument("--weekly", action="store_true", help="resample out-of-sample panels to weekly")
    d.add_argument("--horizons", type=_floats)
    d.add_argument("--alpha", type=float, default=0.05)
    d.add_argument("--eps", type=float, default=1e-10)
    d.add_argument("--level", type=float, default=0.90)
    d.add_argument("--vol-tenors", type=_floats, default=(1.0, 3.0, 5.0))
    d.add_argument("--coverage-tenors", type=_floats, default=(1.0, 3.0, 5.0, 7.0))
    d.add_argument("--gate", action="store_true", help="exit 2 when a diagnostic fails")
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_diagnose)

    w = sub.add_parser("wedge", help="within-issuer residual test on constituents")
    w.add_argument("--constituents", required=True)
    w.add_argument("--breakevens", required=True, help="CSV with date, tenor, fN, fR")
    w.add_argument("--scheme", choices=("nearest", "interp_mid", "split_side"), default="nearest")
    w.add_argument("--mode", choices=("linear", "exact"), default="linear")
    w.add_argument("--split", help="regime break date (YYYY-MM-DD)")
    w.add_argument("--min-joint-days", type=int, default=800)
    w.add_argument("--tau-pf", type=float, default=0.15)
    w.add_argument("--ipca-lag", type=int, default=0, help="business-day shift of IPCA dates")
    w.add_argument("--out", required=True, help="report JSON")
    w.add_argument("--series", help="per-issuer per-date residual CSV")
    w.set_defaults(func=cmd_wedge)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                return args.func(args)
        return args.func(args)
    except (TrihjmError, OSError) as exc:
        print(f"trihjm {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
