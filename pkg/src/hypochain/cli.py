"""Config-driven experiment runner: ``hypochain <subcommand> --config FILE``.

Every subcommand writes ``<out>/<subcommand>.csv`` and
``<out>/<subcommand>.summary.json``; the exit status is 1 when any check
fails, 2 on configuration errors and 3 on model or simulation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .asian_pricing import BasketSpec, limit_variance, price_table
from .density_lab import (
    REGIMES,
    convergence_experiment,
    diagonal_decay,
    error_trend_monotone,
    estimate_density,
    fit_envelope,
    gradient_hessian_convergence,
    loglog_slope,
    mc_mass,
    tail_curve,
)
from .errors import HypochainError, InsufficientDataError
from .flow_scaling import solve_theta
from .limit_gaussian import (
    build_hormander_matrix,
    build_limit_model,
    gradient_sign_check,
    limit_density,
    q_n,
)
from .mc_engine import SimConfig, residuals, simulate_joint_N, simulate_paths
from .model_registry import build_model, validate_structure

SUBCOMMANDS = (
    "validate",
    "limits",
    "simulate",
    "taylor-check",
    "density",
    "tails",
    "converge",
    "derivatives",
    "diagonal-decay",
    "price",
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_MODEL = 0, 1, 2, 3


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    key: str
    params: Dict[str, Any] = Field(default_factory=dict)


class SimulationSection(_Strict):
    n_paths: int = Field(100_000, ge=1)
    steps: int = Field(64, ge=16)
    seed: int = Field(0, ge=0, lt=2**64)
    workers: int = Field(1, ge=1)
    chunk_size: int = Field(4096, ge=1)
    t: float = Field(1.0, gt=0)


class ParamsSection(_Strict):
    t_grid: Optional[List[float]] = None
    ybar: Optional[List[float]] = None
    points: Optional[List[List[float]]] = None
    levels: Optional[List[float]] = None
    bandwidth: Union[str, List[float]] = "silverman"
    kernel: str = "gaussian"
    regimes: List[str] = Field(default_factory=lambda: list(REGIMES))
    expect: Dict[str, bool] = Field(default_factory=dict)
    per_block: bool = False
    p: float = Field(2.0, gt=0)
    tolerance: Optional[float] = Field(None, gt=0)
    slope_tolerance: Optional[float] = Field(None, gt=0)
    kind: str = "call"
    strike: Optional[float] = None
    control_variate: bool = False
    mass_draws: int = Field(4000, ge=100)
    min_eff: float = 100.0
    j: Optional[int] = None
    record: List[str] = Field(default_factory=lambda: ["terminal"])


class ExperimentConfig(_Strict):
    model: ModelSection
    operation: Optional[str] = None
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    params: ParamsSection = Field(default_factory=ParamsSection)
    out: str = "results"


class ConfigError(Exception):
    pass


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def load_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse YAML text, apply flag overrides (flags win) and validate."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    for path, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{p}: expected a mapping")
        node[leaf] = value
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def artifact_version() -> str:
    """git-describe style version, falling back to the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "-C", str(here), "describe", "--tags", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    if not out:
        return f"v{__version__}"
    if out.startswith("v") or "-g" in out:
        return out
    return f"v{__version__}-g{out}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, columns: List[str], rows: List[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


class Result:
    """CSV table, summary fields and named checks of one subcommand."""

    def __init__(self, columns: List[str]):
        self.columns = columns
        self.rows: List[list] = []
        self.summary: Dict[str, Any] = {}
        self.checks: Dict[str, bool] = {}

    def check(self, name: str, ok) -> None:
        self.checks[name] = bool(ok)


def _sim_config(cfg: ExperimentConfig, t: Optional[float] = None, record=("terminal",)) -> SimConfig:
    s = cfg.simulation
    return SimConfig(t=s.t if t is None else float(t), n_paths=s.n_paths, steps=s.steps, seed=s.seed,
                     record=tuple(record), workers=s.workers, chunk_size=s.chunk_size)


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"params.{name}: required by this subcommand")
    return value


def _ybar(cfg, nd: int) -> np.ndarray:
    y = np.zeros(nd) if cfg.params.ybar is None else np.asarray(cfg.params.ybar, dtype=float)
    if y.shape != (nd,):
        raise ConfigError(f"params.ybar: expected {nd} entries, got {y.size}")
    return y


def run_validate(cfg, sysm) -> Result:
    res = Result(["quantity", "value"])
    rep = validate_structure(sysm)
    hm = build_hormander_matrix(sysm)
    res.rows += [["h1_lambda", rep.h1_lambda], ["h2_box_bound", rep.h2_box_bound],
                 ["hormander_below_mass", hm.below_mass], ["hormander_total_norm", hm.total_norm]]
    for l, e in enumerate(hm.diag_errors):
        res.rows.append([f"hormander_diag_error_{l}", e])
    res.summary.update(validation=rep.to_dict(), hormander=hm.to_dict())
    res.check("structure", rep.structure_ok)
    res.check("H1", rep.h1_ok)
    res.check("hormander_triangular", hm.triangular_ok)
    res.check("hormander_diagonal", hm.diagonal_ok)
    return res


def run_limits(cfg, sysm) -> Result:
    res = Result(["matrix", "row", "col", "value"])
    L = build_limit_model(sysm)
    for name, m in (("A", L.A), ("Q", L.Q), ("AQAT", L.cov)):
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                res.rows.append([name, i + 1, j + 1, m[i, j]])
    qd, qf = q_n(L.n, L.d, "determinant"), q_n(L.n, L.d, "factorial")
    y = _ybar(cfg, sysm.nd)
    sign = gradient_sign_check(L, np.vstack([y + 0.3, y - 0.2]))
    res.summary.update(limit=L.to_dict(), q_n_determinant=qd, q_n_factorial=qf, peak=L.peak,
                       density_at_ybar=float(limit_density(L, y)), gradient_sign=sign)
    res.check("q_n_routes_agree", abs(qd - qf) <= 1e-10 * qf)
    res.check("gradient_matches_differences", sign["relative_error"]["gaussian"] < 1e-5)
    return res


def run_simulate(cfg, sysm) -> Result:
    rec = tuple(cfg.params.record)
    batch = simulate_paths(sysm, _sim_config(cfg, record=rec))
    res = Result(batch.columns())
    res.rows = batch.matrix().tolist()
    res.summary.update(n_paths=batch.config.n_paths, n_flagged=batch.n_flagged,
                       mean=batch.terminal().mean(axis=0), cov=np.cov(batch.terminal().T))
    res.check("flagged_fraction", batch.n_flagged <= 1e-3 * batch.config.n_paths)
    return res


def run_taylor(cfg, sysm) -> Result:
    res = Result(["t", "block", "residual_l2", "moment_norm"])
    grid = np.sort(np.asarray(_require(cfg.params.t_grid, "t_grid"), dtype=float))
    L = build_limit_model(sysm)
    d, n, p = sysm.d, sysm.n, cfg.params.p
    resid, moments, scale = [], [], []
    for t in grid:
        batch = simulate_joint_N(sysm, _sim_config(cfg, t))
        th = solve_theta(sysm, float(t))
        r = residuals(sysm, batch.config, L, th, batch)
        resid.append(r.l2())
        dev = batch.terminal() - th.terminal
        mom = [np.mean(np.sum(dev[:, (j - 1) * d:] ** 2, axis=1) ** (p / 2)) ** (1 / p) for j in range(1, n + 1)]
        moments.append(mom)
        blocks = dev.reshape(len(dev), n, d)
        scale.append(np.sqrt(np.mean(np.sum(blocks**2, axis=2), axis=0)))
        for j in range(n):
            res.rows.append([float(t), j + 1, r.l2()[j], mom[j]])
    resid, moments, scale = np.array(resid), np.array(moments), np.array(scale)
    mslopes = [loglog_slope(grid, moments[:, j]) for j in range(n)]
    res.summary["moment_slopes"] = [s.to_dict() for s in mslopes]
    mtol = cfg.params.slope_tolerance or 0.15
    for j, s in enumerate(mslopes, start=1):
        res.check(f"moment_slope_block_{j}", abs(s.slope - (j - 0.5)) <= mtol)
    if sysm.linear is not None:
        rel = float(np.max(resid / scale))
        res.summary["max_relative_residual"] = rel
        res.check("linear_residual_vanishes", rel <= 1e-6)
    else:
        rtol = cfg.params.tolerance or 0.2
        rslopes = [loglog_slope(grid, resid[:, j]) for j in range(n)]
        res.summary["residual_slopes"] = [s.to_dict() for s in rslopes]
        for j, s in enumerate(rslopes, start=1):
            res.check(f"residual_slope_block_{j}", abs(s.slope - j) <= rtol)
    return res


def run_density(cfg, sysm) -> Result:
    t = cfg.simulation.t
    batch = simulate_paths(sysm, _sim_config(cfg))
    est = estimate_density(batch, solve_theta(sysm, t).terminal, t, sysm.n, sysm.d,
                           cfg.params.bandwidth, cfg.params.kernel)
    pts = np.atleast_2d(np.asarray(cfg.params.points if cfg.params.points is not None
                                   else [_ybar(cfg, sysm.nd).tolist()], dtype=float))
    v, se = est.pdf_chi_se(pts)
    L = build_limit_model(sysm)
    lim = limit_density(L, pts)
    res = Result([f"z{h}" for h in range(1, sysm.nd + 1)] + ["density_chi", "stderr", "limit", "rel_error"])
    for z, a, b, c in zip(pts, v, se, lim):
        res.rows.append(list(z) + [a, b, c, abs(a - c) / c])
    mass = mc_mass(est, cfg.params.mass_draws, cfg.simulation.seed)
    res.summary.update(mass=mass, bandwidth=np.asarray(est.bandwidth), n_paths=est.n_paths)
    res.check("mass", abs(mass - 1.0) <= 0.01)
    if cfg.params.tolerance is not None:
        res.check("matches_limit", bool(np.all(np.abs(v - lim) / lim <= cfg.params.tolerance)))
    return res


def run_tails(cfg, sysm) -> Result:
    t = cfg.simulation.t
    levels = _require(cfg.params.levels, "levels")
    rec = ("terminal", "sup_norm") if cfg.params.per_block else ("terminal",)
    batch = simulate_paths(sysm, _sim_config(cfg, record=rec))
    theta = solve_theta(sysm, t).terminal
    res = Result(["curve", "level", "count", "prob", "lower", "upper"])
    curves = [tail_curve(batch, theta, t, levels, sysm.d)]
    if cfg.params.per_block:
        curves += tail_curve(batch, theta, t, levels, sysm.d, per_block=True)
    for c in curves:
        for a, k, p, lo, hi in zip(c.levels, c.counts, c.prob, c.lower, c.upper):
            res.rows.append([c.label, a, k, p, lo, hi])
    fits = {}
    for reg in cfg.params.regimes:
        if reg not in REGIMES:
            raise ConfigError(f"params.regimes: unknown regime {reg!r}")
        try:
            fits[reg] = fit_envelope(curves[0], reg).to_dict()
        except InsufficientDataError as exc:
            fits[reg] = {"regime": reg, "pass": False, "error": str(exc)}
    res.summary["envelopes"] = fits
    for reg, want in cfg.params.expect.items():
        if reg not in fits:
            raise ConfigError(f"params.expect: regime {reg!r} was not fitted")
        res.check(f"{reg}_pass_is_{str(want).lower()}", fits[reg]["pass"] == want)
    return res


def run_converge(cfg, sysm) -> Result:
    grid = _require(cfg.params.t_grid, "t_grid")
    L = build_limit_model(sysm)
    rows = convergence_experiment(sysm, L, _ybar(cfg, sysm.nd), grid, _sim_config(cfg),
                                  cfg.params.bandwidth, cfg.params.min_eff)
    res = Result(["t", "scaled_density", "stderr", "limit", "rel_error", "n_eff", "flag"])
    for r in rows:
        res.rows.append([r.t, r.estimate, r.stderr, r.limit, r.rel_error, r.n_eff, r.flag])
    res.summary["monotone_error_trend"] = error_trend_monotone(rows)
    tol = cfg.params.tolerance or 0.05
    res.check("rel_error_within_tolerance", all(r.rel_error < tol for r in rows if not r.flag))
    res.check("tail_mass_sufficient", all(not r.flag for r in rows))
    return res


def run_derivatives(cfg, sysm) -> Result:
    grid = _require(cfg.params.t_grid, "t_grid")
    L = build_limit_model(sysm)
    y = _ybar(cfg, sysm.nd)
    bw = cfg.params.bandwidth if cfg.params.bandwidth != "silverman" else "derivative"
    kern = cfg.params.kernel if cfg.params.kernel != "gaussian" else "richardson"
    rows = gradient_hessian_convergence(sysm, L, y, grid, _sim_config(cfg), bw, kern)
    nd = sysm.nd
    cols = ["t"] + [f"grad{h}" for h in range(1, nd + 1)] + [f"grad_se{h}" for h in range(1, nd + 1)]
    cols += [f"grad_limit{h}" for h in range(1, nd + 1)]
    cols += [f"hess{a}{b}" for a in range(1, nd + 1) for b in range(1, nd + 1)]
    cols += [f"hess_limit{a}{b}" for a in range(1, nd + 1) for b in range(1, nd + 1)]
    cols += ["hessian_rel_error"]
    res = Result(cols)
    for r in rows:
        res.rows.append([r.t, *r.gradient, *r.gradient_se, *r.gradient_limit, *r.hessian.ravel(),
                         *r.hessian_limit.ravel(), r.hessian_rel_error])
    tol = cfg.params.tolerance or 0.15
    res.check("hessian_within_tolerance", all(r.hessian_rel_error <= tol for r in rows))
    if not np.any(y):
        res.check("gradient_zero_within_3se", all(np.all(r.gradient_z <= 3.0) for r in rows))
    else:
        res.check("gradient_within_tolerance", all(r.gradient_rel_error <= tol for r in rows))
    return res


def run_decay(cfg, sysm) -> Result:
    grid = _require(cfg.params.t_grid, "t_grid")
    out = diagonal_decay(sysm, grid, cfg.params.j)
    res = Result(["t", "log_density", "scaled"])
    for t, lp, v in zip(out.t, out.log_density, out.values):
        res.rows.append([t, lp, v])
    res.summary.update(applicable=out.applicable, j=out.j, reason=out.reason, max_value=out.max_value)
    if out.applicable:
        res.check("limsup_negative", out.passed)
    return res


def _basket(cfg) -> BasketSpec:
    key, params = cfg.model.key, dict(cfg.model.params)
    if key == "local_vol_basket":
        return BasketSpec.from_params(**params)
    if key == "bs_asian":
        if params.get("convention", "ito") != "ito":
            raise ConfigError("model.params.convention: pricing needs the Ito reading of bs_asian")
        return BasketSpec.constant_vol(params.get("s0", 100.0), params.get("vol", 0.2), r=params.get("r", 0.05),
                                       maturity=params.get("horizon", 1.0))
    raise ConfigError(f"model.key: price needs 'local_vol_basket' or 'bs_asian', got {key!r}")


def run_price(cfg, sysm) -> Result:
    b = _basket(cfg)
    grid = cfg.params.t_grid or [cfg.simulation.t]
    if cfg.params.kind not in ("call", "put"):
        raise ConfigError("params.kind: must be 'call' or 'put'")
    if cfg.params.strike is not None:
        raise ConfigError("params.strike: the asymptotic table is at the money only")
    rows = price_table(b, grid, _sim_config(cfg), cfg.params.kind, cfg.params.control_variate)
    res = Result(["t", "mc", "se", "asymptotic", "ratio"])
    for r in rows:
        res.rows.append([r["t"], r["mc"], r["se"], r["asymptotic"], r["ratio"]])
    lv = limit_variance(b)
    res.summary.update(limit_variance=lv.variance, covariance_route_gap=lv.discrepancy)
    tol = cfg.params.tolerance or 0.02
    res.check("ratio_within_tolerance", all(abs(r["ratio"] - 1.0) <= tol for r in rows))
    res.check("covariance_routes_agree", lv.discrepancy <= 1e-10 * max(1.0, float(np.abs(lv.block_cov).max())))
    return res


RUNNERS = {
    "validate": run_validate,
    "limits": run_limits,
    "simulate": run_simulate,
    "taylor-check": run_taylor,
    "density": run_density,
    "tails": run_tails,
    "converge": run_converge,
    "derivatives": run_derivatives,
    "diagonal-decay": run_decay,
    "price": run_price,
}


def run(subcommand: str, config_text: str, overrides: Optional[dict] = None, out: Optional[str] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    start = time.perf_counter()
    try:
        cfg = load_config(config_text, overrides)
        if cfg.operation is not None and cfg.operation != subcommand:
            raise ConfigError(f"operation: config is for {cfg.operation!r}, not {subcommand!r}")
        sysm = build_model(cfg.model.key, cfg.model.params)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, KeyError) as exc:
        print(f"config error: model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HypochainError, ValueError) as exc:
        print(f"model error ({cfg.model.key}): {exc}", file=sys.stderr)
        return EXIT_MODEL
    try:
        res = RUNNERS[subcommand](cfg, sysm)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HypochainError, ValueError, FloatingPointError) as exc:
        print(f"{subcommand} failed on model {cfg.model.key!r}: {exc}", file=sys.stderr)
        return EXIT_MODEL

    outdir = Path(out or cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / f"{subcommand}.csv", res.columns, res.rows)
    ok = all(res.checks.values())
    summary = {
        "subcommand": subcommand,
        "model": cfg.model.key,
        "seed": cfg.simulation.seed,
        "version": artifact_version(),
        "wall_clock_seconds": time.perf_counter() - start,
        "config_text": config_text,
        "overrides": {k: v for k, v in (overrides or {}).items() if v is not None},
        "config": cfg.model_dump(),
        "checks": res.checks,
        "pass": ok,
        **res.summary,
    }
    with open(outdir / f"{subcommand}.summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, flag in res.checks.items():
        print(f"{'PASS' if flag else 'FAIL'}  {subcommand}: {name}")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypochain", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="YAML experiment config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", help="output directory (overrides the config)")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {
        "simulation.seed": args.seed,
        "simulation.n_paths": args.paths,
        "simulation.steps": args.steps,
        "simulation.workers": args.workers,
    }
    return run(args.subcommand, text, overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())
