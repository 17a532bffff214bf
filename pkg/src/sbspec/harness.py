"""Experiment orchestration: config parsing, dispatch, rate fits, emission.

Configs are TOML files with a [problem] table (interval, potential
polynomial, couplings, shapes) and an [experiment] table (mode, eps
sequence, spectral windows).  Results are written as CSV for tabular data
and JSON for reports, both carrying a schema_version field; writes are
atomic (temp file + rename) and deterministic for a fixed config.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics, limit, perturbed, resonance, shapes

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "VerdictFailure",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "fit_rate",
]

SCHEMA_VERSION = 1
MODES = ("resonant-set", "perturbed", "limit", "correctors", "converge",
         "divergence-probe")
RESONANT_DISPATCH_TOL = 1e-6


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


class VerdictFailure(RuntimeError):
    """An experiment ran but its configured verdict did not pass."""


@dataclass
class ExperimentConfig:
    problem: perturbed.Problem
    mode: str
    eps_values: tuple = (0.1, 0.05, 0.025, 0.0125, 0.00625)
    lambda_window: tuple = (1.0, 4000.0)
    alpha_window: tuple = (-3000.0, 3000.0)
    max_count: int = 16
    target_index: int = 0
    slope_band: tuple = (0.8, 1.5)
    efn_slope_min: float = 0.8
    stability_band: float = 0.2
    dump_eigenfunctions: bool = False
    eigenfunction_samples: int = 400
    out_dir: str = "."
    raw: dict = field(default_factory=dict)


def _get(table, key, path, cast=None, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    val = table[key]
    if cast is not None:
        try:
            return cast(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.{key}: {exc}") from None
    return val


def _parse_shape(table, path):
    if table is None:
        return None
    family = _get(table, "family", path, default="bump-poly")
    if family != "bump-poly":
        raise ConfigError(f"{path}.family: unknown shape family {family!r}")
    coeffs = _get(table, "coefficients", path, required=True)
    try:
        return shapes.make_bump_shape(coeffs)
    except shapes.ShapeError as exc:
        raise ConfigError(f"{path}.coefficients: {exc}") from None


def parse_config(data: dict) -> ExperimentConfig:
    if _get(data, "schema_version", "", cast=int, default=SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError("schema_version: unsupported value")
    prob = data.get("problem")
    if prob is None:
        raise ConfigError("problem: missing table")
    shp = prob.get("shapes", {})
    try:
        problem = perturbed.Problem(
            a=_get(prob, "a", "problem", cast=float, required=True),
            b=_get(prob, "b", "problem", cast=float, required=True),
            u_coeffs=tuple(_get(prob, "u", "problem", default=[0.0])),
            alpha=_get(prob, "alpha", "problem", cast=float, default=0.0),
            beta=_get(prob, "beta", "problem", cast=float, default=0.0),
            gamma1=_get(prob, "gamma1", "problem", cast=float, default=0.0),
            gamma2=_get(prob, "gamma2", "problem", cast=float, default=0.0),
            psi=_parse_shape(shp.get("psi"), "problem.shapes.psi"),
            phi=_parse_shape(shp.get("phi"), "problem.shapes.phi"),
            upsilon1=_parse_shape(shp.get("upsilon1"), "problem.shapes.upsilon1"),
            upsilon2=_parse_shape(shp.get("upsilon2"), "problem.shapes.upsilon2"),
            bc_left=_get(prob, "bc_left", "problem", default="clamped"),
            bc_right=_get(prob, "bc_right", "problem", default="clamped"),
        )
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from None

    exp = data.get("experiment", {})
    mode = _get(exp, "mode", "experiment", default="perturbed")
    if mode not in MODES:
        raise ConfigError(f"experiment.mode: must be one of {MODES}")
    eps_values = tuple(float(e) for e in _get(exp, "eps", "experiment",
                                              default=[0.1, 0.05, 0.025, 0.0125, 0.00625]))
    if len(eps_values) == 0:
        raise ConfigError("experiment.eps: sequence is empty")
    if any(e <= 0 for e in eps_values):
        raise ConfigError("experiment.eps: values must be positive")
    if any(e2 >= e1 for e1, e2 in zip(eps_values, eps_values[1:])):
        raise ConfigError("experiment.eps: sequence must be strictly decreasing")
    if max(eps_values) >= min(abs(problem.a), problem.b):
        raise ConfigError("experiment.eps: max eps must be below min(|a|, b)")

    cfg = ExperimentConfig(
        problem=problem,
        mode=mode,
        eps_values=eps_values,
        lambda_window=tuple(_get(exp, "lambda_window", "experiment",
                                 default=[1.0, 4000.0])),
        alpha_window=tuple(_get(exp, "alpha_window", "experiment",
                                default=[-3000.0, 3000.0])),
        max_count=_get(exp, "max_count", "experiment", cast=int, default=16),
        target_index=_get(exp, "target_index", "experiment", cast=int, default=0),
        slope_band=tuple(_get(exp, "slope_band", "experiment",
                              default=[0.8, 1.5])),
        efn_slope_min=_get(exp, "efn_slope_min", "experiment", cast=float,
                           default=0.8),
        stability_band=_get(exp, "stability_band", "experiment", cast=float,
                            default=0.2),
        dump_eigenfunctions=_get(exp, "dump_eigenfunctions", "experiment",
                                 default=False),
        eigenfunction_samples=_get(exp, "eigenfunction_samples", "experiment",
                                   cast=int, default=400),
        raw=data,
    )
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return parse_config(data)


def fit_rate(rows):
    """Least-squares slope of log(value) against log(eps).

    rows: iterable of (eps, value).  Nonpositive values are excluded with a
    warning; fewer than three usable rows is an error.  Returns
    (slope, intercept, r_squared) with intercept reported as exp(offset),
    i.e. the fitted prefactor.
    """
    rows = [(float(e), float(v)) for e, v in rows]
    usable = [(e, v) for e, v in rows if e > 0 and v > 0]
    if len(usable) < len(rows):
        warnings.warn(f"fit_rate: excluded {len(rows) - len(usable)} "
                      "nonpositive rows")
    if len(usable) < 3:
        raise ValueError("fit_rate needs at least 3 usable rows")
    x = np.log([e for e, _ in usable])
    y = np.log([v for _, v in usable])
    slope, offset = np.polyfit(x, y, 1)
    yhat = slope * x + offset
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(np.exp(offset)), r2


def _atomic_write(path, write_fn):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path, header, rows):
    def go(fh):
        w = csv.writer(fh)
        w.writerow(["schema_version", SCHEMA_VERSION])
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    _atomic_write(path, go)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    _atomic_write(path, lambda fh: json.dump(_jsonable(payload), fh, indent=2,
                                             sort_keys=True))


def is_resonant_coupling(p: perturbed.Problem, tol=RESONANT_DISPATCH_TOL):
    """Relative test of membership of alpha in the resonant set of psi.

    |D(alpha)| is compared against the determinant scale nearby; the
    interface operator is built only when the coupling sits on a root.
    """
    if p.psi is None or p.alpha == 0.0:
        return False
    a = p.alpha
    probes = np.array([a, a * (1 + 1e-3) + 1e-3, a * (1 - 1e-3) - 1e-3])
    d = resonance.resonance_determinant(p.psi, probes)
    scale = max(abs(d[1]), abs(d[2]), 1e-300)
    return abs(d[0]) <= tol * scale


def _resonance_for(p: perturbed.Problem):
    width = max(1.0, 1e-4 * abs(p.alpha))
    found = resonance.resonant_set(p.psi, (p.alpha - width, p.alpha + width),
                                   max_count=4)
    cands = [r for r in found if abs(r.alpha - p.alpha) <= 1e-6 * max(1, abs(p.alpha))]
    if not cands:
        raise RuntimeError("dispatch says resonant but no refined root found")
    return cands[0]


def _limit_pairs(cfg: ExperimentConfig):
    p = cfg.problem
    if is_resonant_coupling(p):
        r = _resonance_for(p)
        ic = limit.build_interface(r, p.beta, p.phi)
        pairs = limit.limit_spectrum_resonant(p, ic, cfg.lambda_window,
                                              max_count=cfg.max_count)
        return pairs, r, ic
    pairs = limit.limit_spectrum_nonresonant(p, cfg.lambda_window,
                                             max_count=cfg.max_count)
    return pairs, None, None


def _correctors(cfg: ExperimentConfig):
    pairs, r, ic = _limit_pairs(cfg)
    if cfg.target_index >= len(pairs):
        raise ConfigError("experiment.target_index: no such limit eigenvalue "
                          "in the window")
    pair = pairs[cfg.target_index]
    if r is not None:
        return asymptotics.correctors_resonant(cfg.problem, r, ic, pair), r, ic
    return asymptotics.correctors_nonresonant(cfg.problem, pair), None, None


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Dispatch one experiment; returns (report dict, list of files written)."""
    out = out_dir if out_dir is not None else cfg.out_dir
    files = []
    report = {"mode": cfg.mode, "verdict": "pass"}

    if cfg.mode == "resonant-set":
        rs = resonance.resonant_set(cfg.problem.psi, cfg.alpha_window,
                                    max_count=cfg.max_count)
        rows = [(f"{r.alpha!r}", "" if r.theta is None else f"{r.theta!r}",
                 r.multiplicity, r.nondegenerate) for r in rs]
        path = os.path.join(out, "resonant_set.csv")
        _write_csv(path, ["alpha", "theta", "multiplicity", "nondegenerate"], rows)
        files.append(path)
        report["count"] = len(rs)

    elif cfg.mode == "perturbed":
        for eps in cfg.eps_values:
            pairs = perturbed.perturbed_spectrum(cfg.problem, eps,
                                                 cfg.lambda_window,
                                                 max_count=cfg.max_count)
            rows = []
            for k, q in enumerate(pairs, start=1):
                res = perturbed.eigenpair_ode_residual(cfg.problem, eps, q)
                rows.append([k, f"{q.lam!r}", f"{res:.3e}",
                             *[f"{float(t)!r}" for t in q.trace_left],
                             *[f"{float(t)!r}" for t in q.trace_right]])
            path = os.path.join(out, f"perturbed_eps{eps:g}.csv")
            _write_csv(path, ["k", "lambda", "residual",
                              "yl", "yl1", "yl2", "yl3",
                              "yr", "yr1", "yr2", "yr3"], rows)
            files.append(path)
            if cfg.dump_eigenfunctions:
                xs = np.linspace(cfg.problem.a, cfg.problem.b,
                                 cfg.eigenfunction_samples)
                for k, q in enumerate(pairs, start=1):
                    ys = q.y(xs)
                    epath = os.path.join(out, f"eigenfunction_eps{eps:g}_k{k}.csv")
                    _write_csv(epath, ["x", "y"],
                               [[f"{float(x)!r}", f"{float(y)!r}"]
                                for x, y in zip(xs, ys)])
                    files.append(epath)
        report["eps_values"] = list(cfg.eps_values)

    elif cfg.mode == "limit":
        pairs, r, ic = _limit_pairs(cfg)
        rows = []
        for k, e in enumerate(pairs, start=1):
            rows.append([k, f"{e.lam!r}", e.mode,
                         "" if ic is None else f"{ic.theta!r}",
                         "" if ic is None else f"{ic.kappa!r}"])
        path = os.path.join(out, "limit_spectrum.csv")
        _write_csv(path, ["k", "lambda", "mode", "theta", "kappa"], rows)
        files.append(path)
        report["resonant"] = r is not None

    elif cfg.mode == "correctors":
        cs, r, ic = _correctors(cfg)
        payload = {
            "case": cs.case,
            "lambda0": cs.lam0, "lambda1": cs.lam1, "lambda2": cs.lam2,
            "c1": cs.c1, "c2": cs.c2,
            "theta": None if ic is None else ic.theta,
            "kappa": None if ic is None else ic.kappa,
            "diagnostics": cs.diagnostics,
        }
        path = os.path.join(out, "correctors.json")
        _write_json(path, payload)
        files.append(path)
        report.update(payload)

    elif cfg.mode == "converge":
        cs, r, ic = _correctors(cfg)
        acc = asymptotics.quasimode_accuracy(cs, cfg.eps_values)
        usable = [row for row in acc["rows"] if row.get("found")]
        slope, prefactor, r2 = fit_rate([(row["eps"], row["err_limit"])
                                         for row in usable])
        ok = cfg.slope_band[0] <= slope <= cfg.slope_band[1] \
            and acc["slope_efn"] >= cfg.efn_slope_min
        payload = {
            "case": cs.case,
            "lambda0": cs.lam0, "lambda1": cs.lam1, "lambda2": cs.lam2,
            "rows": acc["rows"],
            "slope": slope, "prefactor": prefactor, "r_squared": r2,
            "slope_efn": acc["slope_efn"],
            "slope_err_first_order": acc["slope_err_first_order"],
            "slope_jumps": acc["slope_jumps"],
            "slope_band": list(cfg.slope_band),
            "verdict": "pass" if ok else "fail",
        }
        path = os.path.join(out, "converge.json")
        _write_json(path, payload)
        files.append(path)
        report.update(payload)

    elif cfg.mode == "divergence-probe":
        probe = perturbed.divergent_branch_probe(cfg.problem, cfg.eps_values)
        rows = [[f"{row['eps']!r}",
                 "" if row["lam1"] is None else f"{row['lam1']!r}",
                 "" if row["scaled_lam1"] is None else f"{row['scaled_lam1']!r}",
                 row["n_negative"]] for row in probe["rows"]]
        path = os.path.join(out, "divergence_probe.csv")
        _write_csv(path, ["eps", "lambda1", "eps4_lambda1", "n_negative"], rows)
        files.append(path)
        verdict = "pass"
        if not probe["threshold_reached"]:
            verdict = "threshold-not-reached"
        else:
            scaled = [row["scaled_lam1"] for row in probe["rows"]]
            counts = {row["n_negative"] for row in probe["rows"]}
            c1, c2 = scaled[-1], scaled[-2]
            stable = abs(c1 - c2) <= cfg.stability_band * abs(c2)
            if not (stable and len(counts) == 1 and c1 < 0):
                verdict = "fail"
        payload = {"rows": probe["rows"], "verdict": verdict,
                   "threshold_reached": probe["threshold_reached"]}
        jpath = os.path.join(out, "divergence_probe.json")
        _write_json(jpath, payload)
        files.append(jpath)
        report.update(payload)

    else:  # pragma: no cover - parse_config guards the mode
        raise ConfigError(f"experiment.mode: unhandled mode {cfg.mode}")

    return report, files
