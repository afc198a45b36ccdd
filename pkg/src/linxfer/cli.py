"""Command-line front end for sweeps, closed-form curves, and checks.

Subcommands
-----------
sweep        Monte-Carlo sweep over source ratios -> CSV
theory       closed-form error curves -> CSV
biasvar      nested bias-variance decomposition -> CSV
check        benefit conditions for one parameter point (prints a report)
tune-factor  validation-selected shrinkage factors -> CSV

Configs are TOML with one table per subcommand ([sweep], [theory], [biasvar],
[tune_factor]); unknown keys are rejected with their full path.  Every CSV
gets a JSON manifest sidecar (<out>.manifest.json) recording the resolved
settings.  Floats are written with 17 significant digits; cells that are
undefined (critical-band points) are left empty and flagged where the schema
has a flag column.  Exit status: 0 when every requested point was computed,
2 on configuration errors.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, is_dataclass, replace

import numpy as np

from . import __version__, theory
from .experiments import (BiasVarConfig, SweepConfig, bias_variance,
                          default_gamma_grid, run_factor_tuning, run_sweep)
from .taskmodel import (CovarianceSpec, RelationSpec, SourceTaskParams,
                        build_covariance, build_relation)
from .theory import GeneralSettingParams, SimpleSettingParams

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# TOML loading and validation
# ---------------------------------------------------------------------------

def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:          # pragma: no cover - py<3.11 path
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")


def _as_float(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _as_int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _as_bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(f"{path}: expected true/false, got {v!r}")
    return v


def _as_str(v, path, choices=None):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(f"{path}: expected one of {sorted(choices)}, got {v!r}")
    return v


def _as_float_list(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a nonempty array of numbers")
    return tuple(_as_float(x, f"{path}[{i}]") for i, x in enumerate(v))


def _as_int_list(v, path):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a nonempty array of integers")
    return tuple(_as_int(x, f"{path}[{i}]") for i, x in enumerate(v))


def _as_alpha(v, path):
    if isinstance(v, str):
        if v != "formula":
            raise ConfigError(f"{path}: expected a number or 'formula', got {v!r}")
        return v
    return _as_float(v, path)


def _as_table(v, path):
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected a table")
    return v


def _parse_relation(tbl, path):
    tbl = _as_table(tbl, path)
    known = {"kind", "r", "kappa", "factor", "base"}
    for key in tbl:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    kw = {}
    if "kind" in tbl:
        kw["kind"] = _as_str(tbl["kind"], f"{path}.kind")
    if "r" in tbl:
        kw["r"] = _as_int(tbl["r"], f"{path}.r")
    if "kappa" in tbl:
        kw["kappa"] = _as_float(tbl["kappa"], f"{path}.kappa")
    if "factor" in tbl:
        kw["factor"] = _as_float(tbl["factor"], f"{path}.factor")
    if "base" in tbl:
        kw["base"] = _parse_relation(tbl["base"], f"{path}.base")
    try:
        return RelationSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")


def _parse_cov(tbl, path):
    tbl = _as_table(tbl, path)
    for key in tbl:
        if key not in ("kind", "rate"):
            raise ConfigError(f"{path}.{key}: unknown key")
    kw = {}
    if "kind" in tbl:
        kw["kind"] = _as_str(tbl["kind"], f"{path}.kind")
    if "rate" in tbl:
        kw["rate"] = _as_float(tbl["rate"], f"{path}.rate")
    try:
        return CovarianceSpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}")


_KNOWN_SECTIONS = ("sweep", "theory", "biasvar", "tune_factor")


def _section(doc, name, config_path):
    for key in doc:
        if key not in _KNOWN_SECTIONS:
            raise ConfigError(f"{key}: unknown top-level table (expected one of "
                              f"{list(_KNOWN_SECTIONS)})")
    if name not in doc:
        raise ConfigError(f"config {config_path} has no [{name}] table")
    return _as_table(doc[name], name)


_SWEEP_KEYS = {
    "gamma_tgt": ("gamma_tgt", _as_float),
    "m_list": ("m_list", _as_int_list),
    "d": ("d", _as_int),
    "gamma_src_grid": ("gamma_src_grid", _as_float_list),
    "mode": ("mode", _as_str),
    "sigma_eps_sq": ("sigma_eps_sq", _as_float),
    "sigma_eta_sq": ("sigma_eta_sq", _as_float),
    "sigma_xi_sq": ("sigma_xi_sq", _as_float),
    "b": ("b", _as_float),
    "runs_per_point": ("runs_per_point", _as_int),
    "val_size": ("val_size", _as_int),
    "test_size": ("test_size", _as_int),
    "alpha_grid": ("alpha_grid", _as_float_list),
    "rho_grid": ("rho_grid", _as_float_list),
    "scale_factor": ("scale_factor", _as_float),
    "master_seed": ("master_seed", _as_int),
}


def _sweep_config(tbl, section):
    kw = {}
    for key, value in tbl.items():
        path = f"{section}.{key}"
        if key == "relation":
            kw["relation"] = _parse_relation(value, path)
        elif key == "cov_x":
            kw["cov_x"] = _parse_cov(value, path)
        elif key == "cov_z":
            kw["cov_z"] = _parse_cov(value, path)
        elif key in _SWEEP_KEYS:
            field_name, coerce = _SWEEP_KEYS[key]
            kw[field_name] = coerce(value, path)
        else:
            raise ConfigError(f"{path}: unknown key")
    for req in ("gamma_tgt", "m_list"):
        if req not in kw:
            raise ConfigError(f"{section}.{req} is required")
    try:
        return SweepConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}]: {exc}")


_BIASVAR_KEYS = {
    "gamma_tgt": _as_float,
    "m_list": _as_int_list,
    "gamma_src_grid": _as_float_list,
    "d": _as_int,
    "mode": _as_str,
    "sigma_eps_sq": _as_float,
    "sigma_eta_sq": _as_float,
    "sigma_xi_sq": _as_float,
    "b": _as_float,
    "main_runs": _as_int,
    "sub_runs": _as_int,
    "alpha": _as_alpha,
    "scale_factor": _as_float,
    "master_seed": _as_int,
}


def _biasvar_config(tbl):
    kw = {}
    for key, value in tbl.items():
        path = f"biasvar.{key}"
        if key == "relation":
            kw["relation"] = _parse_relation(value, path)
        elif key == "cov_z":
            kw["cov_z"] = _parse_cov(value, path)
        elif key in _BIASVAR_KEYS:
            kw[key] = _BIASVAR_KEYS[key](value, path)
        else:
            raise ConfigError(f"{path}: unknown key")
    for req in ("gamma_tgt", "m_list", "gamma_src_grid"):
        if req not in kw:
            raise ConfigError(f"biasvar.{req} is required")
    try:
        return BiasVarConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[biasvar]: {exc}")


_THEORY_DEFAULTS = {
    "mode": "simple",
    "d": 128,
    "gamma_src_grid": None,
    "b": 1.0,
    "sigma_eta_sq": 0.5,
    "sigma_xi_sq": 0.5,
    "sigma_eps_sq": 0.1,
    "effective": False,
    "alpha": "formula",
    "assumed": "true_h",
    "relation": RelationSpec(),
    "cov_x": CovarianceSpec(),
    "relation_draws": 8,
    "master_seed": 0,
}

_THEORY_COERCE = {
    "mode": lambda v, p: _as_str(v, p, choices={"simple", "debias", "general"}),
    "gamma_tgt": _as_float,
    "m_list": _as_int_list,
    "d": _as_int,
    "gamma_src_grid": _as_float_list,
    "b": _as_float,
    "sigma_eta_sq": _as_float,
    "sigma_xi_sq": _as_float,
    "sigma_eps_sq": _as_float,
    "effective": _as_bool,
    "alpha": _as_alpha,
    "assumed": lambda v, p: _as_str(v, p, choices={"true_h", "identity", "debias_known"}),
    "relation": _parse_relation,
    "cov_x": _parse_cov,
    "relation_draws": _as_int,
    "master_seed": _as_int,
}


def _theory_settings(tbl):
    st = dict(_THEORY_DEFAULTS)
    for key, value in tbl.items():
        path = f"theory.{key}"
        if key not in _THEORY_COERCE:
            raise ConfigError(f"{path}: unknown key")
        st[key] = _THEORY_COERCE[key](value, path)
    for req in ("gamma_tgt", "m_list"):
        if req not in st:
            raise ConfigError(f"theory.{req} is required")
    if st["gamma_src_grid"] is None:
        st["gamma_src_grid"] = tuple(float(g) for g in default_gamma_grid())
    if any(g <= 0 for g in st["gamma_src_grid"]) or st["gamma_tgt"] <= 0:
        raise ConfigError("theory: ratios must be positive")
    if st["d"] < 2 or st["relation_draws"] < 1:
        raise ConfigError("theory: d must be >= 2 and relation_draws >= 1")
    if any(m < 1 for m in st["m_list"]):
        raise ConfigError("theory.m_list: counts must be positive")
    return st


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x):
    """One CSV cell: 17 significant digits, empty for missing/undefined."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if theory.is_infinite(x):
        return ""
    xf = float(x)
    if math.isnan(xf) or math.isinf(xf):
        return ""
    return f"{xf:.17g}"


def _write_csv(out, header, rows):
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_manifest(out, command, settings, header, n_rows, seed, threads):
    payload = {
        "command": command,
        "version": __version__,
        "out": os.path.abspath(out),
        "columns": list(header),
        "rows": n_rows,
        "seed": seed,
        "threads": threads,
        "settings": _jsonable(settings),
    }
    with open(out + ".manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_threads(args):
    t = getattr(args, "threads", None)
    if t is not None:
        if t < 1:
            raise ConfigError("--threads must be >= 1")
        return t
    env = os.environ.get("LINXFER_THREADS")
    if env:
        try:
            t = int(env)
        except ValueError:
            raise ConfigError(f"LINXFER_THREADS must be an integer, got {env!r}")
        if t < 1:
            raise ConfigError("LINXFER_THREADS must be >= 1")
        return t
    return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

SWEEP_HEADER = ("gamma_src", "m", "method", "mean_error", "stderr",
                "mean_alpha", "mean_rho", "n_runs")
THEORY_HEADER = ("gamma_src", "m", "mode", "error", "flag")
BIASVAR_HEADER = ("gamma_src", "m", "method", "bias_sq", "variance",
                  "total", "residual")
FACTOR_HEADER = ("gamma_src", "m", "mean_rho", "stderr_rho",
                 "rho_inv_gamma", "n_runs")


def cmd_sweep(args):
    cfg = _sweep_config(_section(_load_toml(args.config), "sweep", args.config),
                        "sweep")
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.runs is not None:
        cfg = replace(cfg, runs_per_point=args.runs)
    threads = _resolve_threads(args)
    records = run_sweep(cfg, threads=threads)
    rows = [(r.gamma_src, r.m, r.method, r.mean_error, r.stderr,
             r.mean_alpha, r.mean_rho, r.n_runs) for r in records]
    _write_csv(args.out, SWEEP_HEADER, rows)
    _write_manifest(args.out, "sweep", cfg, SWEEP_HEADER, len(rows),
                    cfg.master_seed, threads)
    return 0


def _relation_is_random(spec):
    if spec.kind in ("subspace", "energy_subspace"):
        return True
    if spec.kind == "scaled":
        return _relation_is_random(spec.base)
    return False


def _theory_point(st, gi, g_nom, mi, m):
    """One (gamma_src, m) cell of the theory CSV: (error or '', flag)."""
    d = st["d"]
    if st["effective"]:
        g_src = d / math.floor(d / g_nom)
        g_tgt = d / math.floor(d / st["gamma_tgt"])
    else:
        g_src, g_tgt = g_nom, st["gamma_tgt"]

    if st["mode"] == "simple":
        if g_src == 1.0:
            return "", "threshold"
        p = SimpleSettingParams(gamma_tgt=g_tgt, gamma_src=g_src, m=m, b=st["b"],
                                sigma_eta_sq=st["sigma_eta_sq"],
                                sigma_xi_sq=st["sigma_xi_sq"],
                                sigma_eps_sq=st["sigma_eps_sq"])
        return theory.error_simple_asymptotic(p), ""

    if st["mode"] == "debias":
        if g_src <= 1.0:
            return "", "threshold"
        p = SimpleSettingParams(gamma_tgt=g_tgt, gamma_src=g_src, m=m, b=st["b"],
                                sigma_eta_sq=st["sigma_eta_sq"],
                                sigma_xi_sq=st["sigma_xi_sq"],
                                sigma_eps_sq=st["sigma_eps_sq"])
        return theory.debias_error_asymptotic(p), ""

    # general: finite-d relation matrices in the asymptotic formula
    if g_src == 1.0:
        return "", "threshold"
    n_tilde = math.floor(d / g_nom)
    if st["alpha"] == "formula":
        n = math.floor(d / st["gamma_tgt"])
        srcs = [SourceTaskParams(n_tilde=n_tilde, sigma_xi_sq=st["sigma_xi_sq"],
                                 sigma_eta_sq=st["sigma_eta_sq"])] * m
        alpha, _ = theory.optimal_alpha_nonasym(srcs, n, d, st["b"],
                                                st["sigma_eps_sq"])
        if theory.is_infinite(alpha):
            return "", "threshold"
    else:
        alpha = st["alpha"]
    sigma_x = build_covariance(st["cov_x"], d)
    draws = st["relation_draws"] if _relation_is_random(st["relation"]) else 1
    vals = []
    for t in range(draws):
        rng = np.random.default_rng([st["master_seed"], gi, mi, t])
        hs = [build_relation(st["relation"], d, rng) for _ in range(m)]
        if st["assumed"] == "true_h":
            assumed = hs
        elif st["assumed"] == "identity":
            assumed = [np.eye(d)] * m
        else:
            assumed = [theory.rho(n_tilde, d) * np.eye(d)] * m
        params = GeneralSettingParams(
            d=d, gamma_tgt=g_tgt, Sigma_x=sigma_x, true_relations=hs,
            assumed_relations=assumed, gamma_srcs=[g_src] * m, b=st["b"],
            sigma_eta_sqs=[st["sigma_eta_sq"]] * m,
            sigma_xi_sqs=[st["sigma_xi_sq"]] * m,
            sigma_eps_sq=st["sigma_eps_sq"])
        err = theory.expected_error_general(params, alpha)
        if theory.is_infinite(err):
            return "", "threshold"
        vals.append(err)
    return float(np.mean(vals)), ""


def cmd_theory(args):
    st = _theory_settings(_section(_load_toml(args.config), "theory", args.config))
    if args.seed is not None:
        st["master_seed"] = args.seed
    rows = []
    for gi, g in enumerate(st["gamma_src_grid"]):
        for mi, m in enumerate(st["m_list"]):
            err, flag = _theory_point(st, gi, g, mi, m)
            rows.append((g, m, st["mode"], err, flag))
    _write_csv(args.out, THEORY_HEADER, rows)
    _write_manifest(args.out, "theory", st, THEORY_HEADER, len(rows),
                    st["master_seed"], 1)
    return 0


def cmd_biasvar(args):
    cfg = _biasvar_config(_section(_load_toml(args.config), "biasvar", args.config))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.runs is not None:
        cfg = replace(cfg, main_runs=args.runs)
    threads = _resolve_threads(args)
    records = bias_variance(cfg, threads=threads)
    rows = [(r.gamma_src, r.m, r.method, r.bias_sq, r.variance, r.total_error,
             r.decomposition_residual) for r in records]
    _write_csv(args.out, BIASVAR_HEADER, rows)
    _write_manifest(args.out, "biasvar", cfg, BIASVAR_HEADER, len(rows),
                    cfg.master_seed, threads)
    return 0


def cmd_tune_factor(args):
    cfg = _sweep_config(_section(_load_toml(args.config), "tune_factor",
                                 args.config), "tune_factor")
    cfg = replace(cfg, mode="debias_tuned")
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.runs is not None:
        cfg = replace(cfg, runs_per_point=args.runs)
    threads = _resolve_threads(args)
    records = run_factor_tuning(cfg, threads=threads)
    rows = [(r.gamma_src, r.m, r.mean_rho, r.stderr_rho, r.rho_inv_gamma,
             r.n_runs) for r in records]
    _write_csv(args.out, FACTOR_HEADER, rows)
    _write_manifest(args.out, "tune-factor", cfg, FACTOR_HEADER, len(rows),
                    cfg.master_seed, threads)
    return 0


def cmd_check(args):
    m, nt, d = args.m, args.n_tilde, args.d
    se, sx, b = args.sigma_eta_sq, args.sigma_xi_sq, args.b
    if min(m, nt, d) < 1 or b <= 0 or min(se, sx) < 0:
        raise ConfigError("check: counts must be positive, b > 0, variances >= 0")
    print(f"parameters: m={m} n_tilde={nt} d={d} "
          f"sigma_eta_sq={se:g} sigma_xi_sq={sx:g} b={b:g}")

    print("transfer vs optimally tuned ridge:")
    try:
        lhs, rhs = theory.negative_transfer_sides(m, nt, d, se, sx, b)
        verdict = "beneficial" if lhs < rhs else "NOT beneficial"
        print(f"  source-noise side = {lhs:.17g}")
        print(f"  signal side       = {rhs:.17g}")
        print(f"  verdict: {verdict} (strict inequality required)")
    except ValueError as exc:
        print(f"  undefined: {exc}")

    print("scale-debiased transfer vs plain transfer:")
    if d >= nt + 2:
        lhs, rhs = theory.debias_beneficial_sides(m, nt, d, se, sx, b)
        verdict = "beneficial" if lhs < rhs else "NOT beneficial"
        print(f"  inflated-noise side = {lhs:.17g}")
        print(f"  extra-signal side   = {rhs:.17g}")
        print(f"  verdict: {verdict} (strict inequality required)")
        m_min = theory.debias_min_models(nt, d, se, sx, b)
        print(f"  minimum model count for benefit: m >= {m_min}"
              f" (necessary lower bound m > {1.0 + d / nt:.17g})")
    else:
        print("  not applicable: needs overparameterized sources with d >= n_tilde + 2")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_io_flags(sub, runs_help=None):
    sub.add_argument("--config", required=True, help="TOML config path")
    sub.add_argument("--out", required=True, help="output CSV path")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config's master seed")
    if runs_help is not None:
        sub.add_argument("--runs", type=int, default=None, help=runs_help)
        sub.add_argument("--threads", type=int, default=None,
                         help="worker threads (default: $LINXFER_THREADS or 1)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="linxfer",
        description="multi-source transfer for linear regression: sweeps, "
                    "closed-form curves, and benefit checks")
    parser.add_argument("--verbose", action="store_true",
                        help="log per-point diagnostics")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("sweep", help="Monte-Carlo sweep over source ratios")
    _add_io_flags(s, runs_help="override runs per grid point")
    s.set_defaults(func=cmd_sweep)

    t = subs.add_parser("theory", help="closed-form error curves")
    _add_io_flags(t)
    t.set_defaults(func=cmd_theory)

    bv = subs.add_parser("biasvar", help="bias-variance decomposition")
    _add_io_flags(bv, runs_help="override the number of main runs")
    bv.set_defaults(func=cmd_biasvar)

    tf = subs.add_parser("tune-factor", help="validation-selected shrinkage factors")
    _add_io_flags(tf, runs_help="override runs per grid point")
    tf.set_defaults(func=cmd_tune_factor)

    c = subs.add_parser("check", help="benefit conditions at one parameter point")
    c.add_argument("--m", type=int, required=True, help="number of source models")
    c.add_argument("--n-tilde", type=int, required=True, help="source sample count")
    c.add_argument("--d", type=int, required=True, help="dimension")
    c.add_argument("--sigma-eta-sq", type=float, required=True,
                   help="relation-noise variance")
    c.add_argument("--sigma-xi-sq", type=float, required=True,
                   help="source output-noise variance")
    c.add_argument("--b", type=float, required=True, help="signal energy")
    c.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
