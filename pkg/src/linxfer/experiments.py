"""Monte-Carlo experiment harness: parameterization sweeps, baselines,
bias-variance decomposition, and shrinkage-factor tuning.

Protocols
---------
* Sweeps vary the source ratio gamma_src (and the model count m), tune the
  transfer weight (and optionally a shrinkage factor) on a validation set,
  and report test-set errors with standard errors, alongside four
  no-transfer baselines: min-norm least squares, validation-tuned ridge,
  formula-optimal ridge, and the null predictor.
* Bias-variance uses nested main-runs (fresh target parameters) and sub-runs
  (fresh datasets) at a fixed transfer weight; the squared-bias estimate is
  debiased by tr(cov)/K so that bias^2 + variance + sigma_eps^2 adds up to the
  mean error exactly.
* Every random draw is keyed by (master_seed, gamma index, m index, run
  index), so results are independent of execution order and thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import theory
from .debias import DebiasGrid, default_alpha_grid, default_rho_grid, tune_validation
from .estimators import fit_min_norm_ls, fit_transfer, test_error_mc
from .taskmodel import (CovarianceSpec, RelationSpec, SourceTaskParams,
                        build_covariance, build_relation, gen_dataset,
                        make_source_theta, sample_beta)

logger = logging.getLogger(__name__)

SWEEP_MODES = ("identity", "true_h", "debias_known", "debias_tuned", "scaled_true_h")


def default_gamma_grid():
    """25 source ratios in [0.1, 5.1], geometrically concentrated near 1."""
    left = 1.0 - np.geomspace(0.9, 0.05, 12)
    right = 1.0 + np.geomspace(0.06, 4.1, 13)
    return np.concatenate([left, right])


# ---------------------------------------------------------------------------
# configs and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SweepConfig:
    gamma_tgt: float
    m_list: tuple
    d: int = 128
    gamma_src_grid: tuple = None            # default: default_gamma_grid()
    mode: str = "identity"
    relation: RelationSpec = field(default_factory=RelationSpec)
    cov_x: CovarianceSpec = field(default_factory=CovarianceSpec)
    cov_z: CovarianceSpec = field(default_factory=CovarianceSpec)
    sigma_eps_sq: float = 0.1
    sigma_eta_sq: float = 0.5
    sigma_xi_sq: float = 0.5
    b: float = 1.0
    runs_per_point: int = 200               # desk scale; the reference protocol uses 2000
    val_size: int = 1000
    test_size: int = 1000
    alpha_grid: tuple = None                # default: default_alpha_grid()
    rho_grid: tuple = None                  # default: per-point default_rho_grid(d, [n_tilde])
    scale_factor: float = None              # scaled_true_h only; None -> n_tilde/d rule
    master_seed: int = 0

    def __post_init__(self):
        if self.mode not in SWEEP_MODES:
            raise ValueError(f"mode must be one of {SWEEP_MODES}, got {self.mode!r}")
        if self.gamma_tgt <= 0 or self.b <= 0:
            raise ValueError("gamma_tgt and b must be positive")
        if min(self.sigma_eps_sq, self.sigma_eta_sq, self.sigma_xi_sq) < 0:
            raise ValueError("variances must be nonnegative")
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if min(self.runs_per_point, self.val_size, self.test_size) < 1:
            raise ValueError("counts must be positive")
        grid = self.gamma_src_grid if self.gamma_src_grid is not None else default_gamma_grid()
        object.__setattr__(self, "gamma_src_grid", tuple(float(g) for g in grid))
        if not self.gamma_src_grid or any(g <= 0 for g in self.gamma_src_grid):
            raise ValueError("gamma_src_grid must be nonempty and positive")
        ms = tuple(int(m) for m in self.m_list)
        if not ms or any(m < 1 for m in ms):
            raise ValueError("m_list must be nonempty positive counts")
        object.__setattr__(self, "m_list", ms)
        alphas = self.alpha_grid if self.alpha_grid is not None else default_alpha_grid()
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in alphas))
        if any(a <= 0 for a in self.alpha_grid) or list(self.alpha_grid) != sorted(self.alpha_grid):
            raise ValueError("alpha_grid must be positive and ascending")
        if self.rho_grid is not None:
            object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
            if any(r <= 0 for r in self.rho_grid) or list(self.rho_grid) != sorted(self.rho_grid):
                raise ValueError("rho_grid must be positive and ascending")
        if self.scale_factor is not None and self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")


@dataclass(frozen=True)
class SweepRecord:
    gamma_src: float
    m: int                  # 0 marks no-transfer baseline rows
    method: str
    mean_error: float
    stderr: float
    mean_alpha: float       # NaN when the method has no tuned weight
    mean_rho: float         # NaN unless the shrinkage factor was tuned
    n_runs: int


@dataclass(frozen=True, eq=False)
class BiasVarConfig:
    """Bias-variance protocol; target inputs are isotropic by construction."""
    gamma_tgt: float
    m_list: tuple
    gamma_src_grid: tuple
    d: int = 64
    mode: str = "identity"
    relation: RelationSpec = field(default_factory=RelationSpec)
    cov_z: CovarianceSpec = field(default_factory=CovarianceSpec)
    sigma_eps_sq: float = 0.1
    sigma_eta_sq: float = 0.5
    sigma_xi_sq: float = 0.5
    b: float = 1.0
    main_runs: int = 150
    sub_runs: int = 50
    alpha: object = "formula"               # positive float, or "formula"
    scale_factor: float = None
    master_seed: int = 0

    def __post_init__(self):
        if self.mode not in SWEEP_MODES or self.mode == "debias_tuned":
            raise ValueError("mode must be a fixed-relation sweep mode (no tuning here)")
        if self.gamma_tgt <= 0 or self.b <= 0 or self.d < 2:
            raise ValueError("gamma_tgt, b must be positive and d >= 2")
        if min(self.sigma_eps_sq, self.sigma_eta_sq, self.sigma_xi_sq) < 0:
            raise ValueError("variances must be nonnegative")
        if self.main_runs < 2 or self.sub_runs < 2:
            raise ValueError("need at least 2 main-runs and 2 sub-runs")
        object.__setattr__(self, "gamma_src_grid", tuple(float(g) for g in self.gamma_src_grid))
        object.__setattr__(self, "m_list", tuple(int(m) for m in self.m_list))
        if not self.gamma_src_grid or any(g <= 0 for g in self.gamma_src_grid):
            raise ValueError("gamma_src_grid must be nonempty and positive")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ValueError("m_list must be nonempty positive counts")
        if isinstance(self.alpha, str):
            if self.alpha != "formula":
                raise ValueError("alpha must be a positive number or the string 'formula'")
            if self.relation.kind != "identity":
                raise ValueError("alpha='formula' requires the identity relation family")
        elif float(self.alpha) <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class BiasVarRecord:
    gamma_src: float
    m: int
    method: str
    bias_sq: float
    variance: float
    total_error: float
    decomposition_residual: float
    bias_sq_stderr: float
    variance_stderr: float


@dataclass(frozen=True)
class FactorRecord:
    gamma_src: float
    m: int
    mean_rho: float
    stderr_rho: float
    rho_inv_gamma: float    # the known-size attenuation baseline min(1, n_tilde/d)
    n_runs: int


# ---------------------------------------------------------------------------
# per-run machinery
# ---------------------------------------------------------------------------

def _draw_run(cfg, m, n, n_tilde, rng):
    """One run's randomness: target params, relations, pretrained fits, splits."""
    d = cfg.d
    beta = sample_beta(cfg.b, d, rng)
    relations = [build_relation(cfg.relation, d, rng) for _ in range(m)]
    pretrained = []
    for h in relations:
        theta = make_source_theta(beta, h, cfg.sigma_eta_sq, rng)
        z, v = gen_dataset(theta, cfg.cov_z, cfg.sigma_xi_sq, n_tilde, rng)
        pretrained.append(fit_min_norm_ls(z, v))
    train = gen_dataset(beta, cfg.cov_x, cfg.sigma_eps_sq, n, rng)
    val = gen_dataset(beta, cfg.cov_x, cfg.sigma_eps_sq, cfg.val_size, rng)
    test = gen_dataset(beta, cfg.cov_x, cfg.sigma_eps_sq, cfg.test_size, rng)
    return beta, relations, pretrained, train, val, test


def _assumed_relations(mode, relations, n_tilde, d, scale_factor):
    """Assumed relation operators per sweep mode (scalars stand for c * I)."""
    m = len(relations)
    if mode == "identity":
        return [1.0] * m
    if mode == "true_h":
        return relations
    factor = 1.0 if d <= n_tilde else n_tilde / d
    if mode == "debias_known":
        return [factor] * m
    if mode == "scaled_true_h":
        f = scale_factor if scale_factor is not None else factor
        return [f * h for h in relations]
    raise ValueError(f"no fixed assumed relations for mode {mode!r}")


def _tune_transfer_grid(train, val, pretrained, assumed, alphas, n):
    """Validation-tune alpha for fixed assumed relations; returns (alpha, coef).

    All candidates share one eigenbasis: for scalar relations the basis of
    X'X, otherwise the basis of the Gram-whitened X'X.  Ties go to the
    smaller alpha.
    """
    X, y = train
    X_val, y_val = val
    d = X.shape[1]
    pull = np.zeros(d)
    scalar = all(np.ndim(a) == 0 for a in assumed)
    if scalar:
        gram_mult = float(sum(float(a) ** 2 for a in assumed))
        for a, th in zip(assumed, pretrained):
            pull += float(a) * th
        lam, U = np.linalg.eigh(X.T @ X)
        basis = U
    else:
        gram_mult = 1.0
        r2 = np.zeros((d, d))
        for a, th in zip(assumed, pretrained):
            r2 += a.T @ a
            pull += a.T @ th
        evals, evecs = np.linalg.eigh(r2)
        r_inv = (evecs / np.sqrt(evals)) @ evecs.T
        lam, U = np.linalg.eigh(r_inv @ (X.T @ X) @ r_inv)
        basis = r_inv @ U
    lam = np.clip(lam, 0.0, None)

    g_y = basis.T @ (X.T @ y)
    g_p = basis.T @ pull
    proj = X_val @ basis
    na = n * np.asarray(alphas, dtype=float)
    coefs = (g_y[:, None] + na[None, :] * g_p[:, None]) \
        / (lam[:, None] + na[None, :] * gram_mult)
    resid = y_val[:, None] - proj @ coefs
    k = int(np.argmin(np.mean(resid * resid, axis=0)))
    return float(alphas[k]), basis @ coefs[:, k]


def tune_alpha(train, val, fit_fn, alpha_grid):
    """Pick the alpha from an ascending grid minimizing validation MSE.

    ``fit_fn(X, y, alpha)`` must return a coefficient vector; ties go to the
    smaller alpha.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) < 0):
        raise ValueError("alpha_grid must be nonempty and ascending")
    X, y = train
    X_val, y_val = val
    if X_val.shape[0] == 0:
        raise ValueError("validation set is empty")
    errs = np.empty(grid.size)
    for i, a in enumerate(grid):
        coef = fit_fn(X, y, float(a))
        r = y_val - X_val @ coef
        errs[i] = np.mean(r * r)
    return float(grid[int(np.argmin(errs))])


def _baselines(train, val, test, n, d, b, sigma_eps_sq, alphas):
    """Per-run errors of the four no-transfer baselines."""
    X, y = train
    lam, U = np.linalg.eigh(X.T @ X)
    lam = np.clip(lam, 0.0, None)
    u_y = U.T @ (X.T @ y)
    proj_val = val.inputs @ U
    proj_test = test.inputs @ U

    na = n * np.asarray(alphas, dtype=float)
    coefs = u_y[:, None] / (lam[:, None] + na[None, :])
    resid = val.outputs[:, None] - proj_val @ coefs
    k = int(np.argmin(np.mean(resid * resid, axis=0)))
    r_test = test.outputs - proj_test @ coefs[:, k]

    alpha_formula = theory.ridge_optimal(d, n, b, sigma_eps_sq)
    w_formula = u_y / (lam + n * alpha_formula)
    rf_test = test.outputs - proj_test @ w_formula

    mn = fit_min_norm_ls(X, y)
    return {
        "min_norm": test_error_mc(mn, test),
        "ridge_tuned": float(np.mean(r_test * r_test)),
        "ridge_formula": float(np.mean(rf_test * rf_test)),
        "null": float(np.mean(test.outputs ** 2)),
        "_alpha_ridge_tuned": float(alphas[k]),
        "_alpha_ridge_formula": alpha_formula,
    }


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _mean_stderr(x):
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return float(x[0]), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def _counts(cfg, gamma_src):
    n = math.floor(cfg.d / cfg.gamma_tgt)
    n_tilde = math.floor(cfg.d / gamma_src)
    if n < 1 or n_tilde < 1:
        raise ValueError(
            f"gamma values too large for d={cfg.d}: need floor(d/gamma) >= 1")
    return n, n_tilde


def _sweep_point(cfg, gi, gamma_src, mi, m):
    runs = cfg.runs_per_point
    n, n_tilde = _counts(cfg, gamma_src)
    alphas = np.asarray(cfg.alpha_grid)
    if cfg.mode == "debias_tuned":
        rho_grid = np.asarray(cfg.rho_grid) if cfg.rho_grid is not None \
            else default_rho_grid(cfg.d, [n_tilde])
        grids = DebiasGrid(alphas, rho_grid)
    sigma_x = build_covariance(cfg.cov_x, cfg.d)

    errs = np.empty(runs)
    an_errs = np.empty(runs)
    sel_alpha = np.empty(runs)
    sel_rho = np.full(runs, np.nan)
    base = {k: np.empty(runs) for k in
            ("min_norm", "ridge_tuned", "ridge_formula", "null",
             "_alpha_ridge_tuned", "_alpha_ridge_formula")} if mi == 0 else None

    for run in range(runs):
        rng = np.random.default_rng([cfg.master_seed, gi, mi, run])
        beta, relations, pretrained, train, val, test = _draw_run(cfg, m, n, n_tilde, rng)
        if cfg.mode == "debias_tuned":
            a_star, r_star, fit = tune_validation(train, val, pretrained, grids, n)
            coef = fit.coef
            sel_rho[run] = r_star
        else:
            assumed = _assumed_relations(cfg.mode, relations, n_tilde, cfg.d,
                                         cfg.scale_factor)
            a_star, coef = _tune_transfer_grid(train, val, pretrained, assumed,
                                               alphas, n)
        sel_alpha[run] = a_star
        errs[run] = test_error_mc(coef, test)
        delta = coef - beta
        an_errs[run] = cfg.sigma_eps_sq + delta @ sigma_x @ delta
        if base is not None:
            for key, v in _baselines(train, val, test, n, cfg.d, cfg.b,
                                     cfg.sigma_eps_sq, alphas).items():
                base[key][run] = v

    logger.debug("sweep point gamma_src=%g m=%d: mc_err=%.6g analytic_err=%.6g",
                 gamma_src, m, float(np.mean(errs)), float(np.mean(an_errs)))

    mean_err, se = _mean_stderr(errs)
    rho_mean = float(np.mean(sel_rho)) if cfg.mode == "debias_tuned" else math.nan
    transfer = SweepRecord(gamma_src=gamma_src, m=m, method=f"transfer_{cfg.mode}",
                           mean_error=mean_err, stderr=se,
                           mean_alpha=float(np.mean(sel_alpha)),
                           mean_rho=rho_mean, n_runs=runs)
    baselines = None
    if base is not None:
        baselines = []
        tuned_alpha = {"ridge_tuned": float(np.mean(base["_alpha_ridge_tuned"])),
                       "ridge_formula": float(np.mean(base["_alpha_ridge_formula"]))}
        for name in ("min_norm", "ridge_tuned", "ridge_formula", "null"):
            e, s = _mean_stderr(base[name])
            baselines.append(SweepRecord(
                gamma_src=gamma_src, m=0, method=name, mean_error=e, stderr=s,
                mean_alpha=tuned_alpha.get(name, math.nan), mean_rho=math.nan,
                n_runs=runs))
    return transfer, baselines


def _run_points(tasks, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda f: f(), tasks))
    return [f() for f in tasks]


def run_sweep(config, threads=1):
    """Execute a sweep; returns records grouped per gamma_src.

    Per gamma_src the output holds one transfer row per m (in m_list order)
    followed by the four baseline rows (m = 0), computed on the first m's
    draws.
    """
    tasks = []
    keys = []
    for gi, g in enumerate(config.gamma_src_grid):
        for mi, m in enumerate(config.m_list):
            tasks.append(lambda cfg=config, gi=gi, g=g, mi=mi, m=m:
                         _sweep_point(cfg, gi, g, mi, m))
            keys.append((gi, mi))
    results = dict(zip(keys, _run_points(tasks, threads)))

    records = []
    for gi, _g in enumerate(config.gamma_src_grid):
        for mi in range(len(config.m_list)):
            records.append(results[(gi, mi)][0])
        records.extend(results[(gi, 0)][1])
    return records


# ---------------------------------------------------------------------------
# bias-variance decomposition
# ---------------------------------------------------------------------------

def _resolve_alpha(cfg, m, n, n_tilde):
    if not isinstance(cfg.alpha, str):
        return float(cfg.alpha)
    srcs = [SourceTaskParams(n_tilde=n_tilde, sigma_xi_sq=cfg.sigma_xi_sq,
                             sigma_eta_sq=cfg.sigma_eta_sq)] * m
    if cfg.mode == "debias_known":
        alpha, _ = theory.debias_optimal_alpha(srcs, n, cfg.d, cfg.b, cfg.sigma_eps_sq)
        return alpha
    alpha, _ = theory.optimal_alpha_nonasym(srcs, n, cfg.d, cfg.b, cfg.sigma_eps_sq)
    if theory.is_infinite(alpha):
        raise ValueError(
            f"formula weight undefined on the critical band (d={cfg.d}, n_tilde={n_tilde})")
    return alpha


def _biasvar_point(cfg, gi, gamma_src, mi, m):
    n, n_tilde = _counts(cfg, gamma_src)
    alpha = _resolve_alpha(cfg, m, n, n_tilde)
    d, K = cfg.d, cfg.sub_runs
    iso = CovarianceSpec()

    bias_terms = np.empty(cfg.main_runs)
    var_terms = np.empty(cfg.main_runs)
    sq_err_terms = np.empty(cfg.main_runs)
    for r in range(cfg.main_runs):
        rng = np.random.default_rng([cfg.master_seed, gi, mi, r])
        beta = sample_beta(cfg.b, d, rng)
        relations = [build_relation(cfg.relation, d, rng) for _ in range(m)]
        assumed = _assumed_relations(cfg.mode, relations, n_tilde, d, cfg.scale_factor)
        fits = np.empty((K, d))
        for k in range(K):
            pretrained = []
            for h in relations:
                theta = make_source_theta(beta, h, cfg.sigma_eta_sq, rng)
                z, v = gen_dataset(theta, cfg.cov_z, cfg.sigma_xi_sq, n_tilde, rng)
                pretrained.append(fit_min_norm_ls(z, v))
            X, y = gen_dataset(beta, iso, cfg.sigma_eps_sq, n, rng)
            fits[k] = fit_transfer(X, y, pretrained, assumed, alpha, n).coef
        center = fits.mean(axis=0)
        dev = fits - center
        tr_cov = float(np.sum(dev * dev)) / (K - 1)
        gap = center - beta
        # unbiased squared-bias estimate; together with tr_cov it reproduces
        # the mean squared error up to float roundoff
        bias_terms[r] = float(gap @ gap) - tr_cov / K
        var_terms[r] = tr_cov
        diff = fits - beta
        sq_err_terms[r] = float(np.mean(np.sum(diff * diff, axis=1)))

    bias_sq, bias_se = _mean_stderr(bias_terms)
    variance, var_se = _mean_stderr(var_terms)
    total = cfg.sigma_eps_sq + float(np.mean(sq_err_terms))
    residual = abs(total - cfg.sigma_eps_sq - bias_sq - variance)
    return BiasVarRecord(gamma_src=gamma_src, m=m, method=f"transfer_{cfg.mode}",
                         bias_sq=bias_sq, variance=variance, total_error=total,
                         decomposition_residual=residual,
                         bias_sq_stderr=bias_se, variance_stderr=var_se)


def bias_variance(config, threads=1):
    """Nested-run bias-variance decomposition at a fixed transfer weight."""
    tasks = []
    keys = []
    for gi, g in enumerate(config.gamma_src_grid):
        for mi, m in enumerate(config.m_list):
            tasks.append(lambda cfg=config, gi=gi, g=g, mi=mi, m=m:
                         _biasvar_point(cfg, gi, g, mi, m))
            keys.append((gi, mi))
    results = dict(zip(keys, _run_points(tasks, threads)))
    return [results[(gi, mi)]
            for gi in range(len(config.gamma_src_grid))
            for mi in range(len(config.m_list))]


# ---------------------------------------------------------------------------
# shrinkage-factor tuning report
# ---------------------------------------------------------------------------

def run_factor_tuning(config, threads=1):
    """Mean validation-selected shrinkage factor per (gamma_src, m).

    The config is a SweepConfig; the assumed-relation mode is forced to the
    tuned one.  Reports the known-size attenuation min(1, n_tilde/d) next to
    each mean for comparison.
    """
    if config.mode != "debias_tuned":
        config = replace(config, mode="debias_tuned")

    def point(gi, g, mi, m):
        n, n_tilde = _counts(config, g)
        alphas = np.asarray(config.alpha_grid)
        rho_grid = np.asarray(config.rho_grid) if config.rho_grid is not None \
            else default_rho_grid(config.d, [n_tilde])
        grids = DebiasGrid(alphas, rho_grid)
        rhos = np.empty(config.runs_per_point)
        for run in range(config.runs_per_point):
            rng = np.random.default_rng([config.master_seed, gi, mi, run])
            _, _, pretrained, train, val, _ = _draw_run(config, m, n, n_tilde, rng)
            _, rhos[run], _ = tune_validation(train, val, pretrained, grids, n)
        mean_rho, se = _mean_stderr(rhos)
        return FactorRecord(gamma_src=g, m=m, mean_rho=mean_rho, stderr_rho=se,
                            rho_inv_gamma=theory.rho(n_tilde, config.d),
                            n_runs=config.runs_per_point)

    tasks = []
    keys = []
    for gi, g in enumerate(config.gamma_src_grid):
        for mi, m in enumerate(config.m_list):
            tasks.append(lambda gi=gi, g=g, mi=mi, m=m: point(gi, g, mi, m))
            keys.append((gi, mi))
    results = dict(zip(keys, _run_points(tasks, threads)))
    return [results[(gi, mi)]
            for gi in range(len(config.gamma_src_grid))
            for mi in range(len(config.m_list))]
