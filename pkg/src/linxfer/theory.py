"""Closed-form error theory for multi-source transfer in linear regression.

Everything here is deterministic math: asymptotic error formulas for the
general (possibly misspecified, anisotropic-target) case, optimal transfer
weights in the isotropic well-specified case, the debiased variants, the
benefit conditions comparing transfer against ridge and debiased against
plain transfer, exact finite-sample moments of min-norm pretrained models,
and the anisotropic shrinkage operator.

Conventions
-----------
* gamma quantities are overparameterization ratios d / (sample count).
* Quantities that genuinely diverge (critical parameterization bands) are
  returned as the first-class ``INFINITE`` flag, never as large floats.
* ``g(-phi; gamma)`` below denotes the Stieltjes transform of the
  Marchenko-Pastur law evaluated at ``-phi``.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh, svdvals
from scipy.optimize import brentq

from .linalg import TOL


# ---------------------------------------------------------------------------
# divergence flag and parameterization regions
# ---------------------------------------------------------------------------

class _InfiniteType:
    """Singleton flag for formula branches that take the value infinity."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __float__(self):
        return math.inf


INFINITE = _InfiniteType()


def is_infinite(x):
    return x is INFINITE


class Region(enum.Enum):
    UNDERPARAM = "underparam"   # d <= n_tilde - 2
    THRESHOLD = "threshold"     # n_tilde - 1 <= d <= n_tilde + 1
    OVERPARAM = "overparam"     # d >= n_tilde + 2


def classify_region(n_tilde, d):
    """Which variance branch a (d, n_tilde) pair falls in."""
    if d <= n_tilde - 2:
        return Region.UNDERPARAM
    if d >= n_tilde + 2:
        return Region.OVERPARAM
    return Region.THRESHOLD


def rho(n_tilde, d):
    """Finite-sample attenuation factor of a min-norm pretrained model."""
    if n_tilde < 1 or d < 1:
        raise ValueError("counts must be positive")
    return 1.0 if n_tilde >= d else n_tilde / d


def rho_inf(gamma_src):
    """Asymptotic attenuation factor: 1 below the interpolation point, 1/gamma above."""
    if gamma_src <= 0:
        raise ValueError("gamma_src must be positive")
    return 1.0 if gamma_src <= 1 else 1.0 / gamma_src


# ---------------------------------------------------------------------------
# Marchenko-Pastur resolvent
# ---------------------------------------------------------------------------

def stieltjes_mp(phi, gamma):
    """g(-phi; gamma) via the cancellation-free rationalized form.

    With zeta = phi + 1 - gamma, the two algebraically equal forms are
    2 / (sqrt(zeta^2 + 4 gamma phi) + zeta)  and
    (-zeta + sqrt(zeta^2 + 4 gamma phi)) / (2 gamma phi);
    the first is stable for zeta >= 0, the second for zeta < 0.
    """
    if phi <= 0 or gamma <= 0:
        raise ValueError("phi and gamma must be positive")
    zeta = phi + 1.0 - gamma
    root = math.sqrt(zeta * zeta + 4.0 * gamma * phi)
    if zeta >= 0:
        return 2.0 / (root + zeta)
    return (root - zeta) / (2.0 * gamma * phi)


# ---------------------------------------------------------------------------
# fixed-point constants of the anisotropic resolvent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointSolution:
    c: float
    c_prime: float
    s: float

    def __post_init__(self):
        if not (0.0 < self.c <= 1.0 + 1e-12):
            raise ValueError(f"c = {self.c} outside (0, 1]")
        if self.c_prime < -1e-12:
            raise ValueError(f"c_prime = {self.c_prime} negative")
        if abs(self.s - (self.c_prime + 1.0)) > 1e-12 * max(1.0, abs(self.s)):
            raise ValueError("s must equal c_prime + 1")


def _w_eigs(W, d):
    W = np.asarray(W, dtype=float)
    if W.shape != (d, d):
        raise ValueError(f"W must be {d} x {d}")
    w = np.linalg.eigvalsh(W)
    if w[0] < -TOL.psd_rel * max(w[-1], 1.0):
        raise ValueError("W must be positive semidefinite")
    return np.clip(w, 0.0, None)


def solve_c(alpha, W, gamma_tgt, d):
    """Unique c in (0, 1] with 1/c - 1 = (gamma/d) Tr[W (cW + alpha I)^-1].

    Bisection on F(c) = 1 - c - c (gamma/d) sum_i w_i/(c w_i + alpha), which
    is strictly decreasing with F(0+) = 1 and F(1) <= 0, followed by a Newton
    polish.  The residual of the original equation is checked to 1e-12.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = _w_eigs(W, d)
    coef = gamma_tgt / d

    def f(c):
        return 1.0 - c - c * coef * np.sum(w / (c * w + alpha))

    lo, hi = 1e-14, 1.0
    if f(hi) >= 0.0:  # degenerate W (all-zero spectrum): equation gives c = 1
        return 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * hi:
            break
    c = 0.5 * (lo + hi)
    for _ in range(4):  # Newton polish; derivative of F is -1 - coef*sum(alpha w/(cw+a)^2)
        denom = c * w + alpha
        grad = -1.0 - coef * np.sum(alpha * w / (denom * denom))
        step = f(c) / grad
        c_new = c - step
        if 0.0 < c_new <= 1.0:
            c = c_new
    resid = abs(1.0 / c - 1.0 - coef * np.sum(w / (c * w + alpha)))
    if resid > 1e-12 * max(1.0, 1.0 / c):
        raise RuntimeError(f"fixed-point solve for c did not converge (residual {resid:.3e})")
    return float(c)


def solve_c_prime(alpha, W, gamma_tgt, d, c):
    """Companion constant c' (and s = c' + 1) from the explicit trace ratio."""
    w = _w_eigs(W, d)
    frob = (gamma_tgt / d) * np.sum((w / (c * w + alpha)) ** 2)
    denom = 1.0 / (c * c) - frob
    if denom <= 0.0:
        raise ValueError("c' denominator non-positive; c inconsistent with (alpha, W)")
    c_prime = float(frob / denom)
    return c_prime, c_prime + 1.0


def solve_fixed_point(alpha, W, gamma_tgt, d):
    c = solve_c(alpha, W, gamma_tgt, d)
    c_prime, s = solve_c_prime(alpha, W, gamma_tgt, d, c)
    return FixedPointSolution(c=c, c_prime=c_prime, s=s)


# ---------------------------------------------------------------------------
# general-case asymptotic error
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimpleSettingParams:
    """Isotropic, well-specified setting with m identical sources."""
    gamma_tgt: float
    gamma_src: float
    m: int
    b: float
    sigma_eta_sq: float
    sigma_xi_sq: float
    sigma_eps_sq: float

    def __post_init__(self):
        if self.gamma_tgt <= 0 or self.gamma_src <= 0 or self.b <= 0:
            raise ValueError("gamma_tgt, gamma_src and b must be positive")
        if self.m < 1 or self.m != int(self.m):
            raise ValueError("m must be a positive integer")
        if min(self.sigma_eta_sq, self.sigma_xi_sq, self.sigma_eps_sq) < 0:
            raise ValueError("variances must be nonnegative")


@dataclass(frozen=True, eq=False)
class GeneralSettingParams:
    """Inputs of the general-case error formula.

    Derived matrices (the inverse relation root and W) are computed once at
    construction; the Gram sum of the assumed relations must be full rank.
    """
    d: int
    gamma_tgt: float
    Sigma_x: np.ndarray
    true_relations: tuple
    assumed_relations: tuple
    gamma_srcs: tuple
    b: float
    sigma_eta_sqs: tuple
    sigma_xi_sqs: tuple
    sigma_eps_sq: float
    kappa_H: tuple = None

    def __post_init__(self):
        d = self.d
        object.__setattr__(self, "Sigma_x", np.asarray(self.Sigma_x, dtype=float))
        object.__setattr__(self, "true_relations",
                           tuple(np.asarray(h, dtype=float) for h in self.true_relations))
        object.__setattr__(self, "assumed_relations",
                           tuple(np.asarray(h, dtype=float) for h in self.assumed_relations))
        object.__setattr__(self, "gamma_srcs", tuple(float(g) for g in self.gamma_srcs))
        object.__setattr__(self, "sigma_eta_sqs", tuple(float(v) for v in self.sigma_eta_sqs))
        object.__setattr__(self, "sigma_xi_sqs", tuple(float(v) for v in self.sigma_xi_sqs))
        m = len(self.true_relations)
        if m == 0:
            raise ValueError("need at least one source")
        for name in ("assumed_relations", "gamma_srcs", "sigma_eta_sqs", "sigma_xi_sqs"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} length differs from true_relations")
        if self.kappa_H is not None:
            object.__setattr__(self, "kappa_H", tuple(float(k) for k in self.kappa_H))
            if len(self.kappa_H) != m:
                raise ValueError("kappa_H length differs from true_relations")
        if self.Sigma_x.shape != (d, d):
            raise ValueError(f"Sigma_x must be {d} x {d}")
        for h in self.true_relations + self.assumed_relations:
            if h.shape != (d, d):
                raise ValueError(f"relation matrices must be {d} x {d}")
        if any(g <= 0 for g in self.gamma_srcs) or self.gamma_tgt <= 0 or self.b <= 0:
            raise ValueError("ratios and signal energy must be positive")

        r2 = np.zeros((d, d))
        for h in self.assumed_relations:
            r2 += h.T @ h
        evals, evecs = eigh(r2)
        if evals[0] <= TOL.gram_rank_rel * max(evals[-1], 0.0):
            raise ValueError("assumed-relation Gram sum is rank deficient")
        r_inv = (evecs / np.sqrt(evals)) @ evecs.T  # inverse square root of the Gram sum
        w = r_inv @ self.Sigma_x @ r_inv
        object.__setattr__(self, "_r_inv", r_inv)
        object.__setattr__(self, "_w", 0.5 * (w + w.T))

    @property
    def m(self):
        return len(self.true_relations)


def gamma_single(gamma_src, H, H_assumed, b, sigma_eta_sq, sigma_xi_sq, d, kappa_H=None):
    """Per-source asymptotic second-moment matrix of the pretraining noise.

    Three branches by source parameterization; the critical ratio
    gamma_src = 1 diverges and returns ``INFINITE``.  ``kappa_H`` defaults to
    the finite-matrix surrogate (1/d)||H||_F^2.
    """
    if gamma_src == 1.0:
        return INFINITE
    H = np.asarray(H, dtype=float)
    Ht = np.asarray(H_assumed, dtype=float)
    delta = H - Ht
    eye = np.eye(d)
    if gamma_src < 1.0:
        lead = (sigma_eta_sq + gamma_src * sigma_xi_sq / (1.0 - gamma_src)) / d
        return lead * eye + (b / d) * (delta @ delta.T)
    if kappa_H is None:
        kappa_H = np.sum(H * H) / d
    hh = H @ H.T
    out = (b / (d * gamma_src)) * (delta @ delta.T)
    out += ((sigma_eta_sq + gamma_src * sigma_xi_sq / (gamma_src - 1.0)) / (d * gamma_src)) * eye
    bracket = gamma_src * (Ht @ Ht.T) - hh + kappa_H * eye - np.diag(np.diag(hh)) / d
    out += (b * (gamma_src - 1.0) / (d * gamma_src ** 2)) * bracket
    return out


def gamma_multi(params):
    """Combined noise matrix over all sources, conjugated by the inverse relation root.

    Sum of per-source contributions plus the pairwise interaction term
    (b/d) sum_{j != l} A_j A_l^T with A_j = Ht_j^T (rho_inf H_j - Ht_j).
    ``INFINITE`` if any source sits at the critical ratio.
    """
    d = params.d
    singles = []
    for j in range(params.m):
        kap = params.kappa_H[j] if params.kappa_H is not None else None
        g = gamma_single(params.gamma_srcs[j], params.true_relations[j],
                         params.assumed_relations[j], params.b,
                         params.sigma_eta_sqs[j], params.sigma_xi_sqs[j], d, kap)
        if is_infinite(g):
            return INFINITE
        singles.append(g)

    inner = np.zeros((d, d))
    a_sum = np.zeros((d, d))
    a_sq = np.zeros((d, d))
    for j in range(params.m):
        H, Ht = params.true_relations[j], params.assumed_relations[j]
        a_j = Ht.T @ (rho_inf(params.gamma_srcs[j]) * H - Ht)
        a_sum += a_j
        a_sq += a_j @ a_j.T
        inner += Ht.T @ singles[j] @ Ht
    inner += (params.b / d) * (a_sum @ a_sum.T - a_sq)  # = sum over ordered pairs j != l

    r_inv = params._r_inv
    out = r_inv @ inner @ r_inv
    return 0.5 * (out + out.T)


def expected_error_general(params, alpha):
    """Asymptotic expected test error of the transfer estimator, general case.

    sigma_eps^2 (1 + gamma Tr[(1/d) W Omega^-1]
                   + gamma s Tr[((alpha^2/(gamma sigma_eps^2)) Gamma - (alpha/d) I)
                                Omega^-1 W Omega^-1])
    with W the relation-whitened input covariance, Omega = c W + alpha I, and
    (c, s) the fixed-point constants.  Returns ``INFINITE`` when the combined
    noise matrix diverges.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    gam = gamma_multi(params)
    if is_infinite(gam):
        return INFINITE
    d, gt, se2 = params.d, params.gamma_tgt, params.sigma_eps_sq
    W = params._w
    w, U = eigh(W)
    w = np.clip(w, 0.0, None)
    sol = solve_fixed_point(alpha, W, gt, d)
    denom = sol.c * w + alpha
    term1 = (gt / d) * np.sum(w / denom)
    # Omega^-1 W Omega^-1 shares W's eigenbasis
    B = (U * (w / (denom * denom))) @ U.T
    M = (alpha ** 2 / (gt * se2)) * gam - (alpha / d) * np.eye(d)
    term2 = gt * sol.s * float(np.sum(M * B))
    return se2 * (1.0 + term1 + term2)


# ---------------------------------------------------------------------------
# optimal tuning: isotropic inputs, well-specified orthonormal relations
# ---------------------------------------------------------------------------

def _c_source(n_tilde, d, b, sigma_eta_sq, sigma_xi_sq):
    """Per-source constant of the nonasymptotic optimal transfer weight."""
    region = classify_region(n_tilde, d)
    if region is Region.THRESHOLD:
        return INFINITE
    if region is Region.UNDERPARAM:
        return sigma_eta_sq / d + sigma_xi_sq / (n_tilde - d - 1)
    frac = n_tilde / d
    return (1.0 - frac) * b / d + frac * (sigma_eta_sq / d + sigma_xi_sq / (d - n_tilde - 1))


def optimal_alpha_nonasym(sources, n, d, b, sigma_eps_sq):
    """Optimal transfer weight for finite (d, n, n_tilde_j).

    Returns (alpha, per-source constants).  Any source on the critical band
    d in {n_tilde-1, n_tilde, n_tilde+1} makes the weight degenerate; then
    alpha is the ``INFINITE`` flag and the constant list marks the culprits.
    """
    cs = [_c_source(src.n_tilde, d, b, src.sigma_eta_sq, src.sigma_xi_sq)
          for src in sources]
    if any(is_infinite(c) for c in cs):
        return INFINITE, cs
    m = len(sources)
    one_minus = np.array([1.0 - rho(src.n_tilde, d) for src in sources])
    cross = 0.5 * (np.sum(one_minus) ** 2 - np.sum(one_minus ** 2))
    alpha = m * sigma_eps_sq / (n * (sum(cs) + (2.0 * b / d) * cross))
    return float(alpha), cs


def error_nonasym_trace(scale, n, d, sigma_eps_sq, mc_draws=2000, rng=None):
    """Monte-Carlo estimate of sigma_eps^2 (1 + E Tr[(X'X + scale I)^-1]).

    The identity-weight scale differs by method (m n alpha for transfer,
    n alpha for ridge, the squared-count sum for debiasing) and may be a
    scalar or an array of scales evaluated on the *same* Wishart draws.
    Returns (mean, stderr) with shapes matching ``scale``.
    """
    scales = np.atleast_1d(np.asarray(scale, dtype=float))
    if np.any(scales <= 0):
        raise ValueError("scale must be positive")
    if rng is None:
        rng = np.random.default_rng()
    acc = np.zeros(scales.shape)
    acc_sq = np.zeros(scales.shape)
    lam = np.zeros(d)
    for _ in range(mc_draws):
        X = rng.standard_normal((n, d))
        sv = svdvals(X)
        lam[:] = 0.0
        lam[:sv.shape[0]] = sv * sv
        traces = np.sum(1.0 / (lam[:, None] + scales[None, :]), axis=0)
        acc += traces
        acc_sq += traces * traces
    mean_tr = acc / mc_draws
    var_tr = (acc_sq - mc_draws * mean_tr ** 2) / (mc_draws - 1)
    err = sigma_eps_sq * (1.0 + mean_tr)
    stderr = sigma_eps_sq * np.sqrt(np.clip(var_tr, 0.0, None) / mc_draws)
    if np.isscalar(scale) or np.ndim(scale) == 0:
        return float(err[0]), float(stderr[0])
    return err, stderr


def alpha_simple_asymptotic(p):
    """Limiting optimal transfer weight in the simple setting (two branches in gamma_src)."""
    if p.gamma_src == 1.0:
        raise ValueError("optimal weight is undefined at the critical source ratio")
    g = p.gamma_src
    if g < 1.0:
        denom = p.sigma_eta_sq + g * p.sigma_xi_sq / (1.0 - g)
    else:
        denom = ((g - 1.0) / g) * p.b \
            + (p.m - 1) * p.b * ((1.0 - g) / g) ** 2 \
            + (p.sigma_eta_sq + g * p.sigma_xi_sq / (g - 1.0)) / g
    return p.sigma_eps_sq * p.gamma_tgt / denom


def error_simple_asymptotic(p):
    """Asymptotic error of optimally tuned transfer: sigma_eps^2 (1 + gamma g(-m alpha))."""
    phi = p.m * alpha_simple_asymptotic(p)
    return p.sigma_eps_sq * (1.0 + p.gamma_tgt * stieltjes_mp(phi, p.gamma_tgt))


def ridge_optimal(d, n, b, sigma_eps_sq):
    """Optimal ridge weight d sigma_eps^2 / (n b)."""
    if min(d, n) < 1 or b <= 0:
        raise ValueError("d, n must be positive counts and b > 0")
    return d * sigma_eps_sq / (n * b)


# ---------------------------------------------------------------------------
# benefit conditions
# ---------------------------------------------------------------------------

def negative_transfer_sides(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b):
    """Both sides of the transfer-beats-ridge condition (lhs < rhs iff beneficial)."""
    if classify_region(n_tilde, d) is Region.THRESHOLD:
        raise ValueError("condition undefined on the critical band |d - n_tilde| <= 1")
    lhs = sigma_eta_sq + d * sigma_xi_sq / (abs(d - n_tilde) - 1)
    rhs = b * (m + (m - 1) * (1.0 - rho(n_tilde, d)))
    return lhs, rhs


def negative_transfer_check(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b):
    """True iff optimally tuned transfer strictly beats optimally tuned ridge."""
    lhs, rhs = negative_transfer_sides(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b)
    return lhs < rhs


def debias_beneficial_sides(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b):
    """Both sides of the debiasing-beats-plain-transfer condition (lhs < rhs iff beneficial)."""
    if d < n_tilde + 2:
        raise ValueError("condition requires overparameterized sources with d >= n_tilde + 2")
    t = sigma_eta_sq + d * sigma_xi_sq / (d - n_tilde - 1)
    lhs = t * (d / n_tilde + 2.0 * d / (d - n_tilde))
    rhs = (m - 1 - d / n_tilde) * b
    return lhs, rhs


def debias_beneficial_check(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b):
    """True iff scalar debiasing strictly lowers the optimally tuned error."""
    lhs, rhs = debias_beneficial_sides(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b)
    return lhs < rhs


def debias_min_models(n_tilde, d, sigma_eta_sq, sigma_xi_sq, b):
    """Smallest integer m for which debiasing is beneficial (> 1 + d/n_tilde always)."""
    lhs, _ = debias_beneficial_sides(2 + math.ceil(d / n_tilde), n_tilde, d,
                                     sigma_eta_sq, sigma_xi_sq, b)
    bound = 1.0 + d / n_tilde + lhs / b
    return math.floor(bound) + 1


# ---------------------------------------------------------------------------
# debiased optimal tuning
# ---------------------------------------------------------------------------

def debias_optimal_alpha(sources, n, d, b, sigma_eps_sq):
    """Optimal weight for scale-debiased transfer with overparameterized sources.

    Returns (alpha, per-source constants).  Every source must satisfy
    d >= n_tilde + 2.
    """
    cs = []
    for src in sources:
        if d < src.n_tilde + 2:
            raise ValueError(
                f"debias tuning needs d >= n_tilde + 2; got d={d}, n_tilde={src.n_tilde}")
        frac = src.n_tilde / d
        cs.append(frac * ((1.0 - frac) * b / d + src.sigma_eta_sq / d
                          + src.sigma_xi_sq / (d - src.n_tilde - 1)))
    nt_sq = [src.n_tilde ** 2 for src in sources]
    alpha = sigma_eps_sq * sum(nt_sq) / (n * sum(q * c for q, c in zip(nt_sq, cs)))
    return float(alpha), cs


def debias_alpha_asymptotic(p):
    """Limiting optimal weight for debiased transfer (overparameterized sources only)."""
    g = p.gamma_src
    if g <= 1.0:
        raise ValueError("debiased tuning is defined for gamma_src > 1")
    denom = ((g - 1.0) / g) * p.b + p.sigma_eta_sq + (g / (g - 1.0)) * p.sigma_xi_sq
    return p.gamma_tgt * p.sigma_eps_sq * g / denom


def debias_error_asymptotic(p):
    """Asymptotic debiased error: sigma_eps^2 (1 + gamma g(-m alpha_deb / gamma_src^2))."""
    phi = p.m * debias_alpha_asymptotic(p) / (p.gamma_src ** 2)
    return p.sigma_eps_sq * (1.0 + p.gamma_tgt * stieltjes_mp(phi, p.gamma_tgt))


# ---------------------------------------------------------------------------
# pretrained-model moments (exact, finite d)
# ---------------------------------------------------------------------------

def pretrained_mean_cov(beta, H, n_tilde, d, sigma_eta_sq, sigma_xi_sq):
    """Exact conditional mean and covariance of a min-norm pretrained model.

    mean = rho H beta with rho = min(n_tilde / d, 1); the covariance is
    isotropic when underparameterized, rank-one plus isotropic when
    overparameterized, and ``INFINITE`` on the band d in
    {n_tilde-1, n_tilde, n_tilde+1}.
    """
    beta = np.asarray(beta, dtype=float)
    H = np.asarray(H, dtype=float)
    if beta.shape != (d,) or H.shape != (d, d):
        raise ValueError("dimension mismatch")
    hb = H @ beta
    mean = hb if d <= n_tilde else (n_tilde / d) * hb
    region = classify_region(n_tilde, d)
    if region is Region.THRESHOLD:
        return mean, INFINITE
    if region is Region.UNDERPARAM:
        cov = (sigma_eta_sq / d + sigma_xi_sq / (n_tilde - d - 1)) * np.eye(d)
        return mean, cov
    # Overparameterized: the fit projects onto a uniformly random n_tilde-dim
    # subspace.  With P the projector and a = H beta,
    #   E[P a a^T P] = c1 a a^T + c2 (|a|^2 I - a a^T),
    #   c1 = E[Beta(nt/2, (d-nt)/2)^2],  c2 chosen so traces match,
    # and the noise passed through the pseudo-inverse contributes
    # rho (sigma_eta^2 / d + sigma_xi^2 / (d - n_tilde - 1)) I.
    rho = n_tilde / d
    c1 = n_tilde * (n_tilde + 2.0) / (d * (d + 2.0))
    c2 = n_tilde * (d - n_tilde) / (d * (d + 2.0) * (d - 1.0))
    iso = c2 * float(hb @ hb)
    iso += rho * (sigma_eta_sq / d + sigma_xi_sq / (d - n_tilde - 1))
    cov = (c1 - c2 - rho * rho) * np.outer(hb, hb) + iso * np.eye(d)
    return mean, cov


# ---------------------------------------------------------------------------
# anisotropic shrinkage of the mean pretrained model
# ---------------------------------------------------------------------------

def solve_q0(eigenvalues, gamma):
    """Unique q0 > 0 with (1/d) sum_i 1/(1 + q0 mu_i) = 1 - 1/gamma (gamma > 1)."""
    if gamma <= 1.0:
        raise ValueError("the interpolation constant exists only for gamma > 1")
    mu = np.asarray(eigenvalues, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("spectrum must be strictly positive")
    target = 1.0 - 1.0 / gamma

    def excess(q):
        return np.mean(1.0 / (1.0 + q * mu)) - target

    hi = 1.0
    while excess(hi) > 0.0:
        hi *= 2.0
        if hi > 1e18:
            raise RuntimeError("failed to bracket q0")
    q0 = brentq(excess, 0.0, hi, xtol=1e-15, rtol=8.9e-16)
    if abs(excess(q0)) > 1e-12:
        raise RuntimeError(f"q0 solve residual {excess(q0):.3e} too large")
    return float(q0)


def shrinkage_operator(Sigma_z, gamma):
    """Deterministic-equivalent shrinkage q0 Sigma_z (q0 Sigma_z + I)^-1.

    Eigenvalues q0 mu_i / (1 + q0 mu_i) all lie strictly inside (0, 1); for
    isotropic Sigma_z the operator collapses to (1/gamma) I.
    """
    Sigma_z = np.asarray(Sigma_z, dtype=float)
    mu, U = eigh(Sigma_z)
    if mu[0] <= 0:
        raise ValueError("Sigma_z must be positive definite")
    q0 = solve_q0(mu, gamma)
    shrink = q0 * mu / (1.0 + q0 * mu)
    return (U * shrink) @ U.T
