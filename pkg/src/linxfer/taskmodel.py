"""Builders and samplers for the synthetic task family.

The data model: a target task ``y = x' beta + eps`` and m source tasks
``v_j = z' theta_j + xi_j`` whose true parameters are linearly related to the
target's, ``theta_j = H_j beta + eta_j``.  This module constructs the input
covariances, the relation operators H_j, and the Gaussian draws; it knows
nothing about estimation.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .linalg import sym_psd_sqrt


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceSpec:
    """Input covariance family: ``identity`` or ``expdecay`` (entries rate**|i-l|)."""

    kind: str = "identity"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "expdecay"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"expdecay rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class RelationSpec:
    """Task-relation operator family.

    kinds: ``identity``; ``subspace`` (orthogonal projector onto a random
    r-dimensional subspace); ``energy_subspace`` (projector rescaled by
    sqrt(d/r) so ||H||_F^2 = d); ``circulant`` (real symmetric circulant with
    condition number ``kappa`` and ||H||_F^2 = d); ``scaled`` (``factor`` times
    a ``base`` relation).
    """

    kind: str = "identity"
    r: int = 0
    kappa: float = 1.0
    factor: float = 1.0
    base: Optional["RelationSpec"] = None

    def __post_init__(self):
        if self.kind not in ("identity", "subspace", "energy_subspace",
                             "circulant", "scaled"):
            raise ValueError(f"unknown relation kind {self.kind!r}")
        if self.kind in ("subspace", "energy_subspace") and self.r < 1:
            raise ValueError("subspace relations need a positive rank r")
        if self.kind == "circulant" and self.kappa < 1.0:
            raise ValueError("circulant condition number must be >= 1")
        if self.kind == "scaled":
            if self.factor <= 0.0:
                raise ValueError("scale factor must be positive")
            if self.base is None:
                raise ValueError("scaled relation needs a base relation")


@dataclass(frozen=True)
class TargetTaskParams:
    """Everything that defines the target task's data distribution."""

    d: int
    n: int
    sigma_eps_sq: float
    b: float
    cov: CovarianceSpec = field(default_factory=CovarianceSpec)

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("d and n must be positive")
        if self.sigma_eps_sq < 0 or self.b <= 0:
            raise ValueError("need sigma_eps_sq >= 0 and b > 0")


@dataclass(frozen=True)
class SourceTaskParams:
    """Sample count, noise levels, and relation family of one source task."""

    n_tilde: int
    sigma_xi_sq: float
    sigma_eta_sq: float
    relation: RelationSpec = field(default_factory=RelationSpec)
    cov: CovarianceSpec = field(default_factory=CovarianceSpec)

    def __post_init__(self):
        if self.n_tilde < 1:
            raise ValueError("n_tilde must be positive")
        if self.sigma_xi_sq < 0 or self.sigma_eta_sq < 0:
            raise ValueError("noise variances must be nonnegative")


class Dataset(NamedTuple):
    inputs: np.ndarray   # (count, d)
    outputs: np.ndarray  # (count,)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_covariance(spec, d):
    """Materialize a CovarianceSpec as a dense SPD d x d matrix."""
    if d < 1:
        raise ValueError("d must be positive")
    if spec.kind == "identity" or spec.rate == 0.0:
        return np.eye(d)
    idx = np.arange(d)
    return spec.rate ** np.abs(idx[:, None] - idx[None, :])


def _circulant_relation(kappa, d):
    # Real symmetric circulant from a prescribed spectrum: the largest and
    # smallest eigenvalues satisfy lam_max/lam_min = kappa and
    # lam_max^2 + lam_min^2 = 2; the remaining squared eigenvalues are equally
    # spaced between those two, assigned descending from frequency 0 to d/2
    # and mirrored onto the conjugate frequencies.  The pairing makes
    # sum(lam^2) = d exactly.
    if d % 2 != 0:
        raise ValueError("circulant relation requires even d")
    lam_max_sq = 2.0 * kappa**2 / (1.0 + kappa**2)
    lam_min_sq = 2.0 / (1.0 + kappa**2)
    half = np.sqrt(np.linspace(lam_max_sq, lam_min_sq, d // 2 + 1))
    # first column via the real (cosine) Fourier basis; spectrum symmetry
    # makes the matrix real and symmetric
    i = np.arange(d)
    k = np.arange(1, d // 2)
    cosines = np.cos(2.0 * np.pi * np.outer(i, k) / d)  # (d, d/2-1)
    first_col = (half[0]
                 + (-1.0) ** i * half[-1]
                 + 2.0 * cosines @ half[1:-1]) / d
    return scipy.linalg.circulant(first_col)


def build_relation(spec, d, rng):
    """Materialize a RelationSpec as a dense d x d operator.

    Subspace draws use ``rng``; each call produces a fresh subspace, so
    callers wanting distinct operators per source simply call once per source.
    The circulant family is deterministic given (kappa, d).
    """
    if spec.kind == "identity":
        return np.eye(d)
    if spec.kind == "scaled":
        return spec.factor * build_relation(spec.base, d, rng)
    if spec.kind == "circulant":
        return _circulant_relation(spec.kappa, d)
    # subspace families
    if spec.r >= d:
        raise ValueError(f"subspace rank r={spec.r} must be < d={d}")
    gauss = rng.standard_normal((d, spec.r))
    q, _ = np.linalg.qr(gauss)
    proj = q @ q.T
    if spec.kind == "energy_subspace":
        return np.sqrt(d / spec.r) * proj
    return proj


def relation_energy(H):
    """Normalized squared Frobenius norm (1/d)||H||_F^2 of a relation operator."""
    H = np.asarray(H, dtype=float)
    return float(np.sum(H * H)) / H.shape[0]


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_beta(b, d, rng):
    """Draw the target parameters: d iid N(0, b/d) coordinates."""
    if b <= 0:
        raise ValueError("b must be positive")
    return rng.standard_normal(d) * np.sqrt(b / d)


def make_source_theta(beta, H, sigma_eta_sq, rng):
    """Draw one source task's true parameters theta = H beta + eta."""
    beta = np.asarray(beta, dtype=float)
    d = beta.shape[0]
    theta = H @ beta
    if sigma_eta_sq > 0:
        theta = theta + rng.standard_normal(d) * np.sqrt(sigma_eta_sq / d)
    return theta


_sqrt_cov_cache = {}


def _cov_sqrt(spec, d):
    key = (spec.kind, spec.rate, d)
    if key not in _sqrt_cov_cache:
        _sqrt_cov_cache[key] = sym_psd_sqrt(build_covariance(spec, d))
    return _sqrt_cov_cache[key]


def gen_dataset(param, cov, noise_var, count, rng):
    """Sample a dataset: rows iid N(0, Sigma), outputs = X param + noise.

    Parameters
    ----------
    param : (d,) array_like
        True regression vector.
    cov : CovarianceSpec
        Input covariance family (rows are drawn via its symmetric square root).
    noise_var : float
        Variance of the additive iid Gaussian output noise.
    count : int
        Number of rows.
    rng : numpy Generator
    """
    if count < 1:
        raise ValueError("count must be positive")
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    param = np.asarray(param, dtype=float)
    d = param.shape[0]
    X = rng.standard_normal((count, d))
    if cov.kind != "identity" and cov.rate != 0.0:
        X = X @ _cov_sqrt(cov, d)
    y = X @ param
    if noise_var > 0:
        y = y + rng.standard_normal(count) * np.sqrt(noise_var)
    return Dataset(inputs=X, outputs=y)
