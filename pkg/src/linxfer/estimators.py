"""Learning rules: source fits, target baselines, and the transfer solver.

The transfer estimator minimizes

    ||y - X b||^2 + n * alpha * sum_j ||Ht_j b - theta_hat_j||^2

over b, where theta_hat_j are pretrained source coefficient vectors and Ht_j
are the assumed task-relation operators.  Its closed form is

    (X'X + n a R2)^{-1} (X'y + n a sum_j Ht_j' theta_hat_j),   R2 = sum_j Ht_j'Ht_j

valid whenever R2 is full rank.  Assumed relations may be given either as
dense d x d matrices or as bare floats c, meaning c * I.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .linalg import TOL


def _as_float_vec(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return v


def fit_min_norm_ls(Z, v):
    """Minimum-l2-norm least-squares coefficients Z^+ v."""
    Z = np.asarray(Z, dtype=float)
    v = _as_float_vec(v, "v")
    if Z.shape[0] != v.shape[0]:
        raise ValueError(f"Z has {Z.shape[0]} rows but v has {v.shape[0]} entries")
    coef, _, _, _ = np.linalg.lstsq(Z, v, rcond=None)
    return coef


def fit_ridge(X, y, alpha, n):
    """Ridge coefficients (X'X + n alpha I)^{-1} X'y."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    X = np.asarray(X, dtype=float)
    y = _as_float_vec(y, "y")
    d = X.shape[1]
    gram = X.T @ X + (n * alpha) * np.eye(d)
    return cho_solve(cho_factor(gram), X.T @ y)


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferFit:
    coef: np.ndarray
    alpha: float
    relations: tuple  # assumed relations as given (floats or matrices)


def _gram_and_pull(pretrained, relations, d):
    """R2 = sum_j Ht_j'Ht_j and the pull vector sum_j Ht_j' theta_hat_j."""
    r2 = np.zeros((d, d))
    pull = np.zeros(d)
    for theta, rel in zip(pretrained, relations):
        theta = np.asarray(theta, dtype=float)
        if np.isscalar(rel) or np.ndim(rel) == 0:
            c = float(rel)
            r2[np.diag_indices(d)] += c * c
            pull += c * theta
        else:
            rel = np.asarray(rel, dtype=float)
            r2 += rel.T @ rel
            pull += rel.T @ theta
    return r2, pull


def fit_transfer(X, y, pretrained, relations, alpha, n):
    """Solve the multi-source transfer objective in closed form.

    Parameters
    ----------
    X, y : target training data (n rows).
    pretrained : list of (d,) arrays
        Source coefficient vectors theta_hat_j.
    relations : list
        Assumed relation operators Ht_j; each entry a (d, d) array or a float
        c standing for c * I.
    alpha : float
        Transfer weight, > 0.
    n : int
        Row count used in the n * alpha scaling.

    Raises
    ------
    ValueError
        If sum_j Ht_j'Ht_j is rank deficient (the full-rank requirement on the
        assumed-relation Gram sum), or on shape/positivity violations.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(pretrained) != len(relations):
        raise ValueError("pretrained and relations must have equal length")
    if len(pretrained) == 0:
        raise ValueError("need at least one pretrained model")
    X = np.asarray(X, dtype=float)
    y = _as_float_vec(y, "y")
    d = X.shape[1]

    r2, pull = _gram_and_pull(pretrained, relations, d)
    eigs = np.linalg.eigvalsh(r2)
    if eigs[0] <= TOL.gram_rank_rel * max(eigs[-1], 0.0) or eigs[-1] <= 0.0:
        raise ValueError(
            "assumed-relation Gram sum is rank deficient "
            f"(min eig {eigs[0]:.3e}, max {eigs[-1]:.3e}); the transfer "
            "closed form requires it to be full rank"
        )

    lhs = X.T @ X + (n * alpha) * r2
    rhs = X.T @ y + (n * alpha) * pull
    coef = cho_solve(cho_factor(lhs), rhs)
    return TransferFit(coef=coef, alpha=float(alpha), relations=tuple(relations))


def fit_tikhonov(X, y, R, alpha, n):
    """Generalized ridge (X'X + n alpha R'R)^{-1} X'y for full-rank R."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    X = np.asarray(X, dtype=float)
    y = _as_float_vec(y, "y")
    R = np.asarray(R, dtype=float)
    d = X.shape[1]
    if R.shape != (d, d):
        raise ValueError(f"R must be {d} x {d}")
    svals = np.linalg.svd(R, compute_uv=False)
    if svals[-1] <= TOL.gram_rank_rel * svals[0]:
        raise ValueError("R is rank deficient; Tikhonov form requires full rank")
    lhs = X.T @ X + (n * alpha) * (R.T @ R)
    return cho_solve(cho_factor(lhs), X.T @ y)


def null_predictor(d):
    """The all-zeros predictor."""
    return np.zeros(d)


# ---------------------------------------------------------------------------
# test error
# ---------------------------------------------------------------------------

def test_error_analytic(coef, beta, Sigma_x, sigma_eps_sq):
    """Conditional expected test error sigma_eps^2 + (coef-beta)' Sigma_x (coef-beta).

    ``Sigma_x=None`` means the identity.
    """
    delta = np.asarray(coef, dtype=float) - np.asarray(beta, dtype=float)
    if Sigma_x is None:
        return float(sigma_eps_sq + delta @ delta)
    return float(sigma_eps_sq + delta @ (np.asarray(Sigma_x) @ delta))


def test_error_mc(coef, test):
    """Mean squared prediction error over a held-out dataset."""
    X, y = test
    if X.shape[0] == 0:
        raise ValueError("test set is empty")
    resid = y - X @ np.asarray(coef, dtype=float)
    return float(np.mean(resid * resid))
