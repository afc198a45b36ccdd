"""Debiasing of overparameterized pretrained models.

Two procedures: (i) known-sample-size scalar debiasing, which replaces the
assumed relation of every overparameterized source with the attenuation-
corrected scaled identity (n_tilde/d) I, and (ii) validation-based joint
tuning of the transfer weight alpha and a shared shrinkage factor rho for
sources with unknown and possibly anisotropic statistics.
"""

from dataclasses import dataclass

import numpy as np

from .estimators import TransferFit, fit_transfer


@dataclass(frozen=True)
class DebiasGrid:
    alpha_grid: np.ndarray
    rho_grid: np.ndarray

    def __post_init__(self):
        for name in ("alpha_grid", "rho_grid"):
            grid = np.asarray(getattr(self, name), dtype=float)
            if grid.ndim != 1 or grid.size == 0:
                raise ValueError(f"{name} must be a nonempty 1-d grid")
            if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
                raise ValueError(f"{name} must contain finite positive values")
            if np.any(np.diff(grid) < 0):
                raise ValueError(f"{name} must be sorted ascending")
            object.__setattr__(self, name, grid)


def default_alpha_grid():
    """30 log-spaced transfer weights in [1e-4, 1e2]."""
    return np.geomspace(1e-4, 1e2, 30)


def default_rho_grid(d=None, n_tildes=None):
    """20 linear factors in [0.05, 1.5] plus 1 and, when known, each n_tilde/d."""
    vals = list(np.linspace(0.05, 1.5, 20)) + [1.0]
    if n_tildes is not None:
        if d is None:
            raise ValueError("d is required to place the per-source factors")
        vals += [min(1.0, nt / d) for nt in n_tildes]
    return np.unique(np.asarray(vals, dtype=float))


def debias_relations_known(n_tildes, d):
    """Assumed relations for known source sample sizes.

    Identity for sources with d <= n_tilde, (n_tilde/d) I for overparameterized
    ones; the output always has a full-rank Gram sum.
    """
    if any(nt < 1 for nt in n_tildes):
        raise ValueError("source sample counts must be positive")
    out = []
    for nt in n_tildes:
        factor = 1.0 if d <= nt else nt / d
        out.append(factor * np.eye(d))
    return out


def tune_validation(train, val, pretrained, grids, n):
    """Exhaustive search over (alpha, rho) minimizing validation squared error.

    Every candidate uses the shared assumed relation rho * I for all sources.
    Ties are broken toward smaller rho, then smaller alpha.  Returns
    (alpha, rho, fit) where the fit is recomputed through the canonical
    transfer solver at the selected pair.

    All candidates share the eigenbasis of X'X (the assumed relations are
    scaled identities), so the grid is swept with one eigendecomposition.
    """
    X, y = train
    X_val, y_val = val
    if X_val.shape[0] == 0:
        raise ValueError("validation set is empty")
    theta_sum = np.sum(np.asarray(pretrained, dtype=float), axis=0)
    m = len(pretrained)
    d = X.shape[1]

    lam, U = np.linalg.eigh(X.T @ X)
    u_y = U.T @ (X.T @ y)
    u_t = U.T @ theta_sum
    proj = X_val @ U

    alphas = grids.alpha_grid
    best = None  # (err, rho, alpha)
    for rho in grids.rho_grid:
        na = n * alphas  # shape (A,)
        denom = lam[:, None] + na[None, :] * (m * rho * rho)
        coefs = (u_y[:, None] + na[None, :] * rho * u_t[:, None]) / denom
        resid = y_val[:, None] - proj @ coefs
        errs = np.mean(resid * resid, axis=0)
        k = int(np.argmin(errs))  # first minimum -> smallest alpha
        if best is None or errs[k] < best[0]:
            best = (errs[k], float(rho), float(alphas[k]))

    _, rho_star, alpha_star = best
    fit = fit_transfer(X, y, pretrained, [rho_star] * m, alpha_star, n)
    return alpha_star, rho_star, fit
