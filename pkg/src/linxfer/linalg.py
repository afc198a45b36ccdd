"""Dense linear-algebra primitives shared by the estimators and the theory engine.

Everything here is plain dense numpy: the problem sizes of interest are a few
hundred dimensions, so no sparse or iterative paths are worth their complexity.
All numerical tolerances live in one place (``TOL``) so that tests and
production code agree on what "zero" means.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg


# ---------------------------------------------------------------------------
# tolerances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    """Central numeric tolerances.

    Attributes
    ----------
    penrose : float
        Allowed deviation for pseudoinverse identities (absolute, on
        normalized matrices).
    spectral_rel : float
        Relative tolerance for spectral identities (eigenvalue sums vs trace).
    psd_rel : float
        How negative an eigenvalue may be, relative to the largest one,
        before a matrix is rejected as not positive semi-definite.
    gram_rank_rel : float
        Minimum-to-maximum eigenvalue ratio below which a Gram sum of assumed
        relations is considered rank deficient.
    fixed_point : float
        Residual target for scalar fixed-point solves.
    """

    penrose: float = 1e-8
    spectral_rel: float = 1e-8
    psd_rel: float = 1e-10
    gram_rank_rel: float = 1e-10
    fixed_point: float = 1e-12


TOL = Tolerances()


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def pseudoinverse(mat):
    """Moore-Penrose pseudoinverse with the standard rank cutoff.

    Singular values below ``max(rows, cols) * eps * sigma_max`` are treated
    as zero, which is the usual dense-rank convention.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError("pseudoinverse expects a 2-d array")
    rcond = max(mat.shape) * np.finfo(float).eps
    return np.linalg.pinv(mat, rcond=rcond)


def sym_psd_sqrt(mat):
    """Symmetric square root of a symmetric positive semi-definite matrix.

    Parameters
    ----------
    mat : (d, d) array_like
        Symmetric PSD matrix.  Eigenvalues more negative than
        ``-TOL.psd_rel * max_eigenvalue`` raise; tiny negative values from
        roundoff are clipped to zero.

    Returns
    -------
    (d, d) ndarray
        Symmetric matrix ``S`` with ``S @ S`` equal to the input.
    """
    mat = np.asarray(mat, dtype=float)
    vals, vecs = scipy.linalg.eigh(mat)
    top = max(vals[-1], 0.0)
    if vals[0] < -TOL.psd_rel * max(top, 1.0):
        raise ValueError(
            "matrix is not positive semi-definite "
            f"(min eigenvalue {vals[0]:.3e}, max {top:.3e})"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""

    values: np.ndarray   # (d,) descending
    vectors: np.ndarray  # (d, d), column i pairs with values[i]


def eig_sym(mat):
    """Full eigendecomposition of a symmetric matrix.

    Returns a :class:`Spectrum` with eigenvalues sorted descending and the
    matching orthonormal eigenvectors as columns.
    """
    mat = np.asarray(mat, dtype=float)
    vals, vecs = scipy.linalg.eigh(mat)
    order = np.argsort(vals)[::-1]
    return Spectrum(values=vals[order], vectors=vecs[:, order])
