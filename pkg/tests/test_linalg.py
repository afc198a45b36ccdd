import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linxfer.linalg import TOL, Tolerances, eig_sym, pseudoinverse, sym_psd_sqrt


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(2, 12))
def test_pseudoinverse_penrose_identities(seed, rows, cols):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((rows, cols))
    if seed % 3 == 0 and min(rows, cols) > 2:  # exercise rank deficiency too
        A[:, -1] = A[:, 0]
    P = pseudoinverse(A)
    scale = max(1.0, np.linalg.norm(A))
    assert np.allclose(A @ P @ A, A, atol=TOL.penrose * scale)
    assert np.allclose(P @ A @ P, P, atol=TOL.penrose * scale)
    assert np.allclose((A @ P).T, A @ P, atol=TOL.penrose * scale)
    assert np.allclose((P @ A).T, P @ A, atol=TOL.penrose * scale)


def test_pseudoinverse_rejects_non_2d():
    with pytest.raises(ValueError):
        pseudoinverse(np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 16))
def test_sym_psd_sqrt_squares_back(seed, d):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d + 2))
    M = B @ B.T
    S = sym_psd_sqrt(M)
    assert np.allclose(S, S.T)
    assert np.allclose(S @ S, M, atol=1e-9 * max(1.0, np.linalg.norm(M)))


def test_sym_psd_sqrt_rejects_indefinite():
    M = np.diag([1.0, -0.5])
    with pytest.raises(ValueError):
        sym_psd_sqrt(M)


def test_sym_psd_sqrt_clips_roundoff():
    # eigenvalues at exactly 0 plus tiny negative jitter must be accepted
    M = np.zeros((3, 3))
    M[0, 0] = 1.0
    S = sym_psd_sqrt(M - 1e-14 * np.eye(3))
    assert np.allclose(S @ S, M, atol=1e-7)


def test_eig_sym_descending_and_reconstructs():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((10, 10))
    M = A + A.T
    spec = eig_sym(M)
    assert np.all(np.diff(spec.values) <= 0)
    assert np.allclose(spec.vectors @ np.diag(spec.values) @ spec.vectors.T, M,
                       atol=1e-10 * np.linalg.norm(M))
    assert np.allclose(spec.vectors.T @ spec.vectors, np.eye(10), atol=1e-10)


def test_tolerances_frozen_defaults():
    assert TOL == Tolerances()
    with pytest.raises(Exception):
        TOL.penrose = 1.0
