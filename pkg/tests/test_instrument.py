from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonsparse.instrument import (
    EXHAUSTIVE_SIGN_LIMIT,
    InstrumentError,
    approximate_row_instrument,
    assemble_V,
    build_zstar,
    check_identifiability,
    cross_covariance,
    exact_instrument,
    row_objective,
)
from nonsparse.model_core import partition


def _blocks(rng, n=120, q=3, k=8, coupling=0.8):
    Z = rng.normal(size=(n, q + 1))
    U = rng.normal(size=(n, k))
    U[:, : q + 1] += coupling * Z
    return Z, U


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.floats(0.0, 0.5))
def test_exact_rows_are_orthonormal(seed, q, thr):
    Zs, U = _blocks(np.random.default_rng(seed), q=q)
    spec = exact_instrument(Zs, U, rank_threshold=thr)
    r = spec.effective_rank
    np.testing.assert_allclose(spec.A @ spec.A.T, np.eye(r), atol=1e-8)
    s = spec.singular_values
    assert np.all(s[:r] >= thr * s[0]) and np.all(s[r:] < thr * s[0])


def test_exact_whitened_zstar_has_identity_covariance():
    Zs, U = _blocks(np.random.default_rng(1))
    spec = exact_instrument(Zs, U)
    W = spec.transform(Zs)
    np.testing.assert_allclose(W.T @ W / W.shape[0], np.eye(Zs.shape[1]), atol=1e-10)


def test_exact_without_coupling_raises():
    rng = np.random.default_rng(2)
    Zs = rng.normal(size=(30, 2))
    with pytest.raises(InstrumentError):
        exact_instrument(Zs, np.ones((30, 3)))


def test_exact_collinear_zstar_raises():
    rng = np.random.default_rng(3)
    Zs = rng.normal(size=(30, 2))
    Zs = np.column_stack([Zs, Zs[:, 0]])
    with pytest.raises(InstrumentError, match="collinear"):
        exact_instrument(Zs, rng.normal(size=(30, 4)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.booleans())
def test_approximate_row_is_unit_and_sign_optimal(seed, q, whiten):
    Zs, U = _blocks(np.random.default_rng(seed), q=q)
    spec = approximate_row_instrument(Zs, cross_covariance(U, Zs), whiten=whiten)
    a = spec.A[0]
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-8)
    assert a[np.flatnonzero(a)[0]] > 0
    Zc = spec.transform(Zs)
    sig = cross_covariance(U, Zs) @ spec.whitener
    M = Zc.T @ Zc / Zc.shape[0]
    D = np.linalg.pinv(sig) @ sig
    best = row_objective(a, D, M)
    K = a.size
    for signs in itertools.product((1.0, -1.0), repeat=K):
        assert best <= row_objective(np.asarray(signs) * np.abs(a), D, M) + 1e-10


def test_approximate_local_search_for_many_columns():
    K = EXHAUSTIVE_SIGN_LIMIT + 3
    Zs, U = _blocks(np.random.default_rng(4), n=300, q=K - 1, k=K + 4)
    spec = approximate_row_instrument(Zs, cross_covariance(U, Zs))
    a = spec.A[0]
    Zc = spec.transform(Zs)
    M = Zc.T @ Zc / Zc.shape[0]
    sig = cross_covariance(U, Zs)
    D = np.linalg.pinv(sig) @ sig
    best = row_objective(a, D, M)
    for j in range(K):
        b = a.copy()
        b[j] = -b[j]
        assert best <= row_objective(b, D, M) + 1e-10


def test_approximate_validation():
    Zs, U = _blocks(np.random.default_rng(5))
    with pytest.raises(ValueError):
        approximate_row_instrument(Zs, cross_covariance(U, Zs), c=0.0)
    with pytest.raises(ValueError):
        approximate_row_instrument(Zs, np.ones((3, 2)))


def test_row_objective_formula():
    rng = np.random.default_rng(6)
    a, D = rng.normal(size=3), rng.normal(size=(3, 3))
    Zs = rng.normal(size=(50, 3))
    M = Zs.T @ Zs / 50
    B = np.outer(a, a) - D
    direct = np.mean(np.sum((Zs @ B.T) ** 2, axis=1))
    assert row_objective(a, D, M) == pytest.approx(direct)


def test_v_is_linear_in_inputs():
    rng = np.random.default_rng(7)
    Zs, U = _blocks(rng)
    spec = exact_instrument(Zs, U)
    alpha = rng.normal(size=U.shape[1])
    V1 = spec.assemble(U, Zs, alpha)
    V2 = spec.assemble(2 * U, 2 * Zs - spec.center, 2 * alpha)
    # first coordinate is quadratic under joint scaling; W is linear after centering
    np.testing.assert_allclose(V2[:, 1:], 2 * V1[:, 1:], atol=1e-10)
    np.testing.assert_allclose(V2[:, 0], 4 * V1[:, 0], atol=1e-10)


def test_assemble_without_directions():
    U = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(assemble_V(U, [1.0, 1.0], None, None), [[1.0], [5.0], [9.0]])


def test_build_zstar_and_bounds():
    X = np.arange(20.0).reshape(4, 5)
    part = partition(X, [1, 3])
    np.testing.assert_array_equal(build_zstar(part, 2), X[:, [1, 3, 0, 2]])
    with pytest.raises(InstrumentError):
        build_zstar(part, 4)


def test_identifiability_positive_for_independent_z():
    rng = np.random.default_rng(8)
    Z = rng.normal(size=(100, 2))
    V = rng.normal(size=(100, 1))
    assert check_identifiability(Z, V, 0.4) > 0.5
    assert check_identifiability(V[:, 0], V, 0.01) < 1e-3
