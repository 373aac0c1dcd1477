from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonsparse.semiparam import (
    IdentifiabilityError,
    KernelSmoother,
    coordinate_spread,
    default_bandwidth,
    estimate_g,
    fit_partially_linear,
    fit_theta_weighted,
    partial_residuals,
    product_kernel_weights,
)
from oracles import gaussian_kernel_weights


def _plm(rng, n=200, theta=(1.5, -0.7)):
    V = rng.uniform(-1, 1, size=(n, 1))
    Z = rng.normal(size=(n, len(theta))) + V
    y = Z @ np.asarray(theta) + np.sin(3 * V[:, 0]) + 0.1 * rng.normal(size=n)
    return y, Z, V


def test_weights_sum_to_one_over_many_queries():
    rng = np.random.default_rng(0)
    sm = KernelSmoother(rng.normal(size=(60, 2)), 0.4)
    W = sm.weight_matrix(rng.normal(scale=2.0, size=(1000, 2)))
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-10)


def test_weights_match_direct_formula():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(25, 2))
    q = rng.normal(size=2)
    sm = KernelSmoother(pts, 0.7)
    np.testing.assert_allclose(product_kernel_weights(sm, q), gaussian_kernel_weights(pts, q, 0.7), atol=1e-13)


def test_coordinate_scale_equals_per_coordinate_bandwidth():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(30, 2))
    q = rng.normal(size=(4, 2))
    scaled = KernelSmoother(pts, 0.5, coordinate_scale=[1.0, 3.0]).weight_matrix(q)
    direct = KernelSmoother(pts / [1.0, 3.0], 0.5).weight_matrix(q / [1.0, 3.0])
    np.testing.assert_allclose(scaled, direct, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1e3, 1e3), st.sampled_from([2, 4]), st.booleans())
def test_smoother_reproduces_constants(seed, const, order, loo):
    rng = np.random.default_rng(seed)
    sm = KernelSmoother(rng.normal(size=(40, 2)), 0.5, order, loo)
    np.testing.assert_allclose(sm.smooth(np.full(40, const)), const, atol=1e-10 * (1 + abs(const)))


def test_far_queries_use_nearest_neighbour():
    pts = np.array([[0.0], [1.0], [2.0]])
    sm = KernelSmoother(pts, 1e-3)
    w = sm.weight_matrix([[50.0]])
    np.testing.assert_array_equal(w, [[0.0, 0.0, 1.0]])
    assert sm.boundary_flags == 1


def test_leave_one_out_zeroes_diagonal():
    rng = np.random.default_rng(3)
    W = KernelSmoother(rng.normal(size=(20, 1)), 0.5, leave_one_out=True).weight_matrix()
    assert np.all(np.diag(W) == 0.0)


def test_smoother_validation():
    with pytest.raises(ValueError):
        KernelSmoother(np.zeros((3, 1)), 0.0)
    with pytest.raises(ValueError):
        KernelSmoother(np.zeros((3, 1)), 1.0, kernel_order=3)
    with pytest.raises(ValueError):
        KernelSmoother(np.zeros((3, 2)), 1.0, coordinate_scale=[1.0])
    sm = KernelSmoother(np.zeros((3, 2)), 1.0)
    with pytest.raises(ValueError):
        sm.weight_matrix(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        sm.smooth(np.zeros(4))


def test_default_bandwidth_rate_and_constant_columns():
    rng = np.random.default_rng(4)
    V = rng.normal(size=(500, 2)) * [1.0, 4.0]
    sd = V.std(axis=0, ddof=1)
    expected = np.sqrt(sd[0] * sd[1]) * 500 ** (-1 / 6)
    assert default_bandwidth(V) == pytest.approx(expected)
    Vc = np.column_stack([np.zeros(500), V[:, 0]])
    assert default_bandwidth(Vc) == pytest.approx(sd[0] * 500 ** (-1 / 6))
    with pytest.raises(ValueError):
        default_bandwidth(np.zeros((10, 1)))
    np.testing.assert_allclose(coordinate_spread(Vc), [1.0, sd[0]])


def test_partial_residuals_are_response_minus_smooth():
    rng = np.random.default_rng(5)
    y, Z, V = _plm(rng, 50)
    ry, rZ = partial_residuals(y, Z, V, 0.3)
    W = KernelSmoother(V, 0.3).weight_matrix()
    np.testing.assert_allclose(ry, y - W @ y)
    np.testing.assert_allclose(rZ, Z - W @ Z)


def test_partially_linear_fit_recovers_theta():
    y, Z, V = _plm(np.random.default_rng(6), 400)
    f = fit_partially_linear(y, Z, V, default_bandwidth(V))
    np.testing.assert_allclose(f.theta, [1.5, -0.7], atol=0.05)
    assert f.std_errors.shape == (2,)
    g = estimate_g(f, None, V[:, 0])
    assert np.corrcoef(g, np.sin(3 * V[:, 0]))[0, 1] > 0.95


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_theta_shift_equivariance(seed, c1, c2):
    y, Z, V = _plm(np.random.default_rng(seed), 60)
    c = np.array([c1, c2])
    f0 = fit_partially_linear(y, Z, V, 0.3)
    f1 = fit_partially_linear(y + Z @ c, Z, V, 0.3)
    np.testing.assert_allclose(f1.theta, f0.theta + c, atol=1e-8)


def test_theta_invariant_to_functions_of_v():
    y, Z, V = _plm(np.random.default_rng(7), 60)
    f0 = fit_partially_linear(y, Z, V, 0.3)
    f1 = fit_partially_linear(y + 7.0, Z, V, 0.3)
    np.testing.assert_allclose(f1.theta, f0.theta, atol=1e-10)
    assert f1.g_bar == pytest.approx(f0.g_bar + 7.0)


def test_collinear_residuals_raise():
    rng = np.random.default_rng(8)
    V = rng.normal(size=(50, 1))
    Z = np.column_stack([V[:, 0], V[:, 0]])
    with pytest.raises(IdentifiabilityError):
        fit_partially_linear(rng.normal(size=50), Z, V, 0.3)


def test_weighted_fit_with_unit_variances_matches_unweighted():
    y, Z, V = _plm(np.random.default_rng(9), 80)
    a = fit_partially_linear(y, Z, V, 0.3)
    b = fit_partially_linear(y, Z, V, 0.3, variances=np.ones(80))
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-12)
    with pytest.raises(ValueError):
        fit_theta_weighted(y, Z, np.zeros(80))
