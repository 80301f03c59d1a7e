from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nestsvd import problems as pb
from nestsvd.errors import InputError, NumericalError
from nestsvd.operators import (HamiltonianSpec, ImportanceScheme, cdk_operator_apply, cdk_pair_contraction,
                               evaluate_chunked, fd_laplacian, kernel_operator_apply, matrix_operator_apply,
                               negative_hamiltonian_apply, pad_constant_mode)


def test_fd_laplacian_quadratics_exact():
    x = np.random.default_rng(0).uniform(-3, 3, size=(9, 1))
    for eps in (0.3, 0.01):
        lap, center = fd_laplacian(lambda p: p[:, :1] ** 2, x, eps)
        np.testing.assert_allclose(lap, 2.0, atol=1e-8)
        np.testing.assert_array_equal(center, x**2)
    y = np.random.default_rng(1).uniform(-3, 3, size=(9, 2))
    lap, _ = fd_laplacian(lambda p: np.sum(p * p, axis=1), y, 0.01)
    np.testing.assert_allclose(lap, 4.0, atol=1e-8)


def test_fd_laplacian_sine_matches_taylor():
    eps = 0.01
    lap, _ = fd_laplacian(np.sin, np.array([[np.pi / 2]]), eps)
    expected = 2 * (np.cos(eps) - 1) / eps**2
    assert abs(lap[0, 0] - expected) < 1e-9
    assert abs(lap[0, 0] + 1) < 1e-4


def test_fd_laplacian_second_order_on_exp():
    x = np.array([[0.3, -0.2]])
    f = lambda p: np.exp(p[:, 0] + 2 * p[:, 1])
    exact = 5 * f(x)[0]
    errs = [abs(fd_laplacian(f, x, e)[0][0, 0] - exact) for e in (0.02, 0.01)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_fd_laplacian_reports_bad_point():
    with pytest.raises(NumericalError, match="stencil point"), np.errstate(invalid="ignore"):
        fd_laplacian(lambda p: np.log(p[:, 0]), np.array([[0.005]]), 0.01)


def test_chunked_evaluation_independent_of_workers():
    x = np.random.default_rng(2).standard_normal((10000, 2))
    f = lambda p: np.sin(p @ np.array([[1.0, 2.0], [3.0, -1.0]]))
    a = evaluate_chunked(f, x, threads=1)
    b = evaluate_chunked(f, x, threads=3)
    assert a.tobytes() == b.tobytes()


def test_hamiltonian_reduces_to_laplacian():
    spec = HamiltonianSpec(lambda p: np.zeros(p.shape[0]), scale_kinetic=0.5)
    x = np.linspace(-1, 1, 5)[:, None]
    app = negative_hamiltonian_apply(lambda p: p[:, :1] ** 2, spec, None, x)
    np.testing.assert_allclose(app.t_values, 1.0, atol=1e-9)
    np.testing.assert_array_equal(app.f_values, x**2)


def test_shift_linearity_exact():
    rng = np.random.default_rng(5)
    x = rng.normal(0, 3, size=(50, 2))
    model = lambda p: np.stack([np.exp(-np.sum(p * p, 1) / 4), np.cos(p[:, 0])], axis=1)
    imp = ImportanceScheme.gaussian(3.0, 2)
    base = negative_hamiltonian_apply(model, HamiltonianSpec(pb.harmonic2d), imp, x)
    shifted = negative_hamiltonian_apply(model, HamiltonianSpec(pb.harmonic2d, shift=16.0), imp, x)
    assert np.array_equal(shifted.t_values, base.t_values + 16.0 * base.f_values)


def test_importance_weighting_convention():
    # with w = gaussian, a model returning psi/sqrt(w) must give T psi / sqrt(w)
    imp = ImportanceScheme.gaussian(2.0, 2)
    state = pb.OscillatorState(1, 0)
    x = np.random.default_rng(6).normal(0, 1.5, size=(40, 2))
    model = lambda p: pb.oscillator_eigenfunction_xy(state, p) / np.sqrt(imp(p))
    app = negative_hamiltonian_apply(model, HamiltonianSpec(pb.harmonic2d), imp, x)
    np.testing.assert_allclose(app.t_values[:, 0], pb.oscillator_eigenvalue(state) * app.f_values[:, 0],
                               rtol=1e-3, atol=1e-6)


def test_hydrogen_ground_state_rayleigh_quotient():
    h = 0.02
    axis = np.arange(-12, 12 + h / 2, h)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], 1)
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) >= 0.05]
    state = pb.HydrogenState(0, 0)
    app = negative_hamiltonian_apply(lambda p: pb.hydrogen_eigenfunction_xy(state, p),
                                     HamiltonianSpec(pb.coulomb2d), None, pts)
    rq = np.sum(app.f_values * app.t_values) / np.sum(app.f_values**2)
    assert abs(rq - 1.0) < 0.02


def test_anomaly_flagged():
    spec = HamiltonianSpec(pb.coulomb2d, anomaly_threshold=1e3)
    x = np.array([[1e-5, 0.0], [1.0, 1.0]])
    app = negative_hamiltonian_apply(lambda p: np.ones(p.shape[0]), spec, None, x)
    assert list(app.anomalies) == [0]


def test_hamiltonian_spec_validation():
    with pytest.raises(InputError):
        HamiltonianSpec(pb.harmonic2d, fd_epsilon=0)
    with pytest.raises(InputError):
        HamiltonianSpec(pb.harmonic2d, shift=-1)


def _tables(rng, n, m, k=3):
    return rng.standard_normal((m, k)), rng.standard_normal((n, k))


def test_matrix_operator_examples():
    a = np.diag([3.0, 2.0, 1.0])
    e1 = np.eye(3)[:, :1]
    fwd, adj = matrix_operator_apply(a, lambda i: e1[i], lambda i: e1[i], np.arange(3), np.arange(3))
    np.testing.assert_array_equal(fwd.t_values, 3 * e1)
    f, g = _tables(np.random.default_rng(0), 4, 4)
    fwd, adj = matrix_operator_apply(np.eye(4), lambda i: f[i], lambda i: g[i], np.arange(4), np.arange(4))
    np.testing.assert_array_equal(fwd.t_values, f)
    np.testing.assert_array_equal(adj.t_values, g)
    with pytest.raises(InputError):
        matrix_operator_apply(np.eye(4), lambda i: f[i], lambda i: g[i], np.array([4]), np.arange(4))


@given(st.integers(0, 2**31))
def test_matrix_adjoint_identity(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((6, 4))
    f, g = _tables(r, 6, 4)
    fwd, adj = matrix_operator_apply(a, lambda i: f[i], lambda i: g[i], np.arange(6), np.arange(4))
    lhs = np.mean(fwd.f_values * fwd.t_values, axis=0)  # <g|Tf> under 1/N
    rhs = np.mean(adj.f_values * adj.t_values, axis=0)  # <T*g|f> under 1/M
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**31))
def test_matrix_importance_invariance(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((5, 5))
    a = a + a.T
    f = r.standard_normal((5, 2))
    plain, _ = matrix_operator_apply(a, lambda i: f[i], lambda i: f[i], np.arange(5), np.arange(5))
    w = r.uniform(0.2, 3.0, size=5)
    w = w / w.mean()
    # the weighted model stores f / sqrt(w); under sampling p = w/N the plain mean reweights back
    scaled = lambda i: f[i] / np.sqrt(w[i])[:, None]
    fwd, _ = matrix_operator_apply(a, scaled, scaled, np.arange(5), np.arange(5), w, w)
    exact = np.mean(plain.f_values * plain.t_values, axis=0)
    weighted = np.sum(w[:, None] * fwd.f_values * fwd.t_values, axis=0) / 5
    np.testing.assert_allclose(weighted, exact, rtol=1e-12, atol=1e-12)


def test_matrix_operator_singular_values_preserved():
    a = np.random.default_rng(1).standard_normal((8, 6))
    res = np.linalg.svd(a)
    v = res[2][0] * np.sqrt(6)
    u = res[0][:, 0] * np.sqrt(8)
    fwd, _ = matrix_operator_apply(a, lambda i: v[i][:, None], lambda i: u[i][:, None], np.arange(8), np.arange(6))
    np.testing.assert_allclose(fwd.t_values[:, 0], res[1][0] * u, atol=1e-12)


def test_kernel_backend():
    x = np.random.default_rng(0).standard_normal((5, 2))
    y = np.random.default_rng(1).standard_normal((4, 2))
    f = lambda p: p[:, :1]
    zero = kernel_operator_apply(lambda a, b: 0.0 * a[..., 0] * b[..., 0], f, f, x, y)
    np.testing.assert_array_equal(zero.kernel_matrix, 0.0)
    ones = kernel_operator_apply(lambda a, b: np.ones(np.broadcast_shapes(a.shape, b.shape)[:-1]), f, f, x, y)
    np.testing.assert_array_equal(ones.kernel_matrix, 1.0)
    np.testing.assert_allclose(ones.quadratic_form(), x[:, 0].mean() * y[:, 0].mean())
    with pytest.raises(NumericalError, match="pair"), np.errstate(divide="ignore"):
        kernel_operator_apply(lambda a, b: np.log(a[..., 0] * 0.0), f, f, x, y)


def test_kernel_rank_one_concentration():
    r = np.random.default_rng(7)
    x, y = r.standard_normal((10000, 1)), r.standard_normal((10000, 1))
    u = lambda p: np.cos(p[..., 0])
    f = lambda p: np.sin(p[:, :1]) + 1.0
    app = kernel_operator_apply(lambda a, b: u(a) * u(b), f, f, x, y)
    est = app.quadratic_form()[0]
    ux, uy = u(x) * f(x)[:, 0], u(y) * f(y)[:, 0]
    target = ux.mean() * uy.mean()
    # both factors are sample means; bound by their combined standard error
    se = np.hypot(ux.std() * abs(uy.mean()), uy.std() * abs(ux.mean())) / np.sqrt(10000)
    assert abs(est - target) < 3 * se
    exact = np.exp(-0.5) * (1 + 0.0)  # E[cos X] for X ~ N(0,1); E[cos X sin X] = 0
    assert abs(est - exact**2) < 3 * (ux.std() + uy.std()) / np.sqrt(10000) * 2


def test_cdk_contraction():
    one = np.ones((6, 1))
    np.testing.assert_array_equal(cdk_pair_contraction(one, one), [1.0])
    pmf = np.array([[0.4, 0.1], [0.1, 0.4]])
    sign = np.array([1.0, -1.0])
    # full-pmf contraction: sum_xy P(x,y) f(x) g(y)
    term = np.einsum("xy,x,y->", pmf, sign, sign)
    assert term == pytest.approx(0.6, abs=1e-15)
    padded = pad_constant_mode(np.zeros((3, 2)))
    np.testing.assert_array_equal(padded[:, 0], 1.0)
    fwd, adj = cdk_operator_apply(np.ones((2, 1)), 2 * np.ones((2, 1)))
    np.testing.assert_array_equal(fwd.t_values, 1.0)
    np.testing.assert_array_equal(adj.t_values, 2.0)


def test_cdk_independent_centered_vanishes():
    r = np.random.default_rng(9)
    x = r.integers(0, 2, 20000)
    y = r.integers(0, 2, 20000)
    f = (2 * x - 1.0)[:, None]
    g = (2 * y - 1.0)[:, None]
    est = cdk_pair_contraction(f, g)[0]
    assert abs(est) < 3 / np.sqrt(20000)


def test_radial_exponential_density_normalized():
    from nestsvd.training import Sampler
    s = Sampler("radial_exponential", {"scale": 3.0})
    x = s.draw(np.random.default_rng(11), 200000).x
    w = s.importance()(x)
    r = np.hypot(x[:, 0], x[:, 1])
    # integral of exp(-r) over the plane is 2 pi
    est = np.mean(np.exp(-r) / w)
    assert abs(est - 2 * np.pi) < 0.02 * 2 * np.pi
    # a Coulomb-weighted integrand has bounded weights under this density
    ratio = np.exp(-r) / r / w
    assert np.max(ratio) <= 2 * np.pi * 3.0 + 1e-9
    np.testing.assert_allclose(np.mean(r), 3.0, rtol=0.01)
