from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nestsvd import evaluation as ev
from nestsvd.errors import InputError, NumericalError


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _orthonormal(rng, s, k):
    q, _ = np.linalg.qr(rng.standard_normal((s, k)))
    return q * np.sqrt(s)


def test_rayleigh_quotient_examples():
    f = np.array([[1.0, 0.0], [1.0, 0.0]])
    q, collapsed = ev.rayleigh_quotient(f, 3 * f)
    assert q[0] == 3.0 and np.isnan(q[1])
    np.testing.assert_array_equal(collapsed, [False, True])
    q, _ = ev.rayleigh_quotient(np.array([[1.0], [2.0]]), np.array([[1.0], [0.0]]), weights=[1.0, 0.25])
    assert q[0] == pytest.approx(1.0 / 2.0)
    with pytest.raises(InputError):
        ev.rayleigh_quotient(np.ones((2, 1)), np.ones((3, 1)))


def test_relative_error():
    assert ev.relative_eigenvalue_error(0.95, 1.0) == pytest.approx(5.0)
    assert ev.relative_eigenvalue_error(1 / 9, 1 / 9) == 0.0
    for bad in (0.0, -2.0):
        with pytest.raises(InputError):
            ev.relative_eigenvalue_error(1.0, bad)


def test_spectrum_from_norms():
    f = np.array([[2.0], [2.0]])
    g = np.array([[3.0], [-3.0]])
    np.testing.assert_allclose(ev.spectrum_from_norms(f, g), [6.0])
    np.testing.assert_allclose(ev.spectrum_from_norms(f), [4.0])
    with pytest.raises(InputError):
        ev.spectrum_from_norms(f, np.ones((2, 2)))


def test_angle_distance_45_degrees():
    rng = np.random.default_rng(0)
    truth = _orthonormal(rng, 50, 2)
    learned = truth @ _rot(np.pi / 4)
    np.testing.assert_allclose(ev.angle_distance(learned, truth, [[0, 1]]), 0.0, atol=1e-7)
    np.testing.assert_allclose(ev.angle_distance(learned, truth, [[0], [1]]), 0.5, atol=1e-12)


def test_angle_distance_sign_and_scale_invariant():
    rng = np.random.default_rng(1)
    truth = _orthonormal(rng, 40, 3)
    learned = truth * np.array([-2.0, 0.1, 7.0])
    np.testing.assert_allclose(ev.angle_distance(learned, truth, [[0], [1], [2]]), 0.0, atol=1e-7)


def test_grouping_must_partition():
    with pytest.raises(InputError):
        ev.validate_grouping([[0], [0, 1]], 2)
    with pytest.raises(InputError):
        ev.validate_grouping([[0]], 2)


def test_subspace_distance_half():
    s = 8
    e = np.eye(4)
    a = np.repeat(e[:, [0, 1]], 2, axis=0)
    b = np.repeat(e[:, [0, 2]], 2, axis=0)
    assert ev.subspace_distance(a, b) == pytest.approx(0.5)
    assert ev.subspace_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert a.shape[0] == s
    with pytest.raises(NumericalError):
        ev.subspace_distance(np.ones((8, 2)), b)


@given(st.integers(0, 2**31))
def test_subspace_symmetric_and_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((30, 3)), rng.standard_normal((30, 3))
    d = ev.subspace_distance(a, b)
    assert d == pytest.approx(ev.subspace_distance(b, a), abs=1e-10)
    mix = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert d == pytest.approx(ev.subspace_distance(a @ mix, b), abs=1e-8)
    assert 0.0 <= d <= 1.0


def test_orthogonality_error_examples():
    assert ev.orthogonality_error(np.full((4, 1), 2.0)) == pytest.approx(9.0)
    rng = np.random.default_rng(2)
    assert ev.orthogonality_error(_orthonormal(rng, 20, 3)) == pytest.approx(0.0, abs=1e-20)


def test_nystrom_rank_one():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(200)
    u = np.cos
    kernel = lambda a, b: u(a[..., 0]) * u(b[..., 0])
    v = u(y) / np.sqrt(np.mean(u(y) ** 2))
    sigma = np.mean(u(y) ** 2)
    x = np.linspace(-2, 2, 7)
    got = ev.nystrom_extend(kernel, y, v * np.sqrt(sigma), sigma, x)
    # phi(x) = u(x) * mean(u(y) v) / sigma = u(x) / ||u||
    np.testing.assert_allclose(got, u(x) * np.sqrt(sigma) * np.mean(u(y) * v) / sigma, rtol=1e-12)
    with pytest.raises(NumericalError):
        ev.nystrom_extend(kernel, y, v, 0.0, x)


def test_rayleigh_ritz_exact_on_invariant_subspace():
    rng = np.random.default_rng(4)
    basis = _orthonormal(rng, 40, 3)
    lam = np.array([4.0, 2.0, 1.0])
    vals, _ = ev.rayleigh_ritz(basis, basis * lam)
    np.testing.assert_allclose(vals, lam, rtol=1e-12)


def test_poincare_separation():
    rng = np.random.default_rng(5)
    n = 12
    q = _orthonormal(rng, n, n)
    lam = np.sort(rng.uniform(0, 5, n))[::-1]
    t = lambda v: q @ (lam[:, None] * (q.T @ v / n))
    basis = rng.standard_normal((n, 4))
    vals, _ = ev.rayleigh_ritz(ev.whiten_columns(basis), t(ev.whiten_columns(basis)))
    assert np.all(vals <= lam[:4] + 1e-10)
    assert np.all(vals >= lam[-4:] - 1e-10)


def test_rayleigh_ritz_symmetrizes(caplog):
    p = np.eye(2) * np.sqrt(2)
    vals, _ = ev.rayleigh_ritz(p, np.array([[1.0, 0.5], [0.0, 1.0]]) * np.sqrt(2))
    assert "asymmetric" in caplog.text
    np.testing.assert_allclose(vals, np.linalg.eigvalsh([[1.0, 0.25], [0.25, 1.0]])[::-1])


def test_report_roundtrip_and_csv():
    rng = np.random.default_rng(6)
    truth = _orthonormal(rng, 30, 3)
    rep = ev.build_report([(truth, truth)], [[0], [1, 2]], [1.0, 0.5, 0.5], [1.0, 0.5, 0.5], [1, 1, 1])
    assert rep.relative_errors == [0.0, 0.0, 0.0]
    assert max(rep.angle_distances) < 1e-6
    assert json.loads(rep.to_json())["groups"] == [[0], [1, 2]]
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(ev.CSV_COLUMNS)
    assert len(lines) == 5 and lines[-1].startswith("run,")
    assert lines[2].split(",")[5] == "1"


def test_report_handles_collapsed_mode():
    rng = np.random.default_rng(7)
    truth = _orthonormal(rng, 30, 2)
    learned = truth.copy()
    learned[:, 1] = 0.0
    rep = ev.build_report([(learned, truth)], [[0], [1]], [1.0, np.nan], [1.0, 0.5], [1, 0], collapsed=[False, True])
    assert np.isnan(rep.angle_distances[1]) and np.isnan(rep.subspace_distances[1])
    assert rep.angle_distances[0] < 1e-6


def test_report_survives_nearly_collapsed_modes():
    # Pruned modes shrink toward zero but can stay above the collapse cutoff;
    # the joint subspace is then rank-deficient and reported as NaN.
    rng = np.random.default_rng(8)
    truth = _orthonormal(rng, 30, 3)
    learned = truth.copy()
    learned[:, 1:] = 1e-7 * truth[:, :1]
    rep = ev.build_report([(learned, truth)], [[0], [1, 2]], [1.0, 0.0, 0.0], [1.0, -1.0, -1.0], [1, 0, 0])
    assert rep.angle_distances[0] < 1e-6
    assert np.isnan(rep.subspace_distances[1]) and np.isnan(rep.total_subspace_distance)
