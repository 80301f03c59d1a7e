from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nestsvd.errors import InputError, NumericalError
from nestsvd.models import (FourierFeatureMap, FourierSpec, ModelParams, ModelSpec, fourier_features,
                            head_indices, init_params, load_checkpoint, make_fourier_map, model_backward,
                            model_forward, param_count, param_layout, save_checkpoint)

ARCHS = [
    ModelSpec(2, 3, "disjoint", (6, 5), "softplus"),
    ModelSpec(2, 3, "shared", (6, 4), "sincos"),
    ModelSpec(2, 2, "disjoint", (4,), "sincos", FourierSpec(3, 0.5)),
    ModelSpec(1, 3, "shared", (), "softplus"),
]


def _fd_check(spec, seed, n_points=7):
    r = np.random.default_rng(seed)
    params = init_params(spec, seed)
    # larger final layer so every parameter has a visible effect
    params = params.with_values(params.values + 0.3 * r.standard_normal(params.values.size))
    x = r.standard_normal((n_points, spec.input_dim))
    cot = r.standard_normal((n_points, spec.output_modes))
    grad = model_backward(params, spec, x, cot)
    u = r.standard_normal(params.values.size)
    eps = 1e-5

    def scalar(v):
        return np.sum(cot * model_forward(params.with_values(v), spec, x))

    fd = (scalar(params.values + eps * u) - scalar(params.values - eps * u)) / (2 * eps)
    return fd, u @ grad


@pytest.mark.parametrize("spec", ARCHS, ids=lambda s: f"{s.head_mode}-{s.activation}-{len(s.hidden_widths)}")
@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_directional_fd(spec, seed):
    fd, an = _fd_check(spec, seed)
    assert abs(fd - an) <= 1e-5 * max(abs(fd), abs(an), 1e-8)


def test_backward_every_coordinate_small_mlp():
    spec = ModelSpec(2, 2, "disjoint", (3,), "softplus")
    r = np.random.default_rng(3)
    params = init_params(spec, 3)
    x = r.standard_normal((4, 2))
    cot = r.standard_normal((4, 2))
    grad = model_backward(params, spec, x, cot)
    eps = 1e-6
    for i in range(params.values.size):
        up, down = params.values.copy(), params.values.copy()
        up[i] += eps
        down[i] -= eps
        fd = (np.sum(cot * model_forward(params.with_values(up), spec, x))
              - np.sum(cot * model_forward(params.with_values(down), spec, x))) / (2 * eps)
        assert abs(fd - grad[i]) <= 1e-6 * max(1.0, abs(fd))


def test_zero_params_give_zero_outputs():
    spec = ARCHS[0]
    params = ModelParams(np.zeros(param_count(spec)), param_layout(spec))
    np.testing.assert_array_equal(model_forward(params, spec, np.ones((3, 2))), 0.0)


def test_tabular_lookup_and_scatter():
    spec = ModelSpec(1, 2, "tabular", table_size=4)
    table = np.arange(8.0).reshape(4, 2)
    params = ModelParams(table.ravel(), param_layout(spec))
    np.testing.assert_array_equal(model_forward(params, spec, np.array([2, 0, 2])), table[[2, 0, 2]])
    cot = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    grad = model_backward(params, spec, np.array([2, 0, 2]), cot).reshape(4, 2)
    np.testing.assert_array_equal(grad, [[3, 4], [0, 0], [6, 8], [0, 0]])
    np.testing.assert_array_equal(model_backward(params, spec, np.array([1]), np.zeros((1, 2))), 0.0)


def test_tabular_rejects_bad_indices():
    spec = ModelSpec(1, 1, "tabular", table_size=3)
    params = init_params(spec, 0)
    with pytest.raises(InputError):
        model_forward(params, spec, np.array([3]))
    with pytest.raises(InputError):
        model_forward(params, spec, np.array([0.5]))


def test_single_linear_layer_by_hand():
    spec = ModelSpec(3, 2, "shared", (), "softplus")
    w = np.array([[1.0, -1.0], [2.0, 0.5], [0.0, 3.0]])
    b = np.array([0.25, -0.5])
    params = ModelParams(np.concatenate([w.ravel(), b]), param_layout(spec))
    x = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]])
    expected = np.array([[1 + 4 + 0.25, -1 + 1 + 9 - 0.5], [-1 + 0.25, 1 + 1.5 - 0.5]])
    np.testing.assert_allclose(model_forward(params, spec, x), expected)


def test_fourier_features_examples():
    fmap = FourierFeatureMap(np.array([[1.0, 0.0]]), 1.0, True)
    np.testing.assert_allclose(fourier_features(fmap, [[np.pi / 2, 7.0]]), [[0.0, 1.0, np.pi / 2, 7.0]], atol=1e-16)
    fmap = make_fourier_map(FourierSpec(5, 0.1), 2)
    z = fourier_features(fmap, np.zeros((1, 2)))
    np.testing.assert_array_equal(z, np.concatenate([np.ones(5), np.zeros(5), np.zeros(2)])[None])
    assert fmap.output_dim == 12


@given(st.integers(0, 2**31), st.floats(0.01, 10.0))
def test_fourier_pairs_on_unit_circle(seed, scale):
    fmap = make_fourier_map(FourierSpec(16, scale, seed=seed % 100), 2)
    x = np.random.default_rng(seed).normal(0, 5, size=(10, 2))
    z = fourier_features(fmap, x)
    np.testing.assert_allclose(z[:, :16] ** 2 + z[:, 16:32] ** 2, 1.0, atol=1e-12)


def test_fourier_projection_variance_and_immutable():
    fmap = make_fourier_map(FourierSpec(20000, 0.1), 1)
    assert abs(fmap.projection.var() / (2 * np.pi * 0.1) - 1) < 0.05
    with pytest.raises(ValueError):
        fmap.projection[0, 0] = 1.0


def test_init_determinism_and_scaling():
    spec = ModelSpec(128, 1, "shared", (10000,), "softplus")
    a, b = init_params(spec, 11), init_params(spec, 11)
    np.testing.assert_array_equal(a.values, b.values)
    w0 = a.view("w0")
    assert abs(w0.std() * np.sqrt(128) - 1) < 0.2
    # final layer carries the extra 0.1 factor
    assert abs(a.view("w1").std() * np.sqrt(10000) / 0.1 - 1) < 0.2


def test_init_tabular_variance():
    spec = ModelSpec(1, 4, "tabular", table_size=5000)
    t = init_params(spec, 1).view("table")
    assert t.shape == (5000, 4)
    assert abs(t.var() * 4 - 1) < 0.05


def test_head_isolation():
    spec = ModelSpec(2, 3, "disjoint", (5, 5), "softplus")
    params = init_params(spec, 4)
    x = np.random.default_rng(0).standard_normal((6, 2))
    base = model_forward(params, spec, x)
    v = params.values.copy()
    v[head_indices(spec, 1)] += 0.7
    moved = model_forward(params.with_values(v), spec, x)
    np.testing.assert_array_equal(moved[:, [0, 2]], base[:, [0, 2]])
    assert not np.allclose(moved[:, 1], base[:, 1])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_activation_names_layer():
    spec = ModelSpec(1, 1, "shared", (3,), "softplus")
    params = init_params(spec, 0)
    v = params.values.copy()
    v[0] = 1e308
    with pytest.raises(NumericalError, match="layer"):
        model_forward(params.with_values(v), spec, np.array([[1e10]]))


def test_spec_validation():
    with pytest.raises(InputError):
        ModelSpec(1, 1, "tabular")
    with pytest.raises(InputError):
        ModelSpec(1, 1, "shared", (3,), "sincos")
    with pytest.raises(InputError):
        ModelSpec(1, 1, "ring")


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    spec_f = ModelSpec(2, 2, "disjoint", (4,), "softplus", FourierSpec(3, 0.1))
    spec_g = ModelSpec(1, 2, "tabular", table_size=5)
    pf, pg = init_params(spec_f, 1), init_params(spec_g, 2)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"f": (spec_f, pf), "g": (spec_g, pg)})
    out = load_checkpoint(path)
    assert out["f"][0] == spec_f and out["g"][0] == spec_g
    assert out["f"][1].values.tobytes() == pf.values.tobytes()
    assert out["g"][1].values.tobytes() == pg.values.tobytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(InputError):
        load_checkpoint(bad)
