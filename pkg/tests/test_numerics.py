import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glplab import numerics as nx
from glplab.harness.experiments import random_composition
from glplab.models import mlp_apply, mlp_init
from glplab.rng import stream


def test_grad_of_square():
    g = nx.grad(lambda p: p["x"] ** 2, {"x": np.array(3.0)})
    assert g["x"] == pytest.approx(6.0, abs=0)


def test_grad_of_product():
    g = nx.grad(lambda p: p["x"] * p["y"], {"x": np.array(2.0), "y": np.array(5.0)})
    assert (float(g["x"]), float(g["y"])) == (5.0, 2.0)


def test_affine_mse_matches_finite_differences():
    rng = stream(0, "test")
    X, Y = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    params = nx.ParamSet({"W": rng.normal(size=(2, 2)), "b": rng.normal(size=2)})
    loss = lambda p: nx.reduce_mean(nx.square(nx.affine(X, p["W"], p["b"]) - Y))
    assert nx.check_gradient(loss, params, fd_step=1e-5) < 1e-6


def test_check_gradient_square():
    assert nx.check_gradient(lambda p: p["x"] ** 2, {"x": np.array(3.0)}, 1e-5) < 1e-6


def test_check_gradient_constant_loss():
    g = nx.grad(lambda p: 4.0, {"x": np.ones(3)})
    assert np.array_equal(g["x"], np.zeros(3))
    assert nx.check_gradient(lambda p: 4.0, {"x": np.ones(3)}) == 0.0


def test_check_gradient_rejects_bad_step():
    with pytest.raises(ValueError):
        nx.check_gradient(lambda p: p["x"] ** 2, {"x": np.array(1.0)}, fd_step=0.0)


@pytest.mark.parametrize("draw", range(10))
def test_three_layer_network_gradients(draw):
    rng = stream(draw, "three-layer")
    params = nx.ParamSet(mlp_init(rng, [3, 5, 4, 2]))
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    loss = lambda p: nx.reduce_mean(nx.square(mlp_apply(p, X, 3) - Y))
    assert nx.check_gradient(loss, params) < 1e-4


def test_adam_zero_gradient_leaves_params():
    params = nx.ParamSet({"w": np.array([1.0, -2.0])})
    new, state = nx.optimizer_step(params, {"w": np.zeros(2)}, nx.OptimizerState.for_params(params))
    assert np.array_equal(new["w"], params["w"])
    assert state.step == 1


def test_adam_zero_gradient_decays_moments():
    params = nx.ParamSet({"w": np.array([1.0, -2.0])})
    state = nx.OptimizerState(nx.ParamSet({"w": np.ones(2)}), nx.ParamSet({"w": np.ones(2)}), 3)
    _, s2 = nx.optimizer_step(params, {"w": np.zeros(2)}, state)
    assert np.allclose(s2.m["w"], 0.9) and np.allclose(s2.v["w"], 0.999)


def test_adam_first_step_moves_by_lr():
    params = nx.ParamSet({"w": np.array(0.5)})
    new, _ = nx.optimizer_step(params, {"w": np.array(1.0)}, nx.OptimizerState.for_params(params, lr=0.01))
    # bias-corrected first step: lr * 1 / (1 + eps)
    assert float(params["w"] - new["w"]) == pytest.approx(0.01 / (1 + 1e-8), rel=1e-12)


def test_adam_step_counter():
    opt = nx.Adam({"w": np.zeros(2)})
    opt.step({"w": np.ones(2)})
    opt.step({"w": np.ones(2)})
    assert opt.state.step == 2


def test_adam_shape_mismatch():
    params = nx.ParamSet({"w": np.zeros(2)})
    with pytest.raises(ValueError):
        nx.optimizer_step(params, {"w": np.zeros(3)}, nx.OptimizerState.for_params(params))


def test_gradient_step():
    out = nx.gradient_step({"w": np.array([1.0, 2.0])}, {"w": np.array([1.0, -1.0])}, 0.5)
    assert np.array_equal(out["w"], [0.5, 2.5])
    with pytest.raises(ValueError):
        nx.gradient_step({"w": np.zeros(1)}, {"v": np.zeros(1)}, 0.1)


def test_unsupported_primitive_raises_at_construction():
    with pytest.raises(nx.UnsupportedPrimitiveError):
        nx.grad(lambda p: np.sin(p["x"]), {"x": np.array(1.0)})
    with pytest.raises(nx.UnsupportedPrimitiveError):
        nx.grad(lambda p: 1.0 / p["x"], {"x": np.array(1.0)})


def test_non_finite_intermediate_raises():
    with pytest.raises(nx.NonFiniteError):
        nx.grad(lambda p: nx.log(p["x"]), {"x": np.array(0.0)})
    with pytest.raises(nx.NonFiniteError):
        nx.grad(lambda p: np.exp(p["x"]), {"x": np.array(1000.0)})


def test_paramset_is_read_only_and_ordered():
    p = nx.ParamSet({"b": np.zeros(1), "a": np.zeros(2)})
    assert list(p) == ["b", "a"]
    with pytest.raises(ValueError):
        p["a"][0] = 1.0


@given(st.integers(0, 2**32 - 1))
def test_random_compositions_match_finite_differences(seed):
    _, loss, params = random_composition(stream(seed, "property"))
    assert nx.check_gradient(loss, params) < 1e-4


@given(st.integers(0, 2**32 - 1))
def test_gradients_are_deterministic(seed):
    _, loss, params = random_composition(stream(seed, "property"))
    g1, g2 = nx.grad(loss, params), nx.grad(loss, params)
    assert all(np.array_equal(g1[k], g2[k]) for k in params)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_is_linear(seed, a, b):
    rng = stream(seed, "linearity")
    _, f1, params = random_composition(rng)
    X = rng.normal(size=params["W1"].shape)
    f2 = lambda p: nx.reduce_sum(np.tanh(p["W1"] * X))
    combined = nx.grad(lambda p: a * f1(p) + b * f2(p), params)
    g1, g2 = nx.grad(f1, params), nx.grad(f2, params)
    for k in params:
        np.testing.assert_allclose(combined[k], a * g1[k] + b * g2[k], rtol=0, atol=1e-10)
