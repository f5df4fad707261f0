import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glplab.envs import Gridworld, LinearGaussianWorld, TransitionTriple
from glplab.harness.experiments import random_tabular_instance, witness_trial
from glplab.losses import generative_loss
from glplab.models import (ConstantDecoder, DimensionError, LinearDecoder, LinearEncoder, LinearWorldModel,
                           MLPDecoder, MLPEncoder, MLPWorldModel, ReencodingWorldModel, TabularDecoder, belief_transition,
                           decode_belief, encode_obs, load_checkpoint, make_degenerate_pair, make_isometry_autoencoder,
                           make_prop2_witness, make_tabular_gridworld_stack, predict_next, save_checkpoint,
                           true_dynamics_stack)
from glplab.rng import stream


def test_constant_encoder_ignores_input():
    h, f = make_degenerate_pair(np.array([1.0, 2.0]), obs_dim=5)
    rng = stream(0)
    for _ in range(100):
        np.testing.assert_array_equal(encode_obs(h, rng.normal(size=5)), [1.0, 2.0])
    np.testing.assert_array_equal(predict_next(f, np.array([1.0, 2.0]), rng.normal(size=3)), [1.0, 2.0])


def test_degenerate_pair_with_decoder_predicts_constant():
    h, f = make_degenerate_pair(np.zeros(2), obs_dim=3)
    g = LinearDecoder(np.ones((2, 3)), np.array([1.0, 2.0, 3.0]))
    o = stream(1).normal(size=(10, 3))
    out = g(f(h(o), np.zeros((10, 1))))
    assert np.all(out == out[0]) and np.array_equal(out[0], [1.0, 2.0, 3.0])


def test_isometry_left_inverse():
    h, g = make_isometry_autoencoder(2, 4, seed=0)
    s = stream(0).normal(size=(20, 2))
    np.testing.assert_allclose(encode_obs(h, g(s)), s, atol=1e-12)
    Q = g.Q
    np.testing.assert_allclose(Q.T @ Q, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(decode_belief(g, np.array([1.0, 0.0])), Q[:, 0], atol=0)


def test_square_isometry_is_orthogonal():
    h, g = make_isometry_autoencoder(2, 2, seed=3)
    np.testing.assert_allclose(g.Q @ g.Q.T, np.eye(2), atol=1e-12)
    x = stream(2).normal(size=(5, 2))
    np.testing.assert_allclose(h(g(x)), x, atol=1e-12)


def test_isometry_encoder_is_nonexpansive():
    h, _ = make_isometry_autoencoder(3, 5, seed=1)
    rng = stream(4)
    x, y = rng.normal(size=(1000, 5)), rng.normal(size=(1000, 5))
    assert np.all(np.linalg.norm(h(x) - h(y), axis=1) <= np.linalg.norm(x - y, axis=1) + 1e-12)
    assert h.lipschitz == pytest.approx(1.0, abs=1e-12)


def test_isometry_rejects_wide_latent():
    with pytest.raises(DimensionError):
        make_isometry_autoencoder(4, 2)


def test_mlp_encoder_outputs_finite():
    h = MLPEncoder.create(6, 8, seed=0)
    o = stream(5).normal(scale=10.0, size=(100, 6))
    assert np.all(np.isfinite(h(o))) and h(o).shape == (100, 8)
    assert h(o[0]).shape == (8,)


def test_dimension_mismatch():
    h = MLPEncoder.create(6, 8, seed=0)
    with pytest.raises(DimensionError):
        h(np.zeros(5))
    f = MLPWorldModel.create(8, 2, seed=0)
    with pytest.raises(DimensionError):
        f(np.zeros(8), np.zeros(3))


def test_linear_identity_world_model():
    f = LinearWorldModel.identity(3, 2)
    s = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(f(s, np.array([4.0, 4.0])), s)


def test_tabular_gridworld_mirrors_dynamics():
    env = Gridworld(3, 3)
    h, f, g = make_tabular_gridworld_stack(env)
    for cell in range(9):
        for action in range(4):
            nxt, _ = env.step(cell, action)
            pred = f(h(env.observe(cell)), env.encode_action(action))
            np.testing.assert_array_equal(g(pred), env.observe(nxt))


def test_scalar_witness():
    h, f = make_degenerate_pair(np.array([0.0]), obs_dim=1)
    g = TabularDecoder({(0.0,): np.array([2.0]), (10.0,): np.array([1.0]), (20.0,): np.array([3.0])})
    triples = [TransitionTriple(np.array([0.0]), np.array([0.0]), np.array([1.0])),
               TransitionTriple(np.array([5.0]), np.array([0.0]), np.array([3.0]))]
    assert list(generative_loss(h, f, g, triples).per_sample) == [1.0, 1.0]
    h_t, f_t = make_prop2_witness(h, f, g, triples)
    assert list(generative_loss(h_t, f_t, g, triples).per_sample) == [0.0, 0.0]


def test_witness_rejects_equal_targets_and_unreachable_targets():
    h, f = make_degenerate_pair(np.array([0.0]), obs_dim=1)
    g = ConstantDecoder(np.array([2.0]), in_dim=1)
    same = [(np.array([0.0]), np.array([0.0]), np.array([1.0])), (np.array([1.0]), np.array([0.0]), np.array([1.0]))]
    with pytest.raises(ValueError):
        make_prop2_witness(h, f, g, same)
    diff = [(np.array([0.0]), np.array([0.0]), np.array([1.0])), (np.array([1.0]), np.array([0.0]), np.array([3.0]))]
    with pytest.raises(ValueError):
        make_prop2_witness(h, f, g, diff)


@given(st.integers(0, 2**32 - 1))
def test_witness_strictly_improves(seed):
    witness, degenerate = witness_trial(stream(seed, "witness"))
    assert witness < degenerate


@given(st.integers(0, 2**32 - 1))
def test_witness_agrees_elsewhere(seed):
    h, f, g, data, (i, j) = random_tabular_instance(stream(seed, "witness"))
    h_t, f_t = make_prop2_witness(h, f, g, [data[i], data[j]])
    per_w = generative_loss(h_t, f_t, g, data).per_sample
    per_d = generative_loss(h, f, g, data).per_sample
    assert per_w[i] == 0.0 and per_w[j] == 0.0
    others = [k for k in range(len(data)) if k not in (i, j)]
    np.testing.assert_array_equal(per_w[others], per_d[others])


def test_belief_transition():
    h, g = make_isometry_autoencoder(2, 3, seed=0)
    f = LinearWorldModel(2 * np.eye(2), np.eye(2))
    assert belief_transition(h, f) is f
    t = belief_transition(h, f, g)
    assert isinstance(t, ReencodingWorldModel)
    s, a = np.array([1.0, 2.0]), np.array([0.5, 0.5])
    np.testing.assert_allclose(t(s, a), f(s, a), atol=1e-12)


def test_true_dynamics_stack_recovers_state():
    env = LinearGaussianWorld(process_noise=0.0)
    h, f = true_dynamics_stack(env)
    s, a = np.array([0.3, -1.2]), np.array([0.4, 0.9])
    o = env.observe(s, stream(0))
    np.testing.assert_allclose(h(o), s, atol=1e-12)
    np.testing.assert_allclose(f(h(o), a), env.step(s, a)[0], atol=1e-12)


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    models = {"h": MLPEncoder.create(6, 4, (5, 3), seed=1), "f": MLPWorldModel.create(4, 2, (7,), seed=2),
              "g": MLPDecoder.create(4, 6, (3,), seed=3), "lin": LinearEncoder(np.ones((3, 2))),
              "lf": LinearWorldModel.identity(2, 1), "c": make_degenerate_pair(np.array([1.0, 2.0]), 3)[0]}
    save_checkpoint(tmp_path / "m.npz", models)
    back = load_checkpoint(tmp_path / "m.npz")
    o = stream(0).normal(size=(4, 6))
    np.testing.assert_array_equal(back["h"](o), models["h"](o))
    z = models["h"](o)
    np.testing.assert_array_equal(back["f"](z, np.ones((4, 2))), models["f"](z, np.ones((4, 2))))
    np.testing.assert_array_equal(back["g"](z), models["g"](z))
    for name in ("h", "f", "g", "lin", "lf"):
        assert all(np.array_equal(back[name].params[k], models[name].params[k]) for k in models[name].params)
    np.testing.assert_array_equal(back["c"](o[:, :3]), models["c"](o[:, :3]))


def test_model_evaluation_is_deterministic():
    h = MLPEncoder.create(6, 8, seed=0)
    o = stream(0).normal(size=(10, 6))
    assert np.array_equal(h(o), h(o))
