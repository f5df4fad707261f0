import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glplab.envs import Gridworld, Transitions, generate_dataset
from glplab.harness.experiments import degenerate_latent_losses
from glplab.losses import (LOSS_CSV_HEADER, collapse_diagnostics, constant_predictor_mse, decoder_mse,
                           effective_rank, generative_loss, latent_loss, roundtrip_epsilon, surrogate_bound_report)
from glplab.models import (LinearDecoder, LinearEncoder, LinearWorldModel, MLPDecoder, MLPWorldModel,
                           TabularDecoder, make_degenerate_pair, make_isometry_autoencoder,
                           make_tabular_gridworld_stack)
from glplab.rng import stream

IDENTITY = LinearEncoder(np.eye(1))


def test_degenerate_pair_has_zero_latent_loss():
    assert np.all(degenerate_latent_losses(3, 3, 64, seed=0) == 0.0)


def test_identity_models_on_static_data():
    o = stream(0).normal(size=(10, 3))
    data = Transitions(o, np.zeros((10, 1)), o)
    assert latent_loss(LinearEncoder(np.eye(3)), LinearWorldModel.identity(3, 1), data).value == 0.0


def test_scalar_latent_loss():
    f = LinearWorldModel(np.eye(1), np.eye(1))
    rep = latent_loss(IDENTITY, f, Transitions([[1.0]], [[1.0]], [[3.0]]))
    assert rep.value == 1.0 and rep.batch_size == 1


def test_degenerate_generative_loss():
    h, f = make_degenerate_pair(np.array([0.0]), obs_dim=1)
    g = TabularDecoder({(0.0,): np.array([2.0])})
    data = Transitions([[0.0], [1.0]], [[0.0], [0.0]], [[1.0], [3.0]])
    assert generative_loss(h, f, g, data).value == 1.0


def test_perfect_tabular_pipeline_on_gridworld():
    env = Gridworld(3, 3)
    h, f, g = make_tabular_gridworld_stack(env)
    data = generate_dataset(env, 300, seed=0)
    assert generative_loss(h, f, g, data).value == 0.0
    assert latent_loss(h, f, data).value == 0.0


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        latent_loss(IDENTITY, LinearWorldModel.identity(1, 1), [])


def test_roundtrip_epsilon():
    h, g = make_isometry_autoencoder(3, 5, seed=0)
    assert roundtrip_epsilon(h, g, stream(1).normal(size=(100, 3))) <= 1e-12
    assert roundtrip_epsilon(LinearEncoder(np.eye(2)), LinearDecoder(np.eye(2)), np.ones((3, 2))) == 0.0
    with pytest.raises(ValueError):
        roundtrip_epsilon(h, g, np.zeros((0, 3)))


def test_collapse_diagnostics_constant():
    h, _ = make_degenerate_pair(np.array([3.0, -1.0]), obs_dim=4)
    rep = collapse_diagnostics(h, stream(0).normal(size=(50, 4)))
    assert np.all(rep.per_dim_std == 0) and rep.effective_rank == 0 and rep.mean_pairwise_distance == 0


def test_collapse_diagnostics_identity_gaussian():
    rep = collapse_diagnostics(LinearEncoder(np.eye(3)), stream(0).normal(size=(10_000, 3)))
    np.testing.assert_allclose(rep.per_dim_std, 1.0, rtol=0.05)
    assert rep.effective_rank <= 3 + 1e-12 and rep.effective_rank > 2.9


def test_collapse_diagnostics_repeated_observation():
    rep = collapse_diagnostics(LinearEncoder(np.eye(3)), np.tile([1.0, 2.0, 3.0], (5, 1)))
    assert rep.mean_pairwise_distance == 0.0
    with pytest.raises(ValueError):
        collapse_diagnostics(LinearEncoder(np.eye(3)), np.ones((1, 3)))


def test_bound_equality_in_image():
    rng = stream(2)
    h, g = make_isometry_autoencoder(3, 5, seed=2)
    f = LinearWorldModel(rng.normal(size=(3, 3)), rng.normal(size=(2, 3)))
    data = Transitions(g(rng.normal(size=(100, 3))), rng.uniform(-1, 1, (100, 2)), g(rng.normal(size=(100, 3))))
    rep = surrogate_bound_report(h, f, g, data)
    assert abs(rep.latent_loss - rep.gen_loss) < 1e-9 and rep.bound_satisfied and rep.certified_nonexpansive


def test_bound_degenerate_pair():
    h, f = make_degenerate_pair(np.zeros(2), obs_dim=3)
    g = LinearDecoder(np.ones((2, 3)))
    rng = stream(3)
    rep = surrogate_bound_report(h, f, g, Transitions(rng.normal(size=(20, 3)), np.zeros((20, 1)),
                                                      rng.normal(size=(20, 3))))
    assert rep.latent_loss == 0.0 and rep.bound_satisfied
    assert rep.gap == pytest.approx(rep.gen_loss + rep.roundtrip_epsilon - rep.latent_loss, abs=0)


@given(st.integers(0, 2**32 - 1))
def test_bound_isometry_with_arbitrary_dynamics(seed):
    rng = stream(seed, "bound-property")
    h, g = make_isometry_autoencoder(3, 5, seed=seed % 1000)
    f = MLPWorldModel.create(3, 2, (8,), rng=rng)
    for _ in range(5):
        data = Transitions(rng.normal(size=(100, 5)) * 2, rng.uniform(-1, 1, (100, 2)), rng.normal(size=(100, 5)))
        assert surrogate_bound_report(h, f, g, data).bound_satisfied


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_bound_nonexpansive_linear_encoder(seed, scale):
    rng = stream(seed, "bound-linear")
    W = rng.normal(size=(5, 3))
    h = LinearEncoder(W * scale / np.linalg.norm(W, 2), rng.normal(size=3))
    f, g = MLPWorldModel.create(3, 2, (8,), rng=rng), MLPDecoder.create(3, 5, (8,), rng=rng)
    data = Transitions(rng.normal(size=(50, 5)), rng.uniform(-1, 1, (50, 2)), rng.normal(size=(50, 5)))
    rep = surrogate_bound_report(h, f, g, data)
    assert rep.bound_satisfied and rep.certified_nonexpansive


def test_bound_is_reported_not_asserted_for_expansive_encoders():
    rng = stream(5)
    h = LinearEncoder(10.0 * rng.normal(size=(5, 3)))
    g = MLPDecoder.create(3, 5, (4,), rng=rng)
    f = MLPWorldModel.create(3, 2, (4,), rng=rng)
    data = Transitions(rng.normal(size=(30, 5)), rng.uniform(-1, 1, (30, 2)), rng.normal(size=(30, 5)))
    rep = surrogate_bound_report(h, f, g, data)
    assert not rep.certified_nonexpansive


@given(st.integers(0, 2**32 - 1))
def test_losses_nonnegative_and_order_invariant(seed):
    rng = stream(seed, "perm")
    h = LinearEncoder(rng.normal(size=(4, 2)))
    f, g = LinearWorldModel(rng.normal(size=(2, 2)), rng.normal(size=(1, 2))), LinearDecoder(rng.normal(size=(2, 4)))
    data = Transitions(rng.normal(size=(17, 4)), rng.normal(size=(17, 1)), rng.normal(size=(17, 4)))
    perm = rng.permutation(17)
    for loss in (lambda d: latent_loss(h, f, d), lambda d: generative_loss(h, f, g, d)):
        a, b = loss(data), loss(data[perm])
        assert a.value == b.value
        assert np.all(a.per_sample >= 0) and a.value == pytest.approx(a.per_sample.mean(), rel=1e-15)


def test_mse_helpers():
    data = Transitions(np.zeros((4, 1)), np.zeros((4, 1)), [[1.0], [3.0], [1.0], [3.0]])
    assert constant_predictor_mse(data) == 1.0
    h, f = make_degenerate_pair(np.zeros(1), obs_dim=1)
    assert decoder_mse(h, f, LinearDecoder(np.ones((1, 1)), np.array([2.0])), data) == 1.0


def test_effective_rank_bounds():
    Z = stream(0).normal(size=(500, 4))
    assert 0 < effective_rank(Z) <= 4
    assert effective_rank(np.zeros((5, 3))) == 0.0


def test_loss_csv_header():
    assert LOSS_CSV_HEADER == ["step", "latent_loss", "gen_loss", "roundtrip_eps", "mean_std", "effective_rank"]
