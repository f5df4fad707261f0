"""Latent and generative reconstruction losses, collapse diagnostics, and the
latent-vs-generative bound report.

Both losses use the unsquared Euclidean norm per sample and average over the
batch. Batch means are computed with ``math.fsum`` (exactly rounded), so they do
not depend on the order of the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .envs import Transitions

BOUND_TOL = 1e-9
LOSS_CSV_HEADER = ["step", "latent_loss", "gen_loss", "roundtrip_eps", "mean_std", "effective_rank"]
# pairwise distances are computed on at most this many (evenly strided) points
PAIRWISE_LIMIT = 2000


@dataclass(frozen=True)
class LossReport:
    value: float
    per_sample: np.ndarray
    batch_size: int


@dataclass(frozen=True)
class CollapseReport:
    per_dim_std: np.ndarray
    effective_rank: float
    mean_pairwise_distance: float

    @property
    def mean_std(self) -> float:
        return float(np.mean(self.per_dim_std))


@dataclass(frozen=True)
class BoundReport:
    latent_loss: float
    gen_loss: float
    roundtrip_epsilon: float
    bound_satisfied: bool
    gap: float
    latent_loss_squared: float
    gen_loss_squared: float
    certified_nonexpansive: bool


def _batch(batch) -> Transitions:
    if not isinstance(batch, Transitions):
        batch = Transitions.from_triples(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    return batch


def _report(per_sample: np.ndarray) -> LossReport:
    per_sample = np.asarray(per_sample, dtype=float)
    return LossReport(math.fsum(per_sample) / len(per_sample), per_sample, len(per_sample))


def latent_residuals(h, f, batch) -> np.ndarray:
    batch = _batch(batch)
    return np.atleast_2d(f(h(batch.o), batch.a)) - np.atleast_2d(h(batch.o_next))


def generative_residuals(h, f, g, batch) -> np.ndarray:
    batch = _batch(batch)
    return np.atleast_2d(g(f(h(batch.o), batch.a))) - batch.o_next


def latent_loss(h, f, batch) -> LossReport:
    """Mean over the batch of ``||f(h(o), a) - h(o')||``."""
    return _report(np.linalg.norm(latent_residuals(h, f, batch), axis=1))


def generative_loss(h, f, g, batch) -> LossReport:
    """Mean over the batch of ``||g(f(h(o), a)) - o'||``."""
    return _report(np.linalg.norm(generative_residuals(h, f, g, batch), axis=1))


def roundtrip_epsilon(h, g, beliefs) -> float:
    """Worst ``||h(g(s)) - s||`` over the given latents."""
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    if beliefs.shape[0] == 0 or beliefs.size == 0:
        raise ValueError("no beliefs given")
    return float(np.max(np.linalg.norm(np.atleast_2d(h(g(beliefs))) - beliefs, axis=1)))


def decoder_mse(h, f, g, batch) -> float:
    """Mean squared error per observation coordinate of the decoded prediction."""
    r = generative_residuals(h, f, g, batch)
    return float(np.mean(r * r))


def constant_predictor_mse(batch) -> float:
    """MSE of the best constant prediction of o' (its per-coordinate mean)."""
    o_next = _batch(batch).o_next
    return float(np.mean((o_next - o_next.mean(axis=0)) ** 2))


def effective_rank(Z) -> float:
    """exp(entropy of the normalized covariance spectrum); 0 for zero covariance."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / len(Z)
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    total = eig.sum()
    if total <= 0.0:
        return 0.0
    p = eig[eig > 0] / total
    return float(np.exp(-np.sum(p * np.log(p))))


def collapse_diagnostics(h, observations) -> CollapseReport:
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    Z = np.atleast_2d(h(obs))
    # shifting by one row is exact for constant encoders, so their statistics are exactly 0
    Z = Z - Z[0]
    per_dim_std = Z.std(axis=0)
    sub = Z if len(Z) <= PAIRWISE_LIMIT else Z[np.linspace(0, len(Z) - 1, PAIRWISE_LIMIT).astype(int)]
    return CollapseReport(per_dim_std, effective_rank(Z), float(np.mean(pdist(sub))))


def is_nonexpansive(h) -> bool:
    lip = getattr(h, "lipschitz", None)
    return lip is not None and lip <= 1.0 + 1e-12


def surrogate_bound_report(h, f, g, batch) -> BoundReport:
    """Measure both losses on ``batch`` and check ``L_latent <= L_gen + eps``.

    ``eps`` is the round-trip error over the predicted beliefs ``f(h(o), a)``.
    The inequality is guaranteed (and therefore asserted) when ``h`` is certified
    nonexpansive; for other encoders it is only reported.
    """
    batch = _batch(batch)
    lat = latent_residuals(h, f, batch)
    gen = generative_residuals(h, f, g, batch)
    lat_n, gen_n = np.linalg.norm(lat, axis=1), np.linalg.norm(gen, axis=1)
    latent, generative = math.fsum(lat_n) / len(batch), math.fsum(gen_n) / len(batch)
    eps = roundtrip_epsilon(h, g, f(h(batch.o), batch.a))
    gap = generative + eps - latent
    certified = is_nonexpansive(h)
    report = BoundReport(latent, generative, eps, gap >= -BOUND_TOL, gap,
                         math.fsum(lat_n ** 2) / len(batch), math.fsum(gen_n ** 2) / len(batch), certified)
    if certified and not report.bound_satisfied:
        raise AssertionError(f"bound violated for a nonexpansive encoder (gap {gap:.3e})")
    return report
