"""Gradient training of (h, f) on the latent loss or (h, f, g) on the generative loss."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .envs import Transitions
from .losses import collapse_diagnostics, generative_loss, latent_loss, roundtrip_epsilon
from .models import MLPDecoder, MLPEncoder, MLPWorldModel
from .rng import stream

LATENT = "latent"
GENERATIVE = "generative"
SCHEDULES = ("constant", "cosine")
# added under the square root of per-sample norms so the gradient stays finite at 0
NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    objective: str = GENERATIVE
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    # "cosine" anneals from lr to 0 over the run; "constant" keeps lr fixed
    lr_schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    latent_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    reg_weight: float = 0.0
    reg_target_std: float = 1.0
    log_every: int = 250
    eval_size: int = 1000

    def __post_init__(self):
        if self.objective not in (LATENT, GENERATIVE):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


@dataclass
class TrainResult:
    h: MLPEncoder
    f: MLPWorldModel
    g: MLPDecoder | None
    history: list[dict] = field(default_factory=list)

    @property
    def initial_mean_std(self) -> float:
        return self.history[0]["mean_std"]

    @property
    def final_mean_std(self) -> float:
        return self.history[-1]["mean_std"]


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Step size used for update number ``step`` (1-based)."""
    if cfg.lr_schedule == "constant" or cfg.steps == 0:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * (step - 1) / cfg.steps))


class _Prefixed(Mapping):
    """View of the keys of ``params`` that start with ``prefix``, prefix stripped."""

    def __init__(self, params: Mapping, prefix: str):
        self._p, self._prefix = params, prefix

    def __getitem__(self, k):
        return self._p[self._prefix + k]

    def __iter__(self):
        n = len(self._prefix)
        return (k[n:] for k in self._p if k.startswith(self._prefix))

    def __len__(self):
        return sum(1 for _ in self)


def _join(**groups) -> nx.ParamSet:
    return nx.ParamSet({f"{name}.{k}": v for name, p in groups.items() if p is not None for k, v in p.items()})


def mean_norm(residual):
    """Differentiable batch mean of per-row Euclidean norms."""
    return nx.reduce_mean(nx.row_norm(residual, axis=1, floor=NORM_FLOOR))


def std_hinge(z, target: float = 1.0, floor: float = 1e-4):
    """mean_d max(0, target - std_d(z)): a variance-floor penalty on latent batches."""
    centered = z - nx.reduce_mean(z, axis=0)
    std = nx.sqrt(nx.reduce_mean(nx.square(centered), axis=0) + floor)
    return nx.reduce_mean(nx.relu(target - std))


def latent_objective(h, f, params, o, a, o_next, reg_weight=0.0, reg_target=1.0):
    hp, fp = _Prefixed(params, "h."), _Prefixed(params, "f.")
    z = h.apply(hp, o)
    loss = mean_norm(f.apply(fp, z, a) - h.apply(hp, o_next))
    if reg_weight:
        loss = loss + reg_weight * std_hinge(z, reg_target)
    return loss


def generative_objective(h, f, g, params, o, a, o_next, reg_weight=0.0, reg_target=1.0):
    hp, fp, gp = _Prefixed(params, "h."), _Prefixed(params, "f."), _Prefixed(params, "g.")
    z = h.apply(hp, o)
    loss = mean_norm(g.apply(gp, f.apply(fp, z, a)) - o_next)
    if reg_weight:
        loss = loss + reg_weight * std_hinge(z, reg_target)
    return loss


def _metrics(step: int, h, f, g, data: Transitions) -> dict:
    row = {"step": step, "latent_loss": latent_loss(h, f, data).value,
           "gen_loss": math.nan, "roundtrip_eps": math.nan}
    if g is not None:
        row["gen_loss"] = generative_loss(h, f, g, data).value
        row["roundtrip_eps"] = roundtrip_epsilon(h, g, f(h(data.o), data.a))
    diag = collapse_diagnostics(h, data.o)
    row["mean_std"] = diag.mean_std
    row["effective_rank"] = diag.effective_rank
    return row


def train_world_model(data: Transitions, cfg: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Adam on minibatches of ``data``; diagnostics logged every ``cfg.log_every`` steps
    (and at steps 0 and ``cfg.steps``) on the first ``cfg.eval_size`` triples."""
    d_o, d_a, d_s = data.obs_dim, data.action_dim, cfg.latent_dim
    h = MLPEncoder.create(d_o, d_s, cfg.hidden, rng=stream(seed, "init", "h"))
    f = MLPWorldModel.create(d_s, d_a, cfg.hidden, rng=stream(seed, "init", "f"))
    g = MLPDecoder.create(d_s, d_o, cfg.hidden, rng=stream(seed, "init", "g")) if cfg.objective == GENERATIVE else None
    params = _join(h=h.params, f=f.params, g=g.params if g else None)
    state = nx.OptimizerState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    batches = stream(seed, "minibatch")
    eval_data = data[: min(cfg.eval_size, len(data))]

    def split(p):
        models = (h.with_params(_Prefixed(p, "h.")), f.with_params(_Prefixed(p, "f.")))
        return models + ((g.with_params(_Prefixed(p, "g.")),) if g else (None,))

    history = [_metrics(0, *split(params), eval_data)]
    for step in range(1, cfg.steps + 1):
        idx = batches.integers(len(data), size=cfg.batch_size)
        o, a, o_next = data.o[idx], data.a[idx], data.o_next[idx]
        if g is None:
            loss_fn = lambda p: latent_objective(h, f, p, o, a, o_next, cfg.reg_weight, cfg.reg_target_std)
        else:
            loss_fn = lambda p: generative_objective(h, f, g, p, o, a, o_next, cfg.reg_weight, cfg.reg_target_std)
        grads = nx.grad(loss_fn, params)
        state = replace(state, lr=learning_rate(cfg, step))
        params, state = nx.optimizer_step(params, grads, state)
        if step % cfg.log_every == 0 or step == cfg.steps:
            history.append(_metrics(step, *split(params), eval_data))
    return TrainResult(*split(params), history=history)
