"""Decision rules on top of a world model: Monte-Carlo value estimates,
sampling-based MPC (CEM, MPPI), exhaustive search over short discrete plans,
and policy-gradient training inside the world model.

Conventions shared by every routine here:

* A return over a horizon of ``H`` steps is ``sum_{k=0}^{H} gamma**k r(s_k)``,
  where ``s_0`` is the start and ``s_k`` the state after ``k`` actions. An
  episode that reaches a terminal state stops after counting its reward.
* A plan's cost is ``sum_{k=0}^{H-1} gamma**k C(g, s_hat_{k+1})`` with
  ``C(g, s) = ||s - h(g)||^2`` and no terminal value term.
* Belief-space reward is ``-C``, so planning and dream training optimize the
  same quantity.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .envs import DiscountSchedule
from .rng import stream

CEM = "cem"
MPPI = "mppi"
# sequences whose cost is within this relative margin of the best count as ties
TIE_TOL = 1e-12
MAX_EXHAUSTIVE = 1 << 20
# a warm-started CEM search keeps at least this fraction of the initial sampling std
WARM_STD_FLOOR = 0.1


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 12
    population: int = 256
    elites: int = 25
    iterations: int = 8
    temperature: float = 1.0
    discount: float = 0.97
    action_low: float = -1.0
    action_high: float = 1.0
    # sampling scale of CEM's initial distribution and MPPI's perturbations;
    # None means a quarter (CEM) or an eighth (MPPI) of the action box width
    noise_std: float | None = None
    action_dim: int | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.population < 1 or self.iterations < 1:
            raise ValueError("population and iterations must be >= 1")
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if not self.temperature > 0:
            raise ValueError("MPPI temperature must be > 0")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if not self.action_low < self.action_high:
            raise ValueError("empty action box")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def cem_std(self) -> float:
        return 0.25 * (self.action_high - self.action_low) if self.noise_std is None else self.noise_std

    @property
    def mppi_std(self) -> float:
        return 0.125 * (self.action_high - self.action_low) if self.noise_std is None else self.noise_std

    def clip(self, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions, self.action_low, self.action_high)


@dataclass(frozen=True)
class CostFunction:
    """``scale * ||s_hat - goal||^2`` for a goal already mapped into belief space."""

    goal: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(-1))
        if not self.scale > 0:
            raise ValueError("cost scale must be positive")

    @classmethod
    def from_observation(cls, h, goal_observation, scale: float = 1.0) -> CostFunction:
        return cls(np.asarray(h(np.asarray(goal_observation, dtype=float))), scale)

    def __call__(self, s_hat):
        s_hat = np.asarray(s_hat, dtype=float)
        d = s_hat - self.goal
        out = self.scale * np.sum(d * d, axis=-1)
        return float(out) if s_hat.ndim == 1 else out


@dataclass
class PlanResult:
    actions: np.ndarray
    predicted_beliefs: np.ndarray
    total_cost: float
    cost_history: list[float] = field(default_factory=list)
    next_nominal: np.ndarray | None = None
    # CEM only: shifted sampling std for warm-starting the next search
    next_std: np.ndarray | None = None
    # exhaustive search only: every first action that starts an optimal sequence
    optimal_first_actions: frozenset | None = None

    @property
    def first_action(self):
        return self.actions[0]


def _split_stack(stack):
    h, f = stack[0], stack[1]
    return h, f


def _action_dim(f, cfg: PlannerConfig, hint: np.ndarray | None = None) -> int:
    if cfg.action_dim is not None:
        return cfg.action_dim
    if hint is not None:
        return np.asarray(hint).shape[-1]
    d = getattr(f, "action_dim", None)
    if d is None:
        raise ValueError("cannot infer the action dimension; set PlannerConfig.action_dim")
    return int(d)


def shift_plan(plan: np.ndarray) -> np.ndarray:
    """Drop the executed first step and repeat the last one (receding-horizon warm start)."""
    return np.concatenate([plan[1:], plan[-1:]], axis=0)


def rollout_beliefs(f, s0, actions) -> np.ndarray:
    """Beliefs ``(n, H+1, d)`` from ``s0`` under ``f`` for encoded action sequences ``(n, H, da)``."""
    actions = np.asarray(actions, dtype=float)
    n, H = actions.shape[:2]
    s = np.tile(np.asarray(s0, dtype=float).reshape(1, -1), (n, 1))
    out = np.empty((n, H + 1, s.shape[1]))
    out[:, 0] = s
    for k in range(H):
        s = np.atleast_2d(f(s, actions[:, k]))
        out[:, k + 1] = s
    return out


def sequence_costs(f, s0, actions, cost: CostFunction, discount: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Discounted plan cost of every sequence, plus the predicted beliefs."""
    beliefs = rollout_beliefs(f, s0, actions)
    H = beliefs.shape[1] - 1
    per_step = cost(beliefs[:, 1:].reshape(-1, beliefs.shape[2])).reshape(-1, H)
    return per_step @ (discount ** np.arange(H, dtype=float)), beliefs


def plan_cem(stack, o_now, cost: CostFunction, cfg: PlannerConfig = PlannerConfig(), seed: int = 0,
             init_mean=None, init_std=None, rng: np.random.Generator | None = None) -> PlanResult:
    """Cross-entropy method over action sequences.

    Each iteration samples ``population`` sequences from a diagonal Gaussian,
    refits it to the ``elites`` cheapest, and carries the best sequence found
    so far into the next population, so ``cost_history`` never increases. The
    first population also contains the initial mean itself.
    The search starts from ``init_mean`` / ``init_std`` when given (both default
    to a fresh distribution: zero mean, ``cfg.cem_std``).
    """
    h, f = _split_stack(stack)
    rng = rng if rng is not None else stream(seed, CEM)
    s0 = np.asarray(h(np.asarray(o_now, dtype=float)))
    da = _action_dim(f, cfg, init_mean)
    shape = (cfg.horizon, da)
    mean = np.zeros(shape) if init_mean is None else np.asarray(init_mean, dtype=float).reshape(shape)
    std = np.full(shape, cfg.cem_std) if init_std is None else np.asarray(init_std, dtype=float).reshape(shape)
    best, best_cost, history = None, math.inf, []
    for _ in range(cfg.iterations):
        samples = cfg.clip(mean + std * rng.standard_normal((cfg.population, *shape)))
        # the initial mean (a warm-start plan, or doing nothing) competes as is
        samples[-1] = cfg.clip(mean) if best is None else best
        costs, _ = sequence_costs(f, s0, samples, cost, cfg.discount)
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best, best_cost = samples[order[0]].copy(), float(costs[order[0]])
        history.append(best_cost)
        elite = samples[order[:cfg.elites]]
        mean, std = elite.mean(axis=0), elite.std(axis=0)
    beliefs = rollout_beliefs(f, s0, best[None])[0]
    next_std = np.maximum(shift_plan(std), WARM_STD_FLOOR * cfg.cem_std)
    next_std[-1] = cfg.cem_std
    return PlanResult(best, beliefs, best_cost, history, shift_plan(mean), next_std)


def mppi_weights(costs, temperature: float) -> np.ndarray:
    """Normalized ``exp(-cost / temperature)``; shifting all costs by a constant changes nothing."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    costs = np.asarray(costs, dtype=float)
    w = np.exp(-(costs - costs.min()) / temperature)
    return w / w.sum()


def plan_mppi(stack, o_now, cost: CostFunction, cfg: PlannerConfig = PlannerConfig(), seed: int = 0,
              nominal=None, rng: np.random.Generator | None = None) -> PlanResult:
    """Model-predictive path integral control.

    Each of ``cfg.iterations`` passes perturbs the nominal sequence with
    Gaussian noise and replaces it by the exp(-cost/temperature)-weighted
    average of the perturbed sequences.
    """
    if not cfg.temperature > 0:
        raise ValueError("MPPI temperature must be > 0")
    h, f = _split_stack(stack)
    rng = rng if rng is not None else stream(seed, MPPI)
    s0 = np.asarray(h(np.asarray(o_now, dtype=float)))
    da = _action_dim(f, cfg, nominal)
    shape = (cfg.horizon, da)
    plan = np.zeros(shape) if nominal is None else np.asarray(nominal, dtype=float).reshape(shape)
    history = []
    for _ in range(cfg.iterations):
        samples = cfg.clip(plan + cfg.mppi_std * rng.standard_normal((cfg.population, *shape)))
        costs, _ = sequence_costs(f, s0, samples, cost, cfg.discount)
        plan = np.tensordot(mppi_weights(costs, cfg.temperature), samples, axes=1)
        history.append(float(sequence_costs(f, s0, plan[None], cost, cfg.discount)[0][0]))
    beliefs = rollout_beliefs(f, s0, plan[None])[0]
    return PlanResult(plan, beliefs, history[-1], history, shift_plan(plan))


PLANNERS = {CEM: plan_cem, MPPI: plan_mppi}


def plan_exhaustive(stack, o_now, cost: CostFunction, action_set, horizon: int,
                    discount: float = 1.0) -> PlanResult:
    """Score every sequence of ``horizon`` actions drawn from ``action_set``.

    ``action_set`` lists the encoded actions; the returned ``actions`` are
    indices into it. The best sequence is the lexicographically first among
    ties, and ``optimal_first_actions`` holds every tied first action.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    h, f = _split_stack(stack)
    encoded = np.atleast_2d(np.asarray(action_set, dtype=float))
    n_actions = len(encoded)
    if n_actions ** horizon > MAX_EXHAUSTIVE:
        raise ValueError(f"{n_actions}**{horizon} sequences is too many to enumerate")
    index = np.array(list(itertools.product(range(n_actions), repeat=horizon)), dtype=int)
    s0 = np.asarray(h(np.asarray(o_now, dtype=float)))
    costs, beliefs = sequence_costs(f, s0, encoded[index], cost, discount)
    best = int(np.argmin(costs))
    low = costs[best]
    tied = costs <= low + TIE_TOL * max(1.0, abs(low))
    firsts = frozenset(int(a) for a in np.unique(index[tied, 0]))
    return PlanResult(index[best], beliefs[best], float(low), [float(low)], optimal_first_actions=firsts)


# --- policies -------------------------------------------------------------------

class Policy:
    """Map from beliefs to an action distribution.

    ``sample`` works on a batch of beliefs and returns raw actions; ``encode``
    turns raw actions into the vectors a world model consumes.
    """

    params: nx.ParamSet

    def with_params(self, params) -> Policy:
        raise NotImplementedError

    def sample(self, s, rng) -> tuple[np.ndarray, np.ndarray]:
        """(executed actions, raw draws); they differ only where clipping applies."""
        raise NotImplementedError

    def mode(self, s) -> np.ndarray:
        raise NotImplementedError

    def log_prob(self, params, s, actions):
        raise NotImplementedError

    def encode(self, actions) -> np.ndarray:
        raise NotImplementedError

    def act(self, s, rng=None, deterministic: bool = False):
        batch = np.atleast_2d(np.asarray(s, dtype=float))
        out = self.mode(batch) if deterministic or rng is None else self.sample(batch, rng)[0]
        return out[0] if np.asarray(s).ndim == 1 else out


class GaussianPolicy(Policy):
    """Diagonal Gaussian with mean ``mid + half_width * tanh(s W + b)``.

    Samples are clipped to the action box; the log-density is that of the
    unclipped Gaussian, which is what the score-function estimator needs.
    """

    def __init__(self, params, low: float = -1.0, high: float = 1.0):
        self.params = nx.ParamSet(params)
        self.low, self.high = float(low), float(high)
        self.belief_dim, self.action_dim = self.params["W"].shape

    @classmethod
    def create(cls, belief_dim: int, action_dim: int, low: float = -1.0, high: float = 1.0,
               init_std: float | None = None) -> GaussianPolicy:
        # zero weights: the untrained policy ignores the belief and centres on the box midpoint;
        # default spread is that of a uniform draw from the box
        if init_std is None:
            init_std = (high - low) / math.sqrt(12.0)
        return cls({"W": np.zeros((belief_dim, action_dim)), "b": np.zeros(action_dim),
                    "log_std": np.full(action_dim, math.log(init_std))}, low, high)

    def with_params(self, params) -> GaussianPolicy:
        return GaussianPolicy(params, self.low, self.high)

    def _mean(self, params, s):
        mid, half = 0.5 * (self.high + self.low), 0.5 * (self.high - self.low)
        return mid + half * np.tanh(s @ params["W"] + params["b"])

    def mode(self, s):
        return self._mean(self.params, s)

    def sample(self, s, rng):
        mean = self._mean(self.params, s)
        raw = mean + np.exp(self.params["log_std"]) * rng.standard_normal(mean.shape)
        return np.clip(raw, self.low, self.high), raw

    def log_prob(self, params, s, actions):
        z = (actions - self._mean(params, s)) * np.exp(-params["log_std"])
        const = 0.5 * self.action_dim * math.log(2 * math.pi)
        return -0.5 * nx.reduce_sum(nx.square(z), axis=1) - nx.reduce_sum(params["log_std"]) - const

    def encode(self, actions):
        return np.clip(np.asarray(actions, dtype=float), self.low, self.high)


class CategoricalPolicy(Policy):
    """Softmax over ``n_actions`` with logits ``s W + b``; actions are indices."""

    def __init__(self, params):
        self.params = nx.ParamSet(params)
        self.belief_dim, self.n_actions = self.params["W"].shape

    @classmethod
    def create(cls, belief_dim: int, n_actions: int) -> CategoricalPolicy:
        return cls({"W": np.zeros((belief_dim, n_actions)), "b": np.zeros(n_actions)})

    def with_params(self, params) -> CategoricalPolicy:
        return CategoricalPolicy(params)

    def probabilities(self, s) -> np.ndarray:
        logits = np.atleast_2d(s) @ self.params["W"] + self.params["b"]
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def mode(self, s):
        return np.argmax(self.probabilities(s), axis=1)

    def sample(self, s, rng):
        p = self.probabilities(s)
        u = rng.random((len(p), 1))
        idx = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), self.n_actions - 1)
        return idx, idx

    def act(self, s, rng=None, deterministic: bool = False):
        batch = np.atleast_2d(np.asarray(s, dtype=float))
        out = self.mode(batch) if deterministic or rng is None else self.sample(batch, rng)[0]
        return int(out[0]) if np.asarray(s).ndim == 1 else out

    def log_prob(self, params, s, actions):
        logits = s @ params["W"] + params["b"]
        # the shift is a constant, so it leaves the gradient untouched
        shift = np.max(getattr(logits, "value", logits), axis=1, keepdims=True)
        logits = logits - shift
        log_z = nx.log(nx.reduce_sum(nx.exp(logits), axis=1))
        one_hot = np.eye(self.n_actions)[np.asarray(actions, dtype=int)]
        return nx.reduce_sum(logits * one_hot, axis=1) - log_z

    def encode(self, actions):
        return np.eye(self.n_actions)[np.asarray(actions, dtype=int)]


# --- agents: callables (observation, rng) -> action for the true environment ----

class LatentAgent:
    """Acts in the environment by encoding the observation and sampling the policy
    (or taking its most likely action when ``deterministic``)."""

    def __init__(self, h, policy: Policy, deterministic: bool = False):
        self.h, self.policy, self.deterministic = h, policy, deterministic

    def __call__(self, o, rng):
        return self.policy.act(np.asarray(self.h(o)), rng, self.deterministic)


class RandomAgent:
    def __init__(self, env):
        self.env = env

    def __call__(self, o, rng):
        return self.env.sample_action(rng)


class MPCAgent:
    """Receding-horizon planner: plan from the current observation, return the first action.

    The remaining plan (for CEM, also its sampling std) warm-starts the next
    call; ``reset`` clears it.
    """

    def __init__(self, stack, cost: CostFunction, planner: str = CEM, cfg: PlannerConfig = PlannerConfig()):
        if planner not in PLANNERS:
            raise ValueError(f"unknown planner {planner!r}")
        self.stack, self.cost, self.planner, self.cfg = stack, cost, planner, cfg
        self.nominal = self.std = None
        self.last_plan_ms = 0.0

    def reset(self):
        self.nominal = self.std = None

    def __call__(self, o, rng):
        start = time.perf_counter()
        if self.planner == CEM:
            result = plan_cem(self.stack, o, self.cost, self.cfg, init_mean=self.nominal,
                              init_std=self.std, rng=rng)
        else:
            result = plan_mppi(self.stack, o, self.cost, self.cfg, nominal=self.nominal, rng=rng)
        self.last_plan_ms = 1e3 * (time.perf_counter() - start)
        self.nominal, self.std = result.next_nominal, result.next_std
        return result.first_action


# --- returns ----------------------------------------------------------------------

def _discounted(rewards, schedule: DiscountSchedule) -> float:
    return float(np.dot(schedule.weights(len(rewards)), rewards))


def value_estimate(policy, source, s0, goal, schedule: DiscountSchedule, horizon: int,
                   n_rollouts: int, seed: int) -> float:
    """Monte-Carlo mean return of ``policy`` from ``s0``.

    ``source`` is either an environment (``policy`` then receives observations
    and ``goal`` is ignored in favour of the environment's own reward) or a
    world model ``f`` / stack ``(h, f, ...)`` (``policy`` receives beliefs and the
    reward is ``-C(goal, s_hat)`` for a :class:`CostFunction` ``goal``).
    """
    if horizon < 1 or n_rollouts < 1:
        raise ValueError("horizon and n_rollouts must be >= 1")
    returns = []
    for i in range(n_rollouts):
        rng = stream(seed, "value", i)
        if hasattr(source, "reset"):
            returns.append(_env_return(source, policy, s0, horizon, schedule, rng))
        else:
            f = source[1] if isinstance(source, tuple) else source
            s = np.asarray(s0, dtype=float)
            rewards = [-goal(s)]
            for _ in range(horizon):
                s = np.asarray(f(s, policy(s, rng)))
                rewards.append(-goal(s))
            returns.append(_discounted(rewards, schedule))
    return math.fsum(returns) / n_rollouts


def _env_return(env, agent, state, horizon, schedule, rng, noise_rng=None):
    noise_rng = noise_rng if noise_rng is not None else rng
    rewards = [env.reward(state)]
    if not env.is_terminal(state):
        for _ in range(horizon):
            action = agent(env.observe(state, noise_rng), rng)
            state, r = env.step(state, action, noise_rng)
            rewards.append(r)
            if env.is_terminal(state):
                break
    return _discounted(rewards, schedule)


@dataclass(frozen=True)
class EpisodeStats:
    returns: np.ndarray
    final_distances: np.ndarray

    @property
    def mean_return(self) -> float:
        return math.fsum(self.returns) / len(self.returns)


def run_episodes(env, agent, episodes: int, horizon: int, schedule: DiscountSchedule = DiscountSchedule(),
                 seed: int = 0) -> EpisodeStats:
    """Roll ``agent`` in the true environment.

    Start states and environment noise come from streams that do not depend on
    the agent, so different agents evaluated with the same seed face the same
    starts and the same noise draws for as long as their trajectories need them.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    starts = stream(seed, "episodes", "start")
    returns, finals = [], []
    for i in range(episodes):
        state = env.reset(starts)
        noise = stream(seed, "episodes", "env", i)
        acting = stream(seed, "episodes", "agent", i)
        if hasattr(agent, "reset"):
            agent.reset()
        rewards = [env.reward(state)]
        for _ in range(horizon):
            if env.is_terminal(state):
                break
            action = agent(env.observe(state, noise), acting)
            state, r = env.step(state, action, noise)
            rewards.append(r)
        returns.append(_discounted(rewards, schedule))
        finals.append(env.distance_to_goal(state))
    return EpisodeStats(np.array(returns), np.array(finals))


def evaluate_policy(env, policy, episodes: int, horizon: int, schedule: DiscountSchedule = DiscountSchedule(),
                    seed: int = 0) -> float:
    """Mean discounted return of an agent ``policy(observation, rng) -> action`` in the true environment."""
    return run_episodes(env, policy, episodes, horizon, schedule, seed).mean_return


def normalized_score(value: float, baseline: float, reference: float) -> float:
    """Where ``value`` sits between ``baseline`` (0) and ``reference`` (1)."""
    if reference == baseline:
        raise ValueError("reference and baseline returns coincide")
    return (value - baseline) / (reference - baseline)


# --- model-predictive control in the true environment ---------------------------

@dataclass
class TrajectoryRecord:
    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    plan_ms: np.ndarray
    initial_reward: float
    final_distance: float

    def discounted_return(self, schedule: DiscountSchedule = DiscountSchedule()) -> float:
        return _discounted(np.concatenate([[self.initial_reward], self.rewards]), schedule)

    def header(self) -> list[str]:
        o = [f"o_{i}" for i in range(self.observations.shape[1])]
        a = [f"a_{i}" for i in range(self.actions.shape[1])]
        return ["step", *o, *a, "reward", "plan_ms"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for t in range(len(self.actions)):
                row = [*self.observations[t], *self.actions[t], self.rewards[t], self.plan_ms[t]]
                w.writerow([t, *(format(float(x), ".17g") for x in row)])


def mpc_execute(env, stack, planner: str, steps: int, seed: int, cfg: PlannerConfig = PlannerConfig(),
                start_state=None, cost: CostFunction | None = None) -> TrajectoryRecord:
    """Observe, plan, execute only the first action, replan; ``steps`` times or until terminal."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cost = cost if cost is not None else CostFunction.from_observation(stack[0], env.goal_observation())
    agent = MPCAgent(stack, cost, planner, cfg)
    env_rng = stream(seed, "mpc", "env")
    plan_rng = stream(seed, "mpc", "plan")
    state = env.reset(stream(seed, "mpc", "start")) if start_state is None else np.asarray(start_state, dtype=float)
    states, obs, actions, rewards, plan_ms = [state], [], [], [], []
    initial_reward = env.reward(state)
    for _ in range(steps):
        if env.is_terminal(state):
            break
        o = env.observe(state, env_rng)
        action = agent(o, plan_rng)
        state, r = env.step(state, action, env_rng)
        obs.append(o)
        actions.append(np.atleast_1d(env.encode_action(action)))
        rewards.append(r)
        plan_ms.append(agent.last_plan_ms)
        states.append(state)
    return TrajectoryRecord(np.array(states), np.array(obs), np.array(actions), np.array(rewards),
                            np.array(plan_ms), initial_reward, env.distance_to_goal(state))


# --- reinforcement learning inside the world model ------------------------------

def dream_rollouts(f, policy: Policy, s0: np.ndarray, horizon: int, cost: CostFunction, rng):
    """Batch rollouts entirely inside ``f``. Returns beliefs (n, H+1, d), raw actions
    (n, H, ...) and belief rewards (n, H+1)."""
    n = len(s0)
    beliefs = [np.asarray(s0, dtype=float)]
    raws = []
    for _ in range(horizon):
        executed, raw = policy.sample(beliefs[-1], rng)
        beliefs.append(np.atleast_2d(f(beliefs[-1], policy.encode(executed))))
        raws.append(raw)
    B = np.stack(beliefs, axis=1)
    rewards = -cost(B.reshape(n * (horizon + 1), -1)).reshape(n, horizon + 1)
    return B, np.stack(raws, axis=1), rewards


def policy_gradient_loss(policy: Policy, params, beliefs, raw_actions, rewards, schedule: DiscountSchedule):
    """Score-function surrogate whose gradient estimates minus the gradient of the
    expected discounted return. Action ``a_t`` is credited with the discounted
    rewards that follow it, minus their mean over the batch."""
    n, H = raw_actions.shape[:2]
    disc = rewards[:, 1:] * schedule.weights(H + 1)[1:]
    to_go = np.cumsum(disc[:, ::-1], axis=1)[:, ::-1]
    advantage = to_go - to_go.mean(axis=0, keepdims=True)
    s = beliefs[:, :H].reshape(n * H, -1)
    a = raw_actions.reshape(n * H, *raw_actions.shape[2:])
    logp = policy.log_prob(params, s, a)
    return -nx.reduce_sum(logp * advantage.reshape(-1)) * (1.0 / n)


def train_policy_in_dream(stack, policy: Policy, goal, n_rollouts: int = 64, horizon: int = 20,
                          schedule: DiscountSchedule = DiscountSchedule(), seed: int = 0,
                          start_observations=None, updates: int = 300, lr: float = 0.1,
                          history: list | None = None) -> Policy:
    """REINFORCE with a mean baseline on rollouts generated only by the world model.

    ``stack`` is ``(h, f)`` where ``f`` maps encoder-space beliefs to
    encoder-space beliefs (see :func:`~glplab.models.belief_transition`).
    ``goal`` is a goal observation (encoded with ``h``) or a :class:`CostFunction`.
    Start beliefs are encodings of rows of ``start_observations`` drawn with
    replacement (typically the world model's own training observations); no
    environment is consulted. Mean dream returns are appended to ``history``.

    Updates are plain gradient ascent, so their size follows the reward scale:
    a world model whose beliefs carry no usable signal leaves the policy where
    it started instead of having the noise amplified into a drift.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_rollouts < 1 or updates < 0:
        raise ValueError("n_rollouts must be >= 1 and updates >= 0")
    if start_observations is None:
        raise ValueError("dream training needs start observations")
    h, f = _split_stack(stack)
    cost = goal if isinstance(goal, CostFunction) else CostFunction.from_observation(h, goal)
    starts = np.atleast_2d(np.asarray(h(np.atleast_2d(start_observations)), dtype=float))
    rng = stream(seed, "dream")
    params = policy.params
    for _ in range(updates):
        current = policy.with_params(params)
        s0 = starts[rng.integers(len(starts), size=n_rollouts)]
        beliefs, raw, rewards = dream_rollouts(f, current, s0, horizon, cost, rng)
        if history is not None:
            history.append(float(np.mean(rewards @ schedule.weights(horizon + 1))))
        grads = nx.grad(lambda p: policy_gradient_loss(current, p, beliefs, raw, rewards, schedule), params)
        params = nx.gradient_step(params, grads, lr)
    return policy.with_params(params)


def decision_times(agent, observations, rng) -> np.ndarray:
    """Wall-clock milliseconds per call of ``agent`` on each observation."""
    out = []
    for o in observations:
        start = time.perf_counter()
        agent(o, rng)
        out.append(1e3 * (time.perf_counter() - start))
    return np.array(out)
