"""Experiment drivers: one per experiment kind.

Each driver exposes ``run_seed(cfg, seed) -> SeedResult`` (metrics rows for
one seed plus anything needed for the cross-seed verdict) and
``verdict(cfg, results) -> list[Check]``. Wall-clock measurements never go into
metrics rows, so metrics files are byte-identical across runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import mannwhitneyu

from .. import codec
from .. import numerics as nx
from ..envs import CountingEnv, DiscountSchedule, Gridworld, LinearGaussianWorld, Transitions, generate_dataset
from ..losses import LOSS_CSV_HEADER, constant_predictor_mse, decoder_mse, surrogate_bound_report
from ..losses import generative_loss, latent_loss
from ..models import (LinearDecoder, LinearEncoder, LinearWorldModel, MLPDecoder, MLPEncoder, MLPWorldModel,
                      TabularDecoder, belief_transition, make_degenerate_pair, make_isometry_autoencoder,
                      make_prop2_witness, make_tabular_gridworld_stack, random_orthonormal, true_dynamics_stack)
from ..planners import (PLANNERS, CategoricalPolicy, CostFunction, GaussianPolicy, LatentAgent, MPCAgent,
                        PlannerConfig, RandomAgent, decision_times, mpc_execute, normalized_score,
                        plan_exhaustive, policy_gradient_loss, run_episodes, train_policy_in_dream)
from ..rng import stream
from ..training import TrainConfig, TrainResult, generative_objective, latent_objective, train_world_model
from .config import ExperimentConfig


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class SeedResult:
    seed: int
    rows: list
    summary: str
    values: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    # file name -> callable(path) writing an extra per-seed artifact
    artifacts: dict = field(default_factory=dict)
    failure: str | None = None
    wall_time: float = 0.0


# --- shared construction helpers -----------------------------------------------

def make_world(cfg: ExperimentConfig) -> LinearGaussianWorld:
    e = cfg["env"]
    return LinearGaussianWorld(process_noise=e["process_noise"], n_distractors=e["n_distractors"],
                               distractor_std=e["distractor_std"])


def make_dataset(cfg: ExperimentConfig, seed: int) -> Transitions:
    e = cfg["env"]
    return generate_dataset(make_world(cfg), e["dataset_size"], seed, episode_length=e["episode_length"])


def train_config(cfg: ExperimentConfig, objective: str) -> TrainConfig:
    t, m = cfg["train"], cfg["model"]
    return TrainConfig(objective=objective, steps=t["steps"], batch_size=t["batch_size"], lr=t["lr"],
                       lr_schedule=t["lr_schedule"], beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"],
                       latent_dim=m["latent_dim"], hidden=tuple(m["hidden"]), reg_weight=t["reg_weight"],
                       log_every=t["log_every"], eval_size=t["eval_size"])


def planner_config(cfg: ExperimentConfig, **overrides) -> PlannerConfig:
    p = cfg["planner"]
    fields = dict(horizon=p["horizon"], population=p["population"], elites=p["elites"],
                  iterations=p["iterations"], temperature=p["temperature"], discount=p["discount"],
                  noise_std=p["noise_std"])
    fields.update(overrides)
    return PlannerConfig(**fields)


@dataclass
class TrainedPair:
    data: Transitions
    latent: TrainResult
    generative: TrainResult


def train_pair(cfg: ExperimentConfig, seed: int) -> TrainedPair:
    """Latent-only and generative training on the same dataset and seed."""
    data = make_dataset(cfg, seed)
    return TrainedPair(data, train_world_model(data, train_config(cfg, "latent"), seed),
                       train_world_model(data, train_config(cfg, "generative"), seed))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def at_least(fraction: float, n: int) -> int:
    """Smallest count that is at least ``fraction`` of ``n`` (18 of 20 for 0.9)."""
    return math.ceil(fraction * n - 1e-9)


# --- exact constructions ------------------------------------------------------

def degenerate_latent_losses(n_constants: int = 10, n_datasets: int = 10, size: int = 256,
                             seed: int = 0) -> np.ndarray:
    """Latent loss of the constant pair for every (constant, dataset) combination."""
    rng = stream(seed, "degenerate")
    out = np.empty((n_constants, n_datasets))
    datasets = [Transitions(rng.normal(size=(size, 6)), rng.uniform(-1, 1, (size, 2)), rng.normal(size=(size, 6)))
                for _ in range(n_datasets)]
    for i in range(n_constants):
        c = rng.normal(scale=10.0, size=int(rng.integers(1, 9)))
        h, f = make_degenerate_pair(c, obs_dim=6)
        for j, data in enumerate(datasets):
            out[i, j] = latent_loss(h, f, data).value
    return out


def random_tabular_instance(rng):
    """Small deterministic instance: distinct (o, a) inputs with next observations
    from a finite set, the degenerate pair ``(h', f')`` at a random ``c`` and a
    tabular decoder whose image holds every observation.

    Returns ``(h', f', g', data, (i, j))`` where triples ``i`` and ``j`` have
    different next observations.
    """
    d_o, d_s = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    observations = np.unique(rng.integers(-3, 4, size=(int(rng.integers(2, 6)), d_o)).astype(float), axis=0)
    while len(observations) < 2:
        observations = np.unique(rng.integers(-3, 4, size=(4, d_o)).astype(float), axis=0)
    actions = np.eye(int(rng.integers(1, 4)))
    inputs = [(o, a) for o in observations for a in actions]
    picks = rng.permutation(len(inputs))[: int(rng.integers(2, len(inputs) + 1))]
    o = np.array([inputs[k][0] for k in picks])
    a = np.array([inputs[k][1] for k in picks])
    targets = observations[rng.integers(len(observations), size=len(picks))]
    if np.all(targets == targets[0]):
        targets[1] = next(x for x in observations if not np.array_equal(x, targets[0]))
    data = Transitions(o, a, targets)
    c = rng.normal(size=d_s)
    h, f = make_degenerate_pair(c, obs_dim=d_o)
    # decoder keys sit far from c, c + 1 and c + 2
    table = {tuple(c + 10.0 * (k + 1)): x for k, x in enumerate(observations)}
    table[tuple(c)] = rng.normal(size=d_o)
    g = TabularDecoder(table, in_dim=d_s)
    i = 0
    j = next(k for k in range(1, len(data)) if not np.array_equal(targets[k], targets[0]))
    return h, f, g, data, (i, j)


def witness_trial(rng) -> tuple[float, float]:
    """(generative loss of the witness, generative loss of the degenerate pair) on one instance."""
    h, f, g, data, (i, j) = random_tabular_instance(rng)
    h_t, f_t = make_prop2_witness(h, f, g, [data[i], data[j]])
    return generative_loss(h_t, f_t, g, data).value, generative_loss(h, f, g, data).value


# --- collapse demo ---------------------------------------------------------------

@dataclass(frozen=True)
class CollapseOutcome:
    latent_std_ratio: float
    generative_std_ratio: float
    mse_ratio: float
    collapsed: bool
    generative_ok: bool


def collapse_outcome(cfg: ExperimentConfig, pair: TrainedPair) -> CollapseOutcome:
    t = cfg["train"]
    lat, gen = pair.latent, pair.generative
    lat_ratio = lat.final_mean_std / lat.initial_mean_std
    gen_ratio = gen.final_mean_std / gen.initial_mean_std
    mse_ratio = decoder_mse(gen.h, gen.f, gen.g, pair.data) / constant_predictor_mse(pair.data)
    return CollapseOutcome(lat_ratio, gen_ratio, mse_ratio, lat_ratio < t["collapse_ratio"],
                           mse_ratio <= t["mse_ratio"] and gen_ratio >= t["keep_ratio"])


def run_collapse_seed(cfg: ExperimentConfig, seed: int, pair: TrainedPair | None = None) -> SeedResult:
    pair = pair if pair is not None else train_pair(cfg, seed)
    rows = []
    for name, result in (("latent", pair.latent), ("generative", pair.generative)):
        for h in result.history:
            rows.append([seed, name, *(h[k] for k in LOSS_CSV_HEADER)])
    out = collapse_outcome(cfg, pair)
    summary = (f"seed {seed}: latent std ratio {out.latent_std_ratio:.4g} "
               f"({'collapsed' if out.collapsed else 'not collapsed'}); generative std ratio "
               f"{out.generative_std_ratio:.3g}, decoder mse ratio {out.mse_ratio:.3g}")
    return SeedResult(seed, rows, summary, values={"outcome": out, "pair": pair})


def collapse_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    t = cfg["train"]
    outs = [r.values["outcome"] for r in results]
    need = at_least(t["pass_fraction"], len(outs))
    n_collapsed = sum(o.collapsed for o in outs)
    n_ok = sum(o.generative_ok for o in outs)
    return [
        Check("latent-only training collapses", n_collapsed >= need,
              f"{n_collapsed}/{len(outs)} seeds below {t['collapse_ratio']:g} x initial std (need {need})"),
        Check("generative training fits and keeps spread", n_ok >= need,
              f"{n_ok}/{len(outs)} seeds with mse ratio <= {t['mse_ratio']:g} and std ratio >= "
              f"{t['keep_ratio']:g} (need {need})"),
    ]


# --- bound check -----------------------------------------------------------------

def _batches(n: int, size: int):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def bound_cases(cfg: ExperimentConfig, seed: int):
    """Yield ``(case, h, f, g, data, equality_expected)`` for every sweep."""
    b = cfg["bound"]
    rng = stream(seed, "bound")
    D_s, D_o, d_a, n = b["latent_dim"], b["obs_dim"], 2, b["n_triples"]
    h, g = make_isometry_autoencoder(D_s, D_o, seed=seed)
    A = rng.uniform(-1, 1, size=(n, d_a))

    # data inside the decoder image: o = g(s), o' = g(s')
    f_lin = LinearWorldModel(0.5 * rng.normal(size=(D_s, D_s)), 0.5 * rng.normal(size=(d_a, D_s)),
                             0.1 * rng.normal(size=D_s))
    S, S_next = rng.normal(size=(n, D_s)), rng.normal(size=(n, D_s))
    yield "isometry_in_image", h, f_lin, g, Transitions(g(S), A, g(S_next)), True

    # arbitrary triples for the inequality sweeps
    O, O_next = 1.5 * rng.normal(size=(n, D_o)), 1.5 * rng.normal(size=(n, D_o))
    data = Transitions(O, A, O_next)
    f_mlp = MLPWorldModel.create(D_s, d_a, (16,), rng=rng)
    yield "isometry_mlp_dynamics", h, f_mlp, g, data, False

    c = rng.uniform(0.3, 1.0)
    Q = random_orthonormal(D_o, D_s, rng)
    yield "contracted_isometry", LinearEncoder(c * Q), f_mlp, LinearDecoder(Q.T), data, False

    W = rng.normal(size=(D_o, D_s))
    W *= rng.uniform(0.5, 1.0) / np.linalg.norm(W, 2)
    h_lin = LinearEncoder(W, 0.1 * rng.normal(size=D_s))
    yield "nonexpansive_linear_mlp_decoder", h_lin, f_mlp, MLPDecoder.create(D_s, D_o, (16,), rng=rng), data, False


def run_bound_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    b = cfg["bound"]
    rows, worst_eq, violations, n_batches = [], 0.0, 0, 0
    for case, h, f, g, data, equality in bound_cases(cfg, seed):
        for j, (lo, hi) in enumerate(_batches(len(data), b["batch_size"])):
            rep = surrogate_bound_report(h, f, g, data[lo:hi])
            ok = rep.latent_loss <= rep.gen_loss + rep.roundtrip_epsilon + b["tolerance"]
            violations += not ok
            n_batches += 1
            if equality:
                worst_eq = max(worst_eq, abs(rep.latent_loss - rep.gen_loss))
            rows.append([seed, case, j, rep.latent_loss, rep.gen_loss, rep.roundtrip_epsilon, rep.gap, ok])
    summary = (f"seed {seed}: {n_batches} batches, {violations} bound violations, "
               f"max |L_latent - L_gen| in the equality case {worst_eq:.3e}")
    return SeedResult(seed, rows, summary, values={"worst_equality": worst_eq, "violations": violations})


def bound_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    tol = cfg["bound"]["tolerance"]
    worst = max(r.values["worst_equality"] for r in results)
    bad = sum(r.values["violations"] for r in results)
    return [Check("equality case", worst < tol, f"max |L_latent - L_gen| = {worst:.3e} (< {tol:g})"),
            Check("bound holds on every batch", bad == 0, f"{bad} violating batches")]


# --- codec bench -----------------------------------------------------------------

def exact_codec_sizes(mode: str, T: int, D: int, K_tilde: float, eps_tilde: float, M: int | None):
    """(vocab, length) from exact rational arithmetic on the decimal parameters."""
    ratio_sq = T * D * Fraction(repr(K_tilde)) ** 2 / Fraction(repr(eps_tilde)) ** 2
    if mode == codec.SCALE_UP:
        B = math.isqrt(ratio_sq.numerator // ratio_sq.denominator)
        while B * B < ratio_sq:
            B += 1
        return max(B, 1) ** D, T
    L = 1
    while Fraction(M) ** (2 * L) < ratio_sq:
        L += 1
    return M, T * D * L


def codec_grid(cfg: ExperimentConfig):
    c = cfg["codec"]
    for mode in c["modes"]:
        for T in c["T"]:
            for D in c["D"]:
                for eps in c["eps_tilde"]:
                    yield codec.build_codec(mode, T, D, c["K_tilde"], eps, c["M"] if mode == codec.SCALE_OUT else None)


def run_codec_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    trials = cfg["codec"]["trials"]
    rows, violations, mismatches = [], 0, []
    for spec in codec_grid(cfg):
        rep = codec.verify_distinguishability(spec, trials, seed)
        rows.append(codec.bench_row(spec, trials, rep))
        violations += rep.violations
        expected = exact_codec_sizes(spec.mode, spec.T, spec.D, spec.K_tilde, spec.eps_tilde, spec.M)
        if expected != (spec.vocab_size, spec.code_length):
            mismatches.append(f"{spec.mode} T={spec.T} D={spec.D} eps={spec.eps_tilde:g}")
    summary = f"seed {seed}: {len(rows)} codecs, {violations} violations, {len(mismatches)} size mismatches"
    return SeedResult(seed, rows, summary, values={"violations": violations, "mismatches": mismatches})


def codec_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    v = sum(r.values["violations"] for r in results)
    mism = [m for r in results for m in r.values["mismatches"]]
    return [Check("no distinguishability violations", v == 0, f"{v} violations"),
            Check("vocabulary and length formulas", not mism, ", ".join(mism) or "all match")]


# --- planning --------------------------------------------------------------------

def one_step_problem():
    """Scalar world s' = s + a with exact dynamics, start 2, goal 0, actions in [-3, 3]."""
    world = LinearGaussianWorld(A=[[1.0]], B=[[1.0]], n_distractors=0, process_noise=0.0,
                                action_low=-3.0, action_high=3.0)
    stack = true_dynamics_stack(world)
    return world, stack, CostFunction.from_observation(stack[0], world.goal_observation())


def gridworld_mismatches(discount: float = 0.97, horizon: int = 4) -> list[int]:
    """Cells where exhaustive search's optimal first actions differ from breadth-first search."""
    grid = Gridworld()
    stack = make_tabular_gridworld_stack(grid)
    cost = CostFunction.from_observation(stack[0], grid.goal_observation())
    actions = [grid.encode_action(a) for a in range(grid.n_actions)]
    bad = []
    for cell in range(grid.n_cells):
        res = plan_exhaustive(stack, grid.observe(cell), cost, actions, horizon, discount)
        if set(res.optimal_first_actions) != grid.optimal_first_actions(cell):
            bad.append(cell)
    return bad


def run_plan_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    p = cfg["planner"]
    rows, values = [], {}
    world, stack, cost = one_step_problem()
    one = planner_config(cfg, horizon=1, action_low=world.action_low, action_high=world.action_high)
    s0 = 2.0
    optimum = -s0  # s + a = 0
    for method, plan in PLANNERS.items():
        err = abs(float(plan(stack, np.array([s0]), cost, one, seed=seed).first_action[0]) - optimum)
        rows.append([seed, f"{method}_one_step_error", err, p["optimum_tolerance"], err < p["optimum_tolerance"]])
    env = make_world(cfg)
    rec = mpc_execute(env, true_dynamics_stack(env), p["method"], p["mpc_steps"], seed, planner_config(cfg))
    rows.append([seed, f"{p['method']}_mpc_final_distance", rec.final_distance, p["goal_distance"],
                 rec.final_distance < p["goal_distance"]])
    bad = gridworld_mismatches(p["discount"])
    rows.append([seed, "gridworld_first_action_mismatches", len(bad), 0, not bad])
    values["passed"] = all(r[4] for r in rows)
    summary = "seed {}: ".format(seed) + ", ".join(f"{r[1]} {r[2]:.4g}" for r in rows)
    return SeedResult(seed, rows, summary, values=values,
                      extra={"mean_plan_ms": float(np.mean(rec.plan_ms))},
                      artifacts={f"trajectory_seed{seed}.csv": rec.to_csv})


def plan_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    checks = []
    for r in results:
        for row in r.rows:
            checks.append(Check(f"seed {r.seed} {row[1]}", bool(row[4]), f"{row[2]:.6g} vs {row[3]:g}"))
    return checks


# --- dream training --------------------------------------------------------------

@dataclass(frozen=True)
class DreamOutcome:
    oracle_return: float
    random_return: float
    dream_return: float
    collapsed_return: float
    env_calls: int
    policy_ms: float
    mpc_ms: float

    @property
    def score(self) -> float:
        return normalized_score(self.dream_return, self.random_return, self.oracle_return)


def dream_outcome(cfg: ExperimentConfig, seed: int, pair: TrainedPair | None = None) -> DreamOutcome:
    d, p = cfg["dream"], cfg["planner"]
    pair = pair if pair is not None else train_pair(cfg, seed)
    env = CountingEnv(make_world(cfg))
    schedule = DiscountSchedule(p["discount"])
    truth = true_dynamics_stack(env.env)
    oracle = MPCAgent(truth, CostFunction.from_observation(truth[0], env.goal_observation()), p["method"],
                      planner_config(cfg))
    oracle_stats = run_episodes(env, oracle, d["episodes"], d["horizon"], schedule, seed)
    random_stats = run_episodes(env, RandomAgent(env), d["episodes"], d["horizon"], schedule, seed)

    goal = env.goal_observation()
    before = env.calls
    policies = {}
    for name, res in (("dream", pair.generative), ("collapsed", pair.latent)):
        f = belief_transition(res.h, res.f, res.g)
        policy = GaussianPolicy.create(res.h.out_dim, env.action_dim, env.action_low, env.action_high)
        policies[name] = train_policy_in_dream((res.h, f), policy, goal, d["n_rollouts"], d["horizon"], schedule,
                                               seed, start_observations=pair.data.o, updates=d["updates"],
                                               lr=d["lr"])
    calls = env.calls - before

    dream_agent = LatentAgent(pair.generative.h, policies["dream"])
    dream_stats = run_episodes(env, dream_agent, d["episodes"], d["horizon"], schedule, seed)
    collapsed_stats = run_episodes(env, LatentAgent(pair.latent.h, policies["collapsed"]), d["episodes"],
                                   d["horizon"], schedule, seed)

    # per-decision cost of acting with the trained policy vs planning with the same world model
    obs = pair.data.o[:20]
    gen = pair.generative
    planner = MPCAgent((gen.h, belief_transition(gen.h, gen.f, gen.g)),
                       CostFunction.from_observation(gen.h, goal), p["method"], planner_config(cfg))
    rng = stream(seed, "timing")
    policy_ms = float(np.median(decision_times(dream_agent, obs, rng)))
    mpc_ms = float(np.median(decision_times(planner, obs[:5], rng)))
    return DreamOutcome(oracle_stats.mean_return, random_stats.mean_return, dream_stats.mean_return,
                        collapsed_stats.mean_return, calls, policy_ms, mpc_ms)


def run_dream_seed(cfg: ExperimentConfig, seed: int, pair: TrainedPair | None = None) -> SeedResult:
    out = dream_outcome(cfg, seed, pair)
    row = [seed, out.oracle_return, out.random_return, out.dream_return, out.collapsed_return, out.score,
           out.env_calls]
    summary = (f"seed {seed}: oracle {out.oracle_return:.3f}, random {out.random_return:.3f}, "
               f"dream {out.dream_return:.3f} (score {out.score:.3f}), collapsed {out.collapsed_return:.3f}, "
               f"env calls during training {out.env_calls}")
    return SeedResult(seed, [row], summary, values={"outcome": out},
                      extra={"policy_ms_per_decision": out.policy_ms, "mpc_ms_per_decision": out.mpc_ms})


def dream_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    d = cfg["dream"]
    outs = [r.values["outcome"] for r in results]
    mean = lambda xs: math.fsum(xs) / len(xs)
    oracle = mean([o.oracle_return for o in outs])
    random = mean([o.random_return for o in outs])
    dream = mean([o.dream_return for o in outs])
    score = normalized_score(dream, random, oracle)
    calls = sum(o.env_calls for o in outs)
    checks = [Check("dream policy vs oracle MPC", score >= d["min_score"],
                    f"mean returns: dream {dream:.4f}, oracle {oracle:.4f}, random {random:.4f}; "
                    f"normalized score {score:.4f} (need >= {d['min_score']:g})"),
              Check("no environment calls during dream training", calls == 0, f"{calls} calls")]
    if len(outs) >= 2:
        p = mannwhitneyu([o.collapsed_return for o in outs], [o.random_return for o in outs],
                         alternative="two-sided").pvalue
        checks.append(Check("collapsed model indistinguishable from random", p >= d["alpha"],
                            f"two-sided rank test p = {p:.4f} (alpha {d['alpha']:g})"))
    else:
        checks.append(Check("collapsed model indistinguishable from random", True,
                            "rank test skipped: needs at least two seeds"))
    return checks


# --- gradient check --------------------------------------------------------------

_UNARY = {
    "tanh": np.tanh,
    "exp": lambda x: np.exp(0.5 * np.tanh(x)),
    "square": lambda x: 0.5 * nx.square(x),
    "sqrt": lambda x: nx.sqrt(nx.square(x) + 1.0),
    "log": lambda x: nx.log(nx.square(x) + 1.0),
    "negate": lambda x: -x,
    "shift": lambda x: 0.7 * x + 0.1,
}
_BINARY = {
    "add": lambda x, y: x + y,
    "subtract": lambda x, y: x - y,
    "multiply": lambda x, y: x * y,
}
_HEADS = {
    "mean": lambda y, t: nx.reduce_mean(y),
    "sum_squares": lambda y, t: 0.1 * nx.reduce_sum(nx.square(y)),
    "squared_error": lambda y, t: nx.squared_error(y, t),
    "row_norm": lambda y, t: nx.reduce_mean(nx.row_norm(y - t, axis=1)),
}


def random_composition(rng):
    """A random differentiable expression over the numeric primitives.

    Returns ``(name, loss_fn, params)``. Arguments of sqrt and log are kept
    positive, and exp's argument bounded, so finite differences are well conditioned.
    """
    n, d, k, m = (int(rng.integers(lo, hi)) for lo, hi in ((2, 6), (1, 5), (1, 6), (1, 4)))
    X, target = rng.normal(size=(n, d)), rng.normal(size=(n, m))
    params = nx.ParamSet({"W1": 0.7 * rng.normal(size=(d, k)), "b1": 0.3 * rng.normal(size=k),
                          "V": 0.7 * rng.normal(size=(d, k)), "W2": 0.7 * rng.normal(size=(k, m))})
    ops = [str(o) for o in rng.choice(list(_UNARY), size=int(rng.integers(1, 5)))]
    binary = str(rng.choice(list(_BINARY)))
    head = str(rng.choice(list(_HEADS)))

    def loss(p):
        z = nx.affine(X, p["W1"], p["b1"])
        for op in ops:
            z = _UNARY[op](z)
        z = _BINARY[binary](z, X @ p["V"])
        return _HEADS[head](z @ p["W2"], target)

    return f"{'+'.join(ops)}|{binary}|{head}", loss, params


def model_family_cases(rng):
    """``(name, loss_fn, params)`` for every trainable model family and objective."""
    n, d_o, d_s, d_a = 6, 5, 3, 2
    o, o_next = rng.normal(size=(n, d_o)), rng.normal(size=(n, d_o))
    a = rng.uniform(-1, 1, size=(n, d_a))
    h = MLPEncoder.create(d_o, d_s, (5, 4), rng=rng)
    f = MLPWorldModel.create(d_s, d_a, (5,), rng=rng)
    g = MLPDecoder.create(d_s, d_o, (4,), rng=rng)
    z = h(o)
    lin_h = LinearEncoder(rng.normal(size=(d_o, d_s)), rng.normal(size=d_s))
    lin_f = LinearWorldModel(rng.normal(size=(d_s, d_s)), rng.normal(size=(d_a, d_s)), rng.normal(size=d_s))
    lin_g = LinearDecoder(rng.normal(size=(d_s, d_o)), rng.normal(size=d_o))
    joint = nx.ParamSet({**{f"h.{k}": v for k, v in h.params.items()},
                         **{f"f.{k}": v for k, v in f.params.items()},
                         **{f"g.{k}": v for k, v in g.params.items()}})
    latent_params = nx.ParamSet({k: v for k, v in joint.items() if not k.startswith("g.")})

    gauss = GaussianPolicy({"W": rng.normal(size=(d_s, d_a)), "b": rng.normal(size=d_a),
                            "log_std": rng.normal(size=d_a) * 0.3 - 0.5})
    cat = CategoricalPolicy({"W": rng.normal(size=(d_s, 4)), "b": rng.normal(size=4)})
    raw = rng.normal(size=(n, d_a))
    idx = rng.integers(4, size=n)
    H = 3
    beliefs = rng.normal(size=(4, H + 1, d_s))
    raw_seq = rng.normal(size=(4, H, d_a))
    rewards = rng.normal(size=(4, H + 1))
    schedule = DiscountSchedule(0.9)

    sq = lambda y: nx.reduce_mean(nx.square(y))
    return [
        ("mlp_encoder", lambda p: sq(h.apply(p, o)), h.params),
        ("mlp_world_model", lambda p: sq(f.apply(p, z, a)), f.params),
        ("mlp_decoder", lambda p: sq(g.apply(p, z) - o_next), g.params),
        ("linear_encoder", lambda p: sq(lin_h.apply(p, o)), lin_h.params),
        ("linear_world_model", lambda p: sq(lin_f.apply(p, z, a)), lin_f.params),
        ("linear_decoder", lambda p: sq(lin_g.apply(p, z) - o_next), lin_g.params),
        ("latent_objective", lambda p: latent_objective(h, f, p, o, a, o_next), latent_params),
        ("generative_objective_with_std_penalty",
         lambda p: generative_objective(h, f, g, p, o, a, o_next, reg_weight=0.5, reg_target=2.0), joint),
        ("gaussian_policy_log_prob", lambda p: nx.reduce_mean(gauss.log_prob(p, z, raw)), gauss.params),
        ("categorical_policy_log_prob", lambda p: nx.reduce_mean(cat.log_prob(p, z, idx)), cat.params),
        ("policy_gradient_surrogate",
         lambda p: policy_gradient_loss(gauss, p, beliefs, raw_seq, rewards, schedule), gauss.params),
    ]


def grad_cases(cfg: ExperimentConfig, seed: int):
    rng = stream(seed, "gradcheck")
    cases = [random_composition(rng) for _ in range(cfg["gradcheck"]["compositions"])]
    return [(f"composition_{i}:{name}", fn, p) for i, (name, fn, p) in enumerate(cases)] + model_family_cases(rng)


def run_grad_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    step = cfg["gradcheck"]["fd_step"]
    rows = [[seed, name, nx.check_gradient(fn, params, fd_step=step)] for name, fn, params in grad_cases(cfg, seed)]
    worst = max(r[2] for r in rows)
    return SeedResult(seed, rows, f"seed {seed}: {len(rows)} cases, max relative error {worst:.3e}",
                      values={"max_error": worst})


def grad_verdict(cfg: ExperimentConfig, results: list[SeedResult]) -> list[Check]:
    worst = max(r.values["max_error"] for r in results)
    limit = cfg["gradcheck"]["max_error"]
    return [Check("gradient check", worst < limit, f"max relative error {worst:.3e} (< {limit:g})")]


# --- registry --------------------------------------------------------------------

@dataclass(frozen=True)
class Driver:
    header: list
    run_seed: object
    verdict: object


DRIVERS = {
    "collapse-demo": Driver(["seed", "objective", *LOSS_CSV_HEADER], run_collapse_seed, collapse_verdict),
    "bound-check": Driver(["seed", "case", "batch", "latent_loss", "gen_loss", "roundtrip_eps", "gap",
                           "bound_satisfied"], run_bound_seed, bound_verdict),
    "codec-bench": Driver(list(codec.CSV_HEADER), run_codec_seed, codec_verdict),
    "plan": Driver(["seed", "check", "value", "threshold", "passed"], run_plan_seed, plan_verdict),
    "dream-train": Driver(["seed", "oracle_return", "random_return", "dream_return", "collapsed_return", "score",
                           "env_calls"], run_dream_seed, dream_verdict),
    "grad-check": Driver(["seed", "case", "max_rel_error"], run_grad_seed, grad_verdict),
}


def format_row(row) -> list[str]:
    return [_fmt(x) for x in row]


def timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start
