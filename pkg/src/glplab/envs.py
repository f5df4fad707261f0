"""Toy universes: transition, emission, reward, and offline transition data.

Three environments share one duck-typed surface (``reset``, ``step``,
``observe``, ``reward``, ``is_terminal``, ``sample_action``):

* :class:`LinearGaussianWorld` -- ``s' = A s + B a + noise`` observed through
  ``C`` plus Gaussian distractor coordinates that carry no information.
* :class:`Gridworld` -- discrete cells, four moves, optional slip, sparse
  goal reward, goal is terminal.
* :class:`LogisticMap` -- ``x' = r x (1 - x)``, action-free, used for the
  chaos diagnostics.

All randomness comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import csv
from collections import deque
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import stream


@dataclass(frozen=True)
class TransitionTriple:
    o: np.ndarray
    a: np.ndarray
    o_next: np.ndarray


@dataclass(frozen=True)
class Goal:
    target: np.ndarray
    tolerance: float = 0.0

    def __post_init__(self):
        if self.tolerance < 0:
            raise ValueError("goal tolerance must be >= 0")


@dataclass(frozen=True)
class DiscountSchedule:
    """Geometric discount ``gamma**k``."""

    rate: float = 0.97

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ValueError("discount rate must lie in (0, 1)")

    def __call__(self, k: int) -> float:
        return self.rate ** k

    def weights(self, n: int) -> np.ndarray:
        return self.rate ** np.arange(n, dtype=float)


class Transitions(Sequence):
    """A batch of transition triples stored as three aligned 2-D arrays."""

    def __init__(self, o, a, o_next):
        self.o = np.atleast_2d(np.asarray(o, dtype=float))
        self.a = np.asarray(a, dtype=float).reshape(len(self.o), -1)
        self.o_next = np.atleast_2d(np.asarray(o_next, dtype=float))
        if not (len(self.o) == len(self.a) == len(self.o_next)):
            raise ValueError("o, a and o_next must have the same number of rows")
        if self.o.shape[1] != self.o_next.shape[1]:
            raise ValueError("o and o_next must have the same width")

    @classmethod
    def from_triples(cls, triples) -> Transitions:
        triples = list(triples)
        if not triples:
            raise ValueError("no triples given")
        return cls([t.o for t in triples], [t.a for t in triples], [t.o_next for t in triples])

    @property
    def obs_dim(self) -> int:
        return self.o.shape[1]

    @property
    def action_dim(self) -> int:
        return self.a.shape[1]

    def __len__(self) -> int:
        return len(self.o)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray) or isinstance(i, list):
            return Transitions(self.o[i], self.a[i], self.o_next[i])
        return TransitionTriple(self.o[i], self.a[i], self.o_next[i])

    def __iter__(self) -> Iterator[TransitionTriple]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        return (isinstance(other, Transitions) and np.array_equal(self.o, other.o)
                and np.array_equal(self.a, other.a) and np.array_equal(self.o_next, other.o_next))

    def header(self) -> list[str]:
        do, da = self.obs_dim, self.action_dim
        return ([f"o_{i}" for i in range(do)] + [f"a_{i}" for i in range(da)]
                + [f"op_{i}" for i in range(do)])

    def to_csv(self, path) -> None:
        """Write one triple per line with 17 significant digits (round-trips float64)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for row in np.hstack([self.o, self.a, self.o_next]):
                writer.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> Transitions:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in r] for r in reader], dtype=float)
        do = sum(1 for h in header if h.startswith("o_"))
        da = sum(1 for h in header if h.startswith("a_"))
        if len(header) != 2 * do + da:
            raise ValueError(f"{Path(path)}: malformed dataset header")
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, :do], rows[:, do:do + da], rows[:, do + da:])


@dataclass(frozen=True)
class LinearGaussianWorld:
    """Linear dynamics with Gaussian process noise and distractor observations."""

    A: np.ndarray = field(default_factory=lambda: np.eye(2))
    B: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(2))
    C: np.ndarray | None = None
    process_noise: float = 0.02
    n_distractors: int = 4
    distractor_std: float = 0.5
    goal: np.ndarray | None = None
    action_low: float = -1.0
    action_high: float = 1.0
    init_low: float = -2.0
    init_high: float = 2.0

    discrete = False

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError("A must be square and B must have as many rows as A")
        C = np.eye(A.shape[0]) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        goal = np.zeros(A.shape[0]) if self.goal is None else np.asarray(self.goal, dtype=float).reshape(-1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "goal", goal)
        if self.action_low >= self.action_high:
            raise ValueError("empty action box")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def action_dim(self) -> int:
        return self.B.shape[1]

    @property
    def signal_dim(self) -> int:
        return self.C.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.signal_dim + self.n_distractors

    def clip_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(self.action_dim)
        return np.clip(a, self.action_low, self.action_high)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.init_low, self.init_high, size=self.state_dim)

    def reward(self, state) -> float:
        d = np.asarray(state, dtype=float) - self.goal
        return -float(d @ d)

    def is_terminal(self, state) -> bool:
        return False

    def step(self, state, action, rng: np.random.Generator | None = None):
        a = self.clip_action(action)
        s_next = self.A @ np.asarray(state, dtype=float) + self.B @ a
        if self.process_noise > 0:
            if rng is None:
                raise ValueError("a noisy world needs an rng")
            s_next = s_next + rng.normal(0.0, self.process_noise, size=self.state_dim)
        return s_next, self.reward(s_next)

    def observe(self, state, rng: np.random.Generator | None = None) -> np.ndarray:
        signal = self.C @ np.asarray(state, dtype=float)
        if self.n_distractors == 0:
            return signal
        if self.distractor_std > 0:
            if rng is None:
                raise ValueError("distractor noise needs an rng")
            noise = rng.normal(0.0, self.distractor_std, size=self.n_distractors)
        else:
            noise = np.zeros(self.n_distractors)
        return np.concatenate([signal, noise])

    def goal_observation(self) -> np.ndarray:
        """Noise-free observation of the goal state (distractor coordinates at 0)."""
        return np.concatenate([self.C @ self.goal, np.zeros(self.n_distractors)])

    def encode_action(self, action) -> np.ndarray:
        return self.clip_action(action)

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.action_low, self.action_high, size=self.action_dim)

    def distance_to_goal(self, state) -> float:
        return float(np.linalg.norm(np.asarray(state, dtype=float) - self.goal))


class Gridworld:
    """Rows x cols grid, actions up/right/down/left, goal reward 1 and terminal.

    With probability ``slip`` the executed move is drawn uniformly from the four
    actions instead of the chosen one. Moves into a wall leave the agent in place.
    """

    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
    ACTION_NAMES = ("up", "right", "down", "left")
    discrete = True

    def __init__(self, rows: int = 3, cols: int = 3, slip: float = 0.0, goal: int | None = None):
        if rows < 1 or cols < 1:
            raise ValueError("grid must be at least 1x1")
        if not 0.0 <= slip <= 1.0:
            raise ValueError("slip must be a probability")
        self.rows, self.cols, self.slip = rows, cols, slip
        self.goal = rows * cols - 1 if goal is None else int(goal)
        if not 0 <= self.goal < rows * cols:
            raise ValueError("goal cell out of range")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    n_actions = 4
    action_dim = 4

    @property
    def obs_dim(self) -> int:
        return self.n_cells

    def cell(self, row: int, col: int) -> int:
        return row * self.cols + col

    def coords(self, cell: int) -> tuple[int, int]:
        return divmod(int(cell), self.cols)

    def move(self, cell: int, action: int) -> int:
        r, c = self.coords(cell)
        dr, dc = self.MOVES[action]
        nr, nc = r + dr, c + dc
        if 0 <= nr < self.rows and 0 <= nc < self.cols:
            return self.cell(nr, nc)
        return int(cell)

    def _action_index(self, action) -> int:
        arr = np.asarray(action)
        idx = int(np.argmax(arr)) if arr.ndim == 1 and arr.size == 4 else int(arr)
        if not 0 <= idx < 4:
            raise ValueError(f"invalid gridworld action {action!r}")
        return idx

    def reset(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_cells))

    def reward(self, state) -> float:
        return 1.0 if int(state) == self.goal else 0.0

    def is_terminal(self, state) -> bool:
        return int(state) == self.goal

    def step(self, state, action, rng: np.random.Generator | None = None):
        idx = self._action_index(action)
        if self.slip > 0:
            if rng is None:
                raise ValueError("a slippery grid needs an rng")
            if rng.random() < self.slip:
                idx = int(rng.integers(4))
        s_next = self.move(int(state), idx)
        return s_next, self.reward(s_next)

    def observe(self, state, rng: np.random.Generator | None = None) -> np.ndarray:
        o = np.zeros(self.n_cells)
        o[int(state)] = 1.0
        return o

    def goal_observation(self) -> np.ndarray:
        return self.observe(self.goal)

    def encode_action(self, action) -> np.ndarray:
        one_hot = np.zeros(4)
        one_hot[self._action_index(action)] = 1.0
        return one_hot

    def sample_action(self, rng: np.random.Generator) -> int:
        return int(rng.integers(4))

    def shortest_path_lengths(self) -> np.ndarray:
        """Breadth-first-search distance (in moves) from every cell to the goal."""
        dist = np.full(self.n_cells, -1, dtype=int)
        dist[self.goal] = 0
        queue = deque([self.goal])
        while queue:
            cur = queue.popleft()
            for cell in range(self.n_cells):
                if dist[cell] < 0 and any(self.move(cell, a) == cur for a in range(4)):
                    dist[cell] = dist[cur] + 1
                    queue.append(cell)
        return dist

    def optimal_first_actions(self, cell: int) -> set[int]:
        """Actions that step onto a shortest path; at the goal, the actions that stay there."""
        dist = self.shortest_path_lengths()
        target = max(dist[int(cell)] - 1, 0)
        return {a for a in range(4) if dist[self.move(cell, a)] == target}

    def distance_to_goal(self, state) -> float:
        return float(self.shortest_path_lengths()[int(state)])


@dataclass(frozen=True)
class LogisticMap:
    """``x' = r x (1 - x)`` on [0, 1]; actions are ignored."""

    r: float = 3.9
    goal: float = 0.5

    discrete = False
    action_dim = 0
    obs_dim = 1
    state_dim = 1

    def __post_init__(self):
        if not 0.0 <= self.r <= 4.0:
            raise ValueError("logistic parameter must lie in [0, 4] to keep x in [0, 1]")

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(0.05, 0.95)])

    def reward(self, state) -> float:
        return -float((np.asarray(state).reshape(-1)[0] - self.goal) ** 2)

    def is_terminal(self, state) -> bool:
        return False

    def step(self, state, action=None, rng=None):
        x = np.asarray(state, dtype=float).reshape(1)
        x_next = self.r * x * (1.0 - x)
        return x_next, self.reward(x_next)

    def observe(self, state, rng=None) -> np.ndarray:
        return np.asarray(state, dtype=float).reshape(1).copy()

    def encode_action(self, action) -> np.ndarray:
        return np.zeros(0)

    def sample_action(self, rng) -> np.ndarray:
        return np.zeros(0)



class CountingEnv:
    """Transparent wrapper that counts calls to ``reset``, ``step`` and ``observe``."""

    COUNTED = ("reset", "step", "observe")

    def __init__(self, env):
        self.env = env
        self.calls = 0

    def __getattr__(self, name):
        attr = getattr(self.env, name)
        if name not in self.COUNTED:
            return attr

        def counted(*args, **kwargs):
            self.calls += 1
            return attr(*args, **kwargs)

        return counted

def step(env, state, action, rng=None):
    return env.step(state, action, rng)


def observe(env, state, rng=None):
    return env.observe(state, rng)


def generate_dataset(env, n: int, seed: int,
                     behavior_policy: Callable | None = None,
                     episode_length: int = 20) -> Transitions:
    """Roll a behavior policy (uniform-random by default) and collect ``n`` triples.

    Episodes restart from ``env.reset`` after ``episode_length`` steps or on a
    terminal state. ``behavior_policy(obs, rng)`` returns an action.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "dataset")
    obs, acts, nexts = [], [], []
    state = env.reset(rng)
    o = env.observe(state, rng)
    t = 0
    while len(obs) < n:
        action = env.sample_action(rng) if behavior_policy is None else behavior_policy(o, rng)
        s_next, _ = env.step(state, action, rng)
        o_next = env.observe(s_next, rng)
        obs.append(o)
        acts.append(env.encode_action(action))
        nexts.append(o_next)
        t += 1
        if env.is_terminal(s_next) or t >= episode_length:
            state = env.reset(rng)
            o = env.observe(state, rng)
            t = 0
        else:
            state, o = s_next, o_next
    return Transitions(np.array(obs), np.array(acts).reshape(n, -1), np.array(nexts))


def _logistic_pair(env: LogisticMap, perturbation: float, rng) -> tuple[float, float]:
    x0 = float(env.reset(rng)[0])
    y0 = x0 + perturbation if x0 + perturbation <= 1.0 else x0 - perturbation
    return x0, y0


def logistic_trajectory(r: float, x0: float, n_steps: int) -> np.ndarray:
    """Iterates ``x_1 .. x_n`` of the logistic map from ``x0``."""
    out = np.empty(n_steps)
    x = x0
    for i in range(n_steps):
        x = r * x * (1.0 - x)
        out[i] = x
    return out


def rollout_error_growth(env, horizon: int, perturbation: float, seed: int) -> list[float]:
    """``|x_t - x~_t|`` for t = 1..horizon, two logistic trajectories started
    ``perturbation`` apart from a seeded initial state."""
    if not isinstance(env, LogisticMap):
        raise TypeError("rollout_error_growth is only defined for the LogisticMap environment")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if perturbation < 0:
        raise ValueError("perturbation must be >= 0")
    x0, y0 = _logistic_pair(env, perturbation, stream(seed, "logistic"))
    xs = logistic_trajectory(env.r, x0, horizon)
    ys = logistic_trajectory(env.r, y0, horizon)
    return list(np.abs(xs - ys))


def occupancy_histogram(xs, bins: int = 20) -> np.ndarray:
    """Fraction of iterates in each of ``bins`` equal-width bins over [0, 1]."""
    counts, _ = np.histogram(np.asarray(xs, dtype=float), bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True)
class ChaosTrial:
    first_exceed_step: int | None
    tv_distance: float


def chaos_trial(r: float = 3.9, perturbation: float = 1e-6, threshold: float = 0.1,
                horizon: int = 40, n_steps: int = 10_000, bins: int = 20, seed: int = 0) -> ChaosTrial:
    """Divergence time of two nearby logistic trajectories and the TV distance
    between their long-run occupancy histograms."""
    env = LogisticMap(r=r)
    x0, y0 = _logistic_pair(env, perturbation, stream(seed, "logistic"))
    xs = logistic_trajectory(r, x0, n_steps)
    ys = logistic_trajectory(r, y0, n_steps)
    gap = np.abs(xs[:horizon] - ys[:horizon])
    hits = np.nonzero(gap > threshold)[0]
    first = int(hits[0]) + 1 if hits.size else None
    tv = total_variation(occupancy_histogram(xs, bins), occupancy_histogram(ys, bins))
    return ChaosTrial(first, tv)
