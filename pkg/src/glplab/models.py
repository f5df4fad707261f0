"""Encoders h, world models f and decoders g.

Each family has parametric (tanh MLP / linear), tabular and constant members.
Parametric members keep their weights in a :class:`~glplab.numerics.ParamSet`
and expose ``apply(params, ...)``, which also accepts graph variables so the
same forward pass serves evaluation and training.

Every model evaluates on a single vector or on a batch of row vectors.
"""

from __future__ import annotations

import json
from collections.abc import Mapping

import numpy as np

from .numerics import ParamSet, init_dense
from .rng import stream

BeliefState = np.ndarray

CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    pass


def _key(x) -> tuple:
    return tuple(np.asarray(x, dtype=float).reshape(-1).tolist())


def _check(x: np.ndarray, dim: int | None, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise DimensionError(f"{what}: expected a vector or a batch of vectors")
    if dim is not None and x.shape[-1] != dim:
        raise DimensionError(f"{what}: expected dimension {dim}, got {x.shape[-1]}")
    return x


def _rowwise(fn, x: np.ndarray, *rest):
    if x.ndim == 1:
        return np.asarray(fn(x, *rest), dtype=float)
    return np.array([fn(x[i], *(r[i] for r in rest)) for i in range(len(x))], dtype=float)


# --- parametric building blocks ------------------------------------------------

def mlp_init(rng, sizes: list[int], prefix: str = "") -> dict[str, np.ndarray]:
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W, b = init_dense(rng, fan_in, fan_out)
        params[f"{prefix}W{i}"] = W
        params[f"{prefix}b{i}"] = b
    return params


def mlp_apply(params: Mapping, x, n_layers: int, prefix: str = ""):
    """tanh hidden layers, linear output layer."""
    for i in range(n_layers):
        x = x @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        if i < n_layers - 1:
            x = np.tanh(x)
    return x


class _Parametric:
    """Mixin for models whose state is a ParamSet."""

    params: ParamSet

    def with_params(self, params):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = ParamSet(params)
        return clone

    def to_state(self) -> tuple[dict, dict]:
        return self._meta(), dict(self.params)


# --- encoders -------------------------------------------------------------------

class EncoderModel:
    kind = "abstract"
    in_dim: int | None = None
    out_dim: int

    def __call__(self, o) -> np.ndarray:
        return self.encode(_check(o, self.in_dim, f"{self.kind} encoder input"))

    def encode(self, o: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class MLPEncoder(_Parametric, EncoderModel):
    kind = "parametric"

    def __init__(self, params, in_dim: int, out_dim: int, hidden: tuple[int, ...]):
        self.params = ParamSet(params)
        self.in_dim, self.out_dim, self.hidden = in_dim, out_dim, tuple(hidden)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, hidden=(64, 64), seed: int = 0, rng=None):
        rng = rng if rng is not None else stream(seed, "encoder")
        return cls(mlp_init(rng, [in_dim, *hidden, out_dim]), in_dim, out_dim, hidden)

    def apply(self, params, o):
        return mlp_apply(params, o, len(self.hidden) + 1)

    def encode(self, o):
        return self.apply(self.params, o)

    def _meta(self):
        return {"class": "MLPEncoder", "in_dim": self.in_dim, "out_dim": self.out_dim, "hidden": list(self.hidden)}


class LinearEncoder(_Parametric, EncoderModel):
    """``h(o) = o @ W + b``. With ``kind='isometry_left_inverse'`` W is Q^T of an
    orthonormal decoder."""

    def __init__(self, W, b=None, kind: str = "linear"):
        W = np.asarray(W, dtype=float)
        b = np.zeros(W.shape[1]) if b is None else np.asarray(b, dtype=float)
        self.params = ParamSet({"W": W, "b": b})
        self.in_dim, self.out_dim = W.shape
        self.kind = kind

    def apply(self, params, o):
        return o @ params["W"] + params["b"]

    def encode(self, o):
        return self.apply(self.params, o)

    @property
    def lipschitz(self) -> float:
        """Operator 2-norm; the encoder is nonexpansive iff this is <= 1."""
        return float(np.linalg.norm(self.params["W"], 2))

    def _meta(self):
        return {"class": "LinearEncoder", "kind": self.kind}


class ConstantEncoder(EncoderModel):
    kind = "constant"

    def __init__(self, c, in_dim: int | None = None):
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.in_dim, self.out_dim = in_dim, self.c.size

    def encode(self, o):
        if o.ndim == 1:
            return self.c.copy()
        return np.tile(self.c, (len(o), 1))

    lipschitz = 0.0

    def to_state(self):
        return {"class": "ConstantEncoder", "in_dim": self.in_dim}, {"c": self.c}


class TabularEncoder(EncoderModel):
    """Lookup table over exact observations, falling back to another encoder."""

    kind = "tabular"

    def __init__(self, table: Mapping, fallback: EncoderModel | None = None,
                 in_dim: int | None = None, out_dim: int | None = None):
        self.table = {_key(k): np.asarray(v, dtype=float) for k, v in table.items()}
        self.fallback = fallback
        first = next(iter(self.table.values()), None)
        self.out_dim = out_dim if out_dim is not None else (first.size if first is not None else fallback.out_dim)
        self.in_dim = in_dim if in_dim is not None else (fallback.in_dim if fallback is not None else None)

    def _one(self, o):
        hit = self.table.get(_key(o))
        if hit is not None:
            return hit
        if self.fallback is None:
            raise KeyError(f"observation {o} not in encoder table")
        return self.fallback(o)

    def encode(self, o):
        return _rowwise(self._one, o)


# --- world models ---------------------------------------------------------------

class WorldModelFn:
    kind = "abstract"
    state_dim: int
    action_dim: int | None = None

    def __call__(self, s, a) -> np.ndarray:
        s = _check(s, self.state_dim, f"{self.kind} world model state")
        a = np.asarray(a, dtype=float)
        if self.action_dim is not None and a.ndim >= 1 and a.shape[-1] != self.action_dim:
            raise DimensionError(f"world model action: expected dimension {self.action_dim}, got {a.shape[-1]}")
        return self.predict(s, a)

    def predict(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class MLPWorldModel(_Parametric, WorldModelFn):
    """tanh MLP on (s, a); the first layer has separate state and action weights."""

    kind = "parametric"

    def __init__(self, params, state_dim: int, action_dim: int, hidden: tuple[int, ...]):
        self.params = ParamSet(params)
        self.state_dim, self.action_dim, self.hidden = state_dim, action_dim, tuple(hidden)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hidden=(64, 64), seed: int = 0, rng=None):
        rng = rng if rng is not None else stream(seed, "world_model")
        fan_in = state_dim + action_dim
        W, b = init_dense(rng, fan_in, hidden[0])
        params = {"Ws": W[:state_dim], "Wa": W[state_dim:], "b_in": b}
        params.update(mlp_init(rng, [*hidden, state_dim]))
        return cls(params, state_dim, action_dim, hidden)

    def apply(self, params, s, a):
        x = s @ params["Ws"] + params["b_in"]
        if self.action_dim:
            x = x + a @ params["Wa"]
        return mlp_apply(params, np.tanh(x), len(self.hidden))

    def predict(self, s, a):
        return self.apply(self.params, s, a)

    def _meta(self):
        return {"class": "MLPWorldModel", "state_dim": self.state_dim, "action_dim": self.action_dim,
                "hidden": list(self.hidden)}


class LinearWorldModel(_Parametric, WorldModelFn):
    """``f(s, a) = s @ Ws + a @ Wa + b``."""

    kind = "linear"

    def __init__(self, Ws, Wa, b=None):
        Ws, Wa = np.atleast_2d(np.asarray(Ws, float)), np.asarray(Wa, float)
        Wa = Wa.reshape(-1, Ws.shape[1]) if Wa.size else np.zeros((0, Ws.shape[1]))
        b = np.zeros(Ws.shape[1]) if b is None else np.asarray(b, float)
        self.params = ParamSet({"Ws": Ws, "Wa": Wa, "b": b})
        self.state_dim, self.action_dim = Ws.shape[0], Wa.shape[0]

    @classmethod
    def identity(cls, state_dim: int, action_dim: int):
        return cls(np.eye(state_dim), np.zeros((action_dim, state_dim)))

    def apply(self, params, s, a):
        out = s @ params["Ws"] + params["b"]
        if self.action_dim:
            out = out + a @ params["Wa"]
        return out

    def predict(self, s, a):
        return self.apply(self.params, s, a)

    def _meta(self):
        return {"class": "LinearWorldModel"}


class ConstantWorldModel(WorldModelFn):
    kind = "constant"

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.state_dim = self.c.size

    def predict(self, s, a):
        return self.c.copy() if s.ndim == 1 else np.tile(self.c, (len(s), 1))

    def to_state(self):
        return {"class": "ConstantWorldModel"}, {"c": self.c}


class TabularWorldModel(WorldModelFn):
    """Lookup on exact (state, action) pairs, falling back to another world model."""

    kind = "tabular"

    def __init__(self, table: Mapping, fallback: WorldModelFn | None = None, state_dim: int | None = None):
        self.table = {(_key(s), _key(a)): np.asarray(v, dtype=float) for (s, a), v in table.items()}
        self.fallback = fallback
        first = next(iter(self.table.values()), None)
        self.state_dim = state_dim if state_dim is not None else (
            first.size if first is not None else fallback.state_dim)

    def _one(self, s, a):
        hit = self.table.get((_key(s), _key(a)))
        if hit is not None:
            return hit
        if self.fallback is None:
            raise KeyError(f"(state, action) = ({s}, {a}) not in world-model table")
        return self.fallback(s, a)

    def predict(self, s, a):
        if s.ndim == 1:
            return self._one(s, a)
        a = np.asarray(a, dtype=float).reshape(len(s), -1)
        return _rowwise(self._one, s, a)


class ReencodingWorldModel(WorldModelFn):
    """Belief transition ``h(g(f(s, a)))`` of an encoder/world-model/decoder stack.

    A generatively trained ``f`` is only asked to produce latents that ``g``
    decodes into the next observation; its outputs need not sit where ``h``
    would encode that observation. Decoding and re-encoding maps each
    prediction back into the encoder's coordinates, so multi-step rollouts and
    goal distances ``||s - h(o_goal)||`` are taken in one consistent space.
    """

    kind = "reencoding"

    def __init__(self, h: EncoderModel, f: WorldModelFn, g: DecoderModel):
        self.h, self.f, self.g = h, f, g
        self.state_dim, self.action_dim = f.state_dim, f.action_dim

    def predict(self, s, a):
        return self.h(self.g(self.f(s, a)))


def belief_transition(h, f, g=None) -> WorldModelFn:
    """Encoder-space belief transition of a stack: ``f`` itself without a decoder,
    otherwise the decode-and-re-encode closure."""
    return f if g is None else ReencodingWorldModel(h, f, g)


# --- decoders -------------------------------------------------------------------

class DecoderModel:
    kind = "abstract"
    in_dim: int | None = None
    out_dim: int

    def __call__(self, s) -> np.ndarray:
        return self.decode(_check(s, self.in_dim, f"{self.kind} decoder input"))

    def decode(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def preimage(self, o) -> np.ndarray:
        """A latent that decodes exactly to ``o``; raises ValueError if none is known."""
        raise ValueError(f"{self.kind} decoder cannot invert observations")


class MLPDecoder(_Parametric, DecoderModel):
    kind = "parametric"

    def __init__(self, params, in_dim: int, out_dim: int, hidden: tuple[int, ...]):
        self.params = ParamSet(params)
        self.in_dim, self.out_dim, self.hidden = in_dim, out_dim, tuple(hidden)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, hidden=(64, 64), seed: int = 0, rng=None):
        rng = rng if rng is not None else stream(seed, "decoder")
        return cls(mlp_init(rng, [in_dim, *hidden, out_dim]), in_dim, out_dim, hidden)

    def apply(self, params, s):
        return mlp_apply(params, s, len(self.hidden) + 1)

    def decode(self, s):
        return self.apply(self.params, s)

    def _meta(self):
        return {"class": "MLPDecoder", "in_dim": self.in_dim, "out_dim": self.out_dim, "hidden": list(self.hidden)}


class LinearDecoder(_Parametric, DecoderModel):
    """``g(s) = s @ W + b``; ``kind='isometry'`` when W = Q^T for column-orthonormal Q."""

    def __init__(self, W, b=None, kind: str = "linear"):
        W = np.asarray(W, dtype=float)
        b = np.zeros(W.shape[1]) if b is None else np.asarray(b, dtype=float)
        self.params = ParamSet({"W": W, "b": b})
        self.in_dim, self.out_dim = W.shape
        self.kind = kind

    @property
    def Q(self) -> np.ndarray:
        """Decoder as a (D_o, D_s) matrix acting on column vectors."""
        return self.params["W"].T

    def apply(self, params, s):
        return s @ params["W"] + params["b"]

    def decode(self, s):
        return self.apply(self.params, s)

    def preimage(self, o):
        o = np.asarray(o, dtype=float)
        s, *_ = np.linalg.lstsq(self.params["W"].T, o - self.params["b"], rcond=None)
        if not np.allclose(self.decode(s), o, rtol=0.0, atol=1e-10):
            raise ValueError("observation is outside the decoder image")
        return s

    def _meta(self):
        return {"class": "LinearDecoder", "kind": self.kind}


class ConstantDecoder(DecoderModel):
    kind = "constant"

    def __init__(self, value, in_dim: int | None = None):
        self.value = np.asarray(value, dtype=float).reshape(-1)
        self.in_dim, self.out_dim = in_dim, self.value.size

    def decode(self, s):
        return self.value.copy() if s.ndim == 1 else np.tile(self.value, (len(s), 1))

    def preimage(self, o):
        if not np.array_equal(np.asarray(o, dtype=float), self.value):
            raise ValueError("observation is outside the decoder image")
        if self.in_dim is None:
            raise ValueError("constant decoder without a declared latent dimension")
        return np.zeros(self.in_dim)


class TabularDecoder(DecoderModel):
    kind = "tabular"

    def __init__(self, table: Mapping, fallback: DecoderModel | None = None, in_dim: int | None = None):
        self.table = {_key(k): np.asarray(v, dtype=float) for k, v in table.items()}
        self.fallback = fallback
        first_key = next(iter(self.table), None)
        self.in_dim = in_dim if in_dim is not None else (len(first_key) if first_key is not None else fallback.in_dim)
        first = next(iter(self.table.values()), None)
        self.out_dim = first.size if first is not None else fallback.out_dim

    def _one(self, s):
        hit = self.table.get(_key(s))
        if hit is not None:
            return hit
        if self.fallback is None:
            raise KeyError(f"latent {s} not in decoder table")
        return self.fallback(s)

    def decode(self, s):
        return _rowwise(self._one, s)

    def preimage(self, o):
        target = np.asarray(o, dtype=float)
        for k, v in self.table.items():
            if np.array_equal(v, target):
                return np.array(k)
        if self.fallback is not None:
            return self.fallback.preimage(o)
        raise ValueError("observation is outside the decoder image")


# --- operations -----------------------------------------------------------------

def encode_obs(h: EncoderModel, o) -> np.ndarray:
    return h(o)


def predict_next(f: WorldModelFn, s_hat, a) -> np.ndarray:
    return f(s_hat, a)


def decode_belief(g: DecoderModel, s_hat) -> np.ndarray:
    return g(s_hat)


def make_degenerate_pair(c, obs_dim: int | None = None) -> tuple[ConstantEncoder, ConstantWorldModel]:
    """Constant encoder and constant world model at ``c``: zero latent loss on any data."""
    return ConstantEncoder(c, in_dim=obs_dim), ConstantWorldModel(c)


def make_prop2_witness(h_prime: EncoderModel, f_prime: WorldModelFn, g_fixed: DecoderModel,
                       two_triples) -> tuple[TabularEncoder, TabularWorldModel]:
    """Encoder/world model that agree with ``(h', f')`` except on two triples
    ``(o1, a1, o2)``, ``(o3, a3, o4)``, which they reproduce exactly through the
    fixed decoder.

    The two intermediate latents are fresh points ``c + 1`` and ``c + 2`` (``c``
    being the degenerate constant), so no other input is rerouted.
    """
    (o1, a1, o2), (o3, a3, o4) = [(np.asarray(t.o), np.asarray(t.a), np.asarray(t.o_next))
                                   if hasattr(t, "o_next") else tuple(map(np.asarray, t))
                                   for t in two_triples]
    if np.array_equal(o2, o4):
        raise ValueError("the two next-observations must differ (o2 != o4)")
    if np.array_equal(o1, o3) and np.array_equal(a1, a3):
        raise ValueError("identical inputs with different targets cannot both be fit")
    s1 = g_fixed.preimage(o2)
    s2 = g_fixed.preimage(o4)
    base = np.asarray(h_prime(o1), dtype=float)
    hat1, hat2 = base + 1.0, base + 2.0
    if np.array_equal(o1, o3):
        hat2 = hat1
    h_tilde = TabularEncoder({_key(o1): hat1, _key(o3): hat2}, fallback=h_prime,
                             in_dim=h_prime.in_dim, out_dim=h_prime.out_dim)
    f_tilde = TabularWorldModel({(_key(hat1), _key(a1)): s1, (_key(hat2), _key(a3)): s2},
                                fallback=f_prime, state_dim=f_prime.state_dim)
    return h_tilde, f_tilde


def random_orthonormal(D_o: int, D_s: int, rng) -> np.ndarray:
    """(D_o, D_s) matrix with orthonormal columns."""
    Q, R = np.linalg.qr(rng.normal(size=(D_o, D_s)))
    return Q * np.sign(np.diag(R))


def make_isometry_autoencoder(D_s: int, D_o: int, seed: int = 0, Q=None) -> tuple[LinearEncoder, LinearDecoder]:
    """Decoder ``g(s) = Q s`` with column-orthonormal Q and encoder ``h(o) = Q^T o``."""
    if D_s > D_o:
        raise DimensionError("an isometric decoder needs D_s <= D_o")
    Q = random_orthonormal(D_o, D_s, stream(seed, "isometry")) if Q is None else np.asarray(Q, dtype=float)
    if Q.shape != (D_o, D_s):
        raise DimensionError(f"Q must have shape ({D_o}, {D_s})")
    return LinearEncoder(Q, kind="isometry_left_inverse"), LinearDecoder(Q.T, kind="isometry")


def make_tabular_gridworld_stack(env) -> tuple[TabularEncoder, TabularWorldModel, TabularDecoder]:
    """Exact one-hot encoder, true-dynamics table over all cells x actions, one-hot decoder."""
    cells = [env.observe(c) for c in range(env.n_cells)]
    h = TabularEncoder({_key(o): o for o in cells}, in_dim=env.n_cells)
    table = {}
    for c in range(env.n_cells):
        for a in range(env.n_actions):
            table[(_key(cells[c]), _key(env.encode_action(a)))] = cells[env.move(c, a)]
    f = TabularWorldModel(table, state_dim=env.n_cells)
    g = TabularDecoder({_key(o): o for o in cells}, in_dim=env.n_cells)
    return h, f, g


def true_dynamics_stack(env) -> tuple[LinearEncoder, LinearWorldModel]:
    """Oracle (h, f) for a LinearGaussianWorld: h recovers the state from the signal
    coordinates, f is the noise-free dynamics."""
    C_pinv = np.linalg.pinv(env.C)
    W = np.zeros((env.obs_dim, env.state_dim))
    W[:env.signal_dim] = C_pinv.T
    return LinearEncoder(W), LinearWorldModel(env.A.T, env.B.T)


# --- checkpoints ----------------------------------------------------------------

_CLASSES = {
    "MLPEncoder": MLPEncoder, "LinearEncoder": LinearEncoder, "ConstantEncoder": ConstantEncoder,
    "MLPWorldModel": MLPWorldModel, "LinearWorldModel": LinearWorldModel,
    "ConstantWorldModel": ConstantWorldModel, "MLPDecoder": MLPDecoder, "LinearDecoder": LinearDecoder,
}


def save_checkpoint(path, models: Mapping[str, object]) -> None:
    """Write named models to an ``.npz`` archive.

    Layout: ``__meta__`` holds a JSON string ``{"version": 1, "models": {name:
    meta}}``; each tensor is stored as ``<model name>/<param name>`` in float64.
    Tabular models are not serializable.
    """
    arrays, meta = {}, {}
    for name, model in models.items():
        if not hasattr(model, "to_state"):
            raise TypeError(f"model '{name}' ({type(model).__name__}) cannot be checkpointed")
        m, tensors = model.to_state()
        meta[name] = m
        for pname, value in tensors.items():
            arrays[f"{name}/{pname}"] = np.asarray(value, dtype=np.float64)
    arrays["__meta__"] = np.array(json.dumps({"version": CHECKPOINT_VERSION, "models": meta}))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> dict[str, object]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        out = {}
        for name, m in meta["models"].items():
            tensors = {k.split("/", 1)[1]: data[k] for k in data.files if k.startswith(name + "/")}
            out[name] = _restore(m, tensors)
    return out


def _restore(meta: dict, tensors: dict):
    cls = _CLASSES[meta["class"]]
    if cls in (MLPEncoder, MLPDecoder):
        return cls(tensors, meta["in_dim"], meta["out_dim"], tuple(meta["hidden"]))
    if cls is MLPWorldModel:
        return cls(tensors, meta["state_dim"], meta["action_dim"], tuple(meta["hidden"]))
    if cls in (LinearEncoder, LinearDecoder):
        return cls(tensors["W"], tensors["b"], kind=meta["kind"])
    if cls is LinearWorldModel:
        return cls(tensors["Ws"], tensors["Wa"], tensors["b"])
    if cls is ConstantEncoder:
        return cls(tensors["c"], in_dim=meta["in_dim"])
    return cls(tensors["c"])
