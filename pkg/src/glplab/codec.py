"""Deterministic discrete codecs for bounded real sequences.

An input is ``x = (x_1..x_T)`` with ``x_t`` in R^D and every coordinate in
``[-K~/2, K~/2]``. Resolution is measured with the *squared* Euclidean
distance: two inputs whose squared distance exceeds ``eps = eps~**2`` always
receive different codes.

Two constructions trade vocabulary against length:

``scale_up``
    ``T`` tokens; each token packs the D per-coordinate bin indices of one
    step as a base-``B`` number, ``B = ceil(sqrt(TD) K~ / eps~)``.
    Vocabulary ``B**D``.
``scale_out``
    Fixed vocabulary ``M``; every coordinate is rescaled to ``u`` in [0, 1]
    and written as ``L = ceil(log_M(sqrt(TD) K~ / eps~))`` truncated base-M
    digits. Length ``T * D * L``.

Bins are half-open (floor); the closed upper edge ``+K~/2`` is clamped into the
top bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream

CLAMP_TOL = 1e-12
# ceil() of a ratio that is integral up to float noise (e.g. 2/0.2) rounds to that integer
_INTEGRAL_TOL = 1e-9

SCALE_UP = "scale_up"
SCALE_OUT = "scale_out"


def _robust_ceil(q: float) -> int:
    nearest = round(q)
    if abs(q - nearest) <= _INTEGRAL_TOL * max(1.0, abs(q)):
        return int(nearest)
    return math.ceil(q)


def _digits_needed(q: float, base: int) -> int:
    """Smallest L >= 1 with base**L >= q (i.e. ceil(log_base q), floored at 1)."""
    target = _robust_ceil(q) if q > 1 else 1
    L, power = 1, base
    while power < target:
        power *= base
        L += 1
    return L


@dataclass(frozen=True)
class CodecSpec:
    mode: str
    T: int
    D: int
    K_tilde: float
    eps_tilde: float
    M: int | None = None

    @property
    def ratio(self) -> float:
        """sqrt(TD) * K~ / eps~ : number of bin widths spanning one coordinate."""
        return math.sqrt(self.T * self.D) * self.K_tilde / self.eps_tilde

    @property
    def bins_per_coord(self) -> int:
        return max(1, _robust_ceil(self.ratio))

    @property
    def digits_per_coord(self) -> int:
        return _digits_needed(self.ratio, self.M) if self.mode == SCALE_OUT else 1

    @property
    def vocab_size(self) -> int:
        if self.mode == SCALE_UP:
            return self.bins_per_coord ** self.D
        return self.M

    @property
    def code_length(self) -> int:
        if self.mode == SCALE_UP:
            return self.T
        return self.T * self.D * self.digits_per_coord

    @property
    def eps(self) -> float:
        """Squared-distance resolution."""
        return self.eps_tilde ** 2

    @property
    def bin_width(self) -> float:
        return self.eps_tilde / math.sqrt(self.T * self.D)


def build_codec(mode: str, T: int, D: int, K_tilde: float, eps_tilde: float, M: int | None = None) -> CodecSpec:
    if mode not in (SCALE_UP, SCALE_OUT):
        raise ValueError(f"unknown codec mode {mode!r}")
    if T < 1 or D < 1:
        raise ValueError("T and D must be >= 1")
    if not (K_tilde > 0 and eps_tilde > 0):
        raise ValueError("K_tilde and eps_tilde must be positive")
    if mode == SCALE_OUT:
        if M is None or M < 2:
            raise ValueError("scale_out needs a base vocabulary M >= 2")
        M = int(M)
    else:
        M = None
    return CodecSpec(mode, int(T), int(D), float(K_tilde), float(eps_tilde), M)


def _check_domain(spec: CodecSpec, X: np.ndarray) -> np.ndarray:
    half = spec.K_tilde / 2
    if X.shape[-1] != spec.T * spec.D:
        raise ValueError(f"expected vectors of length T*D={spec.T * spec.D}, got {X.shape[-1]}")
    if np.any(np.abs(X) > half + CLAMP_TOL):
        raise ValueError(f"coordinate outside [-{half}, {half}]")
    return np.clip(X, -half, half)


def encode_batch(spec: CodecSpec, X) -> np.ndarray:
    """Encode each row of ``X`` (shape (n, T*D)); returns int64 codes (n, code_length)."""
    X = _check_domain(spec, np.atleast_2d(np.asarray(X, dtype=float)))
    n = X.shape[0]
    half = spec.K_tilde / 2
    if spec.mode == SCALE_UP:
        B = spec.bins_per_coord
        digits = np.floor((X + half) / spec.bin_width).astype(np.int64)
        digits = np.clip(digits, 0, B - 1).reshape(n, spec.T, spec.D)
        weights = B ** np.arange(spec.D - 1, -1, -1, dtype=np.int64)
        return digits @ weights
    M, L = spec.M, spec.digits_per_coord
    u = (X + half) / spec.K_tilde
    levels = M ** L
    v = np.clip(np.floor(u * levels).astype(np.int64), 0, levels - 1)
    # most significant digit first
    powers = M ** np.arange(L - 1, -1, -1, dtype=np.int64)
    digits = (v[..., None] // powers) % M
    return digits.reshape(n, spec.T * spec.D * L)


def encode(spec: CodecSpec, x) -> list[int]:
    """Token sequence for one input vector of length T*D."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return [int(t) for t in encode_batch(spec, x[None, :])[0]]


def cell_bounds(spec: CodecSpec, codes) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper corners of the input boxes sharing each code row (n, code_length)."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if codes.shape[1] != spec.code_length:
        raise ValueError("token sequence has the wrong length")
    if np.any(codes < 0) or np.any(codes >= spec.vocab_size):
        raise ValueError("token out of vocabulary")
    n, half = codes.shape[0], spec.K_tilde / 2
    if spec.mode == SCALE_UP:
        B = spec.bins_per_coord
        powers = B ** np.arange(spec.D - 1, -1, -1, dtype=np.int64)
        index = ((codes[..., None] // powers) % B).reshape(n, spec.T * spec.D)
        width = spec.bin_width
    else:
        M, L = spec.M, spec.digits_per_coord
        powers = M ** np.arange(L - 1, -1, -1, dtype=np.int64)
        index = codes.reshape(n, spec.T * spec.D, L) @ powers
        width = spec.K_tilde / M ** L
    lo = index * width - half
    return lo, np.minimum(lo + width, half)


def decode_cell(spec: CodecSpec, tokens) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper corners of the box of inputs that share ``tokens``."""
    lo, hi = cell_bounds(spec, np.asarray(tokens)[None, :])
    return lo[0], hi[0]


@dataclass(frozen=True)
class DistinguishabilityReport:
    far_pairs: int
    far_violations: int
    same_code_pairs: int
    same_code_violations: int
    max_same_code_sq_dist: float

    @property
    def violations(self) -> int:
        return self.far_violations + self.same_code_violations


def _sample_far_pairs(spec: CodecSpec, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Half uniform pairs, half pairs just beyond the resolution radius."""
    dim, half, eps = spec.T * spec.D, spec.K_tilde / 2, spec.eps
    xs, ys = [], []
    have = 0
    while have < n:
        batch = max(64, 2 * (n - have))
        x = rng.uniform(-half, half, size=(batch, dim))
        y = rng.uniform(-half, half, size=(batch, dim))
        direction = rng.normal(size=(batch, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = spec.eps_tilde * (1.0 + rng.uniform(1e-6, 0.25, size=(batch, 1)))
        near = x + radius * direction
        use_near = rng.random(batch) < 0.5
        y = np.where(use_near[:, None], near, y)
        inside = np.all(np.abs(y) <= half, axis=1)
        far = np.sum((x - y) ** 2, axis=1) > eps
        keep = inside & far
        xs.append(x[keep])
        ys.append(y[keep])
        have += int(keep.sum())
    return np.vstack(xs)[:n], np.vstack(ys)[:n]


def verify_distinguishability(spec: CodecSpec, trials: int, seed: int) -> DistinguishabilityReport:
    """Brute-force check of both directions of the resolution guarantee.

    * ``trials`` pairs with squared distance > eps: count pairs whose codes coincide.
    * ``trials`` pairs drawn inside one shared code cell: count pairs whose squared
      distance exceeds eps.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = stream(seed, "codec", spec.mode, spec.T, spec.D, spec.K_tilde, spec.eps_tilde, spec.M)
    x, y = _sample_far_pairs(spec, trials, rng)
    same = np.all(encode_batch(spec, x) == encode_batch(spec, y), axis=1)

    anchors = rng.uniform(-spec.K_tilde / 2, spec.K_tilde / 2, size=(trials, spec.T * spec.D))
    codes = encode_batch(spec, anchors)
    lo, hi = cell_bounds(spec, codes)
    a = rng.uniform(lo, hi)
    b = rng.uniform(lo, hi)
    # a float landing exactly on a cell edge can change code; such pairs are not same-code pairs
    shared = np.all(encode_batch(spec, a) == codes, axis=1) & np.all(encode_batch(spec, b) == codes, axis=1)
    d2 = np.sum((a - b) ** 2, axis=1)[shared]
    worst = float(d2.max()) if d2.size else 0.0
    return DistinguishabilityReport(trials, int(same.sum()), int(shared.sum()), int(np.sum(d2 > spec.eps)), worst)


CSV_HEADER = ["mode", "T", "D", "K_tilde", "eps_tilde", "M", "vocab_size", "code_length", "trials", "violations"]


def bench_row(spec: CodecSpec, trials: int, report: DistinguishabilityReport) -> list:
    return [spec.mode, spec.T, spec.D, format(spec.K_tilde, ".17g"), format(spec.eps_tilde, ".17g"),
            "" if spec.M is None else spec.M, spec.vocab_size, spec.code_length, trials, report.violations]
