import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glplab import codec
from glplab.harness.experiments import exact_codec_sizes


def test_scale_up_sizes():
    spec = codec.build_codec("scale_up", 1, 1, 2.0, 0.2)
    assert (spec.vocab_size, spec.code_length) == (10, 1)
    spec = codec.build_codec("scale_up", 2, 2, 2.0, 0.2)
    assert (spec.vocab_size, spec.code_length) == (400, 2)


def test_scale_out_sizes():
    spec = codec.build_codec("scale_out", 1, 1, 2.0, 0.2, M=2)
    assert (spec.vocab_size, spec.code_length) == (2, 4)


def test_encode_examples():
    assert codec.encode(codec.build_codec("scale_up", 1, 1, 2.0, 0.2), [0.05]) == [5]
    assert codec.encode(codec.build_codec("scale_out", 1, 1, 2.0, 0.2, M=2), [0.05]) == [1, 0, 0, 0]


def test_same_bin_points_share_a_code():
    spec = codec.build_codec("scale_up", 1, 1, 2.0, 0.2)
    assert codec.encode(spec, [0.01]) == codec.encode(spec, [0.03])
    assert (0.03 - 0.01) ** 2 <= spec.eps


def test_upper_edge_clamps_into_last_bin():
    spec = codec.build_codec("scale_up", 1, 1, 2.0, 0.2)
    assert codec.encode(spec, [1.0]) == [9]
    assert codec.encode(spec, [1.0 + 1e-13]) == [9]
    with pytest.raises(ValueError):
        codec.encode(spec, [1.01])


def test_invalid_parameters():
    with pytest.raises(ValueError):
        codec.build_codec("scale_up", 0, 1, 2.0, 0.2)
    with pytest.raises(ValueError):
        codec.build_codec("scale_up", 1, 1, -2.0, 0.2)
    with pytest.raises(ValueError):
        codec.build_codec("scale_out", 1, 1, 2.0, 0.2, M=1)
    with pytest.raises(ValueError):
        codec.build_codec("scale_out", 1, 1, 2.0, 0.2)


def test_far_pairs_never_collide():
    spec = codec.build_codec("scale_out", 2, 2, 2.0, 0.1, M=3)
    rep = codec.verify_distinguishability(spec, 20_000, seed=0)
    assert rep.violations == 0 and rep.far_pairs == 20_000
    assert 0 < rep.max_same_code_sq_dist <= spec.eps


def test_identical_inputs_identical_codes():
    spec = codec.build_codec("scale_up", 2, 3, 2.0, 0.2)
    x = np.linspace(-0.9, 0.9, 6)
    assert codec.encode(spec, x) == codec.encode(spec, x.copy())


def test_scaling_out_grows_slower_than_scaling_up():
    up = [codec.build_codec("scale_up", 2, D, 2.0, 0.1) for D in range(1, 5)]
    out = [codec.build_codec("scale_out", 2, D, 2.0, 0.1, M=2) for D in range(1, 5)]
    sizes = [s.vocab_size for s in up]
    assert all(b > a for a, b in zip(sizes, sizes[1:]))
    # superlinear: each extra dimension multiplies the vocabulary
    assert all(b / a >= sizes[0] for a, b in zip(sizes, sizes[1:]))
    assert all(s.vocab_size == 2 for s in out)
    for D, s in enumerate(out, start=1):
        assert s.code_length == 2 * D * math.ceil(math.log2(math.sqrt(2 * D) * 2 / 0.1))
    lengths = [s.code_length for s in out]
    assert all(b > a for a, b in zip(lengths, lengths[1:]))


specs = st.builds(
    lambda mode, T, D, K, eps, M: codec.build_codec(mode, T, D, K, eps, M if mode == "scale_out" else None),
    st.sampled_from(["scale_up", "scale_out"]), st.integers(1, 3), st.integers(1, 3),
    st.sampled_from([1.0, 2.0, 3.0]), st.sampled_from([0.05, 0.1, 0.2, 0.25, 0.5]), st.integers(2, 5))


@given(specs)
def test_sizes_match_exact_formula(spec):
    assert (spec.vocab_size, spec.code_length) == exact_codec_sizes(
        spec.mode, spec.T, spec.D, spec.K_tilde, spec.eps_tilde, spec.M)
    assert spec.vocab_size >= 1 and spec.code_length >= 1


@given(specs, st.integers(0, 2**31 - 1))
def test_codes_are_valid_and_cells_contain_inputs(spec, seed):
    rng = np.random.default_rng(seed)
    half = spec.K_tilde / 2
    X = rng.uniform(-half, half, size=(50, spec.T * spec.D))
    codes = codec.encode_batch(spec, X)
    assert codes.shape == (50, spec.code_length)
    assert np.all((codes >= 0) & (codes < spec.vocab_size))
    lo, hi = codec.cell_bounds(spec, codes)
    assert np.all(lo <= X + 1e-12) and np.all(X <= hi + 1e-12)
    # equal codes imply squared distance <= eps: every cell's diameter is within eps
    assert np.all(np.sum((hi - lo) ** 2, axis=1) <= spec.eps * (1 + 1e-12))


@given(specs, st.integers(0, 2**31 - 1))
def test_distinguishability_property(spec, seed):
    assert codec.verify_distinguishability(spec, 500, seed).violations == 0


def test_bench_row_matches_header():
    spec = codec.build_codec("scale_up", 1, 1, 2.0, 0.2)
    row = codec.bench_row(spec, 10, codec.verify_distinguishability(spec, 10, 0))
    assert len(row) == len(codec.CSV_HEADER)
    assert codec.CSV_HEADER == ["mode", "T", "D", "K_tilde", "eps_tilde", "M", "vocab_size", "code_length",
                                "trials", "violations"]
