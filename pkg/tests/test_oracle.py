from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mte_sim import numerics, oracle
from mte_sim.errors import ShapeError
from mte_sim.kernels import PROFILES, run_gemm
from mte_sim.workloads import ConvLayer, GemmWorkload

GOLDEN = Path(__file__).parent / "golden" / "gemm_4x4x4_fp32.txt"


def bits(x):
    return np.asarray(x, np.float32).view(np.uint32)


def test_scalar_gemm():
    one = lambda v: np.float32([[v]])  # noqa: E731
    assert oracle.oracle_gemm(one(2), one(3), one(1), 1.0, 1.0)[0, 0] == 7.0
    assert oracle.oracle_gemm_scalar(one(2), one(3), one(1), 1.0, 1.0)[0, 0] == 7.0


def test_identity_a(rng):
    b, c = (rng.standard_normal((5, 5)).astype(np.float32) for _ in range(2))
    out = oracle.oracle_gemm(np.eye(5, dtype=np.float32), b, c, 1.0, 1.0)
    assert np.array_equal(out, b + c)
    out = oracle.oracle_gemm(np.eye(5, dtype=np.float32), b, c, 3.0, 0.0)
    assert np.array_equal(out, b * np.float32(3.0))


def test_golden_values_reproduced():
    a, b, c, alpha, beta, expected = oracle.read_golden(GOLDEN)
    assert (alpha, beta) == (1.25, -0.75)
    assert bits(expected)[0, 0] == 0xC0864025
    assert np.array_equal(bits(oracle.oracle_gemm(a, b, c, alpha, beta)), bits(expected))
    assert np.array_equal(bits(oracle.oracle_gemm_scalar(a, b, c, alpha, beta)), bits(expected))


@pytest.mark.parametrize("profile", sorted(PROFILES))
def test_golden_values_from_kernels(profile):
    a, b, c, alpha, beta, expected = oracle.read_golden(GOLDEN)
    res = run_gemm(profile, GemmWorkload(4, 4, 4), a, b, c, alpha, beta)
    assert np.array_equal(bits(res.output), bits(expected))


def test_golden_round_trip(tmp_path, rng):
    a, b, c = (rng.standard_normal((3, 3)).astype(np.float32) for _ in range(3))
    out = oracle.oracle_gemm(a, b, c, 0.5, 2.0)
    path = tmp_path / "g.txt"
    oracle.write_golden(path, a, b, c, 0.5, 2.0, out)
    got = oracle.read_golden(path)
    assert all(np.array_equal(x, y) for x, y in zip(got, (a, b, c, 0.5, 2.0, out)))


def test_gemm_errors():
    a = np.zeros((2, 3), np.float32)
    with pytest.raises(ShapeError):
        oracle.oracle_gemm(a, np.zeros((2, 2), np.float32), np.zeros((2, 2), np.float32))
    with pytest.raises(ShapeError):
        oracle.oracle_gemm(a, np.zeros((3, 2), np.float32), np.zeros((3, 2), np.float32))
    with pytest.raises(ValueError):
        oracle.oracle_gemm(a, np.zeros((3, 2), np.float32), np.zeros((2, 2), np.float32), order="k_descending")


@settings(max_examples=50, deadline=None)
@given(
    dims=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
    sew_i=st.sampled_from([32, 16]),
    seed=st.integers(0, 2**16),
)
def test_vector_and_scalar_routes_agree(dims, sew_i, seed):
    m, n, k = dims
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, k)).astype(np.float32)
    b = rng.standard_normal((k, n)).astype(np.float32)
    c = rng.standard_normal((m, n)).astype(np.float32)
    if sew_i == 16:
        a, b = numerics.f32_to_bf16(a), numerics.f32_to_bf16(b)
    alpha, beta = float(np.float32(rng.standard_normal())), float(np.float32(rng.standard_normal()))
    fast = oracle.oracle_gemm(a, b, c, alpha, beta, sew_i=sew_i)
    slow = oracle.oracle_gemm_scalar(a, b, c, alpha, beta, sew_i=sew_i)
    assert np.array_equal(bits(fast), bits(slow))


@settings(max_examples=50, deadline=None)
@given(
    dims=st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8)),
    shift=st.integers(-6, 6),
    seed=st.integers(0, 2**16),
)
def test_gemm_scales_with_power_of_two(dims, shift, seed):
    m, n, k = dims
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, k)).astype(np.float32)
    b = rng.standard_normal((k, n)).astype(np.float32)
    zero = np.zeros((m, n), np.float32)
    s = np.float32(2.0**shift)
    assert np.array_equal(oracle.oracle_gemm(a * s, b, zero), oracle.oracle_gemm(a, b, zero) * s)


def test_round_fraction_edges():
    assert oracle.round_fraction(Fraction(1, 3)) == float(np.float32(1 / 3))
    assert oracle.round_fraction(Fraction(2) ** -149) == 2.0**-149
    assert oracle.round_fraction(Fraction(2) ** -151) == 0.0
    assert oracle.round_fraction(Fraction(2) ** 128) == float("inf")
    assert oracle.round_fraction(-Fraction(2) ** 200, "bf16") == float("-inf")
    assert oracle.round_fraction(1 + Fraction(1, 256), "bf16") == 1.0


def test_tile_mma_fp32_order(rng):
    a = np.float32([[1e8, 1.0, -1e8]])
    b = np.float32([[1.0], [1.0], [1.0]])
    # k ascending: (1e8 + 1) rounds back to 1e8, then cancels
    out = oracle.oracle_tile_mma(a, b, np.zeros((1, 1), np.float32), "fp32")
    assert out[0, 0] == 0.0


def test_conv_zero_weights(rng):
    layer = ConvLayer(1, 3, 4, 6, 6, 3, 3, pad_h=1, pad_w=1)
    x = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
    out = oracle.oracle_conv(layer, x, np.zeros((4, 3, 3, 3), np.float32))
    assert out.shape == (1, 4, 6, 6) and not out.any()


def test_conv_shape_errors():
    layer = ConvLayer(1, 3, 4, 6, 6, 3, 3)
    with pytest.raises(ShapeError):
        oracle.oracle_conv(layer, np.zeros((1, 2, 6, 6)), np.zeros((4, 3, 3, 3)))
    with pytest.raises(ShapeError):
        oracle.oracle_conv(layer, np.zeros((1, 3, 6, 6)), np.zeros((4, 3, 3, 3)), np.zeros((1, 4, 6, 6)))


def test_conv_output_size():
    assert oracle.conv_output_size(56, 3, 1, 1) == 56
    assert oracle.conv_output_size(224, 7, 2, 3) == 112


def test_tile_footprint():
    assert oracle.tile_footprint(0, 64, 1, 1, 4) == {0, 1, 2, 3}
    assert len(oracle.tile_footprint(0, 64, 16, 16, 4)) == 1024
    assert oracle.tile_footprint(0, 16, 2, 1, 4, transposed=True) == {0, 1, 2, 3, 4, 5, 6, 7}
