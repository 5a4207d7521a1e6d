import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mte_sim import isa, oracle
from mte_sim.errors import ConfigError, IllegalRegister, ShapeError, WorkloadError
from mte_sim.kernels import (
    BASELINE,
    PROFILES,
    UnrollPlan,
    count_gemm,
    execute_program,
    get_profile,
    plan_unroll,
    random_operands,
    run_conv,
    run_gemm,
    search_unroll,
)
from mte_sim.machine import Machine, csr_unpack
from mte_sim.workloads import ConvLayer, GemmWorkload

BIG = GemmWorkload(1024, 1024, 64)


def bitwise_equal(x, y):
    return np.array_equal(np.asarray(x, np.float32).view(np.uint32), np.asarray(y, np.float32).view(np.uint32))


def reference(wl, a, b, c, alpha, beta):
    return oracle.oracle_gemm(a, b.T if wl.b_transposed else b, c, alpha, beta, sew_i=wl.sew_i)


def csr_of(line):
    return csr_unpack(int(line.rsplit("csr=", 1)[1], 16))


# -- profiles and plans -------------------------------------------------------------

def test_profiles_table():
    geo = {n: (p.cfg.vlen_bits, p.cfg.rlen_bits, p.cfg.num_arch_vregs) for n, p in PROFILES.items()}
    assert geo["Vector1KB"][0] == 8192 and geo["Vector2KB"][0] == 16384
    assert geo["SiFiveInt"][:2] == (8192, 2048)
    for name in ("MTE8s", "MTE32s", "MTE32v"):
        assert geo[name][:2] == (8192, 512)
    assert geo["MTE8s"][2] == 8
    assert all(g[2] == 32 for n, g in geo.items() if n != "MTE8s")
    assert BASELINE == "Vector1KB"
    with pytest.raises(ConfigError):
        get_profile("Nope")


def test_plan_mte8s():
    plan = plan_unroll(PROFILES["MTE8s"], BIG)
    assert (plan.unroll_m, plan.unroll_n) == (2, 2)
    assert plan.register_budget_used == 7


def test_plan_mte32s():
    plan = plan_unroll(PROFILES["MTE32s"], BIG)
    assert (plan.unroll_m, plan.unroll_n) == (5, 5)
    assert plan.register_budget_used == 31


def test_plan_single_tile():
    plan = plan_unroll(PROFILES["MTE32s"], GemmWorkload(16, 16, 300))
    assert (plan.unroll_m, plan.unroll_n) == (1, 1)


def test_plan_vector():
    assert plan_unroll(PROFILES["Vector1KB"], BIG).unroll_m == 31
    assert plan_unroll(PROFILES["Vector1KB"], GemmWorkload(5, 8, 8)).unroll_m == 5


@given(st.integers(4, 64), st.integers(1, 40), st.integers(1, 40))
def test_plan_fits_register_budget(regs, tiles_m, tiles_n):
    um, un = search_unroll(regs, tiles_m, tiles_n)
    assert 1 <= um <= tiles_m and 1 <= un <= tiles_n
    assert um * un + um + 1 <= regs - 1


def test_plan_too_few_registers():
    with pytest.raises(ConfigError):
        search_unroll(3, 4, 4)


# -- MTE kernel --------------------------------------------------------------------------

def test_mte_single_tile_bitwise(rng):
    wl = GemmWorkload(16, 16, 16)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("MTE32s", wl, a, b, c, 1.0, 0.0)
    assert bitwise_equal(res.output, oracle.oracle_gemm(a, b, c))
    assert res.mma_count == 1


def test_mte_alpha_zero_beta_one_keeps_c(rng):
    wl = GemmWorkload(40, 24, 33)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("MTE32s", wl, a, b, c, 0.0, 1.0)
    assert bitwise_equal(res.output, c)


def test_mte_48_cube_tile_count(rng):
    wl = GemmWorkload(48, 48, 48)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("MTE32s", wl, a, b, c, 1.5, 0.5, plan=UnrollPlan(1, 1, 16, 3))
    assert res.counts["TileMul"] == 27
    assert bitwise_equal(res.output, oracle.oracle_gemm(a, b, c, 1.5, 0.5))
    assert count_gemm("MTE32s", 48, 48, 48).mma_count == 27


def test_mte_tail_granted_sizes(rng):
    wl = GemmWorkload(17, 5, 3)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("MTE32s", wl, a, b, c, 1.0, 1.0, keep_trace=True)
    assert bitwise_equal(res.output, oracle.oracle_gemm(a, b, c, 1.0, 1.0))
    shapes = [(s.tm, s.tn, s.tk) for s in (csr_of(l) for l in res.trace if " tfmul " in l)]
    assert shapes == [(16, 5, 3), (1, 5, 3)]


def test_elided_post_processing(rng):
    wl = GemmWorkload(20, 20, 20)
    a, b, c = random_operands(rng, wl)
    full = run_gemm("MTE32s", wl, a, b, c, 1.0, 0.0)
    fast = run_gemm("MTE32s", wl, a, b, c, 1.0, 0.0, elide_post=True)
    assert bitwise_equal(full.output, fast.output)
    assert fast.report.retired["vector_arith"] < full.report.retired["vector_arith"]


def test_mixed_precision_mte(rng):
    wl = GemmWorkload(33, 20, 45, sew_i=16)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("MTE32s", wl, a, b, c, 0.75, -1.25, keep_trace=True)
    assert bitwise_equal(res.output, reference(wl, a, b, c, 0.75, -1.25))
    assert any(" tfwmul " in l for l in res.trace)
    assert res.notes  # BT packing is reported


@pytest.mark.parametrize("name", ["MTE8s", "MTE32s", "MTE32v"])
def test_mma_count_identity(name):
    for m, n, k in [(1, 1, 1), (17, 33, 16), (100, 7, 250), (256, 256, 256), (31, 300, 47)]:
        expect = math.ceil(m / 16) * math.ceil(n / 16) * math.ceil(k / 16)
        assert count_gemm(name, m, n, k).mma_count == expect


def test_mte8s_register_bound():
    res = count_gemm("MTE8s", 100, 100, 40, keep_trace=True)
    regs = {int(tok[1:].rstrip(",")) for l in res.trace for tok in l.split() if tok.startswith("v") and tok[1:].rstrip(",").isdigit()}
    assert regs and max(regs) < 8


def test_register_overflow_detected():
    m = Machine(PROFILES["MTE8s"].cfg, memory_bytes=0)
    with pytest.raises(IllegalRegister):
        execute_program([isa.Tss("m", 4, 0), isa.TileMul("tfmul", 8, 1, 2)], m, dry=True)


# -- vector kernel ------------------------------------------------------------------------

def test_vector_fma_count_single_slab():
    res = count_gemm("Vector1KB", 10, 256, 12)
    assert res.accumulating_fmas == 10 * 12


def test_vector_lane_waste_at_n32():
    narrow = count_gemm("Vector1KB", 64, 32, 64)
    wide = count_gemm("Vector1KB", 64, 256, 64)
    assert narrow.accumulating_fmas == wide.accumulating_fmas
    assert narrow.report.efficiency <= 32 / 256


def test_vector2kb_halves_fmas_at_n512():
    assert count_gemm("Vector2KB", 16, 512, 16).accumulating_fmas * 2 == count_gemm(
        "Vector1KB", 16, 512, 16).accumulating_fmas


def test_vector_mixed_precision(rng):
    wl = GemmWorkload(9, 300, 7, sew_i=16)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("Vector1KB", wl, a, b, c, 2.0, 0.5)
    assert bitwise_equal(res.output, reference(wl, a, b, c, 2.0, 0.5))


# -- SiFive emulation -------------------------------------------------------------------

def test_sifive_single_tile(rng):
    wl = GemmWorkload(4, 4, 4)
    a, b, c = random_operands(rng, wl)
    res = run_gemm("SiFiveInt", wl, a, b, c, 1.0, 0.0)
    assert bitwise_equal(res.output, oracle.oracle_gemm(a, b, c))


def test_sifive_counts():
    assert count_gemm("SiFiveInt", 4, 64, 4).mma_count == 1
    assert count_gemm("SiFiveInt", 64, 64, 64).mma_count == 256


def test_sifive_uses_only_the_a_tile_corner(rng):
    m = Machine(PROFILES["SiFiveInt"].cfg, memory_bytes=0)
    for dim, size in zip("mnk", (4, 64, 4)):
        isa.Tss(dim, size, 0).execute(m)
    m.vrf.regs[1:4] = 0
    m.vrf.rows(2, np.float32)[:4, :4] = rng.standard_normal((4, 4))
    m.vrf.rows(3, np.float32)[:4, :64] = rng.standard_normal((4, 64))
    clean = m.vrf.regs.copy()
    isa.tmul_family(m, "tfmul", 1, 2, 3)
    expect = m.vrf.raw(1).copy()
    m.vrf.regs[:] = clean
    rows = m.vrf.rows(2, np.uint8)
    rows[:, 16:] = 0xA5  # everything past 128 bits of each row
    rows[4:] = 0xA5
    isa.tmul_family(m, "tfmul", 1, 2, 3)
    assert np.array_equal(m.vrf.raw(1), expect)


# -- all profiles ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(
    profile=st.sampled_from(sorted(PROFILES)),
    dims=st.tuples(st.integers(1, 40), st.integers(1, 40), st.integers(1, 40)),
    sew_i=st.sampled_from([32, 16]),
    b_transposed=st.booleans(),
    layout=st.sampled_from(["row_major", "tiled"]),
    pads=st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)),
    seed=st.integers(0, 2**16),
)
def test_kernels_match_oracle(profile, dims, sew_i, b_transposed, layout, pads, seed):
    m, n, k = dims
    b_cols = k if b_transposed else n
    wl = GemmWorkload(m, n, k, sew_i=sew_i, layout=layout, b_transposed=b_transposed,
                      lda=k + pads[0], ldb=b_cols + pads[1], ldc=n + pads[2])
    rng = np.random.default_rng(seed)
    a, b, c = random_operands(rng, wl)
    alpha, beta = float(np.float32(rng.standard_normal())), float(np.float32(rng.standard_normal()))
    res = run_gemm(profile, wl, a, b, c, alpha, beta)
    assert bitwise_equal(res.output, reference(wl, a, b, c, alpha, beta))


def test_mte32v_matches_mte32s(rng):
    wl = GemmWorkload(50, 70, 30)
    a, b, c = random_operands(rng, wl)
    s = run_gemm("MTE32s", wl, a, b, c, 1.0, 1.0)
    v = run_gemm("MTE32v", wl, a, b, c, 1.0, 1.0)
    assert bitwise_equal(s.output, v.output)
    assert s.report.retired == v.report.retired
    assert v.report.total_cycles != s.report.total_cycles


def test_reduction_ordering_on_sample():
    for m, n, k in [(196, 16, 64), (784, 64, 128), (49, 512, 512), (32, 2048, 768)]:
        base = count_gemm(BASELINE, m, n, k).vector_matrix_retired
        red = {p: base / count_gemm(p, m, n, k).vector_matrix_retired for p in PROFILES}
        assert red["MTE32s"] >= red["MTE8s"] >= red["SiFiveInt"] >= red["Vector2KB"] >= 1


def test_conv_through_kernel(rng):
    layer = ConvLayer(1, 3, 20, 9, 7, 3, 2, stride_h=2, stride_w=1, pad_h=1, pad_w=0)
    x = rng.standard_normal((1, 3, 9, 7)).astype(np.float32)
    w = rng.standard_normal((20, 3, 3, 2)).astype(np.float32)
    c = rng.standard_normal((1, 20, layer.out_h, layer.out_w)).astype(np.float32)
    for profile in ("MTE32s", "Vector1KB", "SiFiveInt"):
        _, out = run_conv(profile, layer, x, w, c, 0.5, 2.0)
        assert bitwise_equal(out, oracle.oracle_conv(layer, x, w, c, 0.5, 2.0))


def test_run_errors(rng):
    wl = GemmWorkload(4, 4, 4)
    a, b, c = random_operands(rng, wl)
    with pytest.raises(WorkloadError):
        run_gemm("MTE32s", wl)
    with pytest.raises(ShapeError):
        run_gemm("MTE32s", wl, a[:3], b, c)
