"""Place operands in memory, run a kernel program and price it.

Functional runs execute every instruction on a Machine and return C. Dry
runs only replay configuration instructions on a memory-less shadow machine,
so large problems can be counted and priced without touching data.

Operand packing (tile layouts, the transposed B copy of mixed-precision
runs) happens while staging data, outside the priced program.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import isa, numerics
from ..errors import IllegalRegister, ShapeError, WorkloadError
from ..machine import Machine, env_memory_bytes
from ..microarch import CostAccumulator, CostReport
from ..workloads import GemmWorkload, gemm_to_nchw, im2col, lower_conv, nchw_to_gemm, weights_as_b
from .gemm import BOperand, RowMajor, TilePacked, tile_gemm_program, vector_gemm_program
from .plan import UnrollPlan, plan_unroll
from .profiles import get_profile

ALIGN = 64

# instruction classes counted as retired vector/matrix work
VECTOR_MATRIX_CLASSES = ("mma", "vector_arith", "vector_memory", "tile_load", "tile_store", "config")


@dataclass
class RunResult:
    profile: str
    workload: GemmWorkload
    plan: UnrollPlan
    report: CostReport
    counts: Counter
    accumulating_fmas: int = 0
    output: np.ndarray | None = None
    trace: list | None = None
    notes: list = field(default_factory=list)

    @property
    def mma_count(self):
        return self.report.retired.get("mma", 0)

    def retired(self, *klasses):
        return sum(self.report.retired.get(k, 0) for k in klasses)

    @property
    def vector_matrix_retired(self):
        return self.retired(*VECTOR_MATRIX_CLASSES)


def _round_up(x, a=ALIGN):
    return -(-x // a) * a


class _Bump:
    def __init__(self):
        self.end = 0

    def take(self, nbytes):
        addr = _round_up(self.end)
        self.end = addr + nbytes
        return addr


@dataclass
class Placement:
    a: RowMajor
    b: RowMajor
    c: RowMajor
    a_kernel: object  # layout the kernel reads A from
    b_kernel: object  # BOperand (tile kernels) or RowMajor (vector kernel)
    packs: list = field(default_factory=list)  # (layout, source) staged before the run
    end: int = 0
    notes: list = field(default_factory=list)


def place_operands(profile, wl):
    """Assign addresses for A, B, C and any packed copies the kernel reads."""
    eb = wl.sew_i // 8
    bump = _Bump()
    a = RowMajor(bump.take(wl.M * wl.a_ld * eb), wl.a_ld, eb)
    b = RowMajor(bump.take(wl.b_rows * wl.b_ld * eb), wl.b_ld, eb)
    c = RowMajor(bump.take(wl.M * wl.c_ld * 4), wl.c_ld, 4)
    pl = Placement(a, b, c, a, b)
    mixed = wl.sew_i != wl.sew_o

    if profile.kernel == "vector":
        if wl.b_transposed:
            kn = RowMajor(bump.take(wl.K * wl.N * eb), wl.N, eb)
            pl.b_kernel = kn
            pl.packs.append((kn, "b_kn"))
            pl.notes.append("B copied to K x N row-major before the run")
    elif profile.kernel == "sifive" or wl.layout == "tiled":
        mm, mn, mk = isa.dim_maxima(profile.cfg, wl.sew_i, wl.sew_o)
        tm_, tn_, tk_ = math.ceil(wl.M / mm), math.ceil(wl.N / mn), math.ceil(wl.K / mk)
        ap = TilePacked(bump.take(tm_ * tk_ * mm * mk * eb), mm, mk, tk_, eb)
        pl.a_kernel = ap
        pl.packs.append((ap, "a"))
        if mixed:
            bp = TilePacked(bump.take(tn_ * tk_ * mn * mk * eb), mn, mk, tk_, eb)
            pl.b_kernel = BOperand(bp, "bt", stored_nk=True, transposed=False)
            pl.packs.append((bp, "b_nk"))
        else:
            bp = TilePacked(bump.take(tk_ * tn_ * mk * mn * eb), mk, mn, tn_, eb)
            pl.b_kernel = BOperand(bp, "b", stored_nk=False, transposed=False)
            pl.packs.append((bp, "b_kn"))
        pl.notes.append(f"A and B packed into {mm}x{mk} and {bp.tile_rows}x{bp.tile_cols} tiles before the run")
    elif mixed:
        if wl.b_transposed:
            pl.b_kernel = BOperand(b, "bt", stored_nk=True, transposed=False)
        else:
            bt = RowMajor(bump.take(wl.N * wl.K * eb), wl.K, eb)
            pl.b_kernel = BOperand(bt, "bt", stored_nk=True, transposed=False)
            pl.packs.append((bt, "b_nk"))
            pl.notes.append("B packed to N x K (BT) before the run")
    else:
        # uniform row-major: an N x K B is transposed during the tile load
        pl.b_kernel = BOperand(b, "b", stored_nk=wl.b_transposed, transposed=wl.b_transposed)
    pl.end = bump.end
    return pl


def build_program(profile, wl, alpha=1.0, beta=0.0, plan=None, placement=None, elide_post=False):
    """Instruction generator for the workload on the profile's kernel."""
    pl = placement or place_operands(profile, wl)
    plan = plan or plan_unroll(profile, wl)
    gen = vector_gemm_program if profile.kernel == "vector" else tile_gemm_program
    return gen(profile.cfg, plan, wl, pl.a_kernel, pl.b_kernel, pl.c, alpha, beta, elide_post)


# -- data staging -------------------------------------------------------------------

def _store_rows(mem, lay, mat):
    rows, cols = mat.shape
    buf = np.zeros((rows, lay.ld), dtype=mat.dtype)
    buf[:, :cols] = mat
    mem.write(lay.base, buf)


def _store_packed(mem, packed, mat):
    rows, cols = mat.shape
    tr, tc = packed.tile_rows, packed.tile_cols
    nr, nc = math.ceil(rows / tr), math.ceil(cols / tc)
    buf = np.zeros((nr * tr, nc * tc), dtype=mat.dtype)
    buf[:rows, :cols] = mat
    mem.write(packed.base, np.ascontiguousarray(buf.reshape(nr, tr, nc, tc).transpose(0, 2, 1, 3)))


def stage_operands(m, wl, pl, a, b, c):
    dt = np.uint16 if wl.sew_i == 16 else np.float32
    a = np.asarray(a).astype(dt, copy=False)
    b = np.asarray(b).astype(dt, copy=False)
    c = np.asarray(c, np.float32)
    if a.shape != (wl.M, wl.K):
        raise ShapeError(f"A has shape {a.shape}, expected {(wl.M, wl.K)}")
    if b.shape != (wl.b_rows, wl.b_cols):
        raise ShapeError(f"B has shape {b.shape}, expected {(wl.b_rows, wl.b_cols)}")
    if c.shape != (wl.M, wl.N):
        raise ShapeError(f"C has shape {c.shape}, expected {(wl.M, wl.N)}")
    _store_rows(m.mem, pl.a, a)
    _store_rows(m.mem, pl.b, b)
    _store_rows(m.mem, pl.c, c)
    b_kn = b.T if wl.b_transposed else b
    sources = {"a": a, "b_kn": b_kn, "b_nk": b_kn.T}
    for lay, src in pl.packs:
        mat = np.ascontiguousarray(sources[src])
        if isinstance(lay, TilePacked):
            _store_packed(m.mem, lay, mat)
        else:
            _store_rows(m.mem, lay, mat)


def read_output(m, wl, pl):
    raw = m.mem.load_array(pl.c.base, np.float32, wl.M * wl.c_ld)
    return raw.reshape(wl.M, wl.c_ld)[:, :wl.N].copy()


# -- execution ---------------------------------------------------------------------

def trace_line(index, instr, m):
    ops = instr.operand_text()
    text = f"{instr.mnemonic} {ops}" if ops else instr.mnemonic
    return f"{index:8d}  {text:<40s} vl={m.vcsr.vl:<5d} csr={m.csr.pack():016x}"


def execute_program(program, m, dry=False, keep_trace=False):
    """Run (or dry-run) a program on m.

    Returns (CostReport, per-instruction-type counts, accumulating FMA count, trace lines).
    Every instruction's register operands are checked against the register
    file size, in dry runs too.
    """
    acc = CostAccumulator(m.cfg)
    counts = Counter()
    trace = [] if keep_trace else None
    nregs = m.cfg.num_arch_vregs
    fmas = 0
    add = acc.add_class
    for index, instr in enumerate(program):
        for r in instr.vregs():
            if not 0 <= r < nregs:
                raise IllegalRegister(f"{instr} uses v{r}; the machine has {nregs} registers")
        if not dry or instr.configures:
            instr.execute(m)
        flops = instr.flops(m)
        if flops and instr.klass == "vector_arith":
            fmas += 1
        add(instr.klass, flops)
        counts[type(instr).__name__] += 1
        if keep_trace:
            trace.append(trace_line(index, instr, m))
    return acc.report(), counts, fmas, trace


def run_gemm(profile, workload, a=None, b=None, c=None, alpha=1.0, beta=0.0, dry=False,
             keep_trace=False, plan=None, memory_bytes=None, elide_post=False):
    """C = alpha*A@B + beta*C on a profile.

    Functional runs need A (M x K), B (K x N, or N x K when b_transposed) and
    optionally C; dry runs need only the workload and return no output.
    """
    if isinstance(profile, str):
        profile = get_profile(profile)
    plan = plan or plan_unroll(profile, workload)
    pl = place_operands(profile, workload)
    if dry:
        m = Machine(profile.cfg, memory_bytes=0)
    else:
        if a is None or b is None:
            raise WorkloadError("functional runs need A and B")
        if c is None:
            c = np.zeros((workload.M, workload.N), np.float32)
        size = memory_bytes if memory_bytes is not None else max(env_memory_bytes(), _round_up(pl.end))
        m = Machine(profile.cfg, memory_bytes=size)
        stage_operands(m, workload, pl, a, b, c)
    program = build_program(profile, workload, alpha, beta, plan, pl, elide_post)
    report, counts, fmas, trace = execute_program(program, m, dry=dry, keep_trace=keep_trace)
    out = None if dry else read_output(m, workload, pl)
    return RunResult(profile.name, workload, plan, report, counts, fmas, out, trace, list(pl.notes))


def count_gemm(profile, M, N, K, sew_i=32, keep_trace=False):
    """Dry run of a plain row-major GEMM: counts and cost report, no data."""
    return run_gemm(profile, GemmWorkload(M, N, K, sew_i=sew_i), dry=True, keep_trace=keep_trace)


def run_conv(profile, layer, x, w, c=None, alpha=1.0, beta=0.0, **kwargs):
    """Convolution through the GEMM kernel on im2col data; returns (RunResult, NCHW output)."""
    wl = lower_conv(layer)
    a = im2col(np.asarray(x, np.float32), layer)
    b = weights_as_b(np.asarray(w, np.float32), layer)
    if c is None:
        c = np.zeros((layer.minibatch, layer.out_channels, layer.out_h, layer.out_w), np.float32)
    res = run_gemm(profile, wl, a, b, nchw_to_gemm(c, layer), alpha, beta, **kwargs)
    return res, gemm_to_nchw(res.output, layer)


def random_operands(rng, wl):
    """Random A, B, C for a workload with N(0, 1) entries; bf16 inputs as rounded bit patterns."""
    a = rng.standard_normal((wl.M, wl.K)).astype(np.float32)
    b = rng.standard_normal((wl.b_rows, wl.b_cols)).astype(np.float32)
    c = rng.standard_normal((wl.M, wl.N)).astype(np.float32)
    if wl.sew_i == 16:
        a, b = numerics.f32_to_bf16(a), numerics.f32_to_bf16(b)
    return a, b, c
