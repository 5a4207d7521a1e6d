"""GEMM kernels as instruction generators.

C = alpha * A @ B + beta * C with A (M x K), B (K x N), C (M x N), fp32 output
and fp32 or bf16 inputs. Generators yield isa.Instr objects; the runner
executes and prices them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import isa

# scalar FP registers used by every kernel
F_ZERO, F_ALPHA, F_BETA, F_A = 0, 1, 2, 3
MASK_REG = 0


@dataclass(frozen=True)
class RowMajor:
    """Plain 2-D array: element (r, c) at base + (r*ld + c)*elem_bytes."""

    base: int
    ld: int
    elem_bytes: int

    def addr(self, r, c):
        return self.base + (r * self.ld + c) * self.elem_bytes

    def tile(self, r0, c0):
        return self.addr(r0, c0), self.ld * self.elem_bytes


@dataclass(frozen=True)
class TilePacked:
    """Array cut into tile_rows x tile_cols blocks, each stored contiguously row-major."""

    base: int
    tile_rows: int
    tile_cols: int
    tiles_per_row: int
    elem_bytes: int

    @property
    def tile_bytes(self):
        return self.tile_rows * self.tile_cols * self.elem_bytes

    def tile(self, r0, c0):
        ti, tj = r0 // self.tile_rows, c0 // self.tile_cols
        return self.base + (ti * self.tiles_per_row + tj) * self.tile_bytes, self.tile_cols * self.elem_bytes


@dataclass(frozen=True)
class BOperand:
    """How the kernel fetches B tiles.

    kind is the register tile kind ('b' or 'bt'); stored_nk says whether the
    storage is indexed (n, k) instead of (k, n); transposed selects the
    transposed tile load.
    """

    layout: object
    kind: str
    stored_nk: bool
    transposed: bool

    def tile(self, k0, n0):
        return self.layout.tile(n0, k0) if self.stored_nk else self.layout.tile(k0, n0)


def _blocks(total, tile, unroll):
    """Split [0, total) into blocks of up to `unroll` full tiles, then the tail tile.

    Yields (start_element, tile_count, granted_size); granted size is constant within a block.
    """
    full = total // tile
    for s in range(0, full, unroll):
        yield s * tile, min(unroll, full - s), tile
    if total % tile:
        yield full * tile, 1, total % tile


def tile_gemm_program(cfg, plan, wl, a_lay, b_op, c_lay, alpha, beta, elide_post=False):
    """Tiled GEMM on the matrix tile extension.

    Per block of um x un C tiles: clear accumulators, then for each K tile
    load um A tiles and, per B tile, issue um multiplies. The epilogue loads
    the old C tile, scales the accumulator by alpha and adds beta * C_old
    under the C-tile mask before storing. With elide_post, alpha=1 and beta=0
    skip straight to the store.
    """
    M, N, K, sew_i, sew_o = wl.M, wl.N, wl.K, wl.sew_i, wl.sew_o
    skip_post = elide_post and alpha == 1 and beta == 0
    code = isa.ttypeio_encode(sew_i, sew_o)
    max_m, max_n, max_k = isa.dim_maxima(cfg, sew_i, sew_o)
    op = "tfmul" if sew_i == sew_o else "tfwmul"
    um, un = plan.unroll_m, plan.unroll_n
    c_regs = [[1 + i * un + j for j in range(un)] for i in range(um)]
    a_regs = [1 + um * un + i for i in range(um)]
    b_reg = 1 + um * un + um
    elems_per_row = cfg.rlen_bits // sew_o

    yield isa.FMvImm(F_ZERO, 0.0)
    yield isa.FMvImm(F_ALPHA, alpha)
    yield isa.FMvImm(F_BETA, beta)
    granted = {"m": None, "n": None, "k": None}

    def set_dim(dim, size):
        if granted[dim] != size:
            granted[dim] = size
            return isa.Tss(dim, size, code)
        return None

    for m0, mcount, tm in _blocks(M, max_m, um):
        for n0, ncount, tn in _blocks(N, max_n, un):
            for ins in (set_dim("m", tm), set_dim("n", tn)):
                if ins is not None:
                    yield ins
            yield isa.Vsetvl(tm * elems_per_row, sew_o)
            yield isa.TvMask("c", MASK_REG)
            for i in range(mcount):
                for j in range(ncount):
                    yield isa.VBroadcast(c_regs[i][j], F_ZERO)
            for k0, _, tk in _blocks(K, max_k, 1):
                ins = set_dim("k", tk)
                if ins is not None:
                    yield ins
                for i in range(mcount):
                    addr, stride = a_lay.tile(m0 + i * max_m, k0)
                    yield isa.TileLoad("a", a_regs[i], addr, stride)
                for j in range(ncount):
                    addr, stride = b_op.tile(k0, n0 + j * max_n)
                    yield isa.TileLoad(b_op.kind, b_reg, addr, stride, b_op.transposed)
                    for i in range(mcount):
                        yield isa.TileMul(op, c_regs[i][j], a_regs[i], b_reg)
            for i in range(mcount):
                for j in range(ncount):
                    addr, stride = c_lay.tile(m0 + i * max_m, n0 + j * max_n)
                    creg = c_regs[i][j]
                    if skip_post:
                        yield isa.TileStoreC(creg, addr, stride)
                        continue
                    yield isa.TileLoad("c", b_reg, addr, stride)
                    yield isa.VFMulVF(creg, creg, F_ALPHA, masked=True)
                    yield isa.VFMaccVF(creg, F_BETA, b_reg, masked=True)
                    yield isa.TileStoreC(creg, addr, stride)


def vector_gemm_program(cfg, plan, wl, a_lay, b_lay, c_lay, alpha, beta, elide_post=False):
    """Outer-product GEMM on plain vectors.

    Each N slab of up to VLmax columns keeps `um` rows of C in registers.
    For every k one row of B is loaded and each C row accumulates
    A[i][k] * B[k][:] with a vector-scalar fused multiply-add.
    """
    M, N, K, sew_i = wl.M, wl.N, wl.K, wl.sew_i
    skip_post = elide_post and alpha == 1 and beta == 0
    vlmax = cfg.vlen_bits // 32
    um = plan.unroll_m
    b_reg = um
    widening = sew_i == 16
    a_fmt = "bf16" if widening else "fp32"
    fma = isa.VFWMaccVF if widening else isa.VFMaccVF

    yield isa.FMvImm(F_ZERO, 0.0)
    yield isa.FMvImm(F_ALPHA, alpha)
    yield isa.FMvImm(F_BETA, beta)
    for n0 in range(0, N, vlmax):
        yield isa.Vsetvl(min(vlmax, N - n0), 32)
        for m0 in range(0, M, um):
            rows = min(um, M - m0)
            for r in range(rows):
                yield isa.VBroadcast(r, F_ZERO)
            for k in range(K):
                yield isa.VLoad(b_reg, b_lay.addr(k, n0), sew_i)
                for r in range(rows):
                    yield isa.FLoad(F_A, a_lay.addr(m0 + r, k), a_fmt)
                    yield fma(r, F_A, b_reg, accumulate=True)
            for r in range(rows):
                addr = c_lay.addr(m0 + r, n0)
                if skip_post:
                    yield isa.VStore(r, addr, 32)
                    continue
                yield isa.VLoad(b_reg, addr, 32)
                yield isa.VFMulVF(r, r, F_ALPHA)
                yield isa.VFMaccVF(r, F_BETA, b_reg)
                yield isa.VStore(r, addr, 32)
