"""Functional semantics of the MTE instructions and the vector subset kernels use.

Each operation is a plain function over a Machine. The Instr subclasses at
the bottom wrap those functions as semantic instruction objects so kernels
can be emitted as instruction streams, executed, priced and dumped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import numerics
from .errors import (
    DecodeError,
    IllegalInstruction,
    IllegalState,
    MemoryFault,
    UnsupportedTypeCombination,
)
from .machine import POISON_BYTE, Policy, TType
from .numerics import ElementType

MAX_DIM = (1 << 12) - 1

# 3-bit ttypeio immediate -> (SEW_i, SEW_o); code 7 is reserved
TTYPEIO = {
    0: (32, 32),
    1: (64, 64),
    2: (16, 16),
    3: (8, 8),
    4: (16, 32),
    5: (8, 32),
    6: (8, 16),
}
_TTYPEIO_CODE = {v: k for k, v in TTYPEIO.items()}


class TileKind(enum.Enum):
    A = "a"
    B = "b"
    C = "c"
    BT = "bt"


def ttypeio_decode(code):
    if code not in TTYPEIO:
        raise DecodeError(f"ttypeio immediate {code} is not defined")
    return TTYPEIO[code]


def ttypeio_encode(sew_i, sew_o):
    if sew_i > sew_o:
        raise UnsupportedTypeCombination(f"SEW_i={sew_i} wider than SEW_o={sew_o}")
    try:
        return _TTYPEIO_CODE[(sew_i, sew_o)]
    except KeyError:
        raise DecodeError(f"no ttypeio encoding for ({sew_i}, {sew_o})") from None


def dim_maxima(cfg, sew_i, sew_o):
    """Largest (M, N, K) the hardware grants for the given element widths."""
    if sew_i > sew_o:
        raise UnsupportedTypeCombination(f"SEW_i={sew_i} wider than SEW_o={sew_o}")
    rows = cfg.vlen_bits // cfg.rlen_bits
    if sew_i == sew_o:
        m, n = rows, cfg.rlen_bits // sew_o
        k = min(m, n)
    else:
        # B is held transposed, so K spans a whole row of narrow inputs
        m = rows
        n = min(rows, cfg.rlen_bits // sew_o)
        k = cfg.rlen_bits // sew_i
    return min(m, MAX_DIM), min(n, MAX_DIM), min(k, MAX_DIM)


def tss(dim, requested, ttypeio, csr, cfg):
    """Set the element types from ttypeio and grant min(requested, max) for dim."""
    dim = dim.lower()
    if dim not in ("m", "n", "k"):
        raise IllegalInstruction(f"unknown tile dimension {dim!r}")
    if requested < 0:
        raise IllegalInstruction("requested dimension must be non-negative")
    sew_i, sew_o = ttypeio_decode(ttypeio)
    maxima = dict(zip("mnk", dim_maxima(cfg, sew_i, sew_o)))
    csr.ttypei = TType(sew_i, TType(*csr.ttypei).policy)
    csr.ttypeo = TType(sew_o, TType(*csr.ttypeo).policy)
    # a type change can shrink the maxima of the other dimensions
    csr.tm = min(csr.tm, maxima["m"])
    csr.tn = min(csr.tn, maxima["n"])
    csr.tk = min(csr.tk, maxima["k"])
    granted = min(requested, maxima[dim])
    setattr(csr, "t" + dim, granted)
    return granted


def tile_shape(kind, csr):
    """(rows, cols, sew, policy) of the register tile for an operand kind."""
    ti, to = TType(*csr.ttypei), TType(*csr.ttypeo)
    if kind is TileKind.A:
        return csr.tm, csr.tk, ti.sew, ti.policy
    if kind is TileKind.B:
        return csr.tk, csr.tn, ti.sew, ti.policy
    if kind is TileKind.C:
        return csr.tm, csr.tn, to.sew, to.policy
    return csr.tn, csr.tk, ti.sew, ti.policy


def _require_tile_state(m):
    if not m.tile_configured:
        raise IllegalState("MTE geometry is not configured; issue tss first")


def _check_geometry(m):
    sew_i, sew_o = TType(*m.csr.ttypei).sew, TType(*m.csr.ttypeo).sew
    mm, nn, kk = dim_maxima(m.cfg, sew_i, sew_o)
    c = m.csr
    if c.tm > mm or c.tn > nn or c.tk > kk:
        raise IllegalState(
            f"geometry ({c.tm},{c.tn},{c.tk}) exceeds maxima ({mm},{nn},{kk})"
        )


def _bounds(m, offsets):
    if offsets.size and (offsets.min() < 0 or offsets.max() >= m.mem.size):
        raise MemoryFault(
            f"tile access [{int(offsets.min()):#x}, {int(offsets.max()):#x}] outside memory"
        )


def _fresh_register(m, reg, policy):
    if policy == Policy.AGNOSTIC:
        return np.full(m.cfg.vlenb, POISON_BYTE, dtype=np.uint8)
    return m.vrf.raw(reg).copy()


def tile_load(m, kind, vd, base, stride_bytes, transposed=False):
    """Move a rows x cols tile from memory into register vd.

    Row r comes from base + r*stride. The transposed form reads register
    element (r, c) from base + c*stride + r*SEW/8. A zero stride replicates
    one memory row (or column) across the whole tile.
    """
    _require_tile_state(m)
    kind = TileKind(kind)
    rows, cols, sew, policy = tile_shape(kind, m.csr)
    eb = sew // 8
    new = _fresh_register(m, vd, policy)
    if rows and cols:
        if transposed:
            offsets = (
                base
                + np.arange(cols, dtype=np.int64)[None, :, None] * stride_bytes
                + np.arange(rows, dtype=np.int64)[:, None, None] * eb
                + np.arange(eb, dtype=np.int64)[None, None, :]
            ).reshape(rows, cols * eb)
        else:
            offsets = (
                base
                + np.arange(rows, dtype=np.int64)[:, None] * stride_bytes
                + np.arange(cols * eb, dtype=np.int64)[None, :]
            )
        _bounds(m, offsets)
        new.reshape(m.cfg.rows_per_reg, m.cfg.rlenb)[:rows, :cols * eb] = m.mem.data[offsets]
    m.vrf.raw(vd)[:] = new


def tile_store_c(m, vs, base, stride_bytes, transposed=False):
    """Write the active tm x tn C tile of vs to memory; nothing else is touched."""
    _require_tile_state(m)
    rows, cols, sew, _ = tile_shape(TileKind.C, m.csr)
    if not rows or not cols:
        return
    eb = sew // 8
    tile = m.vrf.raw(vs).reshape(m.cfg.rows_per_reg, m.cfg.rlenb)[:rows, :cols * eb]
    r_idx = np.arange(rows, dtype=np.int64)
    c_idx = np.arange(cols, dtype=np.int64)
    b_idx = np.arange(eb, dtype=np.int64)
    if transposed:
        offsets = base + c_idx[None, :, None] * stride_bytes + r_idx[:, None, None] * eb + b_idx
    else:
        offsets = base + r_idx[:, None, None] * stride_bytes + c_idx[None, :, None] * eb + b_idx
    _bounds(m, offsets)
    data = tile.reshape(rows, cols, eb)
    # sequential writes keep degenerate (zero-stride) stores deterministic
    if transposed:
        for c in range(cols):
            m.mem.data[offsets[:, c, :]] = data[:, c, :]
    else:
        for r in range(rows):
            m.mem.data[offsets[r]] = data[r]


MMA_OPS = {
    # op: (float?, widening?)
    "tmul": (False, False),
    "tfmul": (True, False),
    "twmul": (False, True),
    "tfwmul": (True, True),
}


def mma_operand_types(op, csr):
    """Validate op against the CSR element types; returns (input, output) ElementTypes."""
    if op not in MMA_OPS:
        raise IllegalInstruction(f"unknown MMA op {op!r}")
    is_float, widening = MMA_OPS[op]
    sew_i, sew_o = TType(*csr.ttypei).sew, TType(*csr.ttypeo).sew
    if widening and not sew_i < sew_o:
        raise IllegalInstruction(f"{op} needs SEW_i < SEW_o, CSR has ({sew_i}, {sew_o})")
    if not widening and sew_i != sew_o:
        raise IllegalInstruction(f"{op} needs SEW_i == SEW_o, CSR has ({sew_i}, {sew_o})")
    cls = "float" if is_float else "int"
    try:
        ti, to = ElementType(sew_i, cls), ElementType(sew_o, cls)
    except IllegalInstruction as exc:
        raise IllegalInstruction(f"{op}: {exc}") from None
    if is_float and widening and not (sew_i == 16 and sew_o == 32):
        raise IllegalInstruction(f"{op} supports bf16 -> fp32 only")
    return ti, to


def read_mma_operands(m, op, vd, vs1, vs2):
    """A (tm x tk), B (tk x tn) and C (tm x tn) promoted to the accumulation domain."""
    ti, to = mma_operand_types(op, m.csr)
    widening = MMA_OPS[op][1]
    tm, tn, tk = m.csr.tm, m.csr.tn, m.csr.tk
    a = m.vrf.rows(vs1, ti.storage_dtype)[:tm, :tk].copy()
    if widening:
        b = m.vrf.rows(vs2, ti.storage_dtype)[:tn, :tk].T.copy()
    else:
        b = m.vrf.rows(vs2, ti.storage_dtype)[:tk, :tn].copy()
    c = m.vrf.rows(vd, to.storage_dtype)[:tm, :tn].copy()
    if ti.is_float and widening:
        a, b = numerics.bf16_to_f32(a), numerics.bf16_to_f32(b)
    return a, b, c, to


def write_c_tile(m, vd, c, to):
    """Store an updated tm x tn accumulator into vd honoring the output policy."""
    policy = TType(*m.csr.ttypeo).policy
    new = _fresh_register(m, vd, policy)
    tm, tn = c.shape
    new.view(to.storage_dtype).reshape(m.cfg.rows_per_reg, -1)[:tm, :tn] = c
    m.vrf.raw(vd)[:] = new


def tmul_family(m, op, vd, vs1, vs2):
    """C[i][j] += sum_k A[i][k] * B[k][j], k ascending, one fused step per k."""
    _require_tile_state(m)
    _check_geometry(m)
    for reg in (vd, vs1, vs2):
        m.vrf.check(reg)
    a, b, c, to = read_mma_operands(m, op, vd, vs1, vs2)
    for k in range(m.csr.tk):
        if to.is_float:
            c = numerics.fma_stored(a[:, k, None], b[None, k, :], c, to)
        else:
            c = numerics.int_mac(c, a[:, k, None], b[None, k, :], to.sew)
    write_c_tile(m, vd, c, to)


def tvmask(m, kind):
    """Mask over vlen/active_sew elements: set where the rank-2 element is inside the tile."""
    _require_tile_state(m)
    rows, cols, _, _ = tile_shape(TileKind(kind), m.csr)
    sew = m.vcsr.sew
    per_row = m.cfg.rlen_bits // sew
    e = np.arange(m.cfg.vlen_bits // sew)
    return ((e // per_row) < rows) & ((e % per_row) < cols)


def write_mask(m, vd, mask):
    bits = np.packbits(mask.astype(np.uint8), bitorder="little")
    m.vrf.raw(vd)[:bits.size] = bits


def read_mask(m, count, reg=0):
    raw = m.vrf.raw(reg)
    return np.unpackbits(raw, bitorder="little", count=count).astype(bool)


# -- vector subset ------------------------------------------------------------

_VECTOR_FLOAT = {32: np.float32, 64: np.float64}


def vsetvl(m, requested, sew):
    if sew not in (8, 16, 32, 64):
        raise IllegalInstruction(f"vsetvl: unsupported SEW {sew}")
    vl = min(int(requested), m.cfg.vlen_bits // sew)
    m.vcsr.vl, m.vcsr.sew = vl, sew
    return vl


def _float_view(m, reg):
    sew = m.vcsr.sew
    if sew not in _VECTOR_FLOAT:
        raise IllegalInstruction(f"floating-point vector op at SEW={sew}")
    return m.vrf.elements(reg, _VECTOR_FLOAT[sew])


def _active(m, masked):
    """Selector for the active elements: a slice when unmasked, else a boolean vector."""
    if not masked:
        return slice(0, m.vcsr.vl)
    n = m.cfg.vlen_bits // m.vcsr.sew
    active = np.arange(n) < m.vcsr.vl
    return active & read_mask(m, n)


def _fscalar(m, fs):
    value = m.fregs[fs]
    return np.float64(value) if m.vcsr.sew == 64 else np.float32(value)


def vbroadcast_scalar(m, vd, fs):
    dst = _float_view(m, vd)
    dst[:m.vcsr.vl] = _fscalar(m, fs)


def vfmul_vf(m, vd, vs2, fs, masked=False):
    src = _float_view(m, vs2).copy()
    active = _active(m, masked)
    dst = _float_view(m, vd)
    with np.errstate(all="ignore"):
        dst[active] = src[active] * _fscalar(m, fs)


def _fma_elements(m, a, b, c):
    etype = numerics.FP32 if m.vcsr.sew == 32 else numerics.FP64
    return numerics.fma_stored(a, b, c, etype)


def vfmacc_vf(m, vd, fs, vs2, masked=False):
    """vd[e] = fs * vs2[e] + vd[e] (fused) on active elements."""
    src = _float_view(m, vs2).copy()
    active = _active(m, masked)
    dst = _float_view(m, vd)
    dst[active] = _fma_elements(m, _fscalar(m, fs), src[active], dst[active])


def vfwmacc_vf(m, vd, fs, vs2, masked=False):
    """Widening form: fp32 vd[e] += fs * bf16 vs2[e]."""
    if m.vcsr.sew != 32:
        raise IllegalInstruction("vfwmacc.vf is modeled for bf16 -> fp32 only (SEW=32)")
    n = m.cfg.vlen_bits // 32
    src = numerics.bf16_to_f32(m.vrf.elements(vs2, np.uint16)[:n])
    active = _active(m, masked)
    dst = _float_view(m, vd)
    dst[active] = numerics.fma_f32(_fscalar(m, fs), src[active], dst[active])


def vfadd_vv(m, vd, vs1, vs2, masked=False):
    a = _float_view(m, vs1).copy()
    b = _float_view(m, vs2).copy()
    active = _active(m, masked)
    dst = _float_view(m, vd)
    with np.errstate(all="ignore"):
        dst[active] = a[active] + b[active]


def vle(m, vd, base, eew):
    nbytes = m.vcsr.vl * eew // 8
    m.vrf.raw(vd)[:nbytes] = m.mem.read(base, nbytes)


def vse(m, vs, base, eew):
    nbytes = m.vcsr.vl * eew // 8
    m.mem.write(base, m.vrf.raw(vs)[:nbytes])


# -- instruction objects ------------------------------------------------------

class Instr:
    """A semantic instruction. Subclasses are frozen dataclasses."""

    klass: ClassVar[str] = "scalar"
    # instructions whose only effect is on CSR state; replayed in dry runs
    configures: ClassVar[bool] = False

    @property
    def mnemonic(self):
        raise NotImplementedError

    def operand_text(self):
        return ""

    def vregs(self):
        return ()

    def execute(self, m):
        raise NotImplementedError

    def flops(self, m):
        return 0

    def __str__(self):
        ops = self.operand_text()
        return f"{self.mnemonic} {ops}" if ops else self.mnemonic


@dataclass(frozen=True, slots=True)
class Tss(Instr):
    dim: str
    requested: int
    ttypeio: int
    klass: ClassVar[str] = "config"
    configures: ClassVar[bool] = True

    @property
    def mnemonic(self):
        return "tss" + self.dim

    def operand_text(self):
        return f"{self.requested}, ttypeio={self.ttypeio}"

    def execute(self, m):
        tss(self.dim, self.requested, self.ttypeio, m.csr, m.cfg)
        m.tile_configured = True


@dataclass(frozen=True, slots=True)
class TileLoad(Instr):
    kind: str
    vd: int
    base: int
    stride: int
    transposed: bool = False
    klass: ClassVar[str] = "tile_load"

    @property
    def mnemonic(self):
        return ("ttl" if self.transposed else "tl") + self.kind

    def operand_text(self):
        return f"v{self.vd}, {self.base:#x}, {self.stride}"

    def vregs(self):
        return (self.vd,)

    def execute(self, m):
        tile_load(m, self.kind, self.vd, self.base, self.stride, self.transposed)


@dataclass(frozen=True, slots=True)
class TileStoreC(Instr):
    vs: int
    base: int
    stride: int
    transposed: bool = False
    klass: ClassVar[str] = "tile_store"

    @property
    def mnemonic(self):
        return "ttsc" if self.transposed else "tsc"

    def operand_text(self):
        return f"v{self.vs}, {self.base:#x}, {self.stride}"

    def vregs(self):
        return (self.vs,)

    def execute(self, m):
        tile_store_c(m, self.vs, self.base, self.stride, self.transposed)


@dataclass(frozen=True, slots=True)
class TileMul(Instr):
    op: str
    vd: int
    vs1: int
    vs2: int
    klass: ClassVar[str] = "mma"

    @property
    def mnemonic(self):
        return self.op

    def operand_text(self):
        return f"v{self.vd}, v{self.vs1}, v{self.vs2}"

    def vregs(self):
        return (self.vd, self.vs1, self.vs2)

    def execute(self, m):
        tmul_family(m, self.op, self.vd, self.vs1, self.vs2)

    def flops(self, m):
        return 2 * m.csr.tm * m.csr.tn * m.csr.tk


@dataclass(frozen=True, slots=True)
class TvMask(Instr):
    kind: str
    vd: int = 0
    klass: ClassVar[str] = "config"

    @property
    def mnemonic(self):
        return "tvmask" + self.kind

    def operand_text(self):
        return f"v{self.vd}"

    def vregs(self):
        return (self.vd,)

    def execute(self, m):
        write_mask(m, self.vd, tvmask(m, self.kind))


@dataclass(frozen=True, slots=True)
class Vsetvl(Instr):
    requested: int
    sew: int
    klass: ClassVar[str] = "config"
    configures: ClassVar[bool] = True

    @property
    def mnemonic(self):
        return "vsetvl"

    def operand_text(self):
        return f"{self.requested}, e{self.sew}"

    def execute(self, m):
        vsetvl(m, self.requested, self.sew)


@dataclass(frozen=True, slots=True)
class VBroadcast(Instr):
    vd: int
    fs: int
    klass: ClassVar[str] = "vector_arith"

    @property
    def mnemonic(self):
        return "vfmv.v.f"

    def operand_text(self):
        return f"v{self.vd}, f{self.fs}"

    def vregs(self):
        return (self.vd,)

    def execute(self, m):
        vbroadcast_scalar(m, self.vd, self.fs)


def _mask_suffix(masked):
    return ", v0.t" if masked else ""


@dataclass(frozen=True, slots=True)
class VFMulVF(Instr):
    vd: int
    vs2: int
    fs: int
    masked: bool = False
    klass: ClassVar[str] = "vector_arith"

    @property
    def mnemonic(self):
        return "vfmul.vf"

    def operand_text(self):
        return f"v{self.vd}, v{self.vs2}, f{self.fs}{_mask_suffix(self.masked)}"

    def vregs(self):
        return (self.vd, self.vs2) + ((0,) if self.masked else ())

    def execute(self, m):
        vfmul_vf(m, self.vd, self.vs2, self.fs, self.masked)


@dataclass(frozen=True, slots=True)
class VFMaccVF(Instr):
    vd: int
    fs: int
    vs2: int
    masked: bool = False
    # K-loop accumulation (counted as GEMM work) versus post-processing
    accumulate: bool = False
    klass: ClassVar[str] = "vector_arith"

    @property
    def mnemonic(self):
        return "vfmacc.vf"

    def operand_text(self):
        return f"v{self.vd}, f{self.fs}, v{self.vs2}{_mask_suffix(self.masked)}"

    def vregs(self):
        return (self.vd, self.vs2) + ((0,) if self.masked else ())

    def execute(self, m):
        vfmacc_vf(m, self.vd, self.fs, self.vs2, self.masked)

    def flops(self, m):
        return 2 * m.vcsr.vl if self.accumulate else 0


@dataclass(frozen=True, slots=True)
class VFWMaccVF(Instr):
    vd: int
    fs: int
    vs2: int
    masked: bool = False
    accumulate: bool = True
    klass: ClassVar[str] = "vector_arith"

    @property
    def mnemonic(self):
        return "vfwmacc.vf"

    def operand_text(self):
        return f"v{self.vd}, f{self.fs}, v{self.vs2}{_mask_suffix(self.masked)}"

    def vregs(self):
        return (self.vd, self.vs2) + ((0,) if self.masked else ())

    def execute(self, m):
        vfwmacc_vf(m, self.vd, self.fs, self.vs2, self.masked)

    def flops(self, m):
        return 2 * m.vcsr.vl if self.accumulate else 0


@dataclass(frozen=True, slots=True)
class VFAddVV(Instr):
    vd: int
    vs1: int
    vs2: int
    masked: bool = False
    klass: ClassVar[str] = "vector_arith"

    @property
    def mnemonic(self):
        return "vfadd.vv"

    def operand_text(self):
        return f"v{self.vd}, v{self.vs1}, v{self.vs2}{_mask_suffix(self.masked)}"

    def vregs(self):
        return (self.vd, self.vs1, self.vs2) + ((0,) if self.masked else ())

    def execute(self, m):
        vfadd_vv(m, self.vd, self.vs1, self.vs2, self.masked)


@dataclass(frozen=True, slots=True)
class VLoad(Instr):
    vd: int
    base: int
    eew: int = 32
    klass: ClassVar[str] = "vector_memory"

    @property
    def mnemonic(self):
        return f"vle{self.eew}.v"

    def operand_text(self):
        return f"v{self.vd}, {self.base:#x}"

    def vregs(self):
        return (self.vd,)

    def execute(self, m):
        vle(m, self.vd, self.base, self.eew)


@dataclass(frozen=True, slots=True)
class VStore(Instr):
    vs: int
    base: int
    eew: int = 32
    klass: ClassVar[str] = "vector_memory"

    @property
    def mnemonic(self):
        return f"vse{self.eew}.v"

    def operand_text(self):
        return f"v{self.vs}, {self.base:#x}"

    def vregs(self):
        return (self.vs,)

    def execute(self, m):
        vse(m, self.vs, self.base, self.eew)


@dataclass(frozen=True, slots=True)
class FLoad(Instr):
    """Scalar FP load; the bf16 form promotes exactly to fp32."""

    fd: int
    addr: int
    fmt: str = "fp32"
    klass: ClassVar[str] = "scalar"

    @property
    def mnemonic(self):
        return "flw" if self.fmt == "fp32" else "flh.bf16"

    def operand_text(self):
        return f"f{self.fd}, {self.addr:#x}"

    def execute(self, m):
        if self.fmt == "fp32":
            m.fregs[self.fd] = m.mem.load_array(self.addr, np.float32, 1)[0]
        else:
            m.fregs[self.fd] = numerics.bf16_to_f32(m.mem.load_array(self.addr, np.uint16, 1))[0]


@dataclass(frozen=True, slots=True)
class FMvImm(Instr):
    fd: int
    value: float
    klass: ClassVar[str] = "scalar"

    @property
    def mnemonic(self):
        return "fli.s"

    def operand_text(self):
        return f"f{self.fd}, {float(np.float32(self.value))!r}"

    def execute(self, m):
        m.fregs[self.fd] = np.float32(self.value)
