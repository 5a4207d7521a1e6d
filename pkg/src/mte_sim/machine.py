"""Architectural state of an MTE-capable vector machine.

A Machine bundles the design-time MachineConfig with the mutable state:
vector register file, MTE CSR, vector CSR, a small scalar FP register file
and a flat byte-addressable memory.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, DecodeError, EncodingError, IllegalRegister, MemoryFault

DEFAULT_MEMORY_BYTES = 64 * 1024 * 1024
POISON_BYTE = 0xA5

CSR_FIELD_BITS = {"tm": 12, "tn": 12, "tk": 12, "ttypei": 4, "ttypeo": 4, "rlenb": 12}
_TM_SHIFT, _TN_SHIFT, _TK_SHIFT = 0, 12, 24
_TTYPEI_SHIFT, _TTYPEO_SHIFT, _RLENB_SHIFT, _RESERVED_SHIFT = 36, 40, 44, 56


class Backend(enum.Enum):
    VECTOR_LANES = "vector_lanes"
    SYSTOLIC = "systolic"


class Policy(enum.IntEnum):
    UNDISTURBED = 0
    AGNOSTIC = 1


_SEW_CODES = {8: 0, 16: 1, 32: 2, 64: 3}
_SEW_FROM_CODE = {v: k for k, v in _SEW_CODES.items()}


class TType(NamedTuple):
    """One ttype CSR nibble: element width plus inactive-element policy."""

    sew: int = 32
    policy: Policy = Policy.UNDISTURBED

    def encode(self):
        if self.sew not in _SEW_CODES:
            raise EncodingError(f"SEW {self.sew} has no ttype encoding")
        return _SEW_CODES[self.sew] | (int(self.policy) << 2)

    @classmethod
    def decode(cls, nibble):
        policy = (nibble >> 2) & 0x3
        if policy not in (0, 1):
            raise DecodeError(f"ttype policy code {policy} is reserved")
        return cls(_SEW_FROM_CODE[nibble & 0x3], Policy(policy))


def default_cost_table():
    # (static_latency, dynamic_latency) per instruction class
    return {
        "vector_arith": (20, 4),
        "vector_memory": (20, 8),
        "tile_load": (20, 8),
        "tile_store": (20, 8),
        "config": (4, 0),
        "scalar": (1, 0),
    }


@dataclass(frozen=True)
class MachineConfig:
    """Design-time constants of one simulated implementation."""

    vlen_bits: int = 8192
    rlen_bits: int = 512
    num_arch_vregs: int = 32
    cost_table: Mapping[str, tuple] = field(default_factory=default_cost_table, compare=False)
    flops_per_cycle_peak: int = 512
    backend: Backend = Backend.VECTOR_LANES
    num_vector_units: int = 4
    num_systolic_units: int = 1
    num_memory_units: int = 1
    issue_width: int = 6
    clock_ghz: float = 2.0

    def __post_init__(self):
        if self.rlen_bits <= 0 or self.rlen_bits % 64:
            raise ConfigError(f"rlen_bits={self.rlen_bits} must be a positive multiple of 64")
        if self.vlen_bits <= 0 or self.vlen_bits % self.rlen_bits:
            raise ConfigError(
                f"vlen_bits={self.vlen_bits} must be a positive multiple of rlen_bits={self.rlen_bits}"
            )
        if self.rlen_bits // 8 >= 1 << 12:
            raise ConfigError("rlenb does not fit the 12-bit CSR field")
        if self.num_arch_vregs < 2:
            raise ConfigError("at least two vector registers are required")
        if self.issue_width <= 0:
            raise ConfigError("issue width must be positive")

    @property
    def vlenb(self):
        return self.vlen_bits // 8

    @property
    def rlenb(self):
        return self.rlen_bits // 8

    @property
    def rows_per_reg(self):
        return self.vlen_bits // self.rlen_bits

    def cols_per_row(self, sew):
        return self.rlen_bits // sew

    def with_overrides(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


def env_overrides(cfg):
    """Apply MTE_SIM_ISSUE_WIDTH from the environment to a config."""
    width = os.environ.get("MTE_SIM_ISSUE_WIDTH")
    if width:
        cfg = cfg.with_overrides(issue_width=int(width))
    return cfg


def env_memory_bytes(default=DEFAULT_MEMORY_BYTES):
    value = os.environ.get("MTE_SIM_MEMORY_BYTES")
    return int(value) if value else default


@dataclass
class MteCsr:
    """The 64-bit MTE control/status register, unpacked."""

    tm: int = 0
    tn: int = 0
    tk: int = 0
    ttypei: TType = TType()
    ttypeo: TType = TType()
    rlenb: int = 64

    def pack(self):
        return csr_pack(self)

    @classmethod
    def unpack(cls, word):
        return csr_unpack(word)

    def copy(self):
        return MteCsr(self.tm, self.tn, self.tk, self.ttypei, self.ttypeo, self.rlenb)


def csr_pack(csr):
    """Pack an MteCsr into its 64-bit word.

    Layout: [11:0] tm, [23:12] tn, [35:24] tk, [39:36] ttypei, [43:40] ttypeo,
    [55:44] rlenb, [63:56] reserved (zero).
    """
    for name in ("tm", "tn", "tk", "rlenb"):
        value = getattr(csr, name)
        if not 0 <= value < (1 << CSR_FIELD_BITS[name]):
            raise EncodingError(f"{name}={value} does not fit in {CSR_FIELD_BITS[name]} bits")
    return (
        csr.tm << _TM_SHIFT
        | csr.tn << _TN_SHIFT
        | csr.tk << _TK_SHIFT
        | TType(*csr.ttypei).encode() << _TTYPEI_SHIFT
        | TType(*csr.ttypeo).encode() << _TTYPEO_SHIFT
        | csr.rlenb << _RLENB_SHIFT
    )


def csr_unpack(word):
    if not 0 <= word < (1 << 64):
        raise DecodeError(f"CSR word {word:#x} is not a 64-bit value")
    if word >> _RESERVED_SHIFT:
        raise DecodeError(f"reserved CSR bits set in {word:#018x}")
    return MteCsr(
        tm=word >> _TM_SHIFT & 0xFFF,
        tn=word >> _TN_SHIFT & 0xFFF,
        tk=word >> _TK_SHIFT & 0xFFF,
        ttypei=TType.decode(word >> _TTYPEI_SHIFT & 0xF),
        ttypeo=TType.decode(word >> _TTYPEO_SHIFT & 0xF),
        rlenb=word >> _RLENB_SHIFT & 0xFFF,
    )


@dataclass
class VectorCsr:
    vl: int = 0
    sew: int = 32


class VectorRegisterFile:
    """num_arch_vregs registers of vlen_bits each, stored as a uint8 matrix."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.regs = np.zeros((cfg.num_arch_vregs, cfg.vlenb), dtype=np.uint8)

    def check(self, reg):
        if not 0 <= reg < self.cfg.num_arch_vregs:
            raise IllegalRegister(
                f"v{reg} is outside the {self.cfg.num_arch_vregs}-register file"
            )

    def raw(self, reg):
        """Writable byte view of one register."""
        self.check(reg)
        return self.regs[reg]

    def elements(self, reg, dtype):
        return self.raw(reg).view(dtype)

    def rows(self, reg, dtype):
        """Rank-2 view: VLEN/RLEN rows by RLEN/SEW elements."""
        return self.elements(reg, dtype).reshape(self.cfg.rows_per_reg, -1)


def reg_read_row(rf, reg, row, cfg):
    """Bits [row*RLEN, (row+1)*RLEN) of a register, as RLEN/8 bytes."""
    if not 0 <= row < cfg.rows_per_reg:
        raise IndexError(f"row {row} outside 0..{cfg.rows_per_reg - 1}")
    return rf.raw(reg)[row * cfg.rlenb:(row + 1) * cfg.rlenb].copy()


def reg_write_row(rf, reg, row, data, cfg):
    if not 0 <= row < cfg.rows_per_reg:
        raise IndexError(f"row {row} outside 0..{cfg.rows_per_reg - 1}")
    data = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    if data.size != cfg.rlenb:
        raise ValueError(f"row data must be {cfg.rlenb} bytes, got {data.size}")
    rf.raw(reg)[row * cfg.rlenb:(row + 1) * cfg.rlenb] = data.view(np.uint8)


class FlatMemory:
    """Byte-addressable memory with bounds-checked access and a bump allocator."""

    def __init__(self, size=DEFAULT_MEMORY_BYTES):
        self.size = int(size)
        self.data = np.zeros(self.size, dtype=np.uint8)
        self._next = 0

    def _check(self, lo, hi):
        if lo < 0 or hi > self.size:
            raise MemoryFault(f"access [{lo:#x}, {hi:#x}) outside memory of {self.size:#x} bytes")

    def read(self, addr, nbytes):
        self._check(addr, addr + nbytes)
        return self.data[addr:addr + nbytes].copy()

    def write(self, addr, payload):
        payload = np.asarray(payload).reshape(-1).view(np.uint8)
        self._check(addr, addr + payload.size)
        self.data[addr:addr + payload.size] = payload

    def alloc(self, nbytes, align=64):
        addr = -(-self._next // align) * align
        self._check(addr, addr + nbytes)
        self._next = addr + nbytes
        return addr

    def store_array(self, array, align=64):
        """Allocate space for an array and copy its bytes in; returns the address."""
        array = np.ascontiguousarray(array)
        addr = self.alloc(array.nbytes, align)
        self.write(addr, array)
        return addr

    def load_array(self, addr, dtype, count):
        dtype = np.dtype(dtype)
        return self.read(addr, count * dtype.itemsize).view(dtype)


class Machine:
    """One simulated machine instance. Not thread-safe; use one per workload."""

    def __init__(self, cfg=None, memory_bytes=None):
        self.cfg = cfg or MachineConfig()
        self.vrf = VectorRegisterFile(self.cfg)
        self.mem = FlatMemory(env_memory_bytes() if memory_bytes is None else memory_bytes)
        self.csr = MteCsr(rlenb=self.cfg.rlenb)
        self.vcsr = VectorCsr()
        self.fregs = np.zeros(32, dtype=np.float32)
        # set by the first tss; tile instructions before that are illegal
        self.tile_configured = False

    def execute(self, instr):
        instr.execute(self)

    def run(self, program):
        for instr in program:
            instr.execute(self)
