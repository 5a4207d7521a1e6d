"""Element formats and correctly rounded fused multiply-add.

fp32 and bf16 fused multiply-adds are evaluated in binary64. The product of
two fp32 (or bf16) values is exact in binary64; the sum is rounded to odd at
53 bits and then rounded to nearest-even at the target width, which yields
the correctly rounded result because 53 >= 24 + 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import IllegalInstruction

_F64_INF = np.float64(np.inf)
_F32_MAX = np.finfo(np.float32).max


@dataclass(frozen=True)
class ElementType:
    """Element width plus numeric class. Float at 16 bits means bf16."""

    sew: int
    numeric_class: str = "float"

    def __post_init__(self):
        if self.numeric_class not in ("float", "int"):
            raise IllegalInstruction(f"unknown numeric class {self.numeric_class!r}")
        valid = (16, 32, 64) if self.numeric_class == "float" else (8, 16, 32, 64)
        if self.sew not in valid:
            raise IllegalInstruction(
                f"{self.numeric_class} elements are not supported at SEW={self.sew}"
            )

    @property
    def is_float(self):
        return self.numeric_class == "float"

    @property
    def nbytes(self):
        return self.sew // 8

    @property
    def storage_dtype(self):
        """dtype used to view register/memory bytes holding these elements."""
        return storage_dtype(self.sew, self.is_float)

    @property
    def name(self):
        if self.is_float:
            return {16: "bf16", 32: "fp32", 64: "fp64"}[self.sew]
        return f"int{self.sew}"

    def __str__(self):
        return self.name


FP32 = ElementType(32, "float")
FP64 = ElementType(64, "float")
BF16 = ElementType(16, "float")
INT8 = ElementType(8, "int")
INT16 = ElementType(16, "int")
INT32 = ElementType(32, "int")
INT64 = ElementType(64, "int")

BY_NAME = {t.name: t for t in (FP32, FP64, BF16, INT8, INT16, INT32, INT64)}


def storage_dtype(sew, is_float):
    if is_float:
        return {16: np.uint16, 32: np.float32, 64: np.float64}[sew]
    return {8: np.int8, 16: np.int16, 32: np.int32, 64: np.int64}[sew]


# -- bf16 -------------------------------------------------------------------

def bf16_to_f32(bits):
    """Exact promotion of bf16 bit patterns to fp32."""
    bits = np.asarray(bits, dtype=np.uint16)
    return (bits.astype(np.uint32) << np.uint32(16)).view(np.float32)


def f32_to_bf16(values):
    """Round fp32 values to bf16 bit patterns, nearest-even. NaNs stay quiet NaNs."""
    x = np.ascontiguousarray(values, dtype=np.float32)
    u = x.view(np.uint32).astype(np.uint64)
    bias = ((u >> np.uint64(16)) & np.uint64(1)) + np.uint64(0x7FFF)
    out = ((u + bias) >> np.uint64(16)).astype(np.uint16)
    nan = np.isnan(x)
    if nan.any():
        out[nan] = ((u[nan] >> np.uint64(16)) | np.uint64(0x0040)).astype(np.uint16)
    return out


# -- round-to-odd building blocks ---------------------------------------------

def _two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def _sum_round_odd(p, c):
    """p + c rounded to odd at binary64 precision (p, c binary64)."""
    s, err = _two_sum(p, c)
    s = np.asarray(s)
    fix = (err != 0) & ((s.view(np.int64) & 1) == 0) & np.isfinite(s)
    if fix.any():
        s = s.copy()
        s[fix] = np.nextafter(s[fix], np.where(err[fix] > 0, _F64_INF, -_F64_INF))
    return s


def _f64_to_f32_round_odd(x):
    """binary64 -> binary32 rounded to odd; overflow saturates at the largest finite."""
    with np.errstate(over="ignore"):
        r = np.array(x.astype(np.float32), copy=True)
    back = r.astype(np.float64)
    finite = np.isfinite(x)
    overflow = finite & np.isinf(r)
    if overflow.any():
        r[overflow] = np.copysign(_F32_MAX, x[overflow]).astype(np.float32)
        back = r.astype(np.float64)
    fix = finite & (back != x) & ((r.view(np.uint32) & 1) == 0)
    if fix.any():
        toward = np.where(x[fix] > back[fix], np.inf, -np.inf).astype(np.float32)
        r[fix] = np.nextafter(r[fix], toward)
    return r


# -- fused multiply-add -----------------------------------------------------

def fma_f32(a, b, c):
    """Correctly rounded fp32 a*b + c, elementwise with broadcasting."""
    with np.errstate(invalid="ignore", over="ignore"):
        p = np.asarray(a, np.float32).astype(np.float64) * np.asarray(b, np.float32).astype(np.float64)
        s = _sum_round_odd(p, np.asarray(c, np.float32).astype(np.float64))
        return s.astype(np.float32)


def fma_bf16(a_bits, b_bits, c_bits):
    """Correctly rounded bf16 a*b + c on bit patterns."""
    with np.errstate(invalid="ignore", over="ignore"):
        a = bf16_to_f32(a_bits).astype(np.float64)
        b = bf16_to_f32(b_bits).astype(np.float64)
        c = bf16_to_f32(c_bits).astype(np.float64)
        a, b, c = np.broadcast_arrays(a, b, c)
        s = _sum_round_odd(a * b, c)
    return f32_to_bf16(_f64_to_f32_round_odd(s))


def _fma_f64_scalar(a, b, c):
    if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(c)):
        with np.errstate(invalid="ignore", over="ignore"):
            return np.float64(a) * np.float64(b) + np.float64(c)
    exact = Fraction(float(a)) * Fraction(float(b)) + Fraction(float(c))
    if exact == 0:
        # only (-0) + (-0) keeps the negative sign under round-to-nearest
        product_is_neg_zero = (a == 0 or b == 0) and np.signbit(a) != np.signbit(b)
        if product_is_neg_zero and c == 0 and np.signbit(c):
            return np.float64(-0.0)
        return np.float64(0.0)
    try:
        return np.float64(float(exact))
    except OverflowError:
        return np.float64(np.inf) if exact > 0 else np.float64(-np.inf)


def fma_f64(a, b, c):
    """Correctly rounded binary64 a*b + c via exact rational arithmetic (slow)."""
    a, b, c = np.broadcast_arrays(
        np.asarray(a, np.float64), np.asarray(b, np.float64), np.asarray(c, np.float64)
    )
    out = np.empty(a.shape, dtype=np.float64)
    for idx in np.ndindex(a.shape):
        out[idx] = _fma_f64_scalar(a[idx], b[idx], c[idx])
    return out


def fma_stored(a, b, c, etype):
    """Fused a*b + c on operands held in the storage dtype of a float ElementType."""
    if etype.sew == 32:
        return fma_f32(a, b, c)
    if etype.sew == 16:
        return fma_bf16(a, b, c)
    return fma_f64(a, b, c)


def int_mac(acc, a, b, sew_o):
    """acc + a*b in sew_o-bit two's complement with wraparound."""
    mask = np.uint64((1 << sew_o) - 1) if sew_o < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    ua = np.asarray(a).astype(np.int64).view(np.uint64)
    ub = np.asarray(b).astype(np.int64).view(np.uint64)
    uc = np.asarray(acc).astype(np.int64).view(np.uint64)
    r = (uc + ua * ub) & mask
    return _sign_interpret(r, sew_o)


def _sign_interpret(r, bits):
    dtype = storage_dtype(bits, False)
    if bits == 64:
        return r.view(np.int64)
    return r.astype(np.uint64).astype(np.dtype(f"uint{bits}")).view(dtype)
