"""Reference results computed without the simulator.

The fused multiply-add here takes a different route from numerics.py: the
binary64 sum is rounded once more to the target format and the rare double
rounding case (binary64 result exactly halfway between two targets while the
true sum is not) is corrected from the sign of the exact TwoSum error. The
scalar path rounds exact rationals directly and serves as a slow cross-check.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ShapeError

# (precision including hidden bit, minimum normal exponent, maximum exponent)
_FORMATS = {
    "fp32": (24, -126, 127),
    "bf16": (8, -126, 127),
    "fp64": (53, -1022, 1023),
}


# -- scalar exact rounding -----------------------------------------------------

def round_fraction(x, fmt="fp32"):
    """Round an exact rational to the nearest value of fmt, ties to even. Returns a float."""
    prec, emin, emax = _FORMATS[fmt]
    x = Fraction(x)
    if x == 0:
        return 0.0
    sign = -1.0 if x < 0 else 1.0
    mag = abs(x)
    # floor(log2(mag))
    e = mag.numerator.bit_length() - mag.denominator.bit_length()
    if Fraction(2) ** e > mag:
        e -= 1
    e = max(e, emin)
    quantum = Fraction(2) ** (e - prec + 1)
    q = mag / quantum
    n = q.numerator // q.denominator
    rem = q - n
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and n % 2 == 1):
        n += 1
    value = n * quantum
    if value >= Fraction(2) ** (emax + 1):
        return sign * float("inf")
    return sign * float(value)


def scalar_fma(a, b, c, fmt="fp32"):
    """Exact a*b + c rounded once to fmt. Inputs are Python floats already in fmt."""
    if not all(np.isfinite(v) for v in (a, b, c)):
        with np.errstate(invalid="ignore"):
            return float(np.float64(a) * np.float64(b) + np.float64(c))
    exact = Fraction(a) * Fraction(b) + Fraction(c)
    if exact == 0:
        prod_neg = (a == 0 or b == 0) and (np.signbit(a) != np.signbit(b))
        return -0.0 if prod_neg and c == 0 and np.signbit(c) else 0.0
    return round_fraction(exact, fmt)


# -- vectorized fp32 fused multiply-add ------------------------------------------

def oracle_fma_f32(a, b, c):
    """fp32 fused a*b + c, elementwise."""
    with np.errstate(invalid="ignore", over="ignore"):
        a, b, c = np.broadcast_arrays(
            np.asarray(a, np.float32).astype(np.float64),
            np.asarray(b, np.float32).astype(np.float64),
            np.asarray(c, np.float32).astype(np.float64),
        )
        shape = a.shape
        a, b, c = (np.atleast_1d(v) for v in (a, b, c))
        p = a * b  # exact: 24 + 24 bits fit in 53
        s = p + c
        z = s - p
        err = (p - (s - z)) + (c - z)
        r = s.astype(np.float32)
    r = np.array(r, copy=True)
    # s lies exactly halfway between r and its other neighbour and err breaks the tie
    rd = r.astype(np.float64)
    inexact = np.isfinite(s) & np.isfinite(rd) & (err != 0) & (rd != s)
    if inexact.any():
        idx = np.nonzero(inexact)
        toward_s = np.where(s[idx] > rd[idx], np.float32(np.inf), np.float32(-np.inf))
        other = np.nextafter(r[idx], toward_s)
        mid = (rd[idx] + other.astype(np.float64)) / 2
        tie = mid == s[idx]
        if tie.any():
            # true value is s + err; round toward the side err points to
            want_other = np.sign(err[idx]) == np.sign(s[idx] - rd[idx])
            fixed = np.where(tie & want_other, other, r[idx])
            r[idx] = fixed
    return r.reshape(shape)


# -- GEMM -------------------------------------------------------------------------

def _as_f32_inputs(x, sew):
    x = np.asarray(x)
    if sew == 16:
        return (x.astype(np.uint16).astype(np.uint32) << np.uint32(16)).view(np.float32)
    return x.astype(np.float32)


def oracle_gemm(a, b, c, alpha=1.0, beta=0.0, sew_i=32, sew_o=32, order="k_ascending"):
    """alpha*(A@B) + beta*C as computed by the tiled kernels, in fp32.

    The product is accumulated k-ascending, one fused step per k, starting
    from zero. Then out = fma(beta, C, fl(alpha * acc)). bf16 inputs (sew_i=16)
    arrive as uint16 bit patterns and are promoted exactly.
    """
    if order != "k_ascending":
        raise ValueError(f"unsupported accumulation order {order!r}")
    if sew_o != 32:
        raise ShapeError("the GEMM oracle covers fp32 outputs")
    a = _as_f32_inputs(a, sew_i)
    b = _as_f32_inputs(b, sew_i)
    c = np.asarray(c, np.float32)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    if c.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"C has shape {c.shape}, expected {(a.shape[0], b.shape[1])}")
    acc = np.zeros(c.shape, np.float32)
    for k in range(a.shape[1]):
        acc = oracle_fma_f32(a[:, k, None], b[None, k, :], acc)
    scaled = (acc * np.float32(alpha)).astype(np.float32)
    return oracle_fma_f32(np.float32(beta), c, scaled)


def oracle_gemm_scalar(a, b, c, alpha=1.0, beta=0.0, sew_i=32):
    """Same contract as oracle_gemm with one exact rational rounding per step."""
    a = _as_f32_inputs(a, sew_i)
    b = _as_f32_inputs(b, sew_i)
    c = np.asarray(c, np.float32)
    m, kk = a.shape
    n = b.shape[1]
    out = np.empty((m, n), np.float32)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc = scalar_fma(float(a[i, k]), float(b[k, j]), acc)
            scaled = round_fraction(Fraction(acc) * Fraction(float(np.float32(alpha))))
            out[i, j] = scalar_fma(float(np.float32(beta)), float(c[i, j]), scaled)
    return out


def oracle_tile_mma(a, b, c, fmt):
    """One tile multiply C += A@B, k-ascending, each step rounded to fmt.

    Float inputs are given as Python-float-convertible values already in fmt
    (bf16 callers pass promoted values). Integer formats 'intN' wrap.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c)
    m, kk = a.shape
    n = b.shape[1]
    if fmt.startswith("int"):
        bits = int(fmt[3:])
        out = np.empty((m, n), dtype=object)
        for i in range(m):
            for j in range(n):
                v = int(c[i, j]) + sum(int(a[i, k]) * int(b[k, j]) for k in range(kk))
                v &= (1 << bits) - 1
                out[i, j] = v - (1 << bits) if v >> (bits - 1) else v
        return out
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = float(c[i, j])
            for k in range(kk):
                acc = scalar_fma(float(a[i, k]), float(b[k, j]), acc, fmt)
            out[i, j] = acc
    return out


# -- convolution ----------------------------------------------------------------------

def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def oracle_conv(layer, x, w, c=None, alpha=1.0, beta=0.0):
    """Direct NCHW x OIHW convolution with the kernels' rounding contract.

    Geometry comes from a ConvLayer. Reduction runs over (ic, kh, kw) in
    lexicographic order; padded input positions take part as explicit zeros.
    c (default zeros) and the result are NCHW.
    """
    x = np.asarray(x, np.float32)
    w = np.asarray(w, np.float32)
    mb, ic, ih, iw = layer.minibatch, layer.in_channels, layer.in_h, layer.in_w
    oc, kh, kw = layer.out_channels, layer.kernel_h, layer.kernel_w
    if x.shape != (mb, ic, ih, iw):
        raise ShapeError(f"input has shape {x.shape}, expected {(mb, ic, ih, iw)}")
    if w.shape != (oc, ic, kh, kw):
        raise ShapeError(f"weights have shape {w.shape}, expected {(oc, ic, kh, kw)}")
    sh, sw = layer.stride_h, layer.stride_w
    ph, pw = layer.pad_h, layer.pad_w
    oh = conv_output_size(ih, kh, sh, ph)
    ow = conv_output_size(iw, kw, sw, pw)
    c = np.zeros((mb, oc, oh, ow), np.float32) if c is None else np.asarray(c, np.float32)
    if c.shape != (mb, oc, oh, ow):
        raise ShapeError(f"C has shape {c.shape}, expected {(mb, oc, oh, ow)}")
    xp = np.zeros((mb, ic, ih + 2 * ph, iw + 2 * pw), np.float32)
    xp[:, :, ph:ph + ih, pw:pw + iw] = x
    acc = np.zeros((mb, oc, oh, ow), np.float32)
    rows = np.arange(oh) * sh
    cols = np.arange(ow) * sw
    for ci in range(ic):
        for dy in range(kh):
            for dx in range(kw):
                patch = xp[:, ci][:, rows + dy][:, :, cols + dx]  # (mb, oh, ow)
                acc = oracle_fma_f32(
                    patch[:, None, :, :], w[None, :, ci, dy, dx, None, None], acc
                )
    scaled = (acc * np.float32(alpha)).astype(np.float32)
    return oracle_fma_f32(np.float32(beta), c, scaled)


# -- memory footprints -------------------------------------------------------------------

def tile_footprint(base, stride, rows, cols, elem_bytes, transposed=False):
    """Byte addresses a strided tile access touches, by explicit enumeration."""
    addrs = set()
    for r in range(rows):
        for col in range(cols):
            if transposed:
                start = base + col * stride + r * elem_bytes
            else:
                start = base + r * stride + col * elem_bytes
            addrs.update(range(start, start + elem_bytes))
    return addrs


# -- golden files ----------------------------------------------------------------------------

def _hex_row(values):
    return " ".join(f"{int(v):08x}" for v in np.asarray(values, np.float32).view(np.uint32))


def write_golden(path, a, b, c, alpha, beta, expected):
    """Text format: header 'M N K', then alpha/beta, A, B, C, expected rows as fp32 hex."""
    m, k = a.shape
    n = b.shape[1]
    lines = [f"{m} {n} {k}", _hex_row([alpha, beta])]
    for mat in (a, b, c, expected):
        lines.extend(_hex_row(row) for row in mat)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_golden(path):
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    m, n, k = (int(v) for v in lines[0])

    def mat(start, r):
        rows = [[int(h, 16) for h in ln] for ln in lines[start:start + r]]
        return np.array(rows, dtype=np.uint32).view(np.float32)

    alpha, beta = mat(1, 1)[0]
    pos = 2
    a = mat(pos, m)
    pos += m
    b = mat(pos, k)
    pos += k
    c = mat(pos, m)
    pos += m
    expected = mat(pos, m)
    return a, b, c, float(alpha), float(beta), expected
