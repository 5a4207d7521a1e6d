"""Workload descriptions: GEMMs, convolutions lowered to GEMM, and suite files.

Suite files are line oriented. Blank lines and '#' comments are ignored;
every other line is a record type followed by key=value fields:

    gemm name=proj M=32 N=512 K=512 [sew_i=32] [sew_o=32] [layout=row_major|tiled]
         [b_transposed=0|1] [lda=..] [ldb=..] [ldc=..]
    conv name=res2a minibatch=1 in_channels=64 out_channels=64 in_h=56 in_w=56
         kernel_h=1 kernel_w=1 [stride_h=1] [stride_w=1] [pad_h=0] [pad_w=0] [sew_i=32]

Leading dimensions are in elements. b_transposed=1 means B is stored N x K.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import ParseError, WorkloadError

# category label -> inclusive range of N (or OC); the last one is open-ended
CATEGORIES = (
    ("I", 1, 32),
    ("II", 33, 64),
    ("III", 65, 128),
    ("IV", 129, 256),
    ("V", 257, 512),
    ("VI", 513, None),
)
CATEGORY_ORDER = tuple(c[0] for c in CATEGORIES)
LAYOUTS = ("row_major", "tiled")
BUNDLED_SUITE = "dnn_suite.txt"


def category(n):
    if n < 1:
        raise WorkloadError(f"N must be positive, got {n}")
    for label, lo, hi in CATEGORIES:
        if n >= lo and (hi is None or n <= hi):
            return label
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class GemmWorkload:
    """C = alpha*A@B + beta*C with A (M x K), B (K x N), C (M x N).

    sew_i is 32 (fp32) or 16 (bf16); outputs are fp32. layout='tiled' means
    A and B are handed to tile kernels pre-packed into tile-sized blocks.
    """

    M: int
    N: int
    K: int
    sew_i: int = 32
    sew_o: int = 32
    layout: str = "row_major"
    lda: int | None = None
    ldb: int | None = None
    ldc: int | None = None
    b_transposed: bool = False
    name: str = "gemm"

    def __post_init__(self):
        for dim in ("M", "N", "K"):
            v = getattr(self, dim)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise WorkloadError(f"{self.name}: {dim} must be a positive integer, got {v!r}")
        if self.sew_o != 32:
            raise WorkloadError(f"{self.name}: GEMM kernels produce fp32 output (sew_o=32)")
        if self.sew_i not in (16, 32):
            raise WorkloadError(f"{self.name}: inputs must be fp32 or bf16 (sew_i 32 or 16)")
        if self.layout not in LAYOUTS:
            raise WorkloadError(f"{self.name}: layout must be one of {LAYOUTS}")
        for name, ld, minimum in (("lda", self.lda, self.K), ("ldb", self.ldb, self.b_cols),
                                  ("ldc", self.ldc, self.N)):
            if ld is not None and ld < minimum:
                raise WorkloadError(f"{self.name}: {name}={ld} is below the row length {minimum}")

    @property
    def b_rows(self):
        return self.N if self.b_transposed else self.K

    @property
    def b_cols(self):
        return self.K if self.b_transposed else self.N

    @property
    def a_ld(self):
        return self.lda or self.K

    @property
    def b_ld(self):
        return self.ldb or self.b_cols

    @property
    def c_ld(self):
        return self.ldc or self.N

    @property
    def category(self):
        return category(self.N)

    @property
    def flops(self):
        return 2 * self.M * self.N * self.K


@dataclass(frozen=True)
class ConvLayer:
    minibatch: int
    in_channels: int
    out_channels: int
    in_h: int
    in_w: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    name: str = "conv"

    def __post_init__(self):
        for f in ("minibatch", "in_channels", "out_channels", "in_h", "in_w",
                  "kernel_h", "kernel_w", "pad_h", "pad_w"):
            if getattr(self, f) < 0:
                raise WorkloadError(f"{self.name}: {f} must be non-negative")
        if self.stride_h < 1 or self.stride_w < 1:
            raise WorkloadError(f"{self.name}: strides must be >= 1")

    @property
    def out_h(self):
        return (self.in_h + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1

    @property
    def out_w(self):
        return (self.in_w + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1

    @property
    def category(self):
        return category(self.out_channels)


def lower_conv(layer, sew_i=32):
    """Direct convolution as GEMM: M = MB*OH*OW, N = OC, K = IC*KH*KW.

    The OIHW weights serve in place as B stored N x K.
    """
    if layer.out_h < 1 or layer.out_w < 1:
        raise WorkloadError(f"{layer.name}: output size {layer.out_h}x{layer.out_w} is not positive")
    m = layer.minibatch * layer.out_h * layer.out_w
    k = layer.in_channels * layer.kernel_h * layer.kernel_w
    if m < 1 or k < 1 or layer.out_channels < 1:
        raise WorkloadError(f"{layer.name}: lowered GEMM ({m}, {layer.out_channels}, {k}) is empty")
    return GemmWorkload(m, layer.out_channels, k, sew_i=sew_i, b_transposed=True, name=layer.name)


def im2col(x, layer):
    """NCHW input -> (MB*OH*OW, IC*KH*KW) patch matrix; padding becomes zeros.

    Row index is (mb*OH + oh)*OW + ow, column index (ic*KH + kh)*KW + kw.
    """
    x = np.asarray(x)
    expect = (layer.minibatch, layer.in_channels, layer.in_h, layer.in_w)
    if x.shape != expect:
        raise WorkloadError(f"input has shape {x.shape}, layer expects {expect}")
    ph, pw = layer.pad_h, layer.pad_w
    xp = np.zeros((x.shape[0], x.shape[1], layer.in_h + 2 * ph, layer.in_w + 2 * pw), x.dtype)
    xp[:, :, ph:ph + layer.in_h, pw:pw + layer.in_w] = x
    rows = (np.arange(layer.out_h) * layer.stride_h)[:, None] + np.arange(layer.kernel_h)[None, :]
    cols = (np.arange(layer.out_w) * layer.stride_w)[:, None] + np.arange(layer.kernel_w)[None, :]
    # advanced indices give patches[mb, ic, oh, kh, ow, kw]
    patches = xp[:, :, rows[:, :, None, None], cols[None, None, :, :]]
    patches = patches.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(patches.reshape(layer.minibatch * layer.out_h * layer.out_w, -1))


def weights_as_b(w, layer):
    """OIHW weights viewed as the N x K matrix of the lowered GEMM."""
    return np.ascontiguousarray(np.asarray(w).reshape(layer.out_channels, -1))


def nchw_to_gemm(c, layer):
    return np.ascontiguousarray(np.asarray(c).transpose(0, 2, 3, 1).reshape(-1, layer.out_channels))


def gemm_to_nchw(cmat, layer):
    shape = (layer.minibatch, layer.out_h, layer.out_w, layer.out_channels)
    return np.ascontiguousarray(np.asarray(cmat).reshape(shape).transpose(0, 3, 1, 2))


def transformer_suite(d_model=512, heads=8, query_len=16, ff_hidden=2048):
    """GEMMs of one encoder layer; attention GEMMs are per head."""
    if heads < 1 or d_model % heads:
        raise WorkloadError(f"d_model={d_model} is not divisible by heads={heads}")
    d_head = d_model // heads
    q = query_len
    tag = f"d{d_model}_q{q}"
    return [
        GemmWorkload(q, d_model, d_model, name=f"q_proj_{tag}"),
        GemmWorkload(q, d_model, d_model, name=f"k_proj_{tag}"),
        GemmWorkload(q, d_model, d_model, name=f"v_proj_{tag}"),
        GemmWorkload(q, q, d_head, name=f"attn_scores_{tag}"),
        GemmWorkload(q, d_head, q, name=f"attn_context_{tag}"),
        GemmWorkload(q, d_model, d_model, name=f"out_proj_{tag}"),
        GemmWorkload(q, ff_hidden, d_model, name=f"ff_up_{tag}"),
        GemmWorkload(q, d_model, ff_hidden, name=f"ff_down_{tag}"),
    ]


# -- suite files -----------------------------------------------------------------

class SuiteEntry(NamedTuple):
    name: str
    workload: object  # GemmWorkload or ConvLayer
    category: str
    sew_i: int = 32  # input width used when a conv entry is lowered

    @property
    def gemm(self):
        w = self.workload
        return w if isinstance(w, GemmWorkload) else lower_conv(w, self.sew_i)


def _flag(raw):
    if raw in ("0", "1", "true", "false"):
        return raw in ("1", "true")
    raise ValueError(raw)


_flag.__name__ = "flag"

_GEMM_FIELDS = {"name": str, "M": int, "N": int, "K": int, "sew_i": int, "sew_o": int,
                "layout": str, "b_transposed": _flag, "lda": int, "ldb": int, "ldc": int}
_GEMM_REQUIRED = ("name", "M", "N", "K")
_CONV_FIELDS = {"name": str, "minibatch": int, "in_channels": int, "out_channels": int,
                "in_h": int, "in_w": int, "kernel_h": int, "kernel_w": int, "stride_h": int,
                "stride_w": int, "pad_h": int, "pad_w": int, "sew_i": int}
_CONV_REQUIRED = ("name", "minibatch", "in_channels", "out_channels", "in_h", "in_w",
                  "kernel_h", "kernel_w")


def _fields(tokens, schema, required, lineno):
    values = {}
    for tok in tokens:
        key, sep, raw = tok.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {tok!r}", lineno)
        if key not in schema:
            raise ParseError("unknown field", lineno, key)
        if key in values:
            raise ParseError("duplicate field", lineno, key)
        try:
            values[key] = schema[key](raw)
        except ValueError:
            raise ParseError(f"cannot parse {raw!r} as {schema[key].__name__}", lineno, key) from None
    for key in required:
        if key not in values:
            raise ParseError("missing required field", lineno, key)
    return values


def parse_suite(text):
    """Parse suite text into SuiteEntry tuples in file order."""
    entries = []
    names = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not tokens:
            continue
        kind, rest = tokens[0], tokens[1:]
        if kind == "gemm":
            v = _fields(rest, _GEMM_FIELDS, _GEMM_REQUIRED, lineno)
            try:
                item = GemmWorkload(**v)
            except WorkloadError as exc:
                raise ParseError(str(exc), lineno) from None
            cat, sew_i = item.category, item.sew_i
        elif kind == "conv":
            v = _fields(rest, _CONV_FIELDS, _CONV_REQUIRED, lineno)
            sew_i = v.pop("sew_i", 32)
            try:
                item = ConvLayer(**v)
                lower_conv(item, sew_i)
            except WorkloadError as exc:
                raise ParseError(str(exc), lineno) from None
            cat = category(v["out_channels"])
        else:
            raise ParseError(f"unknown record type {kind!r}", lineno)
        name = v["name"]
        if name in names:
            raise ParseError(f"duplicate workload name {name!r}", lineno, "name")
        names.add(name)
        entries.append(SuiteEntry(name, item, cat, sew_i))
    return entries


def load_suite(path=None):
    """Parse a suite file; with no path, the bundled DNN suite."""
    if path is None:
        text = resources.files("mte_sim").joinpath("data").joinpath(BUNDLED_SUITE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_suite(text)
