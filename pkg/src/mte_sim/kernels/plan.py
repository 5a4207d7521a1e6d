"""Register-blocking (unroll) plans for the GEMM kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .. import isa
from ..errors import ConfigError


@dataclass(frozen=True)
class UnrollPlan:
    unroll_m: int
    unroll_n: int
    k_block: int
    # registers holding C, A and B tiles (tile kernels also reserve v0 for the mask)
    register_budget_used: int

    def __str__(self):
        return f"unroll_m={self.unroll_m} unroll_n={self.unroll_n} k_block={self.k_block}"


def search_unroll(num_regs, tiles_m, tiles_n):
    """Best (um, un) for a tile kernel with num_regs registers.

    A block holds um*un accumulators, um A tiles and one B tile, and v0 stays
    free for the mask. Among plans that fit, the one with the least operand
    traffic per multiply (smallest 1/um + 1/un) wins; ties go to more
    accumulators, then to the larger um, then to the larger un.
    """
    tiles_m, tiles_n = max(1, tiles_m), max(1, tiles_n)
    best = None
    for um in range(1, tiles_m + 1):
        for un in range(1, tiles_n + 1):
            if um * un + um + 1 > num_regs - 1:
                continue
            key = (1 / um + 1 / un, -um * un, -um, -un)
            if best is None or key < best[0]:
                best = (key, (um, un))
    if best is None:
        raise ConfigError(f"{num_regs} registers cannot hold a single tile block")
    return best[1]


def plan_unroll(profile, workload):
    cfg = profile.cfg
    if profile.kernel == "vector":
        # um accumulator rows plus one B row
        if cfg.num_arch_vregs < 2:
            raise ConfigError("vector kernel needs at least 2 registers")
        um = min(cfg.num_arch_vregs - 1, workload.M)
        return UnrollPlan(um, 1, 1, um + 1)
    max_m, max_n, max_k = isa.dim_maxima(cfg, workload.sew_i, workload.sew_o)
    um, un = search_unroll(cfg.num_arch_vregs, math.ceil(workload.M / max_m), math.ceil(workload.N / max_n))
    return UnrollPlan(um, un, max_k, um * un + um + 1)
