"""Micro-architecture: MMA decomposition onto vector lanes and the latency model.

On a vector-lane back end one tile multiply becomes tk cvfma steps. Step k
broadcasts lane (k mod lanes) of each A row, multiplies it with row k of B
(or column k of a transposed B) and accumulates into C. The length of the
step is tm*RLEN bits and an implicit per-row mask keeps columns below tn.

The cost model prices each retired instruction with a (static, dynamic)
latency pair. Static latency is spread over the front end at issue_width
per cycle. Dynamic latency occupies one functional unit, picked greedily
as the least loaded unit of the right kind. A run takes as long as the
busiest of those resources.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import isa, numerics
from .errors import ConfigError
from .machine import Backend, TType

UNIT_FOR_CLASS = {
    "vector_arith": "vpu",
    "vector_memory": "mem",
    "tile_load": "mem",
    "tile_store": "mem",
    "config": None,
    "scalar": None,
}


@dataclass(frozen=True)
class CvfmaStep:
    k: int
    source_lane: int
    effective_vl_bits: int
    implicit_mask_n: int


def lanes_per_row(cfg, sew_i):
    return cfg.rlen_bits // sew_i


def decompose_mma(csr, cfg):
    """The cvfma steps a vector-lane back end issues for one tile multiply."""
    sew_i = TType(*csr.ttypei).sew
    lanes = lanes_per_row(cfg, sew_i)
    return [
        CvfmaStep(k, k % lanes, csr.tm * cfg.rlen_bits, csr.tn)
        for k in range(csr.tk)
    ]


def execute_cvfma_sequence(m, op, vd, vs1, vs2, steps, software_mask=None):
    """Run cvfma steps on the machine; the result must match the tile multiply.

    software_mask is an optional boolean vector over the output elements of
    vd (rank-1 order, SEW_o wide); it is ANDed with the implicit mask.
    """
    ti, to = isa.mma_operand_types(op, m.csr)
    widening = isa.MMA_OPS[op][1]
    cfg = m.cfg
    rows = cfg.rows_per_reg
    cols_o = cfg.rlen_bits // to.sew
    a_rows = m.vrf.rows(vs1, ti.storage_dtype).copy()
    b_rows = m.vrf.rows(vs2, ti.storage_dtype).copy()
    c = m.vrf.rows(vd, to.storage_dtype).copy()
    if ti.is_float and widening:
        a_rows, b_rows = numerics.bf16_to_f32(a_rows), numerics.bf16_to_f32(b_rows)
    sw = np.ones(rows * cols_o, bool) if software_mask is None else np.asarray(software_mask, bool)
    sw = sw[: rows * cols_o].reshape(rows, cols_o)
    for step in steps:
        active_rows = step.effective_vl_bits // cfg.rlen_bits
        mask = np.zeros((rows, cols_o), bool)
        mask[:active_rows, :step.implicit_mask_n] = True
        mask &= sw
        scal = a_rows[:, step.source_lane]
        if widening:
            vec = np.zeros(cols_o, b_rows.dtype)
            n = min(cols_o, rows)
            vec[:n] = b_rows[:n, step.k]
        else:
            vec = b_rows[step.k, :cols_o]
        if to.is_float:
            upd = numerics.fma_stored(scal[:, None], vec[None, :], c, to)
        else:
            upd = numerics.int_mac(c, scal[:, None], vec[None, :], to.sew)
        c = np.where(mask, upd, c)
    isa.write_c_tile(m, vd, c[:m.csr.tm, :m.csr.tn], to)


# -- events and pricing --------------------------------------------------------

@dataclass(frozen=True)
class InstructionEvent:
    klass: str
    static_latency: int
    dynamic_latency: int
    unit: str | None
    flops: int = 0


def mma_unit(cfg):
    return "systolic" if cfg.backend is Backend.SYSTOLIC else "vpu"


def unit_counts(cfg):
    return {
        "vpu": cfg.num_vector_units,
        "systolic": cfg.num_systolic_units,
        "mem": cfg.num_memory_units,
    }


def make_event(cfg, klass, flops=0):
    table = cfg.cost_table
    if klass not in table:
        raise ConfigError(f"no latency entry for instruction class {klass!r}")
    static, dynamic = table[klass]
    unit = mma_unit(cfg) if klass == "mma" else UNIT_FOR_CLASS.get(klass)
    return InstructionEvent(klass, static, dynamic, unit, flops)


@dataclass
class CostReport:
    total_cycles: int
    front_end_cycles: int
    unit_busy: dict
    retired: dict
    flops: int
    efficiency: float
    peak_flops_per_cycle: int
    clock_ghz: float

    @property
    def gflops(self):
        if not self.total_cycles:
            return 0.0
        return self.flops / self.total_cycles * self.clock_ghz

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


class CostAccumulator:
    """Streaming form of the latency model: add events one by one, then report."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.static_total = 0
        self.flops = 0
        self.retired = {}
        self._event_cache = {}
        self._pools = {}
        for unit, count in unit_counts(cfg).items():
            if count < 0:
                raise ConfigError(f"negative {unit} unit count")
            self._pools[unit] = [(0, i) for i in range(count)]

    def event(self, klass, flops=0):
        key = (klass, flops)
        ev = self._event_cache.get(key)
        if ev is None:
            ev = self._event_cache[key] = make_event(self.cfg, klass, flops)
        return ev

    def add(self, ev):
        self.static_total += ev.static_latency
        self.flops += ev.flops
        self.retired[ev.klass] = self.retired.get(ev.klass, 0) + 1
        if ev.unit is not None and ev.dynamic_latency:
            pool = self._pools[ev.unit]
            if not pool:
                raise ConfigError(f"{ev.klass} needs a {ev.unit} unit but none are configured")
            load, idx = pool[0]
            heapq.heapreplace(pool, (load + ev.dynamic_latency, idx))

    def add_class(self, klass, flops=0):
        self.add(self.event(klass, flops))

    def report(self):
        front = math.ceil(self.static_total / self.cfg.issue_width)
        busy = {unit: max((load for load, _ in pool), default=0) for unit, pool in self._pools.items()}
        total = max([front, *busy.values()])
        peak = self.cfg.flops_per_cycle_peak
        eff = self.flops / (total * peak) if total else 0.0
        return CostReport(
            total_cycles=total,
            front_end_cycles=front,
            unit_busy=busy,
            retired=dict(self.retired),
            flops=self.flops,
            efficiency=eff,
            peak_flops_per_cycle=peak,
            clock_ghz=self.cfg.clock_ghz,
        )


def price_trace(events, cfg):
    """Price a sequence of InstructionEvents (or (klass, flops) pairs)."""
    acc = CostAccumulator(cfg)
    for ev in events:
        if isinstance(ev, InstructionEvent):
            acc.add(ev)
        else:
            acc.add_class(*ev)
    return acc.report()
