"""Named machine profiles that the kernels and the CLI evaluate."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..machine import Backend, MachineConfig, default_cost_table


@dataclass(frozen=True)
class ArchProfile:
    name: str
    kernel: str  # "vector", "mte" or "sifive"
    cfg: MachineConfig
    description: str = ""

    @property
    def uses_tiles(self):
        return self.kernel in ("mte", "sifive")


def _costs(**overrides):
    table = default_cost_table()
    table.update(overrides)
    return table


def _profiles():
    vec1 = MachineConfig(
        vlen_bits=8192, rlen_bits=512, num_arch_vregs=32, num_vector_units=4,
        num_systolic_units=0, cost_table=_costs(),
    )
    vec2 = MachineConfig(
        vlen_bits=16384, rlen_bits=512, num_arch_vregs=32, num_vector_units=4,
        num_systolic_units=0,
        cost_table=_costs(vector_arith=(20, 8), vector_memory=(20, 16)),
    )
    sifive = MachineConfig(
        vlen_bits=8192, rlen_bits=2048, num_arch_vregs=32, num_vector_units=4,
        num_systolic_units=0, backend=Backend.VECTOR_LANES,
        cost_table=_costs(mma=(28, 16)),
    )
    mte8s = MachineConfig(
        vlen_bits=8192, rlen_bits=512, num_arch_vregs=8, num_vector_units=2,
        num_systolic_units=1, backend=Backend.SYSTOLIC, cost_table=_costs(mma=(36, 16)),
    )
    mte32s = mte8s.with_overrides(num_arch_vregs=32)
    mte32v = MachineConfig(
        vlen_bits=8192, rlen_bits=512, num_arch_vregs=32, num_vector_units=4,
        num_systolic_units=0, backend=Backend.VECTOR_LANES, cost_table=_costs(mma=(36, 64)),
    )
    return [
        ArchProfile("Vector1KB", "vector", vec1, "1 KiB vector registers, 4 vector units"),
        ArchProfile("Vector2KB", "vector", vec2, "2 KiB vector registers, 4 vector units"),
        ArchProfile("SiFiveInt", "sifive", sifive, "fixed 4x64x4 tiles on 2048-bit rows, packed operands"),
        ArchProfile("MTE8s", "mte", mte8s, "tile extension, systolic back end, 8 registers"),
        ArchProfile("MTE32s", "mte", mte32s, "tile extension, systolic back end, 32 registers"),
        ArchProfile("MTE32v", "mte", mte32v, "tile extension on the vector units, 32 registers"),
    ]


PROFILES = {p.name: p for p in _profiles()}
BASELINE = "Vector1KB"


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        known = ", ".join(PROFILES)
        raise ConfigError(f"unknown profile {name!r}; known profiles: {known}") from None
