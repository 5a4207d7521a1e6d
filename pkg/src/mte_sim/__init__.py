"""Functional and timing simulator for a matrix tile extension on a long-vector machine."""

from .machine import Machine, MachineConfig, MteCsr, Policy, TType

__version__ = "0.1.0"

__all__ = ["Machine", "MachineConfig", "MteCsr", "Policy", "TType", "__version__"]
