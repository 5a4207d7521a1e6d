"""GEMM kernels for the vector, tile-extension and fixed-tile profiles."""

from .gemm import BOperand, RowMajor, TilePacked, tile_gemm_program, vector_gemm_program
from .plan import UnrollPlan, plan_unroll, search_unroll
from .profiles import BASELINE, PROFILES, ArchProfile, get_profile
from .runner import (
    VECTOR_MATRIX_CLASSES,
    RunResult,
    build_program,
    count_gemm,
    execute_program,
    place_operands,
    random_operands,
    run_conv,
    run_gemm,
)

__all__ = [
    "ArchProfile", "BASELINE", "BOperand", "PROFILES", "RowMajor", "RunResult", "TilePacked",
    "UnrollPlan", "VECTOR_MATRIX_CLASSES", "build_program", "count_gemm", "execute_program",
    "get_profile", "place_operands", "plan_unroll", "random_operands", "run_conv", "run_gemm",
    "search_unroll", "tile_gemm_program", "vector_gemm_program",
]
