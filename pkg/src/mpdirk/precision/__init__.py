"""Precision levels, double-word arithmetic, chopping and precision-generic LU."""

from .dw import DWArray, as_float, norm_inf
from .levels import (
    DOUBLE,
    EXTENDED,
    SINGLE,
    ChopSpec,
    PrecisionLevel,
    as_level,
    cast_down,
    cast_up,
    chop,
    level,
    level_of,
    parse_pair,
)
from .linalg import LUFactorization, SingularMatrixError, inverse, invert_then_chop, lu_factor, solve

__all__ = [
    "DOUBLE", "EXTENDED", "SINGLE", "ChopSpec", "DWArray", "LUFactorization",
    "PrecisionLevel", "SingularMatrixError", "as_float", "as_level", "cast_down",
    "cast_up", "chop", "inverse", "invert_then_chop", "level", "level_of",
    "lu_factor", "norm_inf", "parse_pair", "solve",
]
