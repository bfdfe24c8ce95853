"""Dense LU solves carried out entirely at a chosen precision level."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import dw
from .dw import DWArray
from .levels import DOUBLE, EXTENDED, SINGLE, ChopSpec, PrecisionLevel, as_level, chop, level


class SingularMatrixError(np.linalg.LinAlgError):
    """A pivot fell below the singularity threshold of the working precision."""


_DTYPES = {SINGLE: np.float32, DOUBLE: np.float64}


@dataclass(frozen=True)
class LUFactorization:
    level: PrecisionLevel
    factors: tuple
    n: int

    def solve(self, b):
        """Solve ``M x = b``; ``b`` is converted to this factorization's level."""
        rhs = as_level(_as_array(b, self.level), self.level)
        if self.level is EXTENDED:
            return dw.lu_solve(self.factors, rhs)
        return sla.lu_solve(self.factors, rhs, check_finite=False)


def _as_array(b, lvl):
    if isinstance(b, DWArray):
        return b
    arr = np.asarray(b)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def _norm_inf_matrix(m) -> float:
    v = dw.as_float(m).astype(np.float64)
    return float(np.max(np.sum(np.abs(v), axis=1))) if v.size else 0.0


def lu_factor(m, lvl=DOUBLE) -> LUFactorization:
    """Partial-pivoting LU of ``m`` at precision ``lvl``.

    Raises :class:`SingularMatrixError` when a pivot magnitude is below
    ``1e3 * unit_roundoff * ||m||_inf``.
    """
    lvl = level(lvl)
    mat = as_level(_as_array(m, lvl), lvl)
    shape = mat.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"expected a square matrix, got shape {shape}")
    if not np.all(np.isfinite(dw.as_float(mat))):
        raise ValueError("matrix has non-finite entries")
    threshold = 1e3 * lvl.unit_roundoff * _norm_inf_matrix(mat)
    if lvl is EXTENDED:
        factors = dw.lu_factor(mat)
        pivots = np.abs(np.diag(factors[0]))
    else:
        arr = np.ascontiguousarray(mat, dtype=_DTYPES[lvl])
        with warnings.catch_warnings():
            # singular pivots are reported below as SingularMatrixError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            factors = sla.lu_factor(arr, check_finite=False)
        pivots = np.abs(np.diag(factors[0])).astype(np.float64)
    if shape[0] and (np.min(pivots) < threshold or not np.all(np.isfinite(pivots))):
        raise SingularMatrixError(
            f"pivot {np.min(pivots):.3e} below threshold {threshold:.3e} at {lvl} precision")
    return LUFactorization(lvl, factors, shape[0])


def solve(m, b, lvl=DOUBLE):
    return lu_factor(m, lvl).solve(b)


def inverse(m, lvl=DOUBLE):
    """Matrix inverse by LU column solves at precision ``lvl``."""
    lu = lu_factor(m, lvl)
    eye = np.eye(lu.n)
    if lu.level is EXTENDED:
        return lu.solve(DWArray(eye))
    return lu.solve(eye.astype(_DTYPES[lu.level]))


def invert_then_chop(m, spec: ChopSpec | int) -> np.ndarray:
    """Double-precision inverse of ``m`` with every entry chopped to ``d`` digits."""
    return chop(inverse(np.asarray(m, dtype=np.float64), DOUBLE), spec)
