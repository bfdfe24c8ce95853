"""Double-word ("extended") arrays.

:class:`DWArray` stores an array as an unevaluated sum of two float64
arrays, giving roughly 31 significant decimal digits (unit roundoff
2**-106). It stands in for IEEE binary128 wherever the experiments call
for a precision level above double.

Elementwise arithmetic is vectorized numpy. Matrix-vector products and LU
factorizations dispatch to numba kernels unless ``MPDIRK_NUMBA=0``.
"""

from __future__ import annotations

import numpy as np

from .. import _accel
from . import _dw_numpy as _np_kernels

if _accel.USE_NUMBA:
    from . import _dw_numba as _kernels
else:
    _kernels = _np_kernels


def _parts(x):
    if isinstance(x, DWArray):
        return x.hi, x.lo
    arr = np.asarray(x, dtype=np.float64)
    return arr, np.zeros_like(arr)


class DWArray:
    """Array of double-word numbers.

    Parameters
    ----------
    hi, lo : array_like
        Leading and trailing parts. ``lo`` defaults to zero, which makes
        ``DWArray(x)`` the exact embedding of a float64 array.
    """

    __array_ufunc__ = None  # make numpy defer to our reflected operators
    __slots__ = ("hi", "lo")

    def __init__(self, hi, lo=None):
        self.hi = np.array(hi, dtype=np.float64)
        self.lo = np.zeros_like(self.hi) if lo is None else np.array(lo, dtype=np.float64)
        if self.hi.shape != self.lo.shape:
            raise ValueError("hi and lo parts must have the same shape")

    # -- construction ---------------------------------------------------
    @classmethod
    def from_parts(cls, hi, lo):
        obj = cls.__new__(cls)
        obj.hi = hi
        obj.lo = lo
        return obj

    @classmethod
    def eye(cls, n):
        return cls(np.eye(n))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    # -- array protocol -------------------------------------------------
    @property
    def shape(self):
        return self.hi.shape

    @property
    def ndim(self):
        return self.hi.ndim

    @property
    def size(self):
        return self.hi.size

    def __len__(self):
        return len(self.hi)

    @property
    def T(self):
        return DWArray.from_parts(self.hi.T, self.lo.T)

    def __getitem__(self, idx):
        return DWArray.from_parts(self.hi[idx], self.lo[idx])

    def __setitem__(self, idx, value):
        vh, vl = _parts(value)
        self.hi[idx] = vh
        self.lo[idx] = vl

    def copy(self):
        return DWArray.from_parts(self.hi.copy(), self.lo.copy())

    def reshape(self, *shape):
        return DWArray.from_parts(self.hi.reshape(*shape), self.lo.reshape(*shape))

    def to_float(self):
        """Nearest float64 values (``hi`` is already the rounded sum)."""
        return self.hi + self.lo

    def __float__(self):
        return float(self.hi + self.lo)

    def __repr__(self):
        return f"DWArray(hi={self.hi!r}, lo={self.lo!r})"

    # -- arithmetic -----------------------------------------------------
    def __neg__(self):
        return DWArray.from_parts(-self.hi, -self.lo)

    def __pos__(self):
        return self

    def __add__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_add(self.hi, self.lo, oh, ol))

    __radd__ = __add__

    def __sub__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_add(self.hi, self.lo, -oh, -ol))

    def __rsub__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_add(oh, ol, -self.hi, -self.lo))

    def __mul__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_mul(self.hi, self.lo, oh, ol))

    __rmul__ = __mul__

    def __truediv__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_div(self.hi, self.lo, oh, ol))

    def __rtruediv__(self, other):
        oh, ol = _parts(other)
        return DWArray.from_parts(*_np_kernels.dw_div(oh, ol, self.hi, self.lo))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def matmul(a, b):
    """Double-word ``a @ b`` for matrix-vector and matrix-matrix shapes."""
    ah, al = _parts(a)
    bh, bl = _parts(b)
    if ah.ndim != 2:
        raise ValueError("left operand of a double-word product must be a matrix")
    if bh.ndim == 1:
        return DWArray.from_parts(*_kernels.matvec(
            np.ascontiguousarray(ah), np.ascontiguousarray(al), bh, bl))
    cols_h = np.empty((ah.shape[0], bh.shape[1]))
    cols_l = np.empty_like(cols_h)
    mh, ml = np.ascontiguousarray(ah), np.ascontiguousarray(al)
    for j in range(bh.shape[1]):
        cols_h[:, j], cols_l[:, j] = _kernels.matvec(
            mh, ml, np.ascontiguousarray(bh[:, j]), np.ascontiguousarray(bl[:, j]))
    return DWArray.from_parts(cols_h, cols_l)


def lu_factor(a):
    """Partial-pivoting LU in double-word arithmetic."""
    ah, al = _parts(a)
    return _kernels.lu_factor(np.ascontiguousarray(ah), np.ascontiguousarray(al))


def lu_solve(factors, b):
    lh, ll, perm = factors
    bh, bl = _parts(b)
    if bh.ndim == 1:
        return DWArray.from_parts(*_kernels.lu_solve(
            lh, ll, perm, np.ascontiguousarray(bh), np.ascontiguousarray(bl)))
    out_h = np.empty_like(bh)
    out_l = np.empty_like(bh)
    for j in range(bh.shape[1]):
        out_h[:, j], out_l[:, j] = _kernels.lu_solve(
            lh, ll, perm, np.ascontiguousarray(bh[:, j]), np.ascontiguousarray(bl[:, j]))
    return DWArray.from_parts(out_h, out_l)


def is_dw(x) -> bool:
    return isinstance(x, DWArray)


def as_float(x):
    """Round a double-word value to float64, pass other arrays through."""
    if isinstance(x, DWArray):
        return x.to_float()
    return np.asarray(x)


def norm_inf(x) -> float:
    """Max-norm, evaluated on the float64 rounding of ``x``."""
    v = as_float(x)
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(v)))
