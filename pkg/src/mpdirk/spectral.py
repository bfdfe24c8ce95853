"""Fourier spectral differentiation matrices on periodic grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DiffMatrix:
    n: int
    domain: tuple
    order: int
    entries: np.ndarray
    grid: np.ndarray

    def __matmul__(self, other):
        return self.entries @ other

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def periodic_grid(n: int, domain=(0.0, TWO_PI)) -> np.ndarray:
    lo, hi = float(domain[0]), float(domain[1])
    return lo + np.arange(n) * (hi - lo) / n


def _check(n, domain):
    if int(n) != n or n < 4:
        raise ValueError(f"grid size must be an integer >= 4, got {n}")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ValueError("domain must satisfy x_lo < x_hi")
    return int(n), (lo, hi)


def _offsets(n):
    idx = np.arange(n)
    k = idx[:, None] - idx[None, :]
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return k, sign


def fourier_d1(n: int, domain=(0.0, TWO_PI)) -> DiffMatrix:
    """First-derivative matrix (cotangent entries for even ``n``, cosecant for odd)."""
    n, domain = _check(n, domain)
    h = TWO_PI / n
    k, sign = _offsets(n)
    off = k != 0
    half = np.where(off, k * h / 2.0, 1.0)
    D = np.zeros((n, n))
    if n % 2 == 0:
        D[off] = 0.5 * sign[off] / np.tan(half[off])
    else:
        D[off] = 0.5 * sign[off] / np.sin(half[off])
    D *= TWO_PI / (domain[1] - domain[0])
    D.setflags(write=False)
    return DiffMatrix(n, domain, 1, D, periodic_grid(n, domain))


def fourier_d2(n: int, domain=(0.0, TWO_PI), nyquist: str = "keep") -> DiffMatrix:
    """Second-derivative matrix.

    ``nyquist="keep"`` uses the standard closed form, which maps the
    highest mode of an even grid to ``-(n/2)**2``. ``nyquist="drop"`` removes
    that mode so the result equals ``fourier_d1 @ fourier_d1`` exactly. Odd
    grids have no such mode and ignore the option.
    """
    n, domain = _check(n, domain)
    if nyquist not in ("keep", "drop"):
        raise ValueError("nyquist must be 'keep' or 'drop'")
    h = TWO_PI / n
    k, sign = _offsets(n)
    off = k != 0
    half = np.where(off, k * h / 2.0, 1.0)
    D = np.zeros((n, n))
    if n % 2 == 0:
        np.fill_diagonal(D, -np.pi ** 2 / (3.0 * h * h) - 1.0 / 6.0)
        D[off] = -0.5 * sign[off] / np.sin(half[off]) ** 2
        if nyquist == "drop":
            D += (n / 2.0) ** 2 / n * sign
    else:
        np.fill_diagonal(D, -np.pi ** 2 / (3.0 * h * h) + 1.0 / 12.0)
        D[off] = -0.5 * sign[off] / (np.sin(half[off]) * np.tan(half[off]))
    D *= (TWO_PI / (domain[1] - domain[0])) ** 2
    D.setflags(write=False)
    return DiffMatrix(n, domain, 2, D, periodic_grid(n, domain))
