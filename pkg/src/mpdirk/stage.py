"""Implicit stage equation ``y = y_exp + alpha*dt*f(y)`` and helpers shared by solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .precision import DOUBLE, EXTENDED, DWArray, as_float, level_of, norm_inf

DIVERGENCE_NORM = 1e10


class DivergenceError(RuntimeError):
    """Iterates blew up or stopped being finite."""


@dataclass
class StageEquation:
    y_exp: object
    alpha: float
    dt: float
    problem: object

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("diagonal coefficient must be nonnegative")
        if not self.dt > 0:
            raise ValueError("step size must be positive")

    @property
    def scale(self) -> float:
        """``alpha * dt``."""
        return self.alpha * self.dt

    def residual(self, y):
        return self.y_exp + self.scale * self.problem.f(y) - y

    def perturbation(self, y):
        """Effective ``h(y)``: the gap that ``y`` leaves in the exact stage equation."""
        if self.scale == 0.0:
            return zeros_like(y)
        return self.residual(y) / self.scale


@dataclass
class StageSolution:
    y: object
    h_norm: float = 0.0
    iterations: int = 0
    converged: bool = True
    h0_norm: float = 0.0
    correction_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if self.h_norm < 0:
            raise ValueError("h_norm must be nonnegative")


def zeros_like(y):
    if isinstance(y, DWArray):
        return DWArray.zeros(y.shape)
    return np.zeros_like(np.asarray(y, dtype=np.float64))


def identity(n, lvl=DOUBLE):
    return DWArray.eye(n) if lvl is EXTENDED else np.eye(n)


def working_level(y):
    return EXTENDED if isinstance(y, DWArray) else DOUBLE


def to_working(y, lvl):
    if lvl is EXTENDED:
        return y if isinstance(y, DWArray) else DWArray(np.asarray(y, dtype=np.float64))
    return as_float(y).astype(np.float64, copy=False)


def dot(a, b):
    if isinstance(a, DWArray) or isinstance(b, DWArray):
        a2 = a if isinstance(a, DWArray) else DWArray(a)
        return (a2.reshape(1, -1) @ b)[0]
    return float(np.dot(a, b))


def outer(a, b):
    if isinstance(a, DWArray) or isinstance(b, DWArray):
        a2 = a if isinstance(a, DWArray) else DWArray(a)
        b2 = b if isinstance(b, DWArray) else DWArray(b)
        return a2[:, None] * b2[None, :]
    return np.outer(a, b)


def check_finite(y, what="iterate"):
    v = as_float(y)
    if not np.all(np.isfinite(v)):
        raise DivergenceError(f"{what} is not finite")
    if v.size and np.max(np.abs(v)) > DIVERGENCE_NORM:
        raise DivergenceError(f"{what} exceeded {DIVERGENCE_NORM:g} in max-norm")
    return y


__all__ = [
    "DIVERGENCE_NORM", "DivergenceError", "StageEquation", "StageSolution", "check_finite",
    "dot", "identity", "level_of", "norm_inf", "outer", "to_working", "working_level",
    "zeros_like",
]
