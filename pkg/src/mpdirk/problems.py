"""Semi-discrete periodic test problems and their Taylor linearizations.

Every right-hand side is written with plain arithmetic and ``@`` so the same
code evaluates float64 arrays and double-word :class:`~mpdirk.precision.DWArray`
states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .precision import DWArray, as_float
from .spectral import TWO_PI, fourier_d1, fourier_d2

ETA_MIN = 1e-8


class StateError(ValueError):
    """State outside the domain where the right-hand side is defined."""


class SemiDiscreteProblem:
    """ODE system ``y' = f(y)`` with Jacobian and a dominant linear operator."""

    name = "problem"

    def __init__(self, dim, initial_state, final_time, dominant_operator=None, name=None):
        self.dim = int(dim)
        self.initial_state = np.asarray(initial_state, dtype=np.float64)
        self.initial_state.setflags(write=False)
        self.final_time = float(final_time)
        self._dominant = None if dominant_operator is None else np.asarray(dominant_operator)
        if name is not None:
            self.name = name

    def f(self, y):
        raise NotImplementedError

    def jacobian(self, y):
        raise NotImplementedError

    @property
    def dominant_operator(self) -> np.ndarray:
        if self._dominant is None:
            raise NotImplementedError(f"{self.name} has no dominant operator")
        return self._dominant

    def conserved(self, y) -> np.ndarray:
        """Quantities preserved by the semi-discretization (component means)."""
        return np.array([np.mean(as_float(y))])

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} dim={self.dim}>"


class LinearProblem(SemiDiscreteProblem):
    """``f(y) = Lambda y``; the stage equations are exactly linear."""

    def __init__(self, matrix, initial_state, final_time=1.0, name="linear"):
        m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        super().__init__(m.shape[0], np.atleast_1d(initial_state), final_time, m, name)
        self.matrix = m

    def f(self, y):
        return self.matrix @ y

    def jacobian(self, y):
        return self.matrix

    def conserved(self, y):
        return np.array([])


def scalar_linear(lam: float, y0: float = 1.0, final_time: float = 1.0) -> LinearProblem:
    """Dahlquist test equation ``y' = lam * y``."""
    return LinearProblem([[lam]], [y0], final_time, name=f"dahlquist({lam:g})")


class Burgers(SemiDiscreteProblem):
    """Inviscid Burgers' equation, ``f(y) = -1/2 D_x (y*y)``."""

    variants = {
        "a": (lambda x: 0.5 + 0.25 * np.sin(x), 3.5),
        "b": (lambda x: np.sin(x), 0.7),
    }

    def __init__(self, n: int, variant: str = "a"):
        if variant not in self.variants:
            raise ValueError(f"unknown Burgers' variant {variant!r}")
        self.Dx = fourier_d1(n)
        u0, tf = self.variants[variant]
        super().__init__(n, u0(self.Dx.grid), tf, -self.Dx.entries, f"burgers-{variant}")
        self.variant = variant
        self.grid = self.Dx.grid

    def f(self, y):
        return -0.5 * (self.Dx.entries @ (y * y))

    def jacobian(self, y):
        return -self.Dx.entries * y[None, :]


class ShallowWater(SemiDiscreteProblem):
    """Shallow water in flux form; state is ``(eta; mass flux)`` stacked."""

    name = "shallow-water"

    def __init__(self, n: int):
        self.Dx = fourier_d1(n)
        self.n = n
        x = self.Dx.grid
        y0 = np.concatenate([1.0 + 0.1 * np.sin(x), np.zeros(n)])
        D = self.Dx.entries
        L = np.zeros((2 * n, 2 * n))
        L[:n, :n] = -D
        L[n:, n:] = -D
        super().__init__(2 * n, y0, 0.5, L)
        self.grid = x

    def _split(self, y):
        eta, mu = y[: self.n], y[self.n:]
        if np.min(as_float(eta)) <= ETA_MIN:
            raise StateError(f"water height fell below {ETA_MIN:g}")
        return eta, mu

    def f(self, y):
        eta, mu = self._split(y)
        D = self.Dx.entries
        flux = mu * mu / eta + 0.5 * (eta * eta)
        top = -(D @ mu)
        bottom = -(D @ flux)
        if isinstance(y, DWArray):
            return DWArray.from_parts(np.concatenate([top.hi, bottom.hi]),
                                      np.concatenate([top.lo, bottom.lo]))
        return np.concatenate([top, bottom])

    def jacobian(self, y):
        eta, mu = self._split(y)
        D = self.Dx.entries
        n = self.n
        u = mu / eta
        lower_left = D * (u * u - eta)[None, :]
        lower_right = -2.0 * (D * u[None, :])
        if isinstance(y, DWArray):
            J = DWArray.zeros((2 * n, 2 * n))
        else:
            J = np.zeros((2 * n, 2 * n))
        J[:n, n:] = -D
        J[n:, :n] = lower_left
        J[n:, n:] = lower_right
        return J

    def conserved(self, y):
        v = as_float(y)
        return np.array([np.mean(v[: self.n]), np.mean(v[self.n:])])


class PorousMedium(SemiDiscreteProblem):
    """Porous medium equation ``u_t = (u^3)_xx``."""

    variants = {
        # linearization study and mixed-precision study setups
        "a": ((-np.pi, np.pi), lambda x: 0.5 * np.cos(x) + 0.5, 0.5),
        "b": ((0.0, TWO_PI), lambda x: 0.5 * np.sin(x), 0.5),
    }

    def __init__(self, n: int, variant: str = "a", nyquist: str = "keep"):
        if variant not in self.variants:
            raise ValueError(f"unknown porous-medium variant {variant!r}")
        domain, u0, tf = self.variants[variant]
        self.Dxx = fourier_d2(n, domain, nyquist=nyquist)
        super().__init__(n, u0(self.Dxx.grid), tf, self.Dxx.entries, f"pm-{variant}")
        self.variant = variant
        self.grid = self.Dxx.grid

    def f(self, y):
        return self.Dxx.entries @ (y * y * y)

    def jacobian(self, y):
        return 3.0 * (self.Dxx.entries * (y * y)[None, :])


# -- factories ----------------------------------------------------------------------

def burgers(n: int, variant: str = "a") -> Burgers:
    return Burgers(n, variant)


def shallow_water(n: int) -> ShallowWater:
    return ShallowWater(n)


def porous_medium(n: int, variant: str = "a") -> PorousMedium:
    return PorousMedium(n, variant)


PROBLEMS = {
    "burgers-a": lambda n: Burgers(n, "a"),
    "burgers-b": lambda n: Burgers(n, "b"),
    "shallow-water": ShallowWater,
    "pm-a": lambda n: PorousMedium(n, "a"),
    "pm-b": lambda n: PorousMedium(n, "b"),
}

PROBLEM_NOTES = {
    "burgers-a": "inviscid Burgers', u0 = 1/2 + sin(x)/4 on (0, 2pi), T = 3.5",
    "burgers-b": "inviscid Burgers', u0 = sin(x) on (0, 2pi), T = 0.7",
    "shallow-water": "shallow water (eta, mass flux), eta0 = 1 + 0.1 sin(x), T = 0.5",
    "pm-a": "porous medium u_t = (u^3)_xx, u0 = cos(x)/2 + 1/2 on (-pi, pi), T = 0.5",
    "pm-b": "porous medium u_t = (u^3)_xx, u0 = sin(x)/2 on (0, 2pi), T = 0.5",
}


def make_problem(name: str, n: int) -> SemiDiscreteProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    if int(n) < 4:
        raise ValueError("grid size must be >= 4")
    return factory(int(n))


# -- linearization ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearizationPoint:
    ybar: np.ndarray

    def check(self, problem: SemiDiscreteProblem):
        if np.shape(self.ybar) != (problem.dim,):
            raise ValueError(f"expansion point has shape {np.shape(self.ybar)}, "
                             f"expected ({problem.dim},)")
        return self


class AffineMap:
    """``y -> f(ybar) + J (y - ybar)``, the Taylor linearization of ``f`` at ``ybar``."""

    def __init__(self, problem, ybar, f_bar, jac):
        self.problem = problem
        self.ybar = ybar
        self.f_bar = f_bar
        self.jac = jac

    def __call__(self, y):
        return self.f_bar + self.jac @ (y - self.ybar)

    def residual(self, y):
        """``h(y) = f(y) - f_eps(y)``."""
        return self.problem.f(y) - self(y)


def taylor_linearize(p: SemiDiscreteProblem, lp) -> AffineMap:
    ybar = lp.ybar if isinstance(lp, LinearizationPoint) else lp
    if isinstance(lp, LinearizationPoint):
        lp.check(p)
    return AffineMap(p, ybar, p.f(ybar), p.jacobian(ybar))


class _BurgersAffine:
    def __init__(self, problem: Burgers, ybar):
        self.problem = problem
        self.ybar = ybar
        self._D = problem.Dx.entries
        self._f_bar = -0.5 * (self._D @ (ybar * ybar))

    def __call__(self, y):
        return self._f_bar - self._D @ (self.ybar * (y - self.ybar))

    def residual(self, y):
        return self.problem.f(y) - self(y)


def burgers_linearized(p: Burgers, lp) -> _BurgersAffine:
    """Closed-form Burgers' linearization ``-1/2 D ybar^2 - D diag(ybar) (y - ybar)``."""
    if isinstance(lp, LinearizationPoint):
        lp.check(p)
        return _BurgersAffine(p, lp.ybar)
    return _BurgersAffine(p, lp)
