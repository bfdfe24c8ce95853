"""Explicit and stabilized stage corrections, stabilization matrices and Broyden updates.

A stabilized correction is ``y <- y + Phi r(y)`` with
``Phi = (I - mu*dt*J)^-1`` and stage residual ``r(y) = y_exp + alpha*dt*f(y) - y``.
``Phi = I`` gives the plain explicit correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .precision import DOUBLE, EXTENDED, DWArray, as_float, inverse, norm_inf
from .stage import (
    DIVERGENCE_NORM,
    DivergenceError,
    StageEquation,
    check_finite,
    dot,
    identity,
    outer,
)

PHI_KINDS = ("jacobian", "ein", "broyden-good", "broyden-bad", "explicit")
PLAN_NAMES = {
    "none": ("none", None),
    "explicit": ("explicit", "explicit"),
    "phi-jacobian": ("stabilized", "jacobian"),
    "phi-ein": ("stabilized", "ein"),
    "phi-broyden-bad": ("stabilized", "broyden-bad"),
    "phi-broyden-good": ("stabilized", "broyden-good"),
}
SECANT_RTOL = 1e-10
SKIP_RTOL = 1e-14


@dataclass(frozen=True)
class StabilizationMatrix:
    phi: object
    kind: str
    mu: float
    built_at: int = 0

    def __post_init__(self):
        if self.kind not in PHI_KINDS:
            raise ValueError(f"unknown stabilization kind {self.kind!r}")
        if not np.all(np.isfinite(as_float(self.phi))):
            raise ValueError("stabilization matrix has non-finite entries")

    def apply(self, v):
        if self.kind == "explicit":
            return v
        return self.phi @ v


def explicit_matrix(n: int, lvl=DOUBLE) -> StabilizationMatrix:
    return StabilizationMatrix(identity(n, lvl), "explicit", 0.0)


@dataclass(frozen=True)
class CorrectionPlan:
    """What to do after the cheap implicit solve of each stage.

    ``count=None`` means ``p - 1`` corrections for an order-``p`` tableau.
    ``mu=None`` uses ``mu = a_ii`` for each stage.
    """

    kind: str = "none"
    count: int | None = 0
    phi_kind: str | None = None
    mu: float | None = None
    broyden_base: str = "jacobian"

    def __post_init__(self):
        if self.kind not in ("none", "explicit", "stabilized"):
            raise ValueError(f"unknown correction kind {self.kind!r}")
        if self.kind == "none":
            object.__setattr__(self, "count", 0)
            object.__setattr__(self, "phi_kind", None)
        elif self.kind == "explicit":
            object.__setattr__(self, "phi_kind", "explicit")
        elif self.phi_kind not in ("jacobian", "ein", "broyden-good", "broyden-bad"):
            raise ValueError(f"stabilized plan needs a phi kind, got {self.phi_kind!r}")
        if self.count is not None and self.count < 0:
            raise ValueError("correction count must be nonnegative")
        if self.broyden_base not in ("jacobian", "ein"):
            raise ValueError("Broyden updates start from the 'jacobian' or 'ein' matrix")

    @classmethod
    def from_name(cls, name: str, count: int | None = None, mu: float | None = None):
        try:
            kind, phi_kind = PLAN_NAMES[name]
        except KeyError:
            raise ValueError(f"unknown correction plan {name!r}; "
                             f"choose from {sorted(PLAN_NAMES)}") from None
        return cls(kind, count, phi_kind, mu)

    @property
    def name(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "explicit":
            return "explicit"
        return f"phi-{self.phi_kind}"

    @property
    def is_broyden(self) -> bool:
        return bool(self.phi_kind and self.phi_kind.startswith("broyden"))

    def corrections_for(self, order: int) -> int:
        if self.kind == "none":
            return 0
        return order - 1 if self.count is None else self.count

    def mu_for(self, a_ii: float) -> float:
        return a_ii if self.mu is None else float(self.mu)


# -- elementary corrections ---------------------------------------------------------

def residual(eq: StageEquation, y):
    """``r = y_exp + alpha*dt*f(y) - y``."""
    return eq.residual(y)


def explicit_correct(eq: StageEquation, y_k):
    return eq.y_exp + eq.scale * eq.problem.f(y_k)


def stabilized_correct(eq: StageEquation, y_k, phi: StabilizationMatrix):
    return y_k + phi.apply(residual(eq, y_k))


# -- stabilization matrices ---------------------------------------------------------

def _phi_from_operator(op, mu, dt, kind, lvl, built_at=0):
    n = op.shape[0]
    if mu == 0.0:
        return StabilizationMatrix(identity(n, lvl), kind, 0.0, built_at)
    M = identity(n, lvl) - (mu * dt) * op
    return StabilizationMatrix(inverse(M, lvl), kind, mu, built_at)


def build_phi_jacobian(p, mu: float, dt: float, lvl=DOUBLE, y0=None) -> StabilizationMatrix:
    """``(I - mu*dt*f'(y0))^-1`` with ``y0`` the initial state unless given."""
    y = p.initial_state if y0 is None else y0
    if lvl is EXTENDED and not isinstance(y, DWArray):
        y = DWArray(y)
    return _phi_from_operator(p.jacobian(y), mu, dt, "jacobian", lvl)


def build_phi_ein(p, mu: float, dt: float, lvl=DOUBLE) -> StabilizationMatrix:
    """``(I - mu*dt*L)^-1`` for the problem's dominant differential operator ``L``."""
    op = p.dominant_operator
    return _phi_from_operator(op, mu, dt, "ein", lvl)


@dataclass
class BroydenLog:
    accepted: int = 0
    skipped: int = 0
    secant_errors: list = field(default_factory=list)  # relative, per accepted update


def broyden_update(phi_prev: StabilizationMatrix, y_k, y_km1, f_k, f_km1,
                   eq: StageEquation, variant: str = "bad", log: BroydenLog | None = None,
                   step: int = 0) -> StabilizationMatrix:
    """Rank-one secant update of ``Phi`` from two consecutive stage iterates.

    With ``F(y) = y - y_exp - alpha*dt*f(y)``, ``R = F(y_k) - F(y_km1)`` and
    ``U = (y_k - y_km1) - Phi R`` the update is ``Phi + U rho^T / (rho^T R)``
    where ``rho = R`` ("bad") or ``rho^T = U^T Phi`` ("good"). Returns
    ``phi_prev`` itself when the update is skipped.
    """
    if variant not in ("good", "bad"):
        raise ValueError("variant must be 'good' or 'bad'")
    dy = y_k - y_km1
    R = dy - eq.scale * (f_k - f_km1)
    r_norm = float(np.linalg.norm(as_float(R)))
    if r_norm == 0.0:
        if log is not None:
            log.skipped += 1
        return phi_prev
    ups = dy - phi_prev.apply(R)
    if variant == "bad":
        rho = R
    else:
        rho = phi_prev.apply(ups) if phi_prev.kind == "explicit" else phi_prev.phi.T @ ups
    denom = dot(rho, R)
    if abs(float(denom)) <= SKIP_RTOL * float(np.linalg.norm(as_float(rho))) * r_norm:
        if log is not None:
            log.skipped += 1
        return phi_prev
    base = phi_prev.phi
    new_phi = base + outer(ups, rho) / denom
    kind = "broyden-" + variant
    out = StabilizationMatrix(new_phi, kind, phi_prev.mu, step)
    if log is not None:
        log.accepted += 1
        dy_norm = float(np.linalg.norm(as_float(dy)))
        err = float(np.linalg.norm(as_float(out.apply(R) - dy)))
        log.secant_errors.append(err / dy_norm if dy_norm > 0 else err)
    return out


# -- applying a plan ---------------------------------------------------------------------

@dataclass
class CorrectionTrace:
    residual_norms: list = field(default_factory=list)
    diverged: bool = False
    broyden_updated: bool = False


def apply_plan(eq: StageEquation, y0, plan: CorrectionPlan, phi: StabilizationMatrix | None,
               count: int | None = None, broyden_hook=None):
    """Run ``count`` corrections of ``plan`` from the stage solver's ``y0``.

    ``broyden_hook(y1, y0, f1, f0)``, when given, is called once after the
    first correction and returns the (possibly updated) matrix used for the
    remaining corrections.
    """
    trace = CorrectionTrace()
    n_corr = plan.count if count is None else count
    if plan.kind == "none" or not n_corr:
        trace.residual_norms.append(norm_inf(residual(eq, y0)))
        return y0, trace
    if plan.kind == "stabilized" and phi is None:
        raise ValueError("stabilized plan requires a stabilization matrix")
    y = y0
    f_y = eq.problem.f(y)
    r = eq.y_exp + eq.scale * f_y - y
    trace.residual_norms.append(norm_inf(r))
    for k in range(n_corr):
        if plan.kind == "explicit":
            y_new = y + r
        else:
            y_new = y + phi.apply(r)
        try:
            check_finite(y_new, "corrected stage")
            f_new = eq.problem.f(y_new)
        except DivergenceError:
            trace.diverged = True
            raise
        if k == 0 and broyden_hook is not None:
            phi = broyden_hook(y_new, y, f_new, f_y)
            trace.broyden_updated = True
        y, f_y = y_new, f_new
        r = eq.y_exp + eq.scale * f_y - y
        trace.residual_norms.append(norm_inf(r))
        if trace.residual_norms[-1] > DIVERGENCE_NORM:
            trace.diverged = True
            raise DivergenceError("correction residual blew up")
    return y, trace
