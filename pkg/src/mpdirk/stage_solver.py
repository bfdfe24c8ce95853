"""Stage solvers (exact, linearized, chopped, mixed precision), the DIRK step and the time loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .corrections import (
    BroydenLog,
    CorrectionPlan,
    StabilizationMatrix,
    apply_plan,
    broyden_update,
    build_phi_ein,
    build_phi_jacobian,
)
from .precision import (
    DOUBLE,
    EXTENDED,
    ChopSpec,
    DWArray,
    SingularMatrixError,
    as_float,
    cast_down,
    cast_up,
    invert_then_chop,
    level,
    lu_factor,
    norm_inf,
    parse_pair,
)
from .problems import LinearizationPoint, StateError, taylor_linearize
from .stage import (
    DivergenceError,
    StageEquation,
    StageSolution,
    check_finite,
    identity,
    to_working,
    zeros_like,
)
from .tableau import ButcherTableau

NEWTON_TOL = 1e-12
NEWTON_TOL_EXTENDED = 1e-28
NEWTON_MAX_ITER = 50
STRATEGY_KINDS = ("exact", "linearized", "chopped", "mixed")
YBAR_POLICIES = ("step-start", "explicit")


@dataclass(frozen=True)
class StageStrategy:
    """How each implicit stage equation is (approximately) solved.

    ``kind`` is one of ``exact`` (Newton), ``linearized`` (one affine solve),
    ``chopped`` (affine solve through a chopped inverse) or ``mixed``
    (iterated low-precision solves). ``ybar`` picks the expansion point of
    the linearized kinds: the step's starting state or the stage's explicit
    part.
    """

    kind: str = "exact"
    digits: int | None = None
    pair: tuple | None = None
    iters: int = 3
    tol: float = 0.0
    ybar: str = "step-start"
    precision: object = DOUBLE  # working level of the exact kind

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGY_KINDS}")
        if self.ybar not in YBAR_POLICIES:
            raise ValueError(f"unknown linearization point policy {self.ybar!r}")
        if self.kind == "chopped":
            if self.digits is None:
                raise ValueError("chopped strategy needs digits")
            ChopSpec(self.digits)
        if self.kind == "mixed":
            pair = self.pair
            if pair is None:
                raise ValueError("mixed strategy needs a precision pair")
            if isinstance(pair, str):
                pair = parse_pair(pair)
            pair = (level(pair[0]), level(pair[1]))
            if pair[1].finer_than(pair[0]):
                raise ValueError("the low precision must not be finer than the high one")
            if pair[0] not in (DOUBLE, EXTENDED):
                raise ValueError("the high precision must be double or extended")
            object.__setattr__(self, "pair", pair)
            if self.iters < 1:
                raise ValueError("mixed strategy needs at least one iterate")
            if self.tol < 0:
                raise ValueError("tolerance must be nonnegative")
        object.__setattr__(self, "precision", level(self.precision))
        if self.precision not in (DOUBLE, EXTENDED):
            raise ValueError("exact solves run in double or extended precision")

    @classmethod
    def exact(cls, precision=DOUBLE):
        return cls("exact", precision=precision)

    @classmethod
    def linearized(cls, ybar="step-start"):
        return cls("linearized", ybar=ybar)

    @classmethod
    def chopped(cls, digits: int, ybar="step-start"):
        return cls("chopped", digits=int(digits), ybar=ybar)

    @classmethod
    def mixed(cls, pair, iters: int = 3, tol: float = 0.0):
        return cls("mixed", pair=pair, iters=iters, tol=tol)

    @property
    def level(self):
        if self.kind == "mixed":
            return self.pair[0]
        if self.kind == "exact":
            return self.precision
        return DOUBLE

    @property
    def label(self) -> str:
        if self.kind == "chopped":
            return f"chop-d{self.digits}"
        if self.kind == "mixed":
            return f"mixed-{self.pair[0]}/{self.pair[1]}-k{self.iters}"
        if self.kind == "exact" and self.precision is EXTENDED:
            return "exact-extended"
        return self.kind

    @property
    def perturbed(self) -> bool:
        return self.kind != "exact"


# -- individual stage solvers -------------------------------------------------------

def _newton_tol(lvl):
    return NEWTON_TOL_EXTENDED if lvl is EXTENDED else NEWTON_TOL


def solve_newton(eq: StageEquation, tol: float | None = None,
                 max_iter: int = NEWTON_MAX_ITER) -> StageSolution:
    """Newton's method with a fresh Jacobian every iteration, started at ``y_exp``.

    Once the residual is below ``tol`` a final chord step reuses the last LU,
    so the returned stage is far more accurate than ``tol`` itself.
    """
    y = eq.y_exp
    lvl = EXTENDED if isinstance(y, DWArray) else DOUBLE
    tol = _newton_tol(lvl) if tol is None else tol
    if not tol > 0:
        raise ValueError("Newton tolerance must be positive")
    if eq.scale == 0.0:
        return StageSolution(y, 0.0, 0, True)
    n = eq.problem.dim
    eye = identity(n, lvl)
    r = eq.residual(y)
    it = 0
    lu = None
    floor = False
    while norm_inf(r) > tol:
        if it == max_iter:
            return StageSolution(y, 0.0, it, False)
        J = eq.problem.jacobian(y)
        lu = lu_factor(eye - eq.scale * J, lvl)
        delta = lu.solve(r)
        y = check_finite(y + delta, "Newton iterate")
        r = eq.residual(y)
        it += 1
        # stagnation at the roundoff floor counts as converged
        if norm_inf(delta) <= 4.0 * lvl.unit_roundoff * max(norm_inf(y), 1.0):
            floor = True
            break
    if lu is not None and not floor:
        # one chord step with the last factorization squares the remaining error
        y = check_finite(y + lu.solve(r), "Newton iterate")
    return StageSolution(y, 0.0, it, True)


def _affine_rhs(eq, lin):
    """``y_exp + alpha*dt*(f(ybar) - J ybar)``."""
    return eq.y_exp + eq.scale * (lin.f_bar - lin.jac @ lin.ybar)


def solve_linearized(eq: StageEquation, lp, factor=None, lin=None) -> StageSolution:
    """One solve of the affine stage equation built from the linearization at ``lp``.

    ``factor`` (an LU of ``I - alpha*dt*J``) and ``lin`` (the affine map) may be
    passed in to reuse work across stages sharing ``ybar`` and ``alpha``.
    """
    lin = taylor_linearize(eq.problem, lp) if lin is None else lin
    if eq.scale == 0.0:
        return StageSolution(eq.y_exp, 0.0, 0, True)
    if factor is None:
        factor = lu_factor(np.eye(eq.problem.dim) - eq.scale * lin.jac, DOUBLE)
    y = check_finite(factor.solve(_affine_rhs(eq, lin)), "linearized stage")
    h = norm_inf(lin.residual(y))
    return StageSolution(y, h, 1, True, h0_norm=h)


def solve_linearized_chopped(eq: StageEquation, lp, spec, inv_chopped=None,
                             lin=None) -> StageSolution:
    """Affine stage solve through the inverse of ``I - alpha*dt*J`` chopped to ``d`` digits.

    The reported ``h`` is the effective perturbation ``r(y)/(alpha*dt)``, which
    carries both the linearization and the chopping error.
    """
    lin = taylor_linearize(eq.problem, lp) if lin is None else lin
    if eq.scale == 0.0:
        return StageSolution(eq.y_exp, 0.0, 0, True)
    if inv_chopped is None:
        inv_chopped = invert_then_chop(np.eye(eq.problem.dim) - eq.scale * lin.jac, spec)
    y = check_finite(inv_chopped @ _affine_rhs(eq, lin), "chopped stage")
    h = norm_inf(eq.perturbation(y))
    return StageSolution(y, h, 1, True, h0_norm=h)


def solve_mixed_precision(eq: StageEquation, pair, iters: int = 3,
                          tol: float = 0.0) -> StageSolution:
    """Iterated linearized solves whose linear systems are solved at the low precision.

    Each iterate relinearizes at ``y_k``, forms ``y_e`` and ``I - alpha*dt*J``
    at the high precision, solves at the low precision and recombines
    ``y_{k+1} = y_e + alpha*dt*J ytilde`` at the high precision.
    """
    if isinstance(pair, str):
        pair = parse_pair(pair)
    high, low = level(pair[0]), level(pair[1])
    if low.finer_than(high):
        raise ValueError("the low precision must not be finer than the high one")
    if iters < 1:
        raise ValueError("need at least one iterate")
    y = to_working(eq.y_exp, high)
    if eq.scale == 0.0:
        return StageSolution(y, 0.0, 0, True)
    n = eq.problem.dim
    eye = identity(n, high)
    y_exp = to_working(eq.y_exp, high)
    it = 0
    for it in range(1, iters + 1):
        J = eq.problem.jacobian(y)
        sJ = eq.scale * J
        y_e = y_exp + eq.scale * eq.problem.f(y) - sJ @ y
        M = eye - sJ
        if low is high:
            yt = lu_factor(M, low).solve(y_e)
        else:
            yt_low = lu_factor(cast_down(M, low), low).solve(cast_down(y_e, low))
            if not np.all(np.isfinite(yt_low)):
                raise DivergenceError("low precision solve overflowed")
            yt = cast_up(yt_low, high)
        y = check_finite(y_e + sJ @ yt, "mixed precision iterate")
        if tol > 0 and norm_inf(eq.residual(y)) <= tol:
            break
    h = norm_inf(eq.perturbation(y))
    return StageSolution(y, h, it, True, h0_norm=h)


# -- run context ---------------------------------------------------------------------

@dataclass
class RunContext:
    """Per-run caches: stabilization matrices keyed on ``(mu, dt)`` and Broyden state."""

    problem: object
    plan: CorrectionPlan
    lvl: object = DOUBLE
    phis: dict = field(default_factory=dict)
    broyden: dict = field(default_factory=dict)
    broyden_log: BroydenLog = field(default_factory=BroydenLog)
    step: int = 0
    broyden_done: bool = False

    def base_phi(self, mu: float, dt: float) -> StabilizationMatrix:
        key = (mu, dt)
        phi = self.phis.get(key)
        if phi is None:
            kind = self.plan.phi_kind
            if self.plan.is_broyden:
                kind = self.plan.broyden_base
            if kind == "ein":
                phi = build_phi_ein(self.problem, mu, dt, self.lvl)
            else:
                phi = build_phi_jacobian(self.problem, mu, dt, self.lvl)
            self.phis[key] = phi
        return phi

    def phi_for(self, mu: float, dt: float) -> StabilizationMatrix | None:
        if self.plan.kind != "stabilized":
            return None
        if self.plan.is_broyden:
            return self.broyden.get((mu, dt)) or self.base_phi(mu, dt)
        return self.base_phi(mu, dt)

    def begin_step(self, step: int):
        self.step = step
        self.broyden_done = False

    def broyden_hook(self, eq: StageEquation, mu: float, dt: float):
        if not self.plan.is_broyden or self.broyden_done:
            return None
        variant = self.plan.phi_kind.split("-", 1)[1]

        def hook(y1, y0, f1, f0):
            self.broyden_done = True
            phi = self.phi_for(mu, dt)
            new = broyden_update(phi, y1, y0, f1, f0, eq, variant, self.broyden_log, self.step)
            self.broyden[(mu, dt)] = new
            return new

        return hook


class _StepCache:
    """Linearizations and factorizations shared by the stages of one step."""

    def __init__(self):
        self.lin = {}
        self.ops = {}


def _solve_stage(eq, strategy: StageStrategy, y_n, cache: _StepCache) -> StageSolution:
    if strategy.kind == "exact":
        return solve_newton(eq)
    if strategy.kind == "mixed":
        return solve_mixed_precision(eq, strategy.pair, strategy.iters, strategy.tol)
    if eq.scale == 0.0:
        return StageSolution(eq.y_exp, 0.0, 0, True)
    if strategy.ybar == "step-start":
        ybar_key = "start"
        ybar = y_n
    else:
        ybar_key = None
        ybar = eq.y_exp
    lin = cache.lin.get(ybar_key) if ybar_key else None
    if lin is None:
        lin = taylor_linearize(eq.problem, LinearizationPoint(ybar))
        if ybar_key:
            cache.lin[ybar_key] = lin
    op_key = (ybar_key, eq.scale) if ybar_key else None
    op = cache.ops.get(op_key) if op_key else None
    M = None
    if op is None:
        M = np.eye(eq.problem.dim) - eq.scale * lin.jac
    if strategy.kind == "linearized":
        if op is None:
            op = lu_factor(M, DOUBLE)
        sol = solve_linearized(eq, None, factor=op, lin=lin)
    else:
        if op is None:
            op = invert_then_chop(M, strategy.digits)
        sol = solve_linearized_chopped(eq, None, strategy.digits, inv_chopped=op, lin=lin)
    if op_key:
        cache.ops[op_key] = op
    return sol


@dataclass
class StepResult:
    y: object
    stages: list
    stage_values: list


def dirk_step(y_n, t: ButcherTableau, dt: float, strategy: StageStrategy,
              plan: CorrectionPlan | None = None, problem=None,
              ctx: RunContext | None = None) -> StepResult:
    """One DIRK step; the update ``y_n + dt * sum b_i f(Y_i)`` always uses the true ``f``."""
    if not dt > 0:
        raise ValueError("step size must be positive")
    if problem is None:
        raise ValueError("dirk_step needs the problem")
    plan = plan or CorrectionPlan()
    if ctx is None:
        ctx = RunContext(problem, plan, strategy.level)
    n_corr = plan.corrections_for(t.p)
    cache = _StepCache()
    A = t.A
    k_vals, stages, values = [], [], []
    for i in range(t.s):
        y_exp = y_n
        for j in range(i):
            if A[i, j] != 0.0:
                y_exp = y_exp + (dt * A[i, j]) * k_vals[j]
        eq = StageEquation(y_exp, float(A[i, i]), dt, problem)
        sol = _solve_stage(eq, strategy, y_n, cache)
        if not sol.converged:
            raise DivergenceError(f"stage {i} solver did not converge")
        if n_corr and eq.scale > 0.0:
            mu = plan.mu_for(eq.alpha)
            phi = ctx.phi_for(mu, dt)
            hook = ctx.broyden_hook(eq, mu, dt)
            y_c, trace = apply_plan(eq, sol.y, plan, phi, n_corr, hook)
            h = 0.0 if strategy.kind == "exact" else norm_inf(eq.perturbation(y_c))
            sol = StageSolution(y_c, h, sol.iterations, True, sol.h0_norm, trace.residual_norms)
        k = problem.f(sol.y)
        k_vals.append(k)
        stages.append(sol)
        values.append(sol.y)
    y_new = y_n
    for i in range(t.s):
        if t.b[i] != 0.0:
            y_new = y_new + (dt * t.b[i]) * k_vals[i]
    check_finite(y_new, "step result")
    return StepResult(y_new, stages, values)


# -- time loop -----------------------------------------------------------------------

@dataclass
class RunResult:
    y: np.ndarray
    h: np.ndarray  # steps x stages
    h0: np.ndarray
    diverged: bool
    t_diverged: float | None
    wall: float
    drift: float
    n_steps: int
    final_dt: float
    label: str = ""
    broyden: BroydenLog | None = None
    y_working: object = None
    error: str = ""

    @property
    def max_h(self) -> np.ndarray:
        """Max over steps of ``||h||`` per stage."""
        if self.h.size == 0:
            return np.zeros(self.h.shape[1] if self.h.ndim == 2 else 0)
        return np.max(self.h, axis=0)


def step_schedule(final_time: float, dt: float) -> tuple[int, float]:
    """Number of steps and the size of the last one (a partial step when ``dt`` does not divide)."""
    if not dt > 0:
        raise ValueError("step size must be positive")
    m = round(final_time / dt)
    if m >= 1 and abs(m * dt - final_time) <= 1e-9 * final_time:
        return m, dt
    m = int(np.floor(final_time / dt))
    rest = final_time - m * dt
    return m + 1, rest


_FAILURES = (DivergenceError, StateError, SingularMatrixError, FloatingPointError,
             np.linalg.LinAlgError)


def integrate(p, t: ButcherTableau, dt: float, strategy: StageStrategy | None = None,
              plan: CorrectionPlan | None = None, final_time: float | None = None,
              observer=None) -> RunResult:
    """Integrate from 0 to the final time; failures mark the run diverged instead of raising.

    ``observer(step, y_n, step_result)`` is called after every completed step.
    """
    strategy = strategy or StageStrategy()
    plan = plan or CorrectionPlan()
    T = p.final_time if final_time is None else float(final_time)
    n_steps, last_dt = step_schedule(T, dt)
    lvl = strategy.level
    ctx = RunContext(p, plan, lvl)
    y = to_working(p.initial_state, lvl)
    c0 = p.conserved(y)
    h = np.zeros((n_steps, t.s))
    h0 = np.zeros((n_steps, t.s))
    drift = 0.0
    diverged, t_div, err = False, None, ""
    start = time.perf_counter()
    tnow = 0.0
    done = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for step in range(n_steps):
            step_dt = last_dt if step == n_steps - 1 else dt
            ctx.begin_step(step)
            try:
                res = dirk_step(y, t, step_dt, strategy, plan, p, ctx)
            except _FAILURES as exc:
                diverged, t_div, err = True, tnow + step_dt, f"{type(exc).__name__}: {exc}"
                break
            for i, sol in enumerate(res.stages):
                h[step, i] = sol.h_norm
                h0[step, i] = sol.h0_norm
            if observer is not None:
                observer(step, y, res)
            y = res.y
            tnow += step_dt
            done += 1
            c = p.conserved(y)
            if c.size:
                drift = max(drift, float(np.max(np.abs(c - c0))))
    wall = time.perf_counter() - start
    y_out = as_float(y).astype(np.float64)
    if diverged:
        y_out = np.full(p.dim, np.inf)
    return RunResult(
        y=y_out, h=h[:done], h0=h0[:done], diverged=diverged, t_diverged=t_div, wall=wall,
        drift=drift, n_steps=done, final_dt=last_dt, label=f"{t.name}/{strategy.label}/{plan.name}",
        broyden=ctx.broyden_log if plan.is_broyden else None, y_working=y, error=err,
    )


__all__ = [
    "RunContext", "RunResult", "StageStrategy", "StepResult", "dirk_step", "integrate",
    "solve_linearized", "solve_linearized_chopped", "solve_mixed_precision", "solve_newton",
    "step_schedule", "zeros_like",
]
