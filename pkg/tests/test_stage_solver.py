import numpy as np
import pytest

from mpdirk.corrections import CorrectionPlan
from mpdirk.precision import DOUBLE, EXTENDED, SINGLE, DWArray, lu_factor
from mpdirk.problems import LinearProblem, LinearizationPoint, make_problem, scalar_linear
from mpdirk.stage import DivergenceError, StageEquation, StageSolution
from mpdirk.stage_solver import (
    StageStrategy,
    dirk_step,
    integrate,
    solve_linearized,
    solve_linearized_chopped,
    solve_mixed_precision,
    solve_newton,
    step_schedule,
)
from mpdirk.tableau import get_tableau, make_sdirk2

SDIRK = ["sdirk2", "sdirk3", "sdirk4"]


def linear_system(n=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    lam = -(X @ X.T) / n - np.eye(n)
    return LinearProblem(lam, rng.standard_normal(n))


# -- strategies -------------------------------------------------------------------

def test_strategy_labels():
    assert StageStrategy.exact().label == "exact"
    assert StageStrategy.exact(EXTENDED).label == "exact-extended"
    assert StageStrategy.linearized().label == "linearized"
    assert StageStrategy.chopped(4).label == "chop-d4"
    assert StageStrategy.mixed("double/single", 2).label == "mixed-double/single-k2"
    assert StageStrategy.mixed("extended/double").level is EXTENDED
    assert StageStrategy.chopped(4).perturbed and not StageStrategy.exact().perturbed


def test_strategy_validation():
    with pytest.raises(ValueError):
        StageStrategy.mixed("single/double")
    with pytest.raises(ValueError):
        StageStrategy.mixed("single/single")
    with pytest.raises(ValueError):
        StageStrategy.mixed("double/single", 0)
    with pytest.raises(ValueError):
        StageStrategy.chopped(0)
    with pytest.raises(ValueError):
        StageStrategy(kind="magic")


# -- Newton reference --------------------------------------------------------------

def test_newton_linear_scalar_one_step():
    lam, alpha, dt = -3.0, 0.5, 0.1
    eq = StageEquation(np.array([2.0]), alpha, dt, scalar_linear(lam))
    sol = solve_newton(eq)
    assert sol.y[0] == pytest.approx(2.0 / (1 - alpha * dt * lam), abs=1e-15)
    assert sol.iterations == 1 and sol.converged and sol.h_norm == 0.0


def test_newton_explicit_stage():
    eq = StageEquation(np.array([2.0, 1.0]), 0.0, 0.1, linear_system(2))
    sol = solve_newton(eq)
    assert sol.iterations == 0
    np.testing.assert_array_equal(sol.y, [2.0, 1.0])


def test_newton_burgers():
    p = make_problem("burgers-a", 16)
    eq = StageEquation(p.initial_state.copy(), 0.5, 1e-3, p)
    sol = solve_newton(eq)
    assert np.max(np.abs(eq.residual(sol.y))) <= 1e-12
    assert sol.iterations <= 6


def test_newton_extended():
    p = make_problem("pm-a", 16)
    eq = StageEquation(DWArray(p.initial_state.copy()), 0.5, 1e-2, p)
    sol = solve_newton(eq)
    assert isinstance(sol.y, DWArray)
    assert np.max(np.abs(eq.residual(sol.y).to_float())) <= 1e-28


def test_newton_non_convergence_flagged():
    p = make_problem("burgers-a", 16)
    eq = StageEquation(p.initial_state.copy(), 0.5, 1e-3, p)
    sol = solve_newton(eq, tol=1e-12, max_iter=1)
    assert not sol.converged
    with pytest.raises(ValueError):
        solve_newton(eq, tol=0.0)


# -- linearized -------------------------------------------------------------------

def test_linearized_at_exact_stage_solution():
    p = make_problem("burgers-a", 32)
    eq = StageEquation(p.initial_state.copy(), 0.5, 1e-2, p)
    y_star = solve_newton(eq).y
    sol = solve_linearized(eq, LinearizationPoint(y_star))
    assert sol.h_norm <= 1e-13
    assert np.max(np.abs(sol.y - y_star)) <= 1e-13


def test_linearized_matches_newton_on_linear_problem():
    p = linear_system()
    eq = StageEquation(p.initial_state.copy(), 0.4, 0.3, p)
    a = solve_newton(eq).y
    b = solve_linearized(eq, p.initial_state.copy()).y
    assert np.max(np.abs(a - b)) <= 1e-14


def test_linearized_h_scales_with_dt_squared():
    p = make_problem("burgers-a", 50)
    y0 = p.initial_state.copy()
    h = [solve_linearized(StageEquation(y0, 0.5, dt, p), y0).h_norm for dt in (0.01, 0.005)]
    assert 2.5 <= h[0] / h[1] <= 6.0


def test_linearized_h_is_self_consistent():
    from mpdirk.problems import taylor_linearize
    p = make_problem("pm-a", 32)
    y0 = p.initial_state.copy()
    eq = StageEquation(y0, 0.5, 0.02, p)
    sol = solve_linearized(eq, y0)
    lin = taylor_linearize(p, y0)
    direct = np.max(np.abs(p.f(sol.y) - (lin.f_bar + lin.jac @ (sol.y - y0))))
    assert abs(sol.h_norm - direct) <= 1e-15


def test_chopped_converges_to_linearized():
    p = make_problem("burgers-a", 32)
    y0 = p.initial_state.copy()
    eq = StageEquation(y0, 0.5, 0.01, p)
    a = solve_linearized(eq, y0).y
    b = solve_linearized_chopped(eq, y0, 15).y
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) <= 1e-11


def test_chopped_scalar_error_bound():
    lam, alpha, dt = -2.0, 0.5, 0.1
    p = scalar_linear(lam)
    y_exp = np.array([1.2345678])
    eq = StageEquation(y_exp, alpha, dt, p)
    exact = y_exp[0] / (1 - alpha * dt * lam)
    for d in (2, 4, 6):
        y = solve_linearized_chopped(eq, y_exp, d).y[0]
        assert abs(y - exact) / abs(exact) <= 10.0 ** (1 - d)


def test_chopped_d2_diverges_at_large_dt():
    p = make_problem("burgers-a", 250)
    run = integrate(p, make_sdirk2(), 0.1, StageStrategy.chopped(2))
    assert run.diverged and run.t_diverged is not None
    assert np.all(np.isinf(run.y))


# -- mixed precision --------------------------------------------------------------

def chord_newton(eq, iters):
    y = eq.y_exp.copy()
    for _ in range(iters):
        J = eq.problem.jacobian(y)
        y = y + np.linalg.solve(np.eye(len(y)) - eq.scale * J, eq.residual(y))
    return y


@pytest.mark.parametrize("iters", [1, 2, 3])
def test_mixed_equal_pair_is_newton(iters):
    p = make_problem("burgers-a", 32)
    eq = StageEquation(p.initial_state.copy(), 0.5, 0.01, p)
    a = solve_mixed_precision(eq, (DOUBLE, DOUBLE), iters).y
    b = chord_newton(eq, iters)
    assert np.max(np.abs(a - b)) <= 1e-14


def test_mixed_scalar_walkthrough():
    lam, alpha, dt = -5.0, 0.5, 0.1
    p = scalar_linear(lam)
    y_exp = np.array([1.0 / 3.0])
    eq = StageEquation(y_exp, alpha, dt, p)
    s = alpha * dt
    # the seven steps by hand; the problem is linear so y_e = y_exp
    y_e = y_exp[0] + s * lam * y_exp[0] - s * lam * y_exp[0]
    M32 = np.float32(1.0 - s * lam)
    yt = np.float64(np.float32(y_e) / M32)
    expected = y_e + s * lam * yt
    got = solve_mixed_precision(eq, (DOUBLE, SINGLE), 1).y[0]
    assert got == pytest.approx(expected, abs=1e-16)
    exact = y_exp[0] / (1 - s * lam)
    assert abs(got - exact) <= 4 * SINGLE.unit_roundoff * abs(exact)


def test_mixed_burgers_double_single_band():
    p = make_problem("burgers-a", 200)
    eq = StageEquation(p.initial_state.copy(), 0.5, 1e-3, p)
    for iters in (1, 3):
        h = solve_mixed_precision(eq, "double/single", iters).h_norm
        assert 1e-5 <= h <= 1e-3


def test_mixed_extended_double_is_tiny():
    p = make_problem("pm-b", 32)
    eq = StageEquation(DWArray(p.initial_state.copy()), 0.5, 1e-3, p)
    sol = solve_mixed_precision(eq, "extended/double", 3)
    assert isinstance(sol.y, DWArray)
    assert sol.h_norm <= 1e-10


def test_mixed_tolerance_stops_early():
    p = make_problem("pm-a", 16)
    eq = StageEquation(p.initial_state.copy(), 0.5, 1e-2, p)
    sol = solve_mixed_precision(eq, (DOUBLE, DOUBLE), 10, tol=1e-13)
    assert sol.iterations < 10


def test_every_unperturbed_strategy_matches_newton_on_linear_problem():
    p = linear_system(8, 3)
    eq = StageEquation(p.initial_state.copy(), 0.4, 0.2, p)
    ref = solve_newton(eq).y
    ys = [
        solve_linearized(eq, p.initial_state.copy()).y,
        solve_mixed_precision(eq, (DOUBLE, DOUBLE), 1).y,
        solve_linearized_chopped(eq, p.initial_state.copy(), 17).y,
        solve_mixed_precision(DWArray_eq(eq), (EXTENDED, EXTENDED), 1).y.to_float(),
    ]
    for y in ys:
        assert np.max(np.abs(y - ref)) <= 1e-13


def DWArray_eq(eq):
    return StageEquation(DWArray(eq.y_exp), eq.alpha, eq.dt, eq.problem)


# -- steps and runs ---------------------------------------------------------------

def test_dirk_step_midpoint_stability_function():
    lam, dt = -2.5, 0.1
    p = scalar_linear(lam)
    res = dirk_step(np.array([1.0]), make_sdirk2(), dt, StageStrategy.exact(), problem=p)
    z = dt * lam
    assert res.y[0] == pytest.approx((1 + z / 2) / (1 - z / 2), abs=1e-15)
    assert all(s.h_norm == 0.0 for s in res.stages)


@pytest.mark.parametrize("name", SDIRK)
def test_exact_strategy_has_zero_h(name):
    p = make_problem("pm-a", 16)
    run = integrate(p, get_tableau(name), 0.05, StageStrategy.exact())
    assert not run.diverged
    assert np.all(run.h == 0.0)


@pytest.mark.slow
def test_sdirk3_self_convergence():
    p = make_problem("burgers-a", 16)
    t = get_tableau("sdirk3")
    ref = integrate(p, t, 1e-5, StageStrategy.exact(), final_time=0.5).y
    e = [np.max(np.abs(integrate(p, t, dt, StageStrategy.exact(), final_time=0.5).y - ref))
         for dt in (1e-3, 5e-4)]
    assert 5.0 <= e[0] / e[1] <= 12.0


def test_pm_sdirk2_self_convergence():
    p = make_problem("pm-a", 32)
    t = make_sdirk2()
    y = [integrate(p, t, dt, StageStrategy.exact()).y for dt in (1e-2, 5e-3, 2.5e-3)]
    ratio = np.max(np.abs(y[0] - y[1])) / np.max(np.abs(y[1] - y[2]))
    assert 3.0 <= ratio <= 5.0


def test_zero_rhs_keeps_initial_state():
    p = LinearProblem(np.zeros((3, 3)), [1.0, -2.0, 0.25])
    run = integrate(p, get_tableau("sdirk4"), 0.1, StageStrategy.chopped(4))
    np.testing.assert_array_equal(run.y, [1.0, -2.0, 0.25])


def test_burgers_conservation():
    p = make_problem("burgers-a", 32)
    run = integrate(p, get_tableau("sdirk3"), 0.05, StageStrategy.linearized())
    assert not run.diverged and run.drift <= 1e-8


def test_step_schedule():
    assert step_schedule(1.0, 0.1) == (10, 0.1)
    n, last = step_schedule(1.0, 0.3)
    assert n == 4 and last == pytest.approx(0.1)
    with pytest.raises(ValueError):
        step_schedule(1.0, 0.0)


def test_partial_last_step_reaches_final_time():
    lam = -1.0
    p = scalar_linear(lam, final_time=1.0)
    run = integrate(p, get_tableau("sdirk4"), 0.3, StageStrategy.exact())
    assert run.n_steps == 4 and run.final_dt == pytest.approx(0.1)
    assert run.y[0] == pytest.approx(np.exp(-1.0), abs=1e-3)


def test_observer_sees_every_step():
    p = make_problem("pm-a", 16)
    seen = []
    integrate(p, make_sdirk2(), 0.1, StageStrategy.linearized(),
              observer=lambda k, y, res: seen.append(k))
    assert seen == list(range(5))


def test_stage_solution_validation():
    with pytest.raises(ValueError):
        StageSolution(np.zeros(1), h_norm=-1.0)
    with pytest.raises(ValueError):
        StageEquation(np.zeros(1), -0.5, 0.1, None)
    with pytest.raises(ValueError):
        StageEquation(np.zeros(1), 0.5, 0.0, None)


def test_diverged_run_records_time():
    # chopping leaves a residual that explicit corrections amplify 500-fold each
    p = scalar_linear(-1e4, y0=0.123456, final_time=1.0)
    run = integrate(p, make_sdirk2(), 0.1, StageStrategy.chopped(2),
                    plan=CorrectionPlan.from_name("explicit", 8))
    assert run.diverged and run.t_diverged == pytest.approx(0.1)
    assert "Divergence" in run.error
