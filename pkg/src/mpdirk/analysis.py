"""Perturbation bounds, twin integrations, convergence tables and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .corrections import CorrectionPlan
from .precision import as_float, level
from .stage import StageEquation
from .stage_solver import NEWTON_TOL, RunResult, StageStrategy, dirk_step, integrate
from .stage_solver import RunContext
from .tableau import ButcherTableau, get_tableau

CACHE_ENV = "MPDIRK_CACHE_DIR"


# -- bound quantities ------------------------------------------------------------------

def compute_Q(t: ButcherTableau) -> np.ndarray:
    """``|(A - Ahat) A^-1|`` with ``Ahat = diag(A)``; an explicit first stage is left out."""
    A = t.A
    d = np.diag(A)
    first = 1 if d[0] == 0.0 else 0
    if np.any(d[first:] <= 0.0):
        raise ValueError("every implicit stage needs a positive diagonal coefficient")
    Q = np.zeros_like(A)
    sub = A[first:, first:]
    Q[first:, first:] = np.abs((sub - np.diag(np.diag(sub))) @ np.linalg.inv(sub))
    return np.tril(Q, -1)


def _q_series(Q) -> np.ndarray:
    s = Q.shape[0]
    total = np.zeros_like(Q)
    power = np.eye(s)
    for _ in range(1, s):
        power = power @ Q
        total += power
    return total


def compute_K_C(t: ButcherTableau, h) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (t.s,):
        raise ValueError(f"need one perturbation size per stage, got shape {h.shape}")
    if np.any(h < 0):
        raise ValueError("perturbation sizes must be nonnegative")
    S = _q_series(compute_Q(t))
    Ahat = np.diag(t.A)
    K = 1.0 + 2.0 * S.sum(axis=1)
    C = Ahat * h + 2.0 * S @ (Ahat * h)
    return K, C


@dataclass
class BoundReport:
    Q: np.ndarray
    K: np.ndarray
    C: np.ndarray
    Theta: float
    Omega: float
    dt_threshold: float
    per_step_bound: float = float("nan")


def compute_Theta_Omega(t: ButcherTableau, eps, h, L: float | None = None,
                        dt: float | None = None) -> BoundReport:
    """``Theta = sum eps_i b_i a_ii K_i`` and ``Omega = sum eps_i b_i a_ii C_i``.

    With ``L`` the report carries the step size ``2 Omega / (L Theta^2)`` above
    which the sharper growth bound applies; with ``L`` and ``dt`` it also
    carries the one-step growth term ``dt^2 L Theta + dt sqrt(2 Omega L dt)``.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (t.s,) or np.any(eps < 0):
        raise ValueError("eps must hold one nonnegative value per stage")
    K, C = compute_K_C(t, h)
    w = eps * t.b * np.diag(t.A)
    theta = float(np.sum(w * K))
    omega = float(np.sum(w * C))
    thr = float("nan")
    if L is not None:
        if omega == 0.0:
            thr = 0.0
        elif theta == 0.0 or L == 0.0:
            thr = float("inf")
        else:
            thr = 2.0 * omega / (L * theta * theta)
    rep = BoundReport(compute_Q(t), K, C, theta, omega, thr)
    if L is not None and dt is not None:
        rep.per_step_bound = dt * dt * L * theta + dt * math.sqrt(2.0 * omega * L * dt)
    return rep


# -- twin integration ---------------------------------------------------------------------

def vector_norm(v, kind="inf") -> float:
    x = as_float(v)
    if kind == "inf":
        return float(np.max(np.abs(x))) if x.size else 0.0
    if kind == "2":
        return float(np.linalg.norm(x))
    raise ValueError(f"unknown norm {kind!r}")


def matrix_norm(m, kind="inf") -> float:
    x = as_float(m)
    if kind == "inf":
        return float(np.max(np.sum(np.abs(x), axis=1)))
    if kind == "2":
        return float(np.linalg.norm(x, 2))
    raise ValueError(f"unknown norm {kind!r}")


@dataclass
class TwinTrace:
    step_index: int
    y_err: float
    stage_err: np.ndarray
    h: np.ndarray
    L: float
    theta: float
    omega: float
    stage_bound: np.ndarray
    next_err: float
    growth1: float
    growth2: float
    growth2_applies: bool
    stage_ok: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    growth1_ok: bool = True
    growth2_ok: bool = True

    @property
    def bound_ok(self) -> bool:
        return bool(np.all(self.stage_ok) and self.growth1_ok and self.growth2_ok)


def _stage_perturbations(p, t, y_n, dt, values, kind):
    """Effective ``||h(Y_i)||`` of the stage values ``Y_i`` of one step."""
    ks = [p.f(v) for v in values]
    out = np.zeros(t.s)
    for i in range(t.s):
        y_exp = y_n
        for j in range(i):
            if t.A[i, j] != 0.0:
                y_exp = y_exp + (dt * t.A[i, j]) * ks[j]
        eq = StageEquation(y_exp, float(t.A[i, i]), dt, p)
        out[i] = vector_norm(eq.perturbation(values[i]), kind)
    return out


def _evaluate(tr: TwinTrace, t, eps, dt, slack):
    rep = compute_Theta_Omega(t, eps, tr.h, tr.L, dt)
    tr.theta, tr.omega = rep.Theta, rep.Omega
    tr.stage_bound = rep.K * tr.y_err + dt * rep.C
    tr.stage_ok = tr.stage_err <= tr.stage_bound + slack
    tr.growth1 = tr.y_err + rep.per_step_bound
    tr.growth1_ok = tr.next_err <= tr.growth1 + slack
    tr.growth2 = tr.y_err + dt * dt * tr.L * rep.Theta
    tr.growth2_applies = bool(dt >= rep.dt_threshold)
    tr.growth2_ok = (not tr.growth2_applies) or tr.next_err <= tr.growth2 + slack
    return tr


def twin_integrate(p, t: ButcherTableau, dt: float, strategy: StageStrategy,
                   plan: CorrectionPlan | None = None, mode: str = "resync",
                   norm: str = "inf", eps_mode: str = "per-step",
                   final_time: float | None = None, slack: float | None = None) -> list[TwinTrace]:
    """Advance unperturbed and perturbed stage sets side by side and test the bounds.

    In ``resync`` mode both start every step from the perturbed state, which
    isolates one-step growth; ``free`` runs two independent trajectories.
    ``slack`` (default: the Newton tolerance of the unperturbed solve) absorbs
    the accuracy limit of the reference stages themselves.
    """
    if not strategy.perturbed:
        raise ValueError("twin integration compares against a perturbed strategy")
    if mode not in ("resync", "free"):
        raise ValueError("mode must be 'resync' or 'free'")
    if eps_mode not in ("per-step", "run-max"):
        raise ValueError("eps_mode must be 'per-step' or 'run-max'")
    plan = plan or CorrectionPlan()
    exact = StageStrategy.exact()
    slack = 10.0 * NEWTON_TOL if slack is None else slack
    T = p.final_time if final_time is None else final_time
    n_steps = int(round(T / dt))
    ctx = RunContext(p, plan, strategy.level)
    y = np.array(p.initial_state, dtype=np.float64)
    z = y.copy()
    traces = []
    for n in range(n_steps):
        ctx.begin_step(n)
        z_from = y if mode == "resync" else z
        ez = dirk_step(z_from, t, dt, exact, None, p)
        ey = dirk_step(y, t, dt, strategy, plan, p, ctx)
        y_err = vector_norm(z_from - y, norm)
        stage_err = np.array([vector_norm(as_float(a) - as_float(b), norm)
                              for a, b in zip(ez.stage_values, ey.stage_values)])
        h = _stage_perturbations(p, t, y, dt, ey.stage_values, norm)
        y_next = as_float(ey.y)
        tr = TwinTrace(n, y_err, stage_err, h, matrix_norm(p.jacobian(y), norm), 0.0, 0.0,
                       np.zeros(t.s), vector_norm(as_float(ez.y) - y_next, norm), 0.0, 0.0, False)
        traces.append(tr)
        y = y_next
        z = as_float(ez.y)
    eps_max = np.max([tr.h for tr in traces], axis=0) if traces else np.zeros(t.s)
    for tr in traces:
        _evaluate(tr, t, tr.h if eps_mode == "per-step" else eps_max, dt, slack)
    return traces


def count_violations(traces) -> dict:
    return {
        "stage": int(sum(int(np.sum(~tr.stage_ok)) for tr in traces)),
        "growth1": int(sum(not tr.growth1_ok for tr in traces)),
        "growth2": int(sum(not tr.growth2_ok for tr in traces)),
        "growth2_steps": int(sum(tr.growth2_applies for tr in traces)),
        "steps": len(traces),
    }


# -- references ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceSpec:
    """How the reference solution of a convergence study is produced.

    ``method`` is ``radau`` or ``dop853`` (adaptive, tolerance ``rtol``) or
    ``dirk`` (exact-Newton SDIRK4 at ``min(dt_list)/refine`` in ``precision``).
    """

    method: str = "radau"
    rtol: float = 1e-13
    refine: int = 10
    precision: str = "double"
    cache: bool = True

    def __post_init__(self):
        if self.method not in ("radau", "dop853", "dirk"):
            raise ValueError(f"unknown reference method {self.method!r}")

    def key(self, p, dt_min) -> dict:
        d = {"problem": p.name, "n": p.dim, "T": p.final_time, "method": self.method}
        if self.method == "dirk":
            d.update(dt=dt_min / self.refine, precision=self.precision)
        else:
            d["rtol"] = self.rtol
        return d


class ReferenceError(RuntimeError):
    """The reference run failed, so errors cannot be measured."""


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "mpdirk"))


def reference_solution(p, spec: ReferenceSpec | None = None, dt_min: float | None = None):
    spec = spec or ReferenceSpec()
    key = spec.key(p, dt_min if dt_min is not None else 0.0)
    path = None
    if spec.cache:
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]
        path = cache_dir() / f"ref-{digest}.npy"
        if path.exists():
            return np.load(path)
    if spec.method == "dirk":
        if dt_min is None:
            raise ValueError("the dirk reference needs the smallest step of the study")
        strat = StageStrategy.exact(level(spec.precision))
        run = integrate(p, get_tableau("sdirk4"), dt_min / spec.refine, strat)
        if run.diverged:
            raise ReferenceError(f"reference run diverged: {run.error}")
        y = run.y
    else:
        method = "Radau" if spec.method == "radau" else "DOP853"
        kw = {"jac": lambda _t, y: p.jacobian(y)} if method == "Radau" else {}
        sol = solve_ivp(lambda _t, y: p.f(y), (0.0, p.final_time), p.initial_state,
                        method=method, rtol=spec.rtol, atol=spec.rtol * 0.1, **kw)
        if not sol.success:
            raise ReferenceError(f"reference run failed: {sol.message}")
        y = sol.y[:, -1]
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.tmp.npy")
        np.save(tmp, y)
        os.replace(tmp, path)
    return y


# -- convergence tables -----------------------------------------------------------------

@dataclass
class ConvergenceRow:
    dt: float
    error: float
    diverged: bool
    t_diverged: float | None = None
    max_h: float = 0.0
    wall: float = 0.0
    drift: float = 0.0


def pair_slopes(dts, errors) -> np.ndarray:
    """Observed order between consecutive rows; NaN where either error is unusable."""
    dts = np.asarray(dts, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    out = np.full(max(len(e) - 1, 0), np.nan)
    for k in range(len(out)):
        if np.isfinite(e[k]) and np.isfinite(e[k + 1]) and e[k] > 0 and e[k + 1] > 0:
            out[k] = math.log(e[k] / e[k + 1]) / math.log(dts[k] / dts[k + 1])
    return out


def fit_slope(dts, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    x = np.log(np.asarray(dts, dtype=np.float64))
    y = np.log(np.asarray(errors, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class ConvergenceTable:
    rows: list
    method: str = ""
    strategy: str = ""
    plan: str = ""
    problem: str = ""
    n: int = 0

    def __post_init__(self):
        dts = [r.dt for r in self.rows]
        if any(b >= a for a, b in zip(dts, dts[1:])):
            raise ValueError("step sizes must be strictly decreasing")

    @property
    def dts(self) -> np.ndarray:
        return np.array([r.dt for r in self.rows])

    @property
    def errors(self) -> np.ndarray:
        return np.array([np.inf if r.diverged else r.error for r in self.rows])

    @property
    def slopes(self) -> np.ndarray:
        return pair_slopes(self.dts, self.errors)

    @property
    def order(self) -> float:
        """Median of the last three finite pairwise slopes."""
        s = self.slopes
        s = s[np.isfinite(s)]
        return float(np.median(s[-3:])) if s.size else float("nan")

    def window_slopes(self, width: int = 3, monotone: bool = True) -> list:
        """``(start, slope)`` of least-squares fits over every run of ``width`` usable rows."""
        e, dts = self.errors, self.dts
        out = []
        for k in range(len(e) - width + 1):
            seg = e[k:k + width]
            if not np.all(np.isfinite(seg)) or np.any(seg <= 0):
                continue
            if monotone and np.any(np.diff(seg) >= 0):
                continue
            out.append((k, fit_slope(dts[k:k + width], seg)))
        return out


def convergence_study(p, t: ButcherTableau, strategy: StageStrategy, plan, dt_list,
                      reference: ReferenceSpec | None = None, y_ref=None) -> ConvergenceTable:
    dts = [float(d) for d in dt_list]
    if len(dts) < 3:
        raise ValueError("a convergence study needs at least three step sizes")
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValueError("step sizes must be strictly decreasing")
    plan = plan or CorrectionPlan()
    if y_ref is None:
        y_ref = reference_solution(p, reference, min(dts))
    rows = []
    for dt in dts:
        run = integrate(p, t, dt, strategy, plan)
        err = math.inf if run.diverged else float(np.max(np.abs(run.y - y_ref)))
        max_h = float(run.h.max()) if run.h.size else 0.0
        rows.append(ConvergenceRow(dt, err, run.diverged, run.t_diverged, max_h, run.wall, run.drift))
    return ConvergenceTable(rows, t.name, strategy.label, plan.name, p.name, p.dim)


# -- h series ------------------------------------------------------------------------------

@dataclass
class HSeries:
    series: np.ndarray  # steps x stages
    max: np.ndarray
    median: np.ndarray


def h_monitor(run: RunResult) -> HSeries:
    h = np.asarray(run.h, dtype=np.float64)
    if h.size == 0:
        s = h.shape[1] if h.ndim == 2 else 0
        return HSeries(h, np.zeros(s), np.zeros(s))
    return HSeries(h, h.max(axis=0), np.median(h, axis=0))


# -- CSV output ----------------------------------------------------------------------------

CONVERGENCE_COLUMNS = ["problem", "n", "method", "strategy", "plan", "dt", "error", "slope",
                       "diverged", "t_diverged", "max_h"]
TWIN_COLUMNS = ["problem", "n", "method", "strategy", "plan", "dt", "step", "y_err", "stage",
                "stage_err", "h", "stage_bound", "stage_ok", "next_err", "growth1",
                "growth1_ok", "growth2_applies", "growth2_ok"]
H_COLUMNS = ["problem", "n", "method", "strategy", "plan", "dt", "step", "stage", "h"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(float(x))
    return str(x)


def _writer(fh):
    return csv.writer(fh, delimiter=",", lineterminator="\n")


def write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def convergence_rows(table: ConvergenceTable):
    slopes = table.slopes
    for k, r in enumerate(table.rows):
        slope = slopes[k - 1] if k > 0 else float("nan")
        err = math.inf if r.diverged else r.error
        yield [table.problem, table.n, table.method, table.strategy, table.plan, r.dt, err,
               slope, r.diverged, r.t_diverged, r.max_h]


def twin_rows(traces, key):
    for tr in traces:
        for i in range(len(tr.stage_err)):
            yield [*key, tr.step_index, tr.y_err, i, tr.stage_err[i], tr.h[i],
                   tr.stage_bound[i], bool(tr.stage_ok[i]), tr.next_err, tr.growth1,
                   tr.growth1_ok, tr.growth2_applies, tr.growth2_ok]


def h_rows(run: RunResult, key):
    for step, row in enumerate(np.asarray(run.h)):
        for i, v in enumerate(row):
            yield [*key, step, i, v]


__all__ = [
    "BoundReport", "ConvergenceRow", "ConvergenceTable", "HSeries", "ReferenceError",
    "ReferenceSpec", "TwinTrace", "compute_K_C", "compute_Q", "compute_Theta_Omega",
    "convergence_study", "count_violations", "fit_slope", "h_monitor", "pair_slopes",
    "reference_solution", "twin_integrate", "write_rows",
]
