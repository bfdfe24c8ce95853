"""DIRK Butcher tableaus, B-stability checks and the corrected (augmented) form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PSD_TOL = -1e-12
ROW_SUM_TOL = 1e-14
DISTINCT_TOL = 1e-12


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(A, b, c)`` of a diagonally implicit Runge-Kutta method."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    p: int
    name: str = "dirk"

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        c = np.array(self.c, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if b.shape != (A.shape[0],) or c.shape != (A.shape[0],):
            raise ValueError("b and c must have one entry per stage")
        if int(self.p) < 1:
            raise ValueError("order p must be positive")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.A).copy()

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name, "s": self.s, "p": int(self.p),
            "A": self.A.tolist(), "b": self.b.tolist(), "c": self.c.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ButcherTableau":
        d = json.loads(text)
        t = cls(A=d["A"], b=d["b"], c=d["c"], p=d["p"], name=d.get("name", "dirk"))
        if t.s != d.get("s", t.s):
            raise ValueError("stage count does not match A")
        return t


def make_sdirk2() -> ButcherTableau:
    """Implicit midpoint rule."""
    return ButcherTableau(A=[[0.5]], b=[1.0], c=[0.5], p=2, name="sdirk2")


def make_sdirk3() -> ButcherTableau:
    g = (math.sqrt(3.0) + 3.0) / 6.0
    return ButcherTableau(
        A=[[g, 0.0], [1.0 - 2.0 * g, g]],
        b=[0.5, 0.5],
        c=[g, 1.0 - g],
        p=3,
        name="sdirk3",
    )


def make_sdirk4() -> ButcherTableau:
    al = 2.0 / math.sqrt(3.0) * math.cos(math.pi / 18.0)
    d = (1.0 + al) / 2.0
    w = 6.0 * al * al
    return ButcherTableau(
        A=[[d, 0.0, 0.0], [-al / 2.0, d, 0.0], [1.0 + al, -(1.0 + 2.0 * al), d]],
        b=[1.0 / w, (w - 2.0) / w, 1.0 / w],
        c=[d, 0.5, (1.0 - al) / 2.0],
        p=4,
        name="sdirk4",
    )


BUILTIN = {"sdirk2": make_sdirk2, "sdirk3": make_sdirk3, "sdirk4": make_sdirk4}


def get_tableau(name: str) -> ButcherTableau:
    key = name.strip().lower()
    if key in ("imr", "midpoint"):
        key = "sdirk2"
    try:
        return BUILTIN[key]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {sorted(BUILTIN)}") from None


# -- validation ------------------------------------------------------------------

def stability_matrix(t: ButcherTableau) -> np.ndarray:
    """``M = B A + A^T B - b b^T``, symmetrized."""
    B = np.diag(t.b)
    M = B @ t.A + t.A.T @ B - np.outer(t.b, t.b)
    return 0.5 * (M + M.T)


def _eig_2x2(M):
    a, b, d = M[0, 0], M[0, 1], M[1, 1]
    mid = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    return np.array([mid - rad, mid + rad])


def _eig_3x3(M):
    # trigonometric solution of the characteristic cubic for symmetric matrices
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    q = np.trace(M) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(M))
    p2 = (M[0, 0] - q) ** 2 + (M[1, 1] - q) ** 2 + (M[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    Bm = (M - q * np.eye(3)) / p
    r = np.linalg.det(Bm) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.sort(np.array([e1, e2, e3]))


def _eig_jacobi(M, tol=1e-15, max_sweeps=100):
    a = np.array(M, dtype=np.float64)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(1.0, np.linalg.norm(a)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                tt = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                cs = 1.0 / math.sqrt(tt * tt + 1.0)
                sn = tt * cs
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = cs
                rot[p, q] = sn
                rot[q, p] = -sn
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))


def symmetric_eigenvalues(M) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix (closed forms up to 3x3, Jacobi beyond)."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    if n == 1:
        return M.diagonal().copy()
    if n == 2:
        return _eig_2x2(M)
    if n == 3:
        return _eig_3x3(M)
    return _eig_jacobi(M)


@dataclass
class ValidationReport:
    name: str
    checks: dict = field(default_factory=dict)
    min_eig_M: float = float("nan")
    min_c_gap: float = float("inf")

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def lines(self):
        status = "PASS" if self.ok else "FAIL"
        yield f"{self.name}: {status}  min-eig(M)={self.min_eig_M:.3e}  min c-gap={self.min_c_gap:.3e}"
        for key, val in self.checks.items():
            yield f"  {key:<18} {'ok' if val else 'FAIL'}"

    def __str__(self):
        return "\n".join(self.lines())


def validate(t: ButcherTableau) -> ValidationReport:
    """Check the coefficient conditions behind B-stability; failures are reported."""
    rep = ValidationReport(t.name)
    A, b, c = t.A, t.b, t.c
    rep.checks["lower_triangular"] = bool(np.all(np.triu(A, 1) == 0.0))
    rep.checks["row_sums"] = bool(np.all(np.abs(A.sum(axis=1) - c) <= ROW_SUM_TOL))
    rep.checks["nonneg_diagonal"] = bool(np.all(np.diag(A) >= 0.0))
    rep.checks["nonneg_weights"] = bool(np.all(b >= 0.0))
    if t.s > 1:
        gaps = np.abs(c[:, None] - c[None, :])[np.triu_indices(t.s, 1)]
        rep.min_c_gap = float(np.min(gaps))
    rep.checks["distinct_c"] = rep.min_c_gap >= DISTINCT_TOL
    rep.min_eig_M = float(np.min(symmetric_eigenvalues(stability_matrix(t))))
    rep.checks["M_psd"] = rep.min_eig_M >= PSD_TOL
    return rep


# -- corrections in Butcher form ---------------------------------------------------

@dataclass(frozen=True)
class AugmentedTableau:
    base: ButcherTableau
    k: int
    A_aug: np.ndarray
    b_aug: np.ndarray

    def final_index(self, i: int) -> int:
        """Row of the fully corrected sub-stage of stage ``i`` (0-based)."""
        return i * (self.k + 1) + self.k


def augment(t: ButcherTableau, k: int) -> AugmentedTableau:
    """Stack each stage with its ``k`` corrections into one larger tableau.

    Within stage block ``i`` every sub-stage row keeps ``a_ii`` on its own
    diagonal and couples to earlier stages through the columns of their
    final corrected sub-stages.
    """
    if k < 0:
        raise ValueError("correction count must be nonnegative")
    s, m = t.s, k + 1
    A = np.zeros((s * m, s * m))
    b = np.zeros(s * m)
    for i in range(s):
        for r in range(m):
            row = i * m + r
            A[row, row] = t.A[i, i]
            for j in range(i):
                A[row, j * m + k] = t.A[i, j]
        b[i * m + k] = t.b[i]
    return AugmentedTableau(t, k, A, b)
