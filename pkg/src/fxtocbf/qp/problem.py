"""Per-step QP: variable table, assembly from constraint rows, solution and KKT checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..constraints import (
    CBF_KINDS, CLF_GOALS, DELTA_XF, EQ, GE, LE, PHI, U, ConstraintGains, ConstraintRow, RowBlock,
    SafetyParams, delta_id, slack_id,
)
from .backend import get_kernel

DU = "du"
CORE_VARS = (DU, PHI, DELTA_XF) + tuple(delta_id(k) for k in CBF_KINDS) + tuple(slack_id(g) for g in CLF_GOALS)
STATUS = {0: "optimal", 1: "infeasible", 2: "max-iter"}


class AssemblyError(ValueError):
    pass


# --------------------------------------------------------------------------- dense layer


@dataclass
class DenseQP:
    """``min 1/2 x'Qx + F'x`` s.t. ``A_eq x = b_eq``, ``A_in x <= b_in``, ``lb <= x <= ub``."""

    Q: np.ndarray
    F: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def build(cls, Q, F, A_eq=None, b_eq=None, A_in=None, b_in=None, lb=None, ub=None) -> "DenseQP":
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = Q.shape[0]
        F = np.zeros(n) if F is None else np.asarray(F, dtype=float).reshape(n)

        def mat(A, bvec):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.asarray(A, dtype=float).reshape(-1, n)
            return A, np.asarray(bvec, dtype=float).reshape(A.shape[0])

        A_eq, b_eq = mat(A_eq, b_eq)
        A_in, b_in = mat(A_in, b_in)
        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float).reshape(n)
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float).reshape(n)
        return cls(Q, F, A_eq, b_eq, A_in, b_in, lb, ub)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.F @ x)


@dataclass
class Multipliers:
    """Nonnegative multipliers for ``<=`` rows and bounds; free ones for equalities."""

    eq: np.ndarray
    ineq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class DenseSolution:
    x: np.ndarray
    status: str
    objective: float
    iterations: int
    multipliers: Multipliers


def _to_kernel_form(qp: DenseQP):
    """Diagonally scaled, row-normalised ``C x >= b`` form for the kernel."""
    n = qp.n
    diag = np.diag(qp.Q).copy()
    if np.any(diag <= 0.0):
        raise np.linalg.LinAlgError("QP Hessian must be positive definite")
    D = 1.0 / np.sqrt(diag)
    G = qp.Q * D[:, None] * D[None, :]
    a = qp.F * D
    rows, rhs, kinds, index = [], [], [], []

    def push(c, bval, kind, idx):
        rows.append(c)
        rhs.append(bval)
        kinds.append(kind)
        index.append(idx)

    for i in range(qp.A_eq.shape[0]):
        push(qp.A_eq[i] * D, qp.b_eq[i], "eq", i)
    meq = len(rows)
    for i in range(qp.A_in.shape[0]):
        push(-qp.A_in[i] * D, -qp.b_in[i], "ineq", i)
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(qp.lb[i]):
            push(eye[i] * D[i], qp.lb[i], "lower", i)
        if np.isfinite(qp.ub[i]):
            push(-eye[i] * D[i], -qp.ub[i], "upper", i)
    C = np.array(rows).reshape(-1, n)
    b = np.array(rhs, dtype=float)
    rho = np.linalg.norm(C, axis=1) if C.size else np.zeros(0)
    keep = rho > 0.0
    trivially_infeasible = False
    for j in np.flatnonzero(~keep):
        if (kinds[j] == "eq" and abs(b[j]) > 1e-12) or (kinds[j] != "eq" and b[j] > 1e-12):
            trivially_infeasible = True
    C = C[keep] / rho[keep, None]
    b = b[keep] / rho[keep]
    kinds = [k for k, f in zip(kinds, keep) if f]
    index = [k for k, f in zip(index, keep) if f]
    meq = sum(1 for k in kinds if k == "eq")
    return G, a, C, b, meq, D, rho[keep], kinds, index, trivially_infeasible


def solve_dense_qp(qp: DenseQP, kernel: Optional[str] = None, max_iter: int = 500) -> DenseSolution:
    G, a, C, b, meq, D, rho, kinds, index, bad = _to_kernel_form(qp)
    status, xs, lam, it = get_kernel(kernel)(G, a, C, b, meq, max_iter)
    if bad:
        status = 1
    x = D * xs
    lam = lam / rho if lam.size else lam
    mult = Multipliers(np.zeros(qp.A_eq.shape[0]), np.zeros(qp.A_in.shape[0]), np.zeros(qp.n), np.zeros(qp.n))
    for val, kind, i in zip(lam, kinds, index):
        if kind == "eq":
            mult.eq[i] = -val
        else:
            getattr(mult, kind)[i] = val
    return DenseSolution(x, STATUS[status], qp.objective(x), int(it), mult)


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


def dense_kkt_residuals(qp: DenseQP, x, mult: Multipliers) -> KktResiduals:
    x = np.asarray(x, dtype=float)
    grad = qp.Q @ x + qp.F + qp.A_eq.T @ mult.eq + qp.A_in.T @ mult.ineq + mult.upper - mult.lower
    r_eq = qp.A_eq @ x - qp.b_eq
    r_in = qp.A_in @ x - qp.b_in
    with np.errstate(invalid="ignore"):
        gap_lo = np.where(np.isfinite(qp.lb), x - qp.lb, np.inf)
        gap_hi = np.where(np.isfinite(qp.ub), qp.ub - x, np.inf)
    primal = max([0.0, *np.abs(r_eq), *np.maximum(r_in, 0.0), *np.maximum(-gap_lo, 0.0), *np.maximum(-gap_hi, 0.0)])
    dual = max([0.0, *(-mult.ineq), *(-mult.lower), *(-mult.upper)])
    comp = [0.0, *np.abs(mult.ineq * r_in)]
    comp += [abs(m * g) for m, g in zip(mult.lower, gap_lo) if m != 0.0]
    comp += [abs(m * g) for m, g in zip(mult.upper, gap_hi) if m != 0.0]
    stat = float(np.max(np.abs(grad))) if grad.size else 0.0
    return KktResiduals(stat, float(primal), float(dual), float(max(comp)))


# --------------------------------------------------------------------------- variable-table layer


@dataclass(frozen=True)
class QpWeights:
    du: float = 1.0
    phi: float = 0.1
    delta: float = 2.0
    delta_xf: float = 1e-6
    slack: float = 10.0
    delta_nominal: float = 1.0
    reg: float = 1e-8


@dataclass
class QpProblem:
    var_ids: list
    lower: np.ndarray
    upper: np.ndarray
    Q: np.ndarray
    F: np.ndarray
    rows: list
    u_ref: float = 0.0

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        n = len(self.var_ids)
        if len(set(self.var_ids)) != n:
            raise AssemblyError("duplicate variable ids")
        if self.Q.shape != (n, n) or self.F.shape != (n,):
            raise AssemblyError("objective dimensions do not match the variable table")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12, rtol=0.0):
            raise AssemblyError("Q must be symmetric")
        known = set(self.var_ids)
        for row in self.rows:
            missing = [k for k in row.coeffs if k not in known]
            if missing:
                raise AssemblyError(f"row {row.tag!r} references undeclared variables {missing}")
            if row.sense not in (LE, EQ, GE):
                raise AssemblyError(f"row {row.tag!r} has unknown sense {row.sense!r}")
            if not (math.isfinite(row.rhs) and all(math.isfinite(c) for c in row.coeffs.values())):
                raise AssemblyError(f"row {row.tag!r} has non-finite data")
        self._index = {k: i for i, k in enumerate(self.var_ids)}

    def index(self, var_id: str) -> int:
        return self._index[var_id]

    def to_dense(self) -> DenseQP:
        n = len(self.var_ids)
        eq, ineq = [], []
        for row in self.rows:
            vec = np.zeros(n)
            for k, c in row.coeffs.items():
                vec[self._index[k]] += c
            if row.sense == EQ:
                eq.append((vec, row.rhs))
            elif row.sense == LE:
                ineq.append((vec, row.rhs))
            else:
                ineq.append((-vec, -row.rhs))
        A_eq = np.array([v for v, _ in eq]).reshape(-1, n)
        A_in = np.array([v for v, _ in ineq]).reshape(-1, n)
        return DenseQP(self.Q, self.F, A_eq, np.array([r for _, r in eq], dtype=float),
                       A_in, np.array([r for _, r in ineq], dtype=float), self.lower, self.upper)


@dataclass
class QpSolution:
    values: dict
    objective: float
    status: str
    iterations: int
    x: np.ndarray = field(repr=False, default=None)
    multipliers: Optional[Multipliers] = field(repr=False, default=None)

    def __getitem__(self, var_id: str) -> float:
        return self.values[var_id]

    def with_values(self, **changes) -> "QpSolution":
        values = dict(self.values)
        values.update(changes)
        return replace(self, values=values, x=None)


def solve(p: QpProblem, kernel: Optional[str] = None, max_iter: int = 500) -> QpSolution:
    sol = solve_dense_qp(p.to_dense(), kernel=kernel, max_iter=max_iter)
    values = {k: float(v) for k, v in zip(p.var_ids, sol.x)}
    return QpSolution(values, sol.objective, sol.status, sol.iterations, sol.x, sol.multipliers)


def kkt_residuals(p: QpProblem, s: QpSolution) -> KktResiduals:
    x = np.array([s.values.get(k, 0.0) for k in p.var_ids])
    mult = s.multipliers
    if mult is None:
        dense = p.to_dense()
        mult = Multipliers(np.zeros(dense.A_eq.shape[0]), np.zeros(dense.A_in.shape[0]),
                           np.zeros(len(x)), np.zeros(len(x)))
    return dense_kkt_residuals(p.to_dense(), x, mult)


def assemble(block: RowBlock, u_ref: float, safety: SafetyParams, gains: ConstraintGains,
             weights: QpWeights = QpWeights()) -> QpProblem:
    """Build the tracking QP over ``[u - u_ref, phi, delta_*, e_*]`` plus the dual variables.

    Rows arrive written over ``u``; substituting ``u = du + u_ref`` moves the
    reference into the right-hand sides.
    """
    bounds = {
        DU: (safety.u_min - u_ref, safety.u_max - u_ref),
        PHI: (safety.phi_min, safety.phi_max),
        DELTA_XF: (-math.inf, math.inf),
    }
    for kind in CBF_KINDS:
        bounds[delta_id(kind)] = (0.0, gains.delta_max)
    for goal in CLF_GOALS:
        bounds[slack_id(goal)] = (0.0, math.inf)
    extra = []
    for k, bnd in block.bounds.items():
        if k == U:
            raise AssemblyError("bounds on u are set from SafetyParams")
        if k in bounds:
            lo, hi = bounds[k]
            bounds[k] = (max(lo, bnd[0]), min(hi, bnd[1]))
        else:
            bounds[k] = bnd
            extra.append(k)
    var_ids = list(CORE_VARS) + extra

    rows = []
    for row in block.rows:
        coeffs = dict(row.coeffs)
        rhs = row.rhs
        if U in coeffs:
            cu = coeffs.pop(U)
            coeffs[DU] = coeffs.get(DU, 0.0) + cu
            rhs -= cu * u_ref
        for k in coeffs:
            if k not in bounds:
                raise AssemblyError(f"row {row.tag!r} references undeclared variable {k!r}")
        rows.append(ConstraintRow(coeffs, rhs, row.sense, row.tag))

    n = len(var_ids)
    qd = np.zeros(n)
    F = np.zeros(n)
    qd[0] = weights.du
    qd[1] = weights.phi
    qd[2] = weights.delta_xf
    F[2] = -weights.delta_xf * weights.delta_nominal
    for i, kind in enumerate(CBF_KINDS):
        qd[3 + i] = weights.delta
        F[3 + i] = -weights.delta * weights.delta_nominal
    for i, _ in enumerate(CLF_GOALS):
        qd[3 + len(CBF_KINDS) + i] = weights.slack
    qd[qd == 0.0] = weights.reg
    lower = np.array([bounds[k][0] for k in var_ids])
    upper = np.array([bounds[k][1] for k in var_ids])
    return QpProblem(var_ids, lower, upper, np.diag(qd), F, rows, u_ref)


def format_problem(p: QpProblem) -> str:
    """Plain-text listing of the variable table, objective and rows."""
    r = repr
    lines = ["# variables: id lower upper", *(f"{k} {r(float(lo))} {r(float(hi))}" for k, lo, hi in zip(p.var_ids, p.lower, p.upper))]
    lines.append("# Q (row-major)")
    lines.extend(" ".join(r(float(q)) for q in row) for row in p.Q)
    lines.append("# F")
    lines.append(" ".join(r(float(f)) for f in p.F))
    lines.append("# rows: tag sense rhs coeffs")
    for row in p.rows:
        terms = " ".join(f"{k}:{r(float(c))}" for k, c in row.coeffs.items())
        lines.append(f"{row.tag} {row.sense} {r(float(row.rhs))} {terms}")
    return "\n".join(lines) + "\n"
