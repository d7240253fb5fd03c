"""Independent reference solutions used to check the QP kernel and the dual embedding."""

from __future__ import annotations

import itertools

import numpy as np

from ..dynamics import DisturbancePolytope


class UnsupportedOracleError(ValueError):
    pass


def _box_vertices(W: DisturbancePolytope) -> np.ndarray:
    if not W.is_box:
        raise UnsupportedOracleError("vertex oracle supports axis-aligned boxes only")
    return W.vertices()


def lp_box_sup_oracle(c, W: DisturbancePolytope) -> float:
    """``max`` of ``c'w`` over the ``2**m`` vertices of a box."""
    c = np.asarray(c, dtype=float).reshape(-1)
    return float(np.max(_box_vertices(W) @ c))


def lp_box_inf_oracle(c, W: DisturbancePolytope) -> float:
    c = np.asarray(c, dtype=float).reshape(-1)
    return float(np.min(_box_vertices(W) @ c))


def enumerate_active_sets(qp, tol: float = 1e-9):
    """Exhaustive active-set solve of a small dense QP.

    Every subset of inequality rows (bounds included) is taken as active, the
    equality-constrained KKT system is solved, and the primal-feasible
    candidate with the lowest objective wins. Returns ``(x, objective)`` or
    ``(None, inf)`` when no candidate is feasible.
    """
    n = qp.n
    rows = [qp.A_in[i] for i in range(qp.A_in.shape[0])]
    rhs = list(qp.b_in)
    eye = np.eye(n)
    for i in range(n):
        if np.isfinite(qp.ub[i]):
            rows.append(eye[i])
            rhs.append(qp.ub[i])
        if np.isfinite(qp.lb[i]):
            rows.append(-eye[i])
            rhs.append(-qp.lb[i])
    A_all = np.array(rows).reshape(-1, n)
    b_all = np.array(rhs, dtype=float)
    best_x, best_f = None, np.inf
    m = len(rows)
    for k in range(0, min(m, n) + 1):
        for subset in itertools.combinations(range(m), k):
            W = np.vstack([qp.A_eq, A_all[list(subset)]]) if k else qp.A_eq
            w = np.concatenate([qp.b_eq, b_all[list(subset)]]) if k else qp.b_eq
            nw = W.shape[0]
            K = np.block([[qp.Q, W.T], [W, np.zeros((nw, nw))]])
            r = np.concatenate([-qp.F, w])
            try:
                sol = np.linalg.solve(K, r)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(sol)) or np.linalg.norm(K @ sol - r, np.inf) > 1e-8:
                continue
            x = sol[:n]
            if qp.A_eq.size and np.max(np.abs(qp.A_eq @ x - qp.b_eq)) > tol:
                continue
            if A_all.size and np.max(A_all @ x - b_all) > tol:
                continue
            f = qp.objective(x)
            if f < best_f - 1e-14:
                best_x, best_f = x, f
    return best_x, best_f
