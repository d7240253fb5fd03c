"""Pure-Python dual active-set kernel (Goldfarb-Idnani).

Solves ``min 1/2 x'Gx + a'x`` subject to ``C[:meq] x = b[:meq]`` and
``C[meq:] x >= b[meq:]`` for symmetric positive definite ``G``. The active
set is carried as ``J = L^{-T} Q`` and the triangular ``R`` of the QR
factorisation of ``L^{-1} N``; both are updated with Givens rotations when a
constraint enters or leaves.

Status codes: 0 optimal, 1 infeasible, 2 iteration limit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

OPTIMAL, INFEASIBLE, MAX_ITER = 0, 1, 2


def _givens(a: float, b: float) -> tuple[float, float, float]:
    h = math.hypot(a, b)
    if h == 0.0:
        return 1.0, 0.0, 0.0
    return a / h, b / h, h


def solve_dense(G, a, C, b, meq: int, max_iter: int = 500, tol: float = 1e-11):
    """Return ``(status, x, lam, iterations)``; ``lam`` satisfies ``Gx + a = C'lam``."""
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, G.shape[0])
    b = np.asarray(b, dtype=float)
    n = G.shape[0]
    m = C.shape[0]
    L = np.linalg.cholesky(G)
    J = solve_triangular(L, np.eye(n), lower=True).T.copy()
    x = -(J @ (J.T @ a))
    R = np.zeros((n, n))
    active: list[int] = []
    u: list[float] = []
    sign = np.ones(m)
    is_active = np.zeros(m, dtype=bool)
    q = 0
    it = 0

    def drop(k: int) -> None:
        nonlocal q
        R[:, k:q - 1] = R[:, k + 1:q]
        R[:, q - 1] = 0.0
        for j in range(k, q - 1):
            c, s, h = _givens(R[j, j], R[j + 1, j])
            if s == 0.0:
                continue
            rj = R[j, j:q - 1].copy()
            rj1 = R[j + 1, j:q - 1].copy()
            R[j, j:q - 1] = c * rj + s * rj1
            R[j + 1, j:q - 1] = -s * rj + c * rj1
            R[j + 1, j] = 0.0
            cj = J[:, j].copy()
            J[:, j] = c * cj + s * J[:, j + 1]
            J[:, j + 1] = -s * cj + c * J[:, j + 1]
        is_active[active[k]] = False
        del active[k]
        q -= 1

    def add(p: int, d: np.ndarray) -> None:
        nonlocal q
        for j in range(n - 1, q, -1):
            c, s, h = _givens(d[j - 1], d[j])
            if s == 0.0:
                continue
            d[j - 1] = h
            d[j] = 0.0
            cj = J[:, j - 1].copy()
            J[:, j - 1] = c * cj + s * J[:, j]
            J[:, j] = -s * cj + c * J[:, j]
        R[:q + 1, q] = d[:q + 1]
        active.append(p)
        is_active[p] = True
        q += 1

    def step(p: int, s_p: float) -> int:
        """Bring constraint ``p`` into the active set; returns a status or -1 on success."""
        nonlocal x, u, it
        n_p = sign[p] * C[p]
        b_p = sign[p] * b[p]
        uplus = u + [0.0]
        while True:
            it += 1
            if it > max_iter:
                return MAX_ITER
            d = J.T @ n_p
            z = J[:, q:] @ d[q:]
            r = solve_triangular(R[:q, :q], d[:q], lower=False) if q else np.zeros(0)
            t1 = math.inf
            k = -1
            for j in range(q):
                if active[j] >= meq and r[j] > 0.0:
                    ratio = uplus[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ n_p)
            t2 = -s_p / zn if zn > 1e-14 else math.inf
            t = min(t1, t2)
            if t == math.inf:
                return INFEASIBLE
            for j in range(q):
                uplus[j] -= t * r[j]
            uplus[q] += t
            if t2 == math.inf:
                del uplus[k]
                drop(k)
                continue
            x = x + t * z
            if t == t2:
                u = uplus
                add(p, d)
                return -1
            del uplus[k]
            drop(k)
            s_p = float(n_p @ x - b_p)

    for p in range(meq):
        s_p = float(C[p] @ x - b[p])
        if s_p > 0.0:
            sign[p] = -1.0
            s_p = -s_p
        d = J.T @ (sign[p] * C[p])
        if q < n and np.linalg.norm(J[:, q:] @ d[q:]) > 1e-12:
            status = step(p, s_p)
            if status >= 0:
                return status, x, _multipliers(m, active, u, sign), it
        elif abs(s_p) > max(tol, 1e-9):
            return INFEASIBLE, x, _multipliers(m, active, u, sign), it

    while True:
        if m == meq:
            break
        s = C[meq:] @ x - b[meq:]
        s[is_active[meq:]] = math.inf
        p = int(np.argmin(s))
        s_p = float(s[p])
        if s_p >= -tol:
            break
        status = step(p + meq, s_p)
        if status >= 0:
            return status, x, _multipliers(m, active, u, sign), it
    return OPTIMAL, x, _multipliers(m, active, u, sign), it


def _multipliers(m, active, u, sign):
    lam = np.zeros(m)
    for j, p in enumerate(active):
        lam[p] = sign[p] * u[j]
    return lam
