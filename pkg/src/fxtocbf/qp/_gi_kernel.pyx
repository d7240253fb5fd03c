# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dual active-set kernel (Goldfarb-Idnani).

Same algorithm, tolerances and status codes as ``_gi_py.solve_dense``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot, INFINITY

cnp.import_array()

DEF OPTIMAL = 0
DEF INFEASIBLE = 1
DEF MAX_ITER = 2


cdef class _State:
    cdef int n, m, meq, q, it, max_iter
    cdef double tol
    cdef double[:, ::1] C
    cdef double[::1] b
    cdef double[:, ::1] J
    cdef double[:, ::1] R
    cdef double[::1] x
    cdef double[::1] u
    cdef double[::1] uplus
    cdef double[::1] d
    cdef double[::1] z
    cdef double[::1] r
    cdef double[::1] np_
    cdef double[::1] sign
    cdef int[::1] active
    cdef char[::1] is_active

    cdef void drop(self, int k):
        cdef int q = self.q, n = self.n
        cdef int i, j, col
        cdef double c, s, h, a1, a2
        for col in range(k, q - 1):
            for i in range(q):
                self.R[i, col] = self.R[i, col + 1]
        for i in range(q):
            self.R[i, q - 1] = 0.0
        for j in range(k, q - 1):
            a1 = self.R[j, j]
            a2 = self.R[j + 1, j]
            h = hypot(a1, a2)
            if h == 0.0 or a2 == 0.0:
                continue
            c = a1 / h
            s = a2 / h
            for col in range(j, q - 1):
                a1 = self.R[j, col]
                a2 = self.R[j + 1, col]
                self.R[j, col] = c * a1 + s * a2
                self.R[j + 1, col] = -s * a1 + c * a2
            self.R[j + 1, j] = 0.0
            for i in range(n):
                a1 = self.J[i, j]
                a2 = self.J[i, j + 1]
                self.J[i, j] = c * a1 + s * a2
                self.J[i, j + 1] = -s * a1 + c * a2
        self.is_active[self.active[k]] = 0
        for j in range(k, q - 1):
            self.active[j] = self.active[j + 1]
        self.q = q - 1

    cdef void add(self, int p):
        cdef int q = self.q, n = self.n
        cdef int i, j
        cdef double c, s, h, a1, a2
        for j in range(n - 1, q, -1):
            a1 = self.d[j - 1]
            a2 = self.d[j]
            h = hypot(a1, a2)
            if h == 0.0 or a2 == 0.0:
                continue
            c = a1 / h
            s = a2 / h
            self.d[j - 1] = h
            self.d[j] = 0.0
            for i in range(n):
                a1 = self.J[i, j - 1]
                a2 = self.J[i, j]
                self.J[i, j - 1] = c * a1 + s * a2
                self.J[i, j] = -s * a1 + c * a2
        for i in range(q + 1):
            self.R[i, q] = self.d[i]
        self.active[q] = p
        self.is_active[p] = 1
        self.q = q + 1

    cdef void directions(self):
        cdef int n = self.n, q = self.q
        cdef int i, j
        cdef double acc
        for j in range(n):
            acc = 0.0
            for i in range(n):
                acc += self.J[i, j] * self.np_[i]
            self.d[j] = acc
        for i in range(n):
            acc = 0.0
            for j in range(q, n):
                acc += self.J[i, j] * self.d[j]
            self.z[i] = acc
        for i in range(q - 1, -1, -1):
            acc = self.d[i]
            for j in range(i + 1, q):
                acc -= self.R[i, j] * self.r[j]
            self.r[i] = acc / self.R[i, i]

    cdef double slack(self, int p):
        cdef int i
        cdef double acc = 0.0
        for i in range(self.n):
            acc += self.C[p, i] * self.x[i]
        return acc - self.b[p]

    cdef int step(self, int p, double s_p):
        cdef int n = self.n
        cdef int i, j, k
        cdef double t1, t2, t, zn, ratio, b_p
        cdef double sg = self.sign[p]
        for i in range(n):
            self.np_[i] = sg * self.C[p, i]
        b_p = sg * self.b[p]
        for j in range(self.q):
            self.uplus[j] = self.u[j]
        self.uplus[self.q] = 0.0
        while True:
            self.it += 1
            if self.it > self.max_iter:
                return MAX_ITER
            self.directions()
            t1 = INFINITY
            k = -1
            for j in range(self.q):
                if self.active[j] >= self.meq and self.r[j] > 0.0:
                    ratio = self.uplus[j] / self.r[j]
                    if ratio < t1:
                        t1 = ratio
                        k = j
            zn = 0.0
            for i in range(n):
                zn += self.z[i] * self.np_[i]
            t2 = -s_p / zn if zn > 1e-14 else INFINITY
            t = t1 if t1 < t2 else t2
            if t == INFINITY:
                return INFEASIBLE
            for j in range(self.q):
                self.uplus[j] -= t * self.r[j]
            self.uplus[self.q] += t
            if t2 == INFINITY:
                for j in range(k, self.q):
                    self.uplus[j] = self.uplus[j + 1]
                self.drop(k)
                continue
            for i in range(n):
                self.x[i] += t * self.z[i]
            if t == t2:
                for j in range(self.q + 1):
                    self.u[j] = self.uplus[j]
                self.add(p)
                return -1
            for j in range(k, self.q):
                self.uplus[j] = self.uplus[j + 1]
            self.drop(k)
            s_p = 0.0
            for i in range(n):
                s_p += self.np_[i] * self.x[i]
            s_p -= b_p


def solve_dense(G, a, C, b, int meq, int max_iter=500, double tol=1e-11):
    """Return ``(status, x, lam, iterations)``; ``lam`` satisfies ``Gx + a = C'lam``."""
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef int n = Gv.shape[0]
    Cm = np.ascontiguousarray(np.asarray(C, dtype=np.float64).reshape(-1, n))
    cdef int m = Cm.shape[0]
    cdef int i, j, k, p, status
    cdef double acc, s_p, best, zz
    cdef _State st = _State()
    st.n = n
    st.m = m
    st.meq = meq
    st.q = 0
    st.it = 0
    st.max_iter = max_iter
    st.tol = tol
    st.C = Cm
    st.b = np.ascontiguousarray(b, dtype=np.float64)
    st.R = np.zeros((n, n))
    st.x = np.zeros(n)
    st.u = np.zeros(n + 1)
    st.uplus = np.zeros(n + 2)
    st.d = np.zeros(n)
    st.z = np.zeros(n)
    st.r = np.zeros(n + 1)
    st.np_ = np.zeros(n)
    st.sign = np.ones(max(m, 1))
    st.active = np.zeros(n + 1, dtype=np.intc)
    st.is_active = np.zeros(max(m, 1), dtype=np.int8)

    # Cholesky G = L L' in place (lower), then J = L^{-T}
    cdef double[:, ::1] L = np.zeros((n, n))
    for j in range(n):
        acc = Gv[j, j]
        for k in range(j):
            acc -= L[j, k] * L[j, k]
        if acc <= 0.0:
            raise np.linalg.LinAlgError("matrix is not positive definite")
        L[j, j] = sqrt(acc)
        for i in range(j + 1, n):
            acc = Gv[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    cdef double[:, ::1] Linv = np.zeros((n, n))
    for j in range(n):
        for i in range(j, n):
            acc = 1.0 if i == j else 0.0
            for k in range(j, i):
                acc -= L[i, k] * Linv[k, j]
            Linv[i, j] = acc / L[i, i]
    st.J = np.ascontiguousarray(np.asarray(Linv).T)
    # x = -J J' a
    cdef double[::1] tmp = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for i in range(n):
            acc += st.J[i, j] * av[i]
        tmp[j] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += st.J[i, j] * tmp[j]
        st.x[i] = -acc

    for p in range(meq):
        s_p = st.slack(p)
        if s_p > 0.0:
            st.sign[p] = -1.0
            s_p = -s_p
        for i in range(n):
            st.np_[i] = st.sign[p] * st.C[p, i]
        st.directions()
        zz = 0.0
        for i in range(n):
            zz += st.z[i] * st.z[i]
        if st.q < n and sqrt(zz) > 1e-12:
            status = st.step(p, s_p)
            if status >= 0:
                return status, np.asarray(st.x).copy(), _multipliers(st, m), st.it
        elif fabs(s_p) > max(tol, 1e-9):
            return INFEASIBLE, np.asarray(st.x).copy(), _multipliers(st, m), st.it

    while m > meq:
        best = INFINITY
        k = -1
        for p in range(meq, m):
            if st.is_active[p]:
                continue
            s_p = st.slack(p)
            if s_p < best:
                best = s_p
                k = p
        if k < 0 or best >= -tol:
            break
        status = st.step(k, best)
        if status >= 0:
            return status, np.asarray(st.x).copy(), _multipliers(st, m), st.it
    return OPTIMAL, np.asarray(st.x).copy(), _multipliers(st, m), st.it


cdef _multipliers(_State st, int m):
    lam = np.zeros(m)
    cdef int j, p
    for j in range(st.q):
        p = st.active[j]
        lam[p] = st.sign[p] * st.u[j]
    return lam
