# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 1D semi-implicit flow: pointwise reaction, Thomas solve, residual and energy in one loop.

Same contract and status codes as ``randac._flow_py.flow`` restricted to d = 1.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double MONOTONE_TOL = 1e-10


cdef inline double _horner(const double* c, int nc, double s) noexcept nogil:
    cdef double out = c[nc - 1]
    cdef int k
    for k in range(nc - 2, -1, -1):
        out = c[k] + s * out
    return out


cdef inline double _wprime(double s, double s0, double invC0, const double* dc, int ndc) noexcept nogil:
    if s > s0:
        return invC0 * (s - 1.0)
    if s < -s0:
        return invC0 * (s + 1.0)
    return _horner(dc, ndc, s)


cdef inline double _wval(double s, double s0, double half_invC0, const double* c, int nc) noexcept nogil:
    cdef double t
    if s > s0:
        t = s - 1.0
        return half_invC0 * (t * t)
    if s < -s0:
        t = s + 1.0
        return half_invC0 * (t * t)
    return _horner(c, nc, s)


cdef double _energy(const double* v, const double* g, Py_ssize_t N, double h, double theta,
                    double s0, double half_invC0, const double* c, int nc) noexcept nogil:
    cdef double grad = 0.0, bulk = 0.0, dv, wk
    cdef Py_ssize_t k
    for k in range(N - 1):
        dv = v[k + 1] - v[k]
        grad += dv * dv
    for k in range(N):
        wk = h
        if k == 0 or k == N - 1:
            wk = 0.5 * h
        bulk += wk * (_wval(v[k], s0, half_invC0, c, nc) - theta * g[k] * v[k])
    return grad / h + bulk


def flow_1d(const double[::1] v0, const double[::1] gbar, double h, double tau, double theta,
            double C0, double s0, const double[::1] glue, const double[::1] dglue,
            bint dirichlet, double residual_tol, double energy_tol, long max_iters,
            int monotone=0, bint trace=False):
    cdef Py_ssize_t N = v0.shape[0]
    cdef Py_ssize_t k, lo, hi
    cdef double invC0 = 1.0 / C0
    cdef double half_invC0 = 0.5 / C0
    cdef double a = 2.0 * tau / (h * h)
    cdef double inv_h2 = 1.0 / (h * h)
    cdef const double* c = &glue[0]
    cdef const double* dc = &dglue[0]
    cdef int nc = glue.shape[0]
    cdef int ndc = dglue.shape[0]

    v_arr = np.array(v0, dtype=np.float64, copy=True)
    cdef double[::1] v = v_arr
    cdef double[::1] wp = np.empty(N)
    cdef double[::1] rhs = np.empty(N)
    cdef double[::1] cprime = np.zeros(N)
    cdef double[::1] dinv = np.zeros(N)
    cdef double[::1] lower = np.zeros(N)
    cdef double[::1] upper = np.zeros(N)
    cdef const double* g = &gbar[0]

    e_tr = np.empty(max_iters + 1) if trace else None
    r_tr = np.empty(max_iters + 1) if trace else None
    cdef double[::1] e_view
    cdef double[::1] r_view
    if trace:
        e_view = e_tr
        r_view = r_tr

    if dirichlet:
        lo, hi = 1, N - 1
    else:
        lo, hi = 0, N

    # tridiagonal rows of I - 2 tau L on the unknowns, with reflected ghosts for Neumann
    for k in range(lo, hi):
        lower[k] = -a
        upper[k] = -a
    if not dirichlet:
        upper[0] = -2.0 * a
        lower[N - 1] = -2.0 * a
    lower[lo] = 0.0
    upper[hi - 1] = 0.0
    dinv[lo] = 1.0 / (1.0 + 2.0 * a)
    cprime[lo] = upper[lo] * dinv[lo]
    for k in range(lo + 1, hi):
        dinv[k] = 1.0 / ((1.0 + 2.0 * a) - lower[k] * cprime[k - 1])
        cprime[k] = upper[k] * dinv[k]

    cdef double res, r, e_old, e_new, diff, vl, vr, step_max
    cdef long it = 0
    cdef int status

    with nogil:
        for k in range(lo, hi):
            wp[k] = _wprime(v[k], s0, invC0, dc, ndc)
        res = 0.0
        for k in range(lo, hi):
            vl = v[k - 1] if k > 0 else v[k + 1]
            vr = v[k + 1] if k < N - 1 else v[k - 1]
            r = fabs((vl + vr - 2.0 * v[k]) * inv_h2 - 0.5 * (wp[k] - theta * g[k]))
            if r > res:
                res = r
        e_old = _energy(&v[0], g, N, h, theta, s0, half_invC0, c, nc)
        if trace:
            e_view[0] = e_old
            r_view[0] = res
        status = 0 if res < residual_tol else 2

        while status == 2 and it < max_iters:
            for k in range(lo, hi):
                rhs[k] = v[k] - tau * (wp[k] - theta * g[k])
            if dirichlet:
                rhs[1] += a * v[0]
                rhs[N - 2] += a * v[N - 1]
            # forward sweep, then back substitution into rhs
            rhs[lo] = rhs[lo] * dinv[lo]
            for k in range(lo + 1, hi):
                rhs[k] = (rhs[k] - lower[k] * rhs[k - 1]) * dinv[k]
            for k in range(hi - 2, lo - 1, -1):
                rhs[k] = rhs[k] - cprime[k] * rhs[k + 1]
            it += 1
            step_max = -1e300
            for k in range(lo, hi):
                diff = monotone * (rhs[k] - v[k])
                if diff > step_max:
                    step_max = diff
                v[k] = rhs[k]
            if monotone != 0 and step_max > MONOTONE_TOL:
                status = 3
                break
            for k in range(lo, hi):
                wp[k] = _wprime(v[k], s0, invC0, dc, ndc)
            res = 0.0
            for k in range(lo, hi):
                vl = v[k - 1] if k > 0 else v[k + 1]
                vr = v[k + 1] if k < N - 1 else v[k - 1]
                r = fabs((vl + vr - 2.0 * v[k]) * inv_h2 - 0.5 * (wp[k] - theta * g[k]))
                if r > res:
                    res = r
            e_new = _energy(&v[0], g, N, h, theta, s0, half_invC0, c, nc)
            if trace:
                e_view[it] = e_new
                r_view[it] = res
            if e_new > e_old + 1e-11 * (1.0 + fabs(e_old)):
                e_old = e_new
                status = 4
                break
            if res < residual_tol:
                status = 0
            elif energy_tol > 0 and fabs(e_new - e_old) < energy_tol:
                status = 1
            e_old = e_new

    if trace:
        e_tr = e_tr[:it + 1]
        r_tr = r_tr[:it + 1]
    return v_arr, it, res, e_old, status, e_tr, r_tr


cdef void _dist_transform(const double* f, Py_ssize_t K, double a, double* out, int* arg,
                          int* v, double* z) noexcept nogil:
    # lower envelope of the parabolas f[i] + a (j - i)^2 (Felzenszwalb-Huttenlocher)
    cdef Py_ssize_t q, j, k = 0, first = -1
    cdef double s
    for q in range(K):
        if f[q] < 1e300:
            first = q
            break
    v[0] = <int>first
    z[0] = -1e300
    z[1] = 1e300
    for q in range(first + 1, K):
        if f[q] >= 1e300:
            continue
        s = ((f[q] + a * q * q) - (f[v[k]] + a * v[k] * v[k])) / (2.0 * a * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((f[q] + a * q * q) - (f[v[k]] + a * v[k] * v[k])) / (2.0 * a * (q - v[k]))
        k += 1
        v[k] = <int>q
        z[k] = s
        z[k + 1] = 1e300
    k = 0
    for j in range(K):
        while z[k + 1] < j:
            k += 1
        out[j] = a * (j - v[k]) * (j - v[k]) + f[v[k]]
        arg[j] = v[k]


def chain_min_1d(const double[::1] gbar, double h, double theta, double C0, double s0,
                 const double[::1] glue, double S, int m, double left, double right,
                 bint fix_left, bint fix_right):
    """Exact minimizer of the 1D nodal energy over the levels ``S * (j - m) / m``, j = 0..2m.

    Fixed end values need not be levels.  Returns the node values.
    """
    cdef Py_ssize_t N = gbar.shape[0]
    cdef Py_ssize_t K = 2 * m + 1
    cdef Py_ssize_t k, j, lo, hi, best
    cdef double half_invC0 = 0.5 / C0
    cdef const double* c = &glue[0]
    cdef int nc = glue.shape[0]
    cdef double inv_h = 1.0 / h
    cdef double a, wk, bestv, t
    x_arr = np.empty(K)
    cdef double[::1] x = x_arr
    cdef double[::1] wx = np.empty(K)
    cdef double[::1] cost = np.empty(K)
    cdef double[::1] nxt = np.empty(K)
    cdef int[:, ::1] arg = np.zeros((N, K), dtype=np.intc)
    cdef int[::1] env_v = np.zeros(K, dtype=np.intc)
    cdef double[::1] env_z = np.zeros(K + 1)
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr

    lo = 1 if fix_left else 0
    hi = N - 1 if fix_right else N
    a = (S / m) * (S / m) * inv_h
    with nogil:
        for j in range(K):
            x[j] = (j - m) * S / m
            wx[j] = _wval(x[j], s0, half_invC0, c, nc)
        for k in range(lo, hi):
            wk = 0.5 * h if (k == 0 or k == N - 1) else h
            if k == lo:
                for j in range(K):
                    cost[j] = wk * (wx[j] - theta * gbar[k] * x[j])
                    if fix_left:
                        t = x[j] - left
                        cost[j] += t * t * inv_h
            else:
                _dist_transform(&cost[0], K, a, &nxt[0], &arg[k, 0], &env_v[0], &env_z[0])
                for j in range(K):
                    cost[j] = nxt[j] + wk * (wx[j] - theta * gbar[k] * x[j])
        best = 0
        bestv = 1e308
        for j in range(K):
            t = cost[j]
            if fix_right:
                t += (right - x[j]) * (right - x[j]) * inv_h
            if t < bestv:
                bestv = t
                best = j
        j = best
        for k in range(hi - 1, lo - 1, -1):
            out[k] = x[j]
            if k > lo:
                j = arg[k, j]
        if fix_left:
            out[0] = left
        if fix_right:
            out[N - 1] = right
    return out_arr
