"""Pure NumPy/SciPy semi-implicit gradient flow, any dimension.

One step solves ``(I - 2 tau L) v_new = v - tau (W'(v) - theta gbar)`` on the
unknown nodes (all nodes for Neumann, interior nodes for Dirichlet).  The
matrix is constant, so it is factorized once per (grid, tau, bc) and cached.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .potential import PotentialSpec, w as w_pot, w_prime

CONVERGED, STAGNATED, MAX_ITERS, MONOTONE_VIOLATION, ENERGY_INCREASE = range(5)
MONOTONE_TOL = 1e-10


def _lap1d(m: int, h: float) -> sp.csr_matrix:
    main = np.full(m, -2.0)
    upper = np.ones(m - 1)
    lower = np.ones(m - 1)
    upper[0] = 2.0  # reflected ghost node
    lower[-1] = 2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


@lru_cache(maxsize=16)
def _operators(shape: tuple[int, ...], h: float, tau: float, dirichlet: bool):
    d = len(shape)
    m = shape[0]
    L1 = _lap1d(m, h)
    eye = sp.identity(m, format="csr")
    L = None
    for j in range(d):
        term = None
        for k in range(d):
            f = L1 if k == j else eye
            term = f if term is None else sp.kron(term, f, format="csr")
        L = term if L is None else L + term
    L = L.tocsr()
    if dirichlet:
        interior = np.ones(shape, dtype=bool)
        for j in range(d):
            idx = [slice(None)] * d
            idx[j] = 0
            interior[tuple(idx)] = False
            idx[j] = -1
            interior[tuple(idx)] = False
        unk = np.flatnonzero(interior.ravel())
        bnd = np.flatnonzero(~interior.ravel())
    else:
        unk = np.arange(L.shape[0])
        bnd = np.arange(0)
    Luu = L[unk][:, unk].tocsr()
    Lub = L[unk][:, bnd].tocsr()
    A = (sp.identity(len(unk), format="csc") - 2.0 * tau * Luu).tocsc()
    return unk, bnd, Luu, Lub, splu(A)


def nodal_energy(v: np.ndarray, gbar: np.ndarray, h: float, theta: float, pot: PotentialSpec) -> float:
    d = v.ndim
    t = np.ones(v.shape[0])
    t[0] = t[-1] = 0.5
    weights = np.array(h**d)
    for _ in range(d):
        weights = np.multiply.outer(weights, t)
    grad = 0.0
    for j in range(d):
        dv2 = np.diff(v, axis=j) ** 2
        ew = np.array(1.0)
        for k in range(d):
            ew = np.multiply.outer(ew, np.ones(v.shape[k] - 1) if k == j else t)
        grad += float((dv2 * ew).sum())
    grad *= h ** (d - 2)
    return grad + float((weights * (w_pot(pot, v) - theta * gbar * v)).sum())


def flow(v0, gbar, h, tau, theta, pot: PotentialSpec, dirichlet: bool, residual_tol: float,
         energy_tol: float, max_iters: int, monotone: int = 0, trace: bool = False):
    """Run the flow from ``v0``; returns ``(v, iters, residual, energy, status, e_trace, r_trace)``."""
    v = np.array(v0, dtype=np.float64)
    shape = v.shape
    unk, bnd, Luu, Lub, lu = _operators(shape, float(h), float(tau), bool(dirichlet))
    flat = v.ravel()
    g = np.asarray(gbar, dtype=np.float64).ravel()[unk]
    bterm = Lub @ flat[bnd] if len(bnd) else 0.0
    u = flat[unk].copy()

    wp = w_prime(pot, u)
    res = float(np.max(np.abs(Luu @ u + bterm - 0.5 * (wp - theta * g)))) if len(u) else 0.0
    e_old = nodal_energy(v, gbar, h, theta, pot)
    e_tr, r_tr = ([e_old], [res]) if trace else (None, None)
    status = CONVERGED if res < residual_tol else MAX_ITERS
    it = 0
    while status == MAX_ITERS and it < max_iters:
        rhs = u - tau * (wp - theta * g) + 2.0 * tau * bterm
        u_new = lu.solve(rhs)
        it += 1
        if monotone and np.max(monotone * (u_new - u)) > MONOTONE_TOL:
            u = u_new
            status = MONOTONE_VIOLATION
            break
        u = u_new
        flat[unk] = u
        wp = w_prime(pot, u)
        res = float(np.max(np.abs(Luu @ u + bterm - 0.5 * (wp - theta * g))))
        e_new = nodal_energy(v, gbar, h, theta, pot)
        if trace:
            e_tr.append(e_new)
            r_tr.append(res)
        if e_new > e_old + 1e-11 * (1.0 + abs(e_old)):
            status = ENERGY_INCREASE
            e_old = e_new
            break
        if res < residual_tol:
            status = CONVERGED
        elif energy_tol > 0 and abs(e_new - e_old) < energy_tol:
            status = STAGNATED
        e_old = e_new
    flat[unk] = u
    return (flat.reshape(shape), it, res, e_old, status,
            np.array(e_tr) if trace else None, np.array(r_tr) if trace else None)


def chain_min(gbar, h, theta, pot: PotentialSpec, S: float, m: int, left: float, right: float,
              fix_left: bool, fix_right: bool) -> np.ndarray:
    """Exact minimizer of the 1D nodal energy over the levels ``S * (j - m) / m`` (brute-force min-plus)."""
    g = np.asarray(gbar, dtype=np.float64)
    N = g.size
    x = (np.arange(2 * m + 1) - m) * S / m
    wx = w_pot(pot, x)
    wts = np.full(N, h)
    wts[0] = wts[-1] = 0.5 * h
    pair = (x[:, None] - x[None, :]) ** 2 / h
    lo, hi = (1 if fix_left else 0), (N - 1 if fix_right else N)
    cost = wts[lo] * (wx - theta * g[lo] * x)
    if fix_left:
        cost = cost + (x - left) ** 2 / h
    arg = np.zeros((N, x.size), dtype=np.intp)
    for k in range(lo + 1, hi):
        tot = cost[:, None] + pair
        arg[k] = np.argmin(tot, axis=0)
        cost = tot[arg[k], np.arange(x.size)] + wts[k] * (wx - theta * g[k] * x)
    if fix_right:
        cost = cost + (right - x) ** 2 / h
    j = int(np.argmin(cost))
    out = np.empty(N)
    for k in range(hi - 1, lo - 1, -1):
        out[k] = x[j]
        if k > lo:
            j = arg[k, j]
    if fix_left:
        out[0] = left
    if fix_right:
        out[-1] = right
    return out
