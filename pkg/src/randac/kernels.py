"""Backend selection for the flow kernel.

The compiled 1D kernel is used when it imports and ``RANDAC_PURE_PYTHON`` is
unset; every other case runs the NumPy/SciPy implementation.
"""

from __future__ import annotations

import os

import numpy as np

from . import _flow_py
from ._flow_py import CONVERGED, ENERGY_INCREASE, MAX_ITERS, MONOTONE_VIOLATION, STAGNATED  # noqa: F401
from .potential import PotentialSpec

try:
    from . import _flow1d
except ImportError:  # extension not built
    _flow1d = None

FORCE_PURE = os.environ.get("RANDAC_PURE_PYTHON", "") not in ("", "0")


def compiled_available() -> bool:
    return _flow1d is not None


def backend_name(dim: int = 1) -> str:
    return "cython" if dim == 1 and _flow1d is not None and not FORCE_PURE else "python"


def run_flow(v0, gbar, h, tau, theta, pot: PotentialSpec, dirichlet, residual_tol, energy_tol,
             max_iters, monotone=0, trace=False, backend: str | None = None):
    """Dispatch one flow run; see ``_flow_py.flow`` for the return tuple."""
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    backend = backend or backend_name(v0.ndim)
    if backend == "cython":
        if v0.ndim != 1 or _flow1d is None:
            raise RuntimeError("compiled kernel only handles d = 1 and must be built")
        return _flow1d.flow_1d(
            v0, np.ascontiguousarray(gbar, dtype=np.float64), float(h), float(tau), float(theta),
            float(pot.C0), float(pot.s0), np.asarray(pot.glue_coeffs, dtype=np.float64),
            np.asarray(pot.deriv_coeffs, dtype=np.float64), bool(dirichlet), float(residual_tol),
            float(energy_tol), int(max_iters), int(monotone), bool(trace))
    return _flow_py.flow(v0, gbar, h, tau, theta, pot, dirichlet, residual_tol, energy_tol,
                         max_iters, monotone, trace)


def run_chain_min(gbar, h, theta, pot: PotentialSpec, S, m, left=0.0, right=0.0, fix_left=False,
                  fix_right=False, backend: str | None = None) -> np.ndarray:
    """Exact 1D minimizer over ``2m+1`` symmetric levels in ``[-S, S]``; ends optionally fixed."""
    gbar = np.ascontiguousarray(gbar, dtype=np.float64)
    if gbar.ndim != 1:
        raise ValueError("chain minimization is one-dimensional")
    backend = backend or backend_name(1)
    if backend == "cython":
        if _flow1d is None:
            raise RuntimeError("compiled kernel is not built")
        return _flow1d.chain_min_1d(gbar, float(h), float(theta), float(pot.C0), float(pot.s0),
                                    np.asarray(pot.glue_coeffs, dtype=np.float64), float(S), int(m),
                                    float(left), float(right), bool(fix_left), bool(fix_right))
    return _flow_py.chain_min(gbar, float(h), float(theta), pot, float(S), int(m), float(left), float(right),
                              bool(fix_left), bool(fix_right))
