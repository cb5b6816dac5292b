"""Minimizers and extremal minimizers of the discrete energy.

All solves run the semi-implicit gradient flow

    (I - 2 tau L) v_{k+1} = v_k - tau (W'(v_k) - theta gbar)

which, for ``tau * sup W'' <= 1``, decreases the energy at every step and
preserves the node-wise order of iterates (ordered data give ordered
iterates).  Started from the constant supersolution ``S = 1 + C0 theta gmax``
under Dirichlet data ``S`` the iterates decrease to the maximal critical
point below ``S``; the mirror start gives the minimal one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.ndimage import uniform_filter

from . import kernels
from .errors import ConfigurationError, NonConvergenceError, PreconditionError, SchemeIntegrityError
from .field import FieldRealization, negate
from .grid_energy import (DiscreteProfile, EnergyBreakdown, GridSpec, cell_field, el_residual, energy,
                          nodal_field, residual_array)
from .potential import PotentialSpec, sup_w_second, w_prime

log = logging.getLogger(__name__)

SCHEMES = ("semi_implicit_flow", "monotone_iteration")
EXTREMAL_MODES = ("minimizer", "flow")


@dataclass(frozen=True)
class SolverOptions:
    """Flow controls.  ``None`` entries are filled in by :meth:`resolve`.

    Defaults: ``monotone_shift = sup W''/2`` on the working range and
    ``time_step = 1/(2 monotone_shift)``, the largest step that keeps the
    scheme order preserving; ``residual_tol`` is 1e-8 in d=1 and 1e-6 above.

    ``extremal`` selects what :func:`extremal_pair` returns: ``"flow"`` gives
    the monotone flow limits (extremal critical points), ``"minimizer"`` the
    extremal global minimizers (exact level-set dynamic programming in d=1,
    best of several descents in higher d).  ``levels`` is the half-count of
    quantization levels for the d=1 search.
    """

    time_step: float | None = None
    residual_tol: float | None = None
    energy_tol: float = 0.0
    max_iters: int = 200_000
    monotone_shift: float | None = None
    scheme: str = "semi_implicit_flow"
    debug_order: bool = False
    extremal: str = "minimizer"
    levels: int = 400

    def resolve(self, potential: PotentialSpec, theta: float, gmax: float, dim: int) -> "SolverOptions":
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.extremal not in EXTREMAL_MODES:
            raise ConfigurationError(f"extremal must be one of {EXTREMAL_MODES}, got {self.extremal!r}")
        if self.levels < 2:
            raise ConfigurationError("levels must be >= 2")
        S_work = 1.0 + potential.C0 * theta * gmax + 0.5
        curv = max(sup_w_second(potential, S_work), 1e-12)
        M = self.monotone_shift if self.monotone_shift is not None else 0.5 * curv
        if M < 0.5 * curv * (1 - 1e-12):
            raise ConfigurationError(f"monotone_shift {M} below sup W''/2 = {0.5 * curv}")
        if self.scheme == "monotone_iteration" or self.time_step is None:
            tau = 1.0 / (2.0 * M)
        else:
            tau = self.time_step
        if not tau > 0:
            raise ConfigurationError("time_step must be positive")
        if tau * curv > 1.0 + 1e-12:
            raise ConfigurationError(f"time_step {tau} breaks order preservation (needs <= {1.0 / curv})")
        tol = self.residual_tol if self.residual_tol is not None else (1e-8 if dim == 1 else 1e-6)
        if not tol > 0 or self.energy_tol < 0 or self.max_iters < 1:
            raise ConfigurationError("tolerances must be positive and max_iters >= 1")
        return replace(self, time_step=tau, residual_tol=tol, monotone_shift=M)


@dataclass
class SolveResult:
    profile: DiscreteProfile
    iterations: int
    residual: float
    energy: EnergyBreakdown
    status: int
    energy_trace: np.ndarray | None = None
    residual_trace: np.ndarray | None = None


@dataclass
class ExtremalPair:
    v_plus: DiscreteProfile
    v_minus: DiscreteProfile
    energy_plus: EnergyBreakdown
    energy_minus: EnergyBreakdown
    iterations: tuple[int, int]
    residuals: tuple[float, float]
    theta: float
    field_fingerprint: str
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.energy_plus.total - self.energy_minus.total


def boundary_level(potential: PotentialSpec, theta: float, gmax: float) -> float:
    """Dirichlet level ``1 + C0 theta gmax`` of the extremal problems."""
    return 1.0 + potential.C0 * theta * gmax


def _check_compat(field: FieldRealization, grid: GridSpec) -> np.ndarray:
    if field.dim != grid.dim:
        raise ConfigurationError(f"field dimension {field.dim} does not match grid dimension {grid.dim}")
    return nodal_field(grid, cell_field(grid, field))


def solve(field: FieldRealization, theta: float, grid: GridSpec, init: DiscreteProfile,
          opts: SolverOptions | None = None, potential: PotentialSpec | None = None,
          monotone: int = 0, trace: bool = False, gbar: np.ndarray | None = None) -> SolveResult:
    """Run the flow from ``init`` to a critical point and report diagnostics.

    ``monotone=+1`` asserts that no node increases across a step (``-1``:
    decreases); a violation raises :class:`SchemeIntegrityError`.
    """
    potential = potential or PotentialSpec()
    opts = (opts or SolverOptions()).resolve(potential, theta, field.gmax, grid.dim)
    if init.grid != grid:
        raise PreconditionError("initial profile lives on a different grid or boundary condition")
    if gbar is None:
        gbar = _check_compat(field, grid)
    v, iters, res, _, status, e_tr, r_tr = kernels.run_flow(
        init.values, gbar, grid.h, opts.time_step, theta, potential, grid.is_dirichlet,
        opts.residual_tol, opts.energy_tol, opts.max_iters, monotone, trace)
    if status == kernels.MONOTONE_VIOLATION:
        raise SchemeIntegrityError(f"monotone scheme violated at iteration {iters}")
    if status == kernels.ENERGY_INCREASE:
        raise SchemeIntegrityError(f"energy increased at iteration {iters}")
    prof = DiscreteProfile(grid, v, "solver output")
    if status == kernels.MAX_ITERS:
        raise NonConvergenceError(f"no convergence after {iters} iterations (residual {res:.3e})",
                                  last_iterate=prof, residual=res, iterations=iters)
    return SolveResult(prof, iters, res, energy(prof, field, theta, potential=potential), status, e_tr, r_tr)


def minimize(field: FieldRealization, theta: float, grid: GridSpec, init: DiscreteProfile,
             opts: SolverOptions | None = None, potential: PotentialSpec | None = None) -> DiscreteProfile:
    """Critical point reached by the flow from ``init``; its energy never exceeds the initial one."""
    return solve(field, theta, grid, init, opts, potential).profile


def _extremal(field, theta, grid, opts, potential, sign, gbar=None) -> SolveResult:
    potential = potential or PotentialSpec()
    S = boundary_level(potential, theta, field.gmax)
    kind = "dirichlet_plus" if sign > 0 else "dirichlet_minus"
    g = grid.with_bc(kind, sign * S)
    init = DiscreteProfile.constant(g, sign * S)
    return solve(field, theta, g, init, opts, potential, monotone=sign, gbar=gbar)


def extremal_max(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                 potential: PotentialSpec | None = None) -> DiscreteProfile:
    """Decreasing flow from the constant supersolution under Dirichlet data ``+S``."""
    return _extremal(field, theta, grid, opts, potential, +1).profile


def extremal_min(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                 potential: PotentialSpec | None = None) -> DiscreteProfile:
    """Mirror image of :func:`extremal_max` under Dirichlet data ``-S``."""
    return _extremal(field, theta, grid, opts, potential, -1).profile


def flow_extremal_pair(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                       potential: PotentialSpec | None = None, crosscheck: bool = False) -> ExtremalPair:
    """Both flow limits (:func:`extremal_max`, :func:`extremal_min`) with energies and solver metadata.

    With ``crosscheck`` the flow limits are compared against multi-start
    minimization under the same Dirichlet data; a lower multi-start energy
    means the flow limit is a critical point but not a minimizer, which is
    logged and stored in ``diagnostics``.
    """
    potential = potential or PotentialSpec()
    gbar = _check_compat(field, grid)
    rp = _extremal(field, theta, grid, opts, potential, +1, gbar)
    rm = _extremal(field, theta, grid, opts, potential, -1, gbar)
    pair = ExtremalPair(rp.profile, rm.profile, rp.energy, rm.energy, (rp.iterations, rm.iterations),
                        (rp.residual, rm.residual), theta, field.fingerprint())
    if crosscheck:
        for name, res in (("plus", rp), ("minus", rm)):
            best, _ = multistart_minimize(field, theta, res.profile.grid, opts, potential)
            excess = res.energy.total - best.energy.total
            pair.diagnostics[f"multistart_energy_{name}"] = best.energy.total
            pair.diagnostics[f"flow_excess_{name}"] = excess
            if excess > 1e-6 * (1.0 + abs(best.energy.total)):
                log.info("extremal %s flow limit exceeds multi-start energy by %.3e", name, excess)
    return pair


def global_minimizer(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                     potential: PotentialSpec | None = None, trace: DiscreteProfile | None = None,
                     gbar: np.ndarray | None = None) -> SolveResult:
    """Global minimizer in d=1: dynamic programming over quantized levels, then a flow polish.

    The level grid spans ``[-S', S']`` with ``S'`` the larger of ``1 + C0 theta gmax``
    and the boundary data; no minimizer leaves that range because clamping
    there never raises the energy.  For ``bc_kind='dirichlet'`` the end values
    are taken from ``trace``.
    """
    if grid.dim != 1:
        raise ConfigurationError("exact global minimization is only available in d = 1")
    potential = potential or PotentialSpec()
    ro = (opts or SolverOptions()).resolve(potential, theta, field.gmax, 1)
    if gbar is None:
        gbar = _check_compat(field, grid)
    S = boundary_level(potential, theta, field.gmax)
    if grid.bc_kind in ("dirichlet_plus", "dirichlet_minus"):
        left = right = float(grid.bc_value)
    elif grid.bc_kind == "dirichlet":
        if trace is None:
            raise PreconditionError("general Dirichlet data need a trace profile")
        left, right = float(trace.values[0]), float(trace.values[-1])
    else:
        left = right = 0.0
    span = max(S, abs(left), abs(right))
    v0 = kernels.run_chain_min(gbar, grid.h, theta, potential, span, ro.levels, left, right,
                               grid.is_dirichlet, grid.is_dirichlet)
    return solve(field, theta, grid, DiscreteProfile(grid, v0), opts, potential, gbar=gbar)


def _descent_candidates(grid: GridSpec, gbar: np.ndarray, S: float) -> list[DiscreteProfile]:
    bm = grid.boundary_mask
    out = []
    for interior in (S, -S, 0.0):
        v = np.full(grid.shape, interior)
        v[bm] = S
        out.append(DiscreteProfile(grid, v))
    for size in (grid.p + 1, 2 * grid.p + 1, 4 * grid.p + 1):
        v = np.clip(uniform_filter(np.sign(gbar), size=size, mode="nearest") * S, -S, S)
        v[bm] = S
        out.append(DiscreteProfile(grid, v))
    return out


def _plus_minimizer(field, theta, grid, opts, potential) -> SolveResult:
    S = boundary_level(potential, theta, field.gmax)
    g = grid.with_bc("dirichlet_plus", S)
    gbar = _check_compat(field, g)
    if grid.dim == 1:
        return global_minimizer(field, theta, g, opts, potential, gbar=gbar)
    results = [solve(field, theta, g, v0, opts, potential, gbar=gbar) for v0 in _descent_candidates(g, gbar, S)]
    e_min = min(r.energy.total for r in results)
    tie = 1e-9 * (1.0 + abs(e_min))
    close = [r for r in results if r.energy.total <= e_min + tie]
    return max(close, key=lambda r: float(r.profile.values.sum()))


def minimizer_extremal_pair(field: FieldRealization, theta: float, grid: GridSpec,
                            opts: SolverOptions | None = None, potential: PotentialSpec | None = None,
                            crosscheck: bool = False) -> ExtremalPair:
    """Extremal minimizers under ``+S`` / ``-S`` data.

    The minus member is obtained as ``-v+[-omega]``, the mirror image that
    defines it, so the pair is exactly antisymmetric under field negation.
    With ``crosscheck`` the flow-limit energies are recorded as well: they
    can exceed the minimizer energies (the flow stops at a critical point)
    but never undercut them.
    """
    potential = potential or PotentialSpec()
    rp = _plus_minimizer(field, theta, grid, opts, potential)
    rn = _plus_minimizer(negate(field), theta, grid, opts, potential)
    S = boundary_level(potential, theta, field.gmax)
    v_minus = DiscreteProfile(grid.with_bc("dirichlet_minus", -S), -rn.profile.values, "solver output")
    e_minus = energy(v_minus, field, theta, potential=potential)
    pair = ExtremalPair(rp.profile, v_minus, rp.energy, e_minus, (rp.iterations, rn.iterations),
                        (rp.residual, rn.residual), theta, field.fingerprint())
    pair.diagnostics["order_violation"] = float(np.max(v_minus.values - rp.profile.values))
    if crosscheck:
        fp = flow_extremal_pair(field, theta, grid, opts, potential)
        pair.diagnostics["flow_energy_plus"] = fp.energy_plus.total
        pair.diagnostics["flow_energy_minus"] = fp.energy_minus.total
        for name, ef, em in (("plus", fp.energy_plus.total, rp.energy.total),
                             ("minus", fp.energy_minus.total, e_minus.total)):
            pair.diagnostics[f"flow_excess_{name}"] = ef - em
            if ef < em - 1e-8 * (1.0 + abs(em)):
                log.warning("flow limit (%s) undercuts the minimizer search by %.3e", name, em - ef)
    return pair


def extremal_pair(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                  potential: PotentialSpec | None = None, crosscheck: bool = False) -> ExtremalPair:
    """Extremal pair in the mode chosen by ``opts.extremal`` (default: minimizers)."""
    mode = (opts or SolverOptions()).extremal
    if mode == "flow":
        return flow_extremal_pair(field, theta, grid, opts, potential, crosscheck)
    return minimizer_extremal_pair(field, theta, grid, opts, potential, crosscheck)


def multistart_inits(field: FieldRealization, grid: GridSpec) -> list[DiscreteProfile]:
    """Five starts: the two wells, zero, and the smoothed sign of the field with both signs."""
    gbar = _check_compat(field, grid)
    smooth = uniform_filter(np.sign(gbar), size=grid.p + 1, mode="nearest")
    if grid.is_dirichlet and grid.bc_kind == "dirichlet":
        raise PreconditionError("multi-start needs Neumann or constant Dirichlet data")
    return [DiscreteProfile(grid, np.full(grid.shape, 1.0)), DiscreteProfile(grid, np.full(grid.shape, -1.0)),
            DiscreteProfile(grid, np.zeros(grid.shape)), DiscreteProfile(grid, smooth),
            DiscreteProfile(grid, -smooth)]


def _with_global(field, theta, grid, opts, potential, results):
    if grid.dim == 1 and grid.bc_kind != "dirichlet":
        results.append(global_minimizer(field, theta, grid, opts, potential))
    return results


def multistart_minimize(field: FieldRealization, theta: float, grid: GridSpec,
                        opts: SolverOptions | None = None, potential: PotentialSpec | None = None,
                        inits: list[DiscreteProfile] | None = None,
                        global_search: bool = False) -> tuple[SolveResult, list[SolveResult]]:
    """Flow from each start; lowest energy wins, near-ties go to the smaller residual L2 norm.

    ``global_search`` adds the d=1 dynamic-programming candidate to the pool.
    """
    potential = potential or PotentialSpec()
    resolved = (opts or SolverOptions()).resolve(potential, theta, field.gmax, grid.dim)
    inits = inits if inits is not None else multistart_inits(field, grid)
    gbar = _check_compat(field, grid)
    results = [solve(field, theta, grid, v0, opts, potential, gbar=gbar) for v0 in inits]
    if global_search:
        _with_global(field, theta, grid, opts, potential, results)
    tie = max(resolved.energy_tol, 1e-10)
    e_min = min(r.energy.total for r in results)
    close = [r for r in results if r.energy.total <= e_min + tie]
    best = min(close, key=lambda r: float(np.sqrt((residual_array(r.profile, field, theta, potential) ** 2).sum())))
    return best, results


def neumann_minimizer(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
                      potential: PotentialSpec | None = None) -> DiscreteProfile:
    return multistart_minimize(field, theta, grid.with_bc("neumann"), opts, potential, global_search=True)[0].profile


def _trace_profile(grid: GridSpec, bc) -> np.ndarray:
    arr = np.asarray(bc, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape != grid.shape:
        raise ConfigurationError("boundary trace must be a scalar or a full node array")
    return arr


def ordered_bc_solve(field: FieldRealization, theta: float, grid: GridSpec, bc_low, bc_high,
                     opts: SolverOptions | None = None,
                     potential: PotentialSpec | None = None) -> tuple[DiscreteProfile, DiscreteProfile]:
    """Minimizers for two ordered Dirichlet traces, started from ordered constants.

    Traces are scalars or full node arrays (only boundary entries are used).
    """
    g = grid.with_bc("dirichlet")
    low = _trace_profile(g, bc_low)
    high = _trace_profile(g, bc_high)
    bm = g.boundary_mask
    if np.any(low[bm] > high[bm]):
        raise PreconditionError("boundary traces are not ordered")
    init_low = np.full(g.shape, low[bm].min())
    init_high = np.full(g.shape, high[bm].max())
    init_low[bm] = low[bm]
    init_high[bm] = high[bm]
    gbar = _check_compat(field, g)
    a = solve(field, theta, g, DiscreteProfile(g, init_low), opts, potential, gbar=gbar).profile
    b = solve(field, theta, g, DiscreteProfile(g, init_high), opts, potential, gbar=gbar).profile
    return a, b


def ordered_flow_check(field: FieldRealization, theta: float, low: DiscreteProfile, high: DiscreteProfile,
                       steps: int, opts: SolverOptions | None = None,
                       potential: PotentialSpec | None = None) -> float:
    """Step two flows in lockstep and return the worst order violation ``max(low - high)`` seen.

    Both profiles must share a grid; ordered inputs must give a value ``<= 0``.
    """
    potential = potential or PotentialSpec()
    if low.grid.shape != high.grid.shape:
        raise ConfigurationError("profiles live on different grids")
    ro = (opts or SolverOptions()).resolve(potential, theta, field.gmax, low.grid.dim)
    gbar = _check_compat(field, low.grid)
    a, b = low.values, high.values
    worst = float(np.max(a - b))
    for _ in range(steps):
        a = kernels.run_flow(a, gbar, low.grid.h, ro.time_step, theta, potential, low.grid.is_dirichlet,
                             0.0, 0.0, 1)[0]
        b = kernels.run_flow(b, gbar, high.grid.h, ro.time_step, theta, potential, high.grid.is_dirichlet,
                             0.0, 0.0, 1)[0]
        worst = max(worst, float(np.max(a - b)))
        if ro.debug_order and worst > 0:
            raise SchemeIntegrityError("order between coupled flows was lost")
    return worst


def lipschitz_seminorm(v: DiscreteProfile) -> float:
    """Largest difference quotient over grid edges."""
    out = 0.0
    for j in range(v.grid.dim):
        out = max(out, float(np.max(np.abs(np.diff(v.values, axis=j)))) / v.grid.h)
    return out


def lipschitz_bound(potential: PotentialSpec, theta: float, gmax: float) -> float:
    """A priori gradient bound ``2 S + A`` for d=1 critical points with ``|v| <= S``.

    ``A`` bounds the second difference quotient, ``(sup|W'| + theta gmax) / 2`` on ``[-S, S]``.
    Taylor over a unit length gives ``|D v| <= 2 S + A / 2``; the extra ``A / 2`` absorbs the
    discretization.
    """
    S = boundary_level(potential, theta, gmax)
    s = np.linspace(-S, S, 4001)
    A = 0.5 * (float(np.max(np.abs(w_prime(potential, s)))) + theta * gmax)
    return 2.0 * S + A


def linfty(v: DiscreteProfile) -> float:
    return float(np.max(np.abs(v.values)))
