"""Per-realization property checks used by the ``lemmas`` and ``sanity`` suites.

Each check is a pure function of its arguments and returns plain floats,
so it can run in a worker process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import DistributionSpec, FieldRealization, sample_field, with_site_value
from .grid_energy import DiscreteProfile, GridSpec, energy, truncation_bound, truncation_gap, unit_cell_integral
from .potential import PotentialSpec
from .solver import (SolverOptions, boundary_level, extremal_pair, flow_extremal_pair, multistart_minimize, ordered_bc_solve)
from .stats import derive_seed, field_monotonicity_check


@dataclass(frozen=True)
class CheckSpec:
    dim: int
    n: int
    theta: float
    master_seed: int = 0
    p: int = 8
    potential: PotentialSpec = PotentialSpec()
    dist: DistributionSpec = DistributionSpec()
    opts: SolverOptions = SolverOptions()
    truncation_offset: float = 0.5

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.dim, self.n, self.p)

    def field(self, index: int) -> FieldRealization:
        return sample_field(self.dim, self.n, self.dist, derive_seed(self.master_seed, index))

    @property
    def tol(self) -> float:
        return self.opts.resolve(self.potential, self.theta, self.dist.gmax, self.dim).residual_tol


def rough_profile(grid: GridSpec, seed: int, amplitude: float) -> DiscreteProfile:
    """Noise in ``[-amplitude, amplitude]`` plus a few spikes to ``3 * amplitude``."""
    rng = np.random.default_rng(seed)
    v = rng.uniform(-amplitude, amplitude, grid.shape)
    flat = v.reshape(-1)
    idx = rng.choice(flat.size, size=max(1, flat.size // 50), replace=False)
    flat[idx] = 3.0 * amplitude * rng.choice([-1.0, 1.0], size=idx.size)
    return DiscreteProfile(grid, v, "initial")


def truncation_check(spec: CheckSpec, index: int) -> dict:
    f = spec.field(index)
    t = boundary_level(spec.potential, spec.theta, f.gmax) + spec.truncation_offset
    v = rough_profile(spec.grid, derive_seed(spec.master_seed, 11, index), t)
    gap = truncation_gap(v, f, spec.theta, t, spec.potential)
    bound = truncation_bound(v, f, spec.theta, t, spec.potential)
    return {"gap": gap, "bound": bound}


def sandwich_check(spec: CheckSpec, index: int) -> dict:
    """Worst violation of ``v- <= u <= v+`` over the multi-start Neumann limits ``u``, plus sup bounds.

    Uses the flow extremals: the comparison argument applies to every critical point.
    """
    f = spec.field(index)
    pair = flow_extremal_pair(f, spec.theta, spec.grid, spec.opts, spec.potential)
    _, results = multistart_minimize(f, spec.theta, spec.grid, spec.opts, spec.potential)
    worst = 0.0
    for r in results:
        u = r.profile.values
        worst = max(worst, float(np.max(u - pair.v_plus.values)), float(np.max(pair.v_minus.values - u)))
    S = boundary_level(spec.potential, spec.theta, f.gmax)
    sup = max(float(np.abs(pair.v_plus.values).max()), float(np.abs(pair.v_minus.values).max()))
    return {"violation": worst, "linfty_excess": sup - S,
            "pair_order": float(np.max(pair.v_minus.values - pair.v_plus.values))}


def fgk_check(spec: CheckSpec, index: int, low: float = 0.9, high: float = 1.0) -> dict:
    """Ordered constant traces: order violation and smallest interior gap of the two solutions."""
    f = spec.field(index)
    a, b = ordered_bc_solve(f, spec.theta, spec.grid, low, high, spec.opts, spec.potential)
    interior = ~a.grid.boundary_mask
    diff = b.values - a.values
    return {"violation": float(np.max(-diff)), "min_interior_gap": float(diff[interior].min())}


def derivative_check(spec: CheckSpec, index: int, step: float = 1e-3) -> dict:
    """Closed-form field derivative of ``G(v+)`` against a central difference of re-minimized energies."""
    f = spec.field(index)
    rng = np.random.default_rng(derive_seed(spec.master_seed, 13, index))
    k = spec.n // 2
    # interior site whose unit cell lies inside the box
    site = tuple(int(c) for c in rng.integers(-k + 1, k, size=spec.dim)) if k > 1 else (0,) * spec.dim
    gmax = f.gmax
    c = float(np.clip(f.value_at(site), -gmax + step, gmax - step))
    out = {}
    for name, sign in (("plus", 1), ("minus", -1)):
        vals = []
        for w in (c - step, c, c + step):
            pair = extremal_pair(with_site_value(f, site, w), spec.theta, spec.grid, spec.opts, spec.potential)
            vals.append(pair.v_plus if sign > 0 else pair.v_minus)
        e_lo = energy(vals[0], with_site_value(f, site, c - step), spec.theta, potential=spec.potential).total
        e_hi = energy(vals[2], with_site_value(f, site, c + step), spec.theta, potential=spec.potential).total
        fd = (e_hi - e_lo) / (2.0 * step)
        closed = -spec.theta * unit_cell_integral(vals[1], site)
        out[f"err_{name}"] = abs(fd - closed)
    return out


def monotonicity_check(spec: CheckSpec, index: int, h_list=(0.05, 0.1, 0.2)) -> dict:
    f = spec.field(index)
    rep = field_monotonicity_check(f, spec.theta, spec.grid, (0,) * spec.dim, h_list, spec.opts, spec.potential)
    excess = max(max(d - u, lo - d) for d, u, lo in zip(rep.delta_G, rep.upper, rep.lower))
    ints = rep.cell_integrals
    drop = max([a - b for a, b in zip(ints, ints[1:])] + [0.0])
    return {"sandwich_excess": excess, "integral_drop": drop, "tol": rep.tol}
