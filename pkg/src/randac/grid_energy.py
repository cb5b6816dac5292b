"""Finite-difference discretization of the random double-well energy.

Nodes sit at ``center - n/2 + k h`` (``h = 1/p``) along each axis.  Energy
is assembled cell by cell on the ``h``-cells:

* gradient: squared forward differences, averaged over the cell's edges in
  each direction;
* potential: cell average of the nodal values of ``W`` (trapezoid rule);
* field: ``g`` times the exact integral of the multilinear interpolant,
  i.e. the midpoint value of the interpolant.

The potential is integrated at the nodes rather than at cell midpoints so
that the Euler-Lagrange residual is exactly the rescaled energy gradient and
clamping a profile acts node by node.  With these choices

    dE/dv_k = -2 w_k [ (L v)_k - (W'(v_k) - theta * gbar_k) / 2 ]

where ``w_k`` is the trapezoid weight, ``L`` the 2d+1 point Laplacian with
reflected ghost nodes and ``gbar_k`` the mean of ``g`` over the cells
touching node ``k``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError
from .field import FieldRealization
from .potential import PotentialSpec, w as w_pot, w_prime

BC_KINDS = ("neumann", "dirichlet_plus", "dirichlet_minus", "dirichlet")


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid on ``center + [-n/2, n/2]^d`` with ``p`` points per unit length.

    ``bc_kind='dirichlet'`` takes its trace from the profile's boundary
    nodes; the ``_plus``/``_minus`` kinds carry a constant ``bc_value``.
    """

    dim: int
    n: int
    p: int
    bc_kind: str = "neumann"
    bc_value: float | None = None
    center: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dim must be 1, 2 or 3, got {self.dim!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError("n must be a positive integer")
        if int(self.p) != self.p or self.p < 2:
            raise ConfigurationError(f"grid density p must be an integer >= 2, got {self.p!r}")
        if self.n % 2 == 0 and self.p % 2:
            raise ConfigurationError("for even n the grid density p must be even so unit-cell faces are nodes")
        if self.bc_kind not in BC_KINDS:
            raise ConfigurationError(f"unknown bc_kind {self.bc_kind!r}")
        if self.bc_kind in ("dirichlet_plus", "dirichlet_minus") and self.bc_value is None:
            raise ConfigurationError(f"{self.bc_kind} requires bc_value")
        center = (0,) * self.dim if self.center is None else tuple(int(c) for c in self.center)
        if len(center) != self.dim:
            raise ConfigurationError("center has wrong dimension")
        object.__setattr__(self, "center", center)

    @property
    def h(self) -> float:
        return 1.0 / self.p

    @property
    def nodes_per_axis(self) -> int:
        return self.n * self.p + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis - 1,) * self.dim

    @property
    def is_dirichlet(self) -> bool:
        return self.bc_kind != "neumann"

    @property
    def node_count(self) -> int:
        return self.nodes_per_axis**self.dim

    def with_bc(self, bc_kind: str, bc_value: float | None = None) -> "GridSpec":
        return GridSpec(self.dim, self.n, self.p, bc_kind, bc_value, self.center)

    def axis(self, j: int) -> np.ndarray:
        k = np.arange(self.nodes_per_axis)
        return self.center[j] - self.n / 2.0 + k / self.p

    def node_coords(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(j) for j in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def cell_site_axis(self, j: int) -> np.ndarray:
        """Lattice coordinate of the unit cell containing each h-cell along axis ``j``."""
        k = np.arange(self.nodes_per_axis - 1)
        # floor(x_mid + 1/2) with x_mid = c - n/2 + (k + 1/2)/p, in exact integer arithmetic
        return (2 * k + 1 + self.p * (2 * self.center[j] - self.n + 1)) // (2 * self.p)

    @cached_property
    def trapezoid(self) -> np.ndarray:
        t = np.ones(self.nodes_per_axis)
        t[0] = t[-1] = 0.5
        return t

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Trapezoid quadrature weight of every node."""
        wts = np.array(self.h**self.dim)
        for _ in range(self.dim):
            wts = np.multiply.outer(wts, self.trapezoid)
        return wts

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for j in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[j] = 0
            m[tuple(idx)] = True
            idx[j] = -1
            m[tuple(idx)] = True
        return m

    def box_cells(self, n_sub: int, center=None) -> tuple[slice, ...]:
        """Cell-index slices covering the sub-box ``center + [-n_sub/2, n_sub/2]^d``."""
        center = self.center if center is None else tuple(int(c) for c in center)
        out = []
        for j in range(self.dim):
            lo = (center[j] - n_sub / 2.0 - (self.center[j] - self.n / 2.0)) * self.p
            hi = (center[j] + n_sub / 2.0 - (self.center[j] - self.n / 2.0)) * self.p
            if abs(lo - round(lo)) > 1e-9 or abs(hi - round(hi)) > 1e-9:
                raise ConfigurationError("region is not aligned to grid cells")
            lo, hi = int(round(lo)), int(round(hi))
            if lo < 0 or hi > self.nodes_per_axis - 1 or lo >= hi:
                raise ConfigurationError("region is not contained in the grid")
            out.append(slice(lo, hi))
        return tuple(out)

    def box_nodes(self, n_sub: int, center=None) -> tuple[slice, ...]:
        return tuple(slice(s.start, s.stop + 1) for s in self.box_cells(n_sub, center))


@dataclass(frozen=True)
class DiscreteProfile:
    grid: GridSpec
    values: np.ndarray = dc_field(repr=False, compare=False)
    provenance: str = "initial"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ConfigurationError(f"profile shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("profile has non-finite values")
        if self.grid.bc_kind in ("dirichlet_plus", "dirichlet_minus"):
            v[self.grid.boundary_mask] = self.grid.bc_value
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: GridSpec, value: float, provenance: str = "initial") -> "DiscreteProfile":
        return cls(grid, np.full(grid.shape, float(value)), provenance)

    def to_csv(self, path) -> None:
        coords = self.grid.node_coords()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{j}" for j in range(self.grid.dim)] + ["value"])
            for x, val in zip(coords, self.values.ravel()):
                wr.writerow([repr(float(c)) for c in x] + [repr(float(val))])


@dataclass(frozen=True)
class EnergyBreakdown:
    gradient_term: float
    potential_term: float
    field_term: float

    @property
    def total(self) -> float:
        return self.gradient_term + self.potential_term + self.field_term


# ---------------------------------------------------------------------------
# field on the grid


def cell_field(grid: GridSpec, field: FieldRealization) -> np.ndarray:
    """Value of ``g`` on every h-cell, shape ``grid.cell_shape``."""
    if field.dim != grid.dim:
        raise ConfigurationError(f"field dimension {field.dim} does not match grid dimension {grid.dim}")
    k = field.n // 2
    idx = []
    for j in range(grid.dim):
        i = grid.cell_site_axis(j) - (field.center[j] - k)
        if i.min() < 0 or i.max() >= field.sites_per_axis:
            raise ConfigurationError("field window does not cover the grid")
        idx.append(i)
    return field.values[np.ix_(*idx)]


def nodal_field(grid: GridSpec, gcell: np.ndarray) -> np.ndarray:
    """Mean of the cell values around each node."""
    out = gcell
    for j in range(grid.dim):
        padded = np.concatenate([np.take(out, [0], axis=j), out, np.take(out, [-1], axis=j)], axis=j)
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[j] = slice(0, -1)
        hi[j] = slice(1, None)
        out = 0.5 * (padded[tuple(lo)] + padded[tuple(hi)])
    return out


def _corner_views(v: np.ndarray):
    d = v.ndim
    for off in itertools.product((0, 1), repeat=d):
        yield off, v[tuple(slice(o, v.shape[j] - 1 + o) for j, o in enumerate(off))]


def cell_energies(values: np.ndarray, grid: GridSpec, gcell: np.ndarray, theta: float,
                  potential: PotentialSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell gradient, potential and field contributions."""
    d, h = grid.dim, grid.h
    vol = h**d
    ncorner = 2**d
    corners = dict(_corner_views(values))
    wv = w_pot(potential, values)
    wcorners = dict(_corner_views(wv))
    mean_v = sum(corners.values()) / ncorner
    mean_w = sum(wcorners.values()) / ncorner
    grad = np.zeros(grid.cell_shape)
    for j in range(d):
        acc = np.zeros(grid.cell_shape)
        for off, view in corners.items():
            if off[j] == 0:
                up = list(off)
                up[j] = 1
                acc += (corners[tuple(up)] - view) ** 2
        grad += acc / 2 ** (d - 1)
    grad *= h ** (d - 2)
    return grad, vol * mean_w, -theta * vol * gcell * mean_v


def energy(v: DiscreteProfile, field: FieldRealization, theta: float, region=None,
           potential: PotentialSpec | None = None) -> EnergyBreakdown:
    """Discrete energy of ``v`` on the grid, or on a sub-box.

    ``region`` is ``None`` (whole grid), an integer ``n_sub`` for the
    centered box ``[-n_sub/2, n_sub/2]^d``, or a ``(n_sub, center)`` pair.
    """
    potential = potential or PotentialSpec()
    grid = v.grid
    gcell = cell_field(grid, field)
    grad, pot, fld = cell_energies(v.values, grid, gcell, theta, potential)
    if region is not None:
        sl = grid.box_cells(*region) if isinstance(region, tuple) else grid.box_cells(region)
        grad, pot, fld = grad[sl], pot[sl], fld[sl]
    return EnergyBreakdown(float(grad.sum()), float(pot.sum()), float(fld.sum()))


def laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """2d+1 point Laplacian with reflected ghost nodes on every face."""
    out = np.zeros_like(values)
    for j in range(values.ndim):
        pad = [(0, 0)] * values.ndim
        pad[j] = (1, 1)
        vp = np.pad(values, pad, mode="reflect")
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[j] = slice(0, -2)
        hi[j] = slice(2, None)
        out += vp[tuple(lo)] + vp[tuple(hi)] - 2.0 * values
    return out / h**2


def residual_array(v: DiscreteProfile, field: FieldRealization, theta: float,
                   potential: PotentialSpec | None = None) -> np.ndarray:
    """``L v - (W'(v) - theta gbar)/2`` at every node; zero on Dirichlet boundary nodes."""
    potential = potential or PotentialSpec()
    grid = v.grid
    gbar = nodal_field(grid, cell_field(grid, field))
    r = laplacian(v.values, grid.h) - 0.5 * (w_prime(potential, v.values) - theta * gbar)
    if grid.is_dirichlet:
        r[grid.boundary_mask] = 0.0
    return r


def el_residual(v: DiscreteProfile, field: FieldRealization, theta: float,
                potential: PotentialSpec | None = None) -> float:
    """Sup norm of the Euler-Lagrange residual over the unknown nodes."""
    return float(np.max(np.abs(residual_array(v, field, theta, potential))))


def energy_gradient(v: DiscreteProfile, field: FieldRealization, theta: float,
                    potential: PotentialSpec | None = None) -> np.ndarray:
    """Assembled nodal gradient of the total energy (boundary rows included)."""
    potential = potential or PotentialSpec()
    grid = v.grid
    gbar = nodal_field(grid, cell_field(grid, field))
    r = laplacian(v.values, grid.h) - 0.5 * (w_prime(potential, v.values) - theta * gbar)
    return -2.0 * grid.node_weights * r


def unit_cell_integral(v: DiscreteProfile, site) -> float:
    """Integral of the interpolant of ``v`` over the part of the unit cell of ``site`` inside the grid."""
    grid = v.grid
    site = tuple(int(s) for s in np.atleast_1d(site))
    if len(site) != grid.dim:
        raise DomainError("site has wrong dimension")
    masks = []
    for j in range(grid.dim):
        m = grid.cell_site_axis(j) == site[j]
        if not m.any():
            raise DomainError(f"site {site} is not a lattice site of the grid")
        masks.append(np.nonzero(m)[0])
    mean_v = sum(view for _, view in _corner_views(v.values)) / 2**grid.dim
    return float(mean_v[np.ix_(*masks)].sum() * grid.h**grid.dim)


def field_derivative(v: DiscreteProfile, theta: float, i) -> float:
    """Derivative of the energy in the field value at site ``i`` with ``v`` held fixed."""
    return -theta * unit_cell_integral(v, i)


def truncate(v: DiscreteProfile, t: float) -> DiscreteProfile:
    """Clamp ``v`` to ``[-t, t]``."""
    grid = v.grid
    if grid.bc_kind in ("dirichlet_plus", "dirichlet_minus") and abs(grid.bc_value) > t:
        grid = grid.with_bc(grid.bc_kind, float(np.clip(grid.bc_value, -t, t)))
    return DiscreteProfile(grid, np.clip(v.values, -t, t), "truncated")


def _check_truncation_level(field: FieldRealization, theta: float, t: float, potential: PotentialSpec):
    threshold = 1.0 + potential.C0 * theta * field.gmax
    if not t > threshold:
        raise PreconditionError(f"truncation level {t} must exceed 1 + C0*theta*gmax = {threshold}")


def truncation_gap(v: DiscreteProfile, field: FieldRealization, theta: float, t: float,
                   potential: PotentialSpec | None = None) -> float:
    """Energy change caused by clamping ``v`` to ``[-t, t]``; never positive above the threshold."""
    potential = potential or PotentialSpec()
    _check_truncation_level(field, theta, t, potential)
    return energy(truncate(v, t), field, theta, potential=potential).total - \
        energy(v, field, theta, potential=potential).total


def truncation_bound(v: DiscreteProfile, field: FieldRealization, theta: float, t: float,
                     potential: PotentialSpec | None = None) -> float:
    """Quadrature of ``-(C0^-1 (t-1) - theta gmax)(|v| - t)`` over ``{|v| > t}``.

    The truncation gap never exceeds this value.
    """
    potential = potential or PotentialSpec()
    _check_truncation_level(field, theta, t, potential)
    excess = np.abs(v.values) - t
    over = excess > 0
    rate = (t - 1.0) / potential.C0 - theta * field.gmax
    return float(-(v.grid.node_weights[over] * rate * excess[over]).sum())
