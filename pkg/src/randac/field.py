"""Quenched random field on the integer lattice.

A realization is a lazily evaluated map ``z -> g(z, omega)`` on all of
``Z^d``.  Every site draws its value from its own counter-based stream keyed
by ``(master seed, stream tag, aux seed, absolute coordinate)``, so
translating the field or redrawing a set of sites never disturbs any other
site.  :class:`FieldRealization` pairs such a disorder with a finite window
``center + [-n/2, n/2]^d`` whose sites are materialized in ``values``.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, DomainError

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

BASE_STREAM = 0
AUX_STREAM = 1


def _splitmix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, stream: int, aux: int, coords: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) variates, one per row of ``coords``, keyed by absolute coordinate."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim != 2:
        raise ValueError("coords must have shape (m, d)")
    with np.errstate(over="ignore"):
        h = _splitmix(np.full(coords.shape[0], np.uint64(int(seed) & _MASK64)))
        h = _splitmix(h ^ np.uint64(int(stream) & _MASK64))
        h = _splitmix(h ^ np.uint64(int(aux) & _MASK64))
        for j in range(coords.shape[1]):
            h = _splitmix(h ^ coords[:, j].astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class DistributionSpec:
    """Single-site law of the disorder: uniform on ``[-gmax, gmax]``."""

    kind: str = "uniform_symmetric"
    gmax: float = 1.0

    def __post_init__(self):
        if self.kind != "uniform_symmetric":
            raise ConfigurationError(f"unsupported distribution kind {self.kind!r}")
        if not (self.gmax > 0 and np.isfinite(self.gmax)):
            raise ConfigurationError("gmax must be a positive finite number")

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def variance(self) -> float:
        return self.gmax**2 / 3.0

    def transform(self, u: np.ndarray) -> np.ndarray:
        return self.gmax * (2.0 * u - 1.0)

    def draw(self, seed: int, stream: int, aux: int, coords: np.ndarray) -> np.ndarray:
        return self.transform(site_uniforms(seed, stream, aux, coords))


# ---------------------------------------------------------------------------
# Site selectors (which sites get redrawn)


def _as_coords(coords, dim: int) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    return c.reshape(-1, dim)


def lex_compare(coords: np.ndarray, pivot: tuple[int, ...]) -> np.ndarray:
    """Return -1, 0, +1 per row for dictionary order of ``coords`` against ``pivot``."""
    out = np.zeros(coords.shape[0], dtype=np.int8)
    undecided = np.ones(coords.shape[0], dtype=bool)
    for j, pj in enumerate(pivot):
        gt = undecided & (coords[:, j] > pj)
        lt = undecided & (coords[:, j] < pj)
        out[gt] = 1
        out[lt] = -1
        undecided &= ~(gt | lt)
    return out


@dataclass(frozen=True)
class SiteSet:
    sites: frozenset

    def mask(self, coords: np.ndarray) -> np.ndarray:
        return np.array([tuple(int(c) for c in row) in self.sites for row in coords], dtype=bool)


@dataclass(frozen=True)
class OutsideBox:
    """Sites with sup-distance from ``center`` strictly larger than ``half``."""

    center: tuple[int, ...]
    half: float

    def mask(self, coords: np.ndarray) -> np.ndarray:
        dist = np.abs(coords - np.asarray(self.center, dtype=np.int64)).max(axis=1)
        return dist > self.half


@dataclass(frozen=True)
class LexAfter:
    """Sites after ``pivot`` in dictionary order (``inclusive`` also takes the pivot)."""

    pivot: tuple[int, ...]
    inclusive: bool = False

    def mask(self, coords: np.ndarray) -> np.ndarray:
        cmp = lex_compare(coords, self.pivot)
        return cmp >= 0 if self.inclusive else cmp > 0


@dataclass(frozen=True)
class AnyOf:
    parts: tuple

    def mask(self, coords: np.ndarray) -> np.ndarray:
        m = np.zeros(coords.shape[0], dtype=bool)
        for p in self.parts:
            m |= p.mask(coords)
        return m


# ---------------------------------------------------------------------------
# Lazy disorder tree


@dataclass(frozen=True)
class BaseDisorder:
    dist: DistributionSpec
    seed: int

    @property
    def root(self) -> "BaseDisorder":
        return self

    def at(self, coords: np.ndarray) -> np.ndarray:
        return self.dist.draw(self.seed, BASE_STREAM, 0, coords)

    def describe(self) -> str:
        return f"base(seed={self.seed})"


@dataclass(frozen=True)
class Shifted:
    parent: object
    shift: tuple[int, ...]

    @property
    def root(self):
        return self.parent.root

    def at(self, coords):
        return self.parent.at(coords + np.asarray(self.shift, dtype=np.int64))

    def describe(self):
        return f"{self.parent.describe()}|shift{self.shift}"


@dataclass(frozen=True)
class Negated:
    parent: object

    @property
    def root(self):
        return self.parent.root

    def at(self, coords):
        return -self.parent.at(coords)

    def describe(self):
        return f"{self.parent.describe()}|neg"


@dataclass(frozen=True)
class Redrawn:
    parent: object
    selector: object
    aux_seed: int

    @property
    def root(self):
        return self.parent.root

    def at(self, coords):
        vals = np.array(self.parent.at(coords), dtype=np.float64)
        m = self.selector.mask(coords)
        if m.any():
            root = self.root
            vals[m] = root.dist.draw(root.seed, AUX_STREAM, self.aux_seed, coords[m])
        return vals

    def describe(self):
        return f"{self.parent.describe()}|redraw(aux={self.aux_seed})"


@dataclass(frozen=True)
class Assigned:
    parent: object
    site: tuple[int, ...]
    value: float

    @property
    def root(self):
        return self.parent.root

    def at(self, coords):
        vals = np.array(self.parent.at(coords), dtype=np.float64)
        hit = np.all(coords == np.asarray(self.site, dtype=np.int64), axis=1)
        vals[hit] = self.value
        return vals

    def describe(self):
        return f"{self.parent.describe()}|set{self.site}={self.value!r}"


# ---------------------------------------------------------------------------


def window_axes(n: int, center: tuple[int, ...]) -> list[np.ndarray]:
    """Integer coordinates of lattice sites along each axis of ``center + [-n/2, n/2]^d``."""
    k = n // 2
    return [np.arange(c - k, c + k + 1, dtype=np.int64) for c in center]


@dataclass(frozen=True)
class FieldRealization:
    """Disorder materialized on the sites of ``center + [-n/2, n/2]^d``.

    ``values`` is indexed in C order of the per-axis site coordinates, so
    ``values[idx]`` is the site ``site_coords(idx)``.  A boundary site whose
    unit cell sticks out of the window (``n`` even) is still part of the
    window; its cell is truncated by the window.
    """

    dim: int
    n: int
    center: tuple[int, ...]
    disorder: object
    values: np.ndarray = dc_field(repr=False, compare=False)

    @property
    def dist(self) -> DistributionSpec:
        return self.disorder.root.dist

    @property
    def seed(self) -> int:
        return self.disorder.root.seed

    @property
    def gmax(self) -> float:
        return self.dist.gmax

    @property
    def provenance(self) -> str:
        return self.disorder.describe()

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return window_axes(self.n, self.center)

    @property
    def sites_per_axis(self) -> int:
        return 2 * (self.n // 2) + 1

    @cached_property
    def sites(self) -> np.ndarray:
        """All site coordinates, shape ``(m, d)``, in dictionary order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def index_of(self, site) -> tuple[int, ...]:
        site = tuple(int(s) for s in np.atleast_1d(site))
        if len(site) != self.dim:
            raise DomainError(f"site {site} has wrong dimension for d={self.dim}")
        k = self.n // 2
        idx = tuple(s - c + k for s, c in zip(site, self.center))
        if any(i < 0 or i >= self.sites_per_axis for i in idx):
            raise DomainError(f"site {site} outside the window of n={self.n} centered at {self.center}")
        return idx

    def value_at(self, site) -> float:
        return float(self.values[self.index_of(site)])

    def contains_site(self, site) -> bool:
        try:
            self.index_of(site)
        except DomainError:
            return False
        return True

    def window(self, n: int, center=None) -> "FieldRealization":
        """Same disorder seen through another window."""
        center = self.center if center is None else tuple(int(c) for c in center)
        return _materialize(self.dim, n, center, self.disorder)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.dim, self.n, self.center)).encode())
        h.update(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"z{j}" for j in range(self.dim)] + ["value"])
            for z, val in zip(self.sites, self.values.ravel()):
                w.writerow([int(c) for c in z] + [repr(float(val))])


def _materialize(dim: int, n: int, center: tuple[int, ...], disorder) -> FieldRealization:
    shape = (2 * (n // 2) + 1,) * dim
    axes = window_axes(n, center)
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in mesh], axis=1)
    values = np.asarray(disorder.at(coords), dtype=np.float64).reshape(shape)
    values.setflags(write=False)
    return FieldRealization(dim, n, center, disorder, values)


def _check_dim_n(dim, n):
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"dim must be 1, 2 or 3, got {dim!r}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n!r}")


def sample_field(dim: int, n: int, dist: DistributionSpec | None = None, seed: int = 0,
                 center=None) -> FieldRealization:
    """Draw one i.i.d. value per lattice site of ``Lambda_n``; deterministic in ``seed``."""
    _check_dim_n(dim, n)
    dist = dist or DistributionSpec()
    center = (0,) * dim if center is None else tuple(int(c) for c in center)
    if len(center) != dim:
        raise ConfigurationError("center has wrong dimension")
    return _materialize(dim, int(n), center, BaseDisorder(dist, int(seed)))


def translate(field: FieldRealization, y) -> FieldRealization:
    """Shift the disorder: the output at ``z`` is the input at ``z + y``."""
    y = tuple(int(c) for c in np.atleast_1d(y))
    if len(y) != field.dim:
        raise ConfigurationError("shift vector has wrong dimension")
    if not any(y):
        return field
    return _materialize(field.dim, field.n, field.center, Shifted(field.disorder, y))


def negate(field: FieldRealization) -> FieldRealization:
    """Sign-flip every site value (``omega -> -omega``)."""
    return _materialize(field.dim, field.n, field.center, Negated(field.disorder))


def redraw(field: FieldRealization, selector, aux_seed: int) -> FieldRealization:
    """Redraw every site matched by ``selector`` from the auxiliary stream ``aux_seed``."""
    return _materialize(field.dim, field.n, field.center, Redrawn(field.disorder, selector, int(aux_seed)))


def resample_sites(field: FieldRealization, sites: Iterable, aux_seed: int) -> FieldRealization:
    """Redraw the listed window sites; every other site keeps its exact value."""
    chosen = set()
    for s in sites:
        field.index_of(s)  # raises DomainError outside the window
        chosen.add(tuple(int(c) for c in np.atleast_1d(s)))
    if not chosen:
        return field
    return redraw(field, SiteSet(frozenset(chosen)), aux_seed)


def with_site_value(field: FieldRealization, site, value: float) -> FieldRealization:
    """Replace the value at one site (used for field-derivative experiments)."""
    field.index_of(site)
    site = tuple(int(c) for c in np.atleast_1d(site))
    return _materialize(field.dim, field.n, field.center, Assigned(field.disorder, site, float(value)))


def eval_g1(field: FieldRealization, x) -> float:
    """Piecewise-constant extension: value of the site whose cell ``z + [-1/2, 1/2)^d`` holds ``x``.

    The window's upper faces belong to the last cell so that every point of
    the closed window has a value.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (field.dim,):
        raise DomainError(f"point must have {field.dim} coordinates")
    c = np.asarray(field.center, dtype=np.float64)
    if np.any(np.abs(x - c) > field.n / 2.0):
        raise DomainError(f"point {x.tolist()} outside the window")
    k = field.n // 2
    z = np.floor(x + 0.5).astype(np.int64)
    z = np.clip(z, np.asarray(field.center) - k, np.asarray(field.center) + k)
    return field.value_at(tuple(z))
