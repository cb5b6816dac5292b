"""Monte Carlo estimators over quenched disorder.

Conditional expectations given the field on a set of sites are estimated
by nested Monte Carlo: the field on the kept sites is held fixed and every
other site of a working box ``Lambda_{n + 2 m_extra}`` is redrawn from an
auxiliary stream, ``K`` times.  Replica ``k`` always uses the same auxiliary
stream, so estimates for nested keep-sets share random numbers and their
differences telescope exactly.

Realization seeds depend only on ``(master_seed, index)``; cells with
different ``n`` reuse the same disorder, seen through different windows.
"""

from __future__ import annotations

import hashlib
import logging
import math
from functools import partial
from dataclasses import asdict, dataclass, field as dc_field, fields
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .errors import ConfigurationError, NonConvergenceError, RandacError, SchemeIntegrityError
from .field import (AnyOf, DistributionSpec, FieldRealization, LexAfter, OutsideBox, negate, redraw,
                    sample_field, with_site_value)
from .grid_energy import DiscreteProfile, GridSpec, energy, unit_cell_integral
from .potential import PotentialSpec
from .solver import SolverOptions, boundary_level, extremal_pair, lipschitz_seminorm, linfty, neumann_minimizer

log = logging.getLogger(__name__)


def default_margin(C0: float = 1.0) -> int:
    """Conditioning margin: ten linearized screening lengths ``sqrt(2 C0)``."""
    return math.ceil(10.0 * math.sqrt(2.0 * C0))


def derive_seed(*parts: int) -> int:
    h = hashlib.blake2b(repr(tuple(int(p) for p in parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


# ---------------------------------------------------------------------------
# records


@dataclass
class StatRecord:
    seed: int
    n: int
    dim: int
    theta: float
    D_n: float
    F_hat: float = math.nan
    m_plus_hat: float = math.nan
    m_minus_hat: float = math.nan
    e_hat_plus: float = math.nan
    e_hat_minus: float = math.nan
    W0_hat: float = math.nan
    linfty_max: float = math.nan
    lipschitz_seminorm: float = math.nan
    gap_integral: float = math.nan
    negated: bool = False


CSV_COLUMNS = [f.name for f in fields(StatRecord)]


def record_row(rec: StatRecord) -> list[str]:
    out = []
    for k, v in asdict(rec).items():
        if isinstance(v, bool):
            out.append(str(int(v)))
        elif isinstance(v, float):
            out.append(repr(v))
        else:
            out.append(str(v))
    return out


@dataclass
class Estimate:
    mean: float
    se: float
    count: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.se


def mean_se(values: Iterable[float]) -> Estimate:
    """Sample mean and standard error with compensated summation; NaNs are dropped."""
    x = [float(v) for v in values if not math.isnan(v)]
    m = len(x)
    if m == 0:
        return Estimate(math.nan, math.nan, 0)
    mu = math.fsum(x) / m
    if m == 1:
        return Estimate(mu, math.inf, 1)
    var = math.fsum((v - mu) ** 2 for v in x) / (m - 1)
    return Estimate(mu, math.sqrt(var / m), m)


def sample_var(values: Sequence[float]) -> float:
    x = [float(v) for v in values]
    mu = math.fsum(x) / len(x)
    return math.fsum((v - mu) ** 2 for v in x) / (len(x) - 1)


def loglog_slope(ns: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log n``."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(ys, float)), 1)[0])


def trend_decreasing(means: Sequence[float], ses: Sequence[float] | None = None) -> bool:
    """Strictly decreasing, or decreasing overall with one inversion smaller than its SE."""
    diffs = [b - a for a, b in zip(means, means[1:])]
    if all(d < 0 for d in diffs):
        return True
    if ses is None or means[-1] >= means[0]:
        return False
    bad = [i for i, d in enumerate(diffs) if d >= 0]
    if len(bad) != 1:
        return False
    i = bad[0]
    return diffs[i] < math.hypot(ses[i], ses[i + 1])


# ---------------------------------------------------------------------------
# core estimators


@dataclass(frozen=True)
class Model:
    """Everything a solve needs besides the disorder."""

    theta: float
    p: int = 8
    potential: PotentialSpec = dc_field(default_factory=PotentialSpec)
    opts: SolverOptions = dc_field(default_factory=SolverOptions)

    def grid(self, dim: int, n: int, center=None) -> GridSpec:
        return GridSpec(dim, n, self.p, center=center)


def raw_gap(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
            potential: PotentialSpec | None = None, region=None) -> float:
    """``G(v+) - G(v-)`` on ``region`` (default: the whole grid)."""
    pair = extremal_pair(field, theta, grid, opts, potential)
    if region is None:
        return pair.gap
    return energy(pair.v_plus, field, theta, region, potential).total - \
        energy(pair.v_minus, field, theta, region, potential).total


class NestedGap:
    """Nested Monte Carlo for ``E[D_n | field on a keep-set]``.

    ``field`` supplies the disorder; solves run on the working box of side
    ``n + 2 m_extra`` and the gap is measured on ``Lambda_n``.  With
    ``sign=-1`` every replica is negated after redrawing, which gives the
    exact antithetic partner of the ``sign=+1`` estimate.
    """

    def __init__(self, field: FieldRealization, model: Model, n: int, m_extra: int, aux_seed: int,
                 sign: int = 1):
        self.model = model
        self.n = n
        self.m_extra = m_extra
        self.aux_seed = aux_seed
        self.sign = sign
        self.box = field.window(n + 2 * m_extra, (0,) * field.dim)
        self.grid = model.grid(field.dim, n + 2 * m_extra)
        self._cache: dict = {}

    def gap(self, f: FieldRealization) -> float:
        if self.sign < 0:
            f = negate(f)
        m = self.model
        return raw_gap(f, m.theta, self.grid, m.opts, m.potential, region=self.n)

    def replica(self, selector, k: int) -> float:
        key = (selector, k)
        if key not in self._cache:
            f = self.box if selector is None else redraw(self.box, selector, derive_seed(self.aux_seed, k))
            self._cache[key] = self.gap(f)
        return self._cache[key]

    def phi(self, selector, K: int) -> float:
        """Average gap over ``K`` replicas with the sites matched by ``selector`` redrawn."""
        if selector is None:
            return self.replica(None, 0)
        return math.fsum(self.replica(selector, k) for k in range(K)) / K

    # keep-sets

    def outside(self):
        return OutsideBox((0,) * self.box.dim, self.n // 2) if self.m_extra > 0 else None

    def keep_upto(self, site, inclusive: bool):
        """Redraw selector keeping ``{z in Lambda_n : z <= site}`` (``<`` if not inclusive)."""
        after = LexAfter(tuple(site), inclusive=not inclusive)
        out = self.outside()
        return after if out is None else AnyOf((out, after))


def conditional_gap(field: FieldRealization, theta: float, n: int, m_extra: int | None = None, K: int = 8,
                    aux_seed: int = 0, model: Model | None = None, sign: int = 1) -> float:
    """``F_hat``: average gap over ``K`` redraws of the annulus around ``Lambda_n``."""
    model = model or Model(theta)
    m_extra = default_margin(model.potential.C0) if m_extra is None else m_extra
    if K < 1 or m_extra < 0:
        raise ConfigurationError("K must be >= 1 and m_extra >= 0")
    nest = NestedGap(field, model, n, m_extra, aux_seed, sign)
    return nest.phi(nest.outside(), K)


def w0_increment(field: FieldRealization, theta: float, n: int, K: int = 16, aux_seed: int = 0,
                 m_extra: int | None = None, model: Model | None = None, sign: int = 1) -> float:
    """``W0_hat``: gap given sites ``<= 0`` minus gap given sites ``< 0``, over the working box.

    Replica ``k`` redraws the sites after the origin identically in both
    terms; the second term also redraws the origin.
    """
    model = model or Model(theta)
    m_extra = default_margin(model.potential.C0) if m_extra is None else m_extra
    nest = NestedGap(field, model, n, m_extra, aux_seed, sign)
    origin = (0,) * field.dim
    return nest.phi(LexAfter(origin, inclusive=False), K) - nest.phi(LexAfter(origin, inclusive=True), K)


@dataclass
class Increments:
    sites: np.ndarray
    Y: np.ndarray
    F_hat: float
    phi_empty: float


def y_increments(field: FieldRealization, theta: float, n: int, K: int = 8, aux_seed: int = 0,
                 m_extra: int | None = None, model: Model | None = None, sign: int = 1) -> Increments:
    """Martingale increments ``Y_hat_i`` along dictionary order of the sites of ``Lambda_n``.

    Consecutive terms share their replicas, so ``sum(Y) == F_hat - phi_empty``
    up to rounding.
    """
    model = model or Model(theta)
    m_extra = default_margin(model.potential.C0) if m_extra is None else m_extra
    nest = NestedGap(field, model, n, m_extra, aux_seed, sign)
    sites = field.window(n, (0,) * field.dim).sites
    upper = [nest.phi(nest.keep_upto(s, True), K) for s in sites]
    phi_empty = nest.phi(nest.keep_upto(sites[0], False), K)
    lower = [phi_empty] + upper[:-1]
    Y = np.array([u - l for u, l in zip(upper, lower)])
    return Increments(sites, Y, upper[-1], phi_empty)


def v_hat(Y: np.ndarray) -> float:
    return math.fsum(float(y) ** 2 for y in Y) / len(Y)


def u_hat(Y: np.ndarray, a: float) -> float:
    thr = a * math.sqrt(len(Y))
    return math.fsum(float(y) ** 2 for y in Y if abs(y) >= thr) / len(Y)


def origin_conditional_square(dim: int, n: int, model: Model, seed: int, K: int, dist: DistributionSpec,
                              m_extra: int | None = None) -> float:
    """Unbiased sample of ``E[D | field at 0]^2``: product of two independent inner means."""
    m_extra = default_margin(model.potential.C0) if m_extra is None else m_extra
    f = sample_field(dim, n + 2 * m_extra, dist, seed)
    origin = (0,) * dim
    everything_else = AnyOf((LexAfter(origin, False), _LexBefore(origin)))
    a = NestedGap(f, model, n, m_extra, derive_seed(seed, 1))
    b = NestedGap(f, model, n, m_extra, derive_seed(seed, 2))
    return a.phi(everything_else, K) * b.phi(everything_else, K)


@dataclass(frozen=True)
class _LexBefore:
    pivot: tuple

    def mask(self, coords):
        return ~LexAfter(self.pivot, inclusive=True).mask(coords)


# ---------------------------------------------------------------------------
# per-realization record


@dataclass(frozen=True)
class CellTask:
    """Immutable description of one experiment cell; ``record(i)`` is a pure function of it."""

    dim: int
    n: int
    theta: float
    master_seed: int = 0
    p: int = 8
    potential: PotentialSpec = dc_field(default_factory=PotentialSpec)
    dist: DistributionSpec = dc_field(default_factory=DistributionSpec)
    opts: SolverOptions = dc_field(default_factory=SolverOptions)
    K_F: int = 0
    K_W: int = 0
    m_extra: int | None = None
    antithetic: bool = False
    failure_budget: int = 0

    @property
    def model(self) -> Model:
        return Model(self.theta, self.p, self.potential, self.opts)

    def seed(self, index: int) -> int:
        base = index // 2 if self.antithetic else index
        return derive_seed(self.master_seed, base)

    def record(self, index: int) -> StatRecord:
        seed = self.seed(index)
        sign = -1 if self.antithetic and index % 2 else 1
        f = sample_field(self.dim, self.n, self.dist, seed)
        if sign < 0:
            f = negate(f)
        model = self.model
        grid = model.grid(self.dim, self.n)
        pair = extremal_pair(f, self.theta, grid, self.opts, self.potential)
        vol = float(self.n**self.dim)
        origin = (0,) * self.dim
        diff = pair.v_plus.values - pair.v_minus.values
        rec = StatRecord(
            seed=seed, n=self.n, dim=self.dim, theta=self.theta, D_n=pair.gap,
            m_plus_hat=unit_cell_integral(pair.v_plus, origin),
            m_minus_hat=unit_cell_integral(pair.v_minus, origin),
            e_hat_plus=pair.energy_plus.total / vol, e_hat_minus=pair.energy_minus.total / vol,
            linfty_max=max(linfty(pair.v_plus), linfty(pair.v_minus)),
            lipschitz_seminorm=max(lipschitz_seminorm(pair.v_plus), lipschitz_seminorm(pair.v_minus)),
            gap_integral=float((grid.node_weights * diff).sum()) / vol,
            negated=sign < 0)
        if self.K_F or self.K_W:
            base = sample_field(self.dim, self.n, self.dist, seed)
            m_extra = default_margin(self.potential.C0) if self.m_extra is None else self.m_extra
            if self.K_F:
                rec.F_hat = conditional_gap(base, self.theta, self.n, m_extra, self.K_F,
                                            derive_seed(seed, 101), model, sign)
            if self.K_W:
                rec.W0_hat = w0_increment(base, self.theta, self.n, self.K_W, derive_seed(seed, 202),
                                          m_extra, model, sign)
        return rec

    def safe_record(self, index: int) -> tuple[StatRecord | None, str]:
        try:
            return self.record(index), ""
        except (NonConvergenceError, SchemeIntegrityError) as exc:
            return None, f"index {index}: {type(exc).__name__}: {exc}"


class CellFailure(RandacError):
    def __init__(self, task: CellTask, failures: list[str]):
        super().__init__(f"cell dim={task.dim} n={task.n} theta={task.theta}: {len(failures)} failed "
                         f"realizations exceed the budget of {task.failure_budget}; first: {failures[0]}")
        self.failures = failures


def run_cell(task: CellTask, reps: int, map_fn: Callable = map) -> list[StatRecord]:
    """Records ``0 .. reps-1`` in index order; failed solves count against ``task.failure_budget``."""
    out = list(map_fn(task.safe_record, range(reps)))
    failures = [err for _, err in out if err]
    if len(failures) > task.failure_budget:
        raise CellFailure(task, failures)
    return [rec for rec, err in out if not err]


# ---------------------------------------------------------------------------
# aggregate reports


@dataclass
class AggregateReport:
    dim: int
    n: int
    theta: float
    count: int
    estimates: dict = dc_field(default_factory=dict)
    extras: dict = dc_field(default_factory=dict)
    warnings: list = dc_field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[StatRecord], requested: int | None = None) -> "AggregateReport":
        r0 = records[0]
        rep = cls(r0.dim, r0.n, r0.theta, len(records))
        for name in ("D_n", "F_hat", "m_plus_hat", "m_minus_hat", "e_hat_plus", "e_hat_minus", "W0_hat",
                     "linfty_max", "lipschitz_seminorm", "gap_integral"):
            est = mean_se(getattr(r, name) for r in records)
            if est.count:
                rep.estimates[name] = est
        rep.estimates["abs_D_n"] = mean_se(abs(r.D_n) for r in records)
        rep.estimates["m_sum"] = mean_se(r.m_plus_hat + r.m_minus_hat for r in records)
        vol = float(r0.n**r0.dim)
        if len(records) > 1:
            rep.extras["var_D_over_volume"] = sample_var([r.D_n for r in records]) / vol
            fh = [r.F_hat for r in records if not math.isnan(r.F_hat)]
            if len(fh) > 1:
                rep.extras["var_F_over_volume"] = sample_var(fh) / vol
            w0 = [r.W0_hat for r in records if not math.isnan(r.W0_hat)]
            if w0:
                b2 = mean_se(w * w for w in w0)
                rep.estimates["b_sq_hat"] = b2
        if requested is not None and requested != len(records):
            rep.warnings.append(f"requested {requested} records, got {len(records)}")
        return rep

    def row(self) -> dict:
        out = {"dim": self.dim, "n": self.n, "theta": self.theta, "count": self.count}
        for k, est in self.estimates.items():
            out[f"{k}_mean"] = est.mean
            out[f"{k}_se"] = est.se
        out.update(self.extras)
        return out


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str
    advisory: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else ("WARN" if self.advisory else "FAIL")
        return f"{tag} {self.name}: {self.detail}"


def gap_scaling(dim: int, theta: float, n_list: Sequence[int], reps: int, master_seed: int = 0,
                p: int | None = None, map_fn: Callable = map, **task_kw) -> tuple[list[AggregateReport], float]:
    """Mean ``|D_n|`` per ``n`` and its log-log slope."""
    p = p or (8 if dim == 1 else 4)
    reports = []
    for n in n_list:
        task = CellTask(dim, n, theta, master_seed, p, **task_kw)
        reports.append(AggregateReport.from_records(run_cell(task, reps, map_fn), reps))
    slope = loglog_slope(n_list, [r.estimates["abs_D_n"].mean for r in reports])
    return reports, slope


def antithetic_mean(dim: int, n: int, theta: float, pairs: int, master_seed: int = 0, p: int | None = None,
                    map_fn: Callable = map) -> tuple[float, list[StatRecord]]:
    """Sample mean of ``D_n`` over realization/negation pairs (zero up to summation order, which fsum removes)."""
    task = CellTask(dim, n, theta, master_seed, p or (8 if dim == 1 else 4), antithetic=True)
    recs = run_cell(task, 2 * pairs, map_fn)
    return math.fsum(r.D_n for r in recs) / len(recs), recs


def uniqueness_diagnostic(dim: int, theta: float, n_list: Sequence[int], reps: int, master_seed: int = 0,
                          p: int | None = None, map_fn: Callable = map) -> tuple[list[AggregateReport], list[Verdict]]:
    """Gap integral, center-cell magnetizations and ``Var(D_n)/|Lambda_n|`` per ``n``, with trend verdicts."""
    if dim not in (1, 2):
        raise ConfigurationError("uniqueness diagnostic is defined for d = 1, 2")
    p = p or (8 if dim == 1 else 4)
    reports = [AggregateReport.from_records(run_cell(CellTask(dim, n, theta, master_seed, p), reps, map_fn), reps)
               for n in n_list]
    return reports, uniqueness_verdicts(reports)


def uniqueness_verdicts(reports: Sequence[AggregateReport]) -> list[Verdict]:
    dim, theta = reports[0].dim, reports[0].theta
    gi = [r.estimates["gap_integral"] for r in reports]
    verdicts = []
    if theta == 0:
        exact = all(abs(g.mean - 2.0) < 1e-12 for g in gi)
        verdicts.append(Verdict("gap_integral_degenerate", exact, "degenerate: disorder absent, v+ - v- = 2"))
        return verdicts
    strict = all(b.mean < a.mean for a, b in zip(gi, gi[1:]))
    overlap = any(abs(a.mean - b.mean) < math.hypot(a.se, b.se) for a, b in zip(gi, gi[1:]))
    detail = " ".join(f"n={r.n}:{g.mean:.5f}+-{g.se:.5f}" for r, g in zip(reports, gi))
    verdicts.append(Verdict(f"gap_integral_decreasing_d{dim}_theta{theta:g}", strict, detail,
                            advisory=dim == 2 and overlap))
    for r in reports:
        ms = r.estimates["m_sum"]
        mp = r.estimates["m_plus_hat"]
        verdicts.append(Verdict(f"magnetization_symmetry_d{dim}_n{r.n}_theta{theta:g}",
                                ms.within(0.0) and mp.mean >= -3 * mp.se,
                                f"m+ + m- = {ms.mean:.4g} (se {ms.se:.3g}), m+ = {mp.mean:.4g}"))
    return verdicts


def energy_density(dim: int, theta: float, n_list: Sequence[int], reps: int, master_seed: int = 0,
                   p: int | None = None, map_fn: Callable = map) -> tuple[list[dict], list[Verdict]]:
    """Energy per volume of both extremal profiles per ``n``; ``e+`` and ``e-`` should agree."""
    p = p or (8 if dim == 1 else 4)
    recs = {n: run_cell(CellTask(dim, n, theta, master_seed, p), reps, map_fn) for n in n_list}
    return energy_density_from_records(theta, recs)


def energy_density_from_records(theta: float, recs_by_n: dict) -> tuple[list[dict], list[Verdict]]:
    rows, verdicts, sds = [], [], []
    for n, recs in recs_by_n.items():
        ep = mean_se(r.e_hat_plus for r in recs)
        em = mean_se(r.e_hat_minus for r in recs)
        diff = mean_se(r.e_hat_plus - r.e_hat_minus for r in recs)
        sd = math.sqrt(sample_var([r.e_hat_plus for r in recs])) if len(recs) > 1 else 0.0
        sds.append(sd)
        rows.append({"n": n, "e_plus": ep.mean, "e_plus_se": ep.se, "e_minus": em.mean, "e_minus_se": em.se,
                     "sd_plus": sd})
        ok = diff.within(0.0) or diff.mean == 0.0
        verdicts.append(Verdict(f"energy_density_pm_n{n}_theta{theta:g}", ok,
                                f"e+ - e- = {diff.mean:.4g} (se {diff.se:.3g})"))
    if theta > 0 and len(sds) > 1:
        verdicts.append(Verdict(f"self_averaging_theta{theta:g}", all(b < a for a, b in zip(sds, sds[1:])),
                                "SD " + " ".join(f"{s:.4g}" for s in sds)))
    return rows, verdicts


@dataclass
class MonotonicityReport:
    h_list: list
    delta_G: list
    upper: list
    lower: list
    cell_integrals: list
    tol: float

    @property
    def sandwich_ok(self) -> bool:
        return all(lo - self.tol <= d <= up + self.tol for d, up, lo in zip(self.delta_G, self.upper, self.lower))

    @property
    def monotone_ok(self) -> bool:
        vals = self.cell_integrals  # ordered by increasing field value at the site
        return all(b >= a - self.tol for a, b in zip(vals, vals[1:]))


def field_monotonicity_check(field: FieldRealization, theta: float, grid: GridSpec, site, h_list: Sequence[float],
                             opts: SolverOptions | None = None, potential: PotentialSpec | None = None,
                             tol: float | None = None) -> MonotonicityReport:
    """Lower the field at ``site`` by each ``h`` and bracket the change of ``G(v+)``.

    For ``dG = G(v+(w_h), w_h) - G(v+(w), w)`` the expected bracket is
    ``theta h int_Q v+(w) >= dG >= theta h int_Q v+(w_h)``.
    """
    if any(h < 0 for h in h_list):
        raise ConfigurationError("h must be nonnegative")
    potential = potential or PotentialSpec()
    resolved = (opts or SolverOptions()).resolve(potential, theta, field.gmax, grid.dim)
    site = tuple(int(s) for s in np.atleast_1d(site))
    pair = extremal_pair(field, theta, grid, opts, potential)
    G0 = pair.energy_plus.total
    I0 = unit_cell_integral(pair.v_plus, site)
    w0 = field.value_at(site)
    dG, up, lo, ints = [], [], [], []
    for h in h_list:
        fh = with_site_value(field, site, w0 - h)
        ph = extremal_pair(fh, theta, grid, opts, potential)
        Ih = unit_cell_integral(ph.v_plus, site)
        dG.append(ph.energy_plus.total - G0)
        up.append(theta * h * I0)
        lo.append(theta * h * Ih)
        ints.append((w0 - h, Ih))
    ints.append((w0, I0))
    ints.sort()
    if tol is None:
        tol = 2.0 * resolved.residual_tol
    return MonotonicityReport(list(h_list), dG, up, lo, [v for _, v in ints], tol)


@dataclass
class CLTReport:
    n: int
    mean: Estimate
    variance: float
    ks_distance: float
    var_over_volume: dict
    records: dict = dc_field(default_factory=dict, repr=False)


def clt_check(theta: float, n: int, reps: int, K: int = 8, master_seed: int = 0, n_list: Sequence[int] = (),
              p: int = 8, m_extra: int | None = None, map_fn: Callable = map) -> CLTReport:
    """Standardized ``F_hat / sqrt(n)`` in d=1: mean, variance and KS distance to the matched normal."""
    by_n = {}
    for m in sorted(set(n_list) | {n}):
        by_n[m] = run_cell(CellTask(1, m, theta, master_seed, p, K_F=K, m_extra=m_extra), reps, map_fn)
    return clt_from_records(n, by_n)


def clt_from_records(n: int, by_n: dict) -> CLTReport:
    var_vol = {}
    for m, recs in by_n.items():
        z = [r.F_hat / math.sqrt(r.n**r.dim) for r in recs]
        var_vol[m] = sample_var(z) if len(z) > 1 else 0.0
    z = np.array([r.F_hat / math.sqrt(r.n**r.dim) for r in by_n[n]])
    sd = math.sqrt(var_vol[n])
    ks = float(sps.kstest(z, "norm", args=(0.0, sd)).statistic) if sd > 0 else 0.0
    return CLTReport(n, mean_se(z), var_vol[n], ks, var_vol, by_n)


def _lower_sample(dim, n, model, master_seed, K, dist, m_extra, j):
    return origin_conditional_square(dim, n, model, derive_seed(master_seed, 7, j), K, dist, m_extra)


def _increments_sample(task: CellTask, K: int, j: int) -> Increments:
    seed = task.seed(j)
    f = sample_field(task.dim, task.n, task.dist, seed)
    return y_increments(f, task.theta, task.n, K, derive_seed(seed, 303), task.m_extra, task.model)


@dataclass
class VarianceReport:
    n: int
    theta: float
    b_sq_hat: Estimate
    b_sq_lower: Estimate
    b_sq_upper: float
    V_hat: Estimate
    U_hat: dict
    F_hat: Estimate
    warnings: list = dc_field(default_factory=list)
    records: list = dc_field(default_factory=list, repr=False)

    @property
    def sandwich_ok(self) -> bool:
        b, lo = self.b_sq_hat, self.b_sq_lower
        return b.mean <= self.b_sq_upper + 3 * b.se and b.mean >= lo.mean - 3 * math.hypot(b.se, lo.se)


def variance_suite(dim: int, theta: float, n_list: Sequence[int], reps: int, K: int = 8,
                   a_list: Sequence[float] = (0.1, 0.25), master_seed: int = 0, p: int = 8, K_W: int = 16,
                   lower_reps: int | None = None, with_increments: bool = True, dist: DistributionSpec | None = None,
                   potential: PotentialSpec | None = None, m_extra: int | None = None,
                   map_fn: Callable = map) -> list[VarianceReport]:
    """Martingale-variance quantities per ``n``: ``b^2`` bracket, ``V_hat``, ``U_hat(a)``.

    ``with_increments=False`` skips the site-by-site increments (the costly part).
    """
    dist = dist or DistributionSpec()
    potential = potential or PotentialSpec()
    model = Model(theta, p, potential)
    S = boundary_level(potential, theta, dist.gmax)
    upper = 4.0 * theta**2 * S**2
    out = []
    for n in n_list:
        task = CellTask(dim, n, theta, master_seed, p, potential, dist, K_F=K, K_W=K_W, m_extra=m_extra)
        recs = run_cell(task, reps, map_fn)
        b_sq = mean_se(r.W0_hat**2 for r in recs)
        lr = lower_reps or reps
        lows = list(map_fn(partial(_lower_sample, dim, n, model, master_seed, K, dist, m_extra), range(lr)))
        lower = mean_se(lows)
        warnings = []
        if theta == 0:
            V = Estimate(0.0, 0.0, reps)
            U = {a: Estimate(0.0, 0.0, reps) for a in a_list}
        elif with_increments:
            incs = list(map_fn(partial(_increments_sample, task, K), range(reps)))
            V = mean_se(v_hat(i.Y) for i in incs)
            U = {a: mean_se(u_hat(i.Y, a) for i in incs) for a in a_list}
        else:
            V = Estimate(math.nan, math.nan, 0)
            U = {}
        if reps < 30:
            warnings.append(f"only {reps} realizations; standard errors are rough")
        out.append(VarianceReport(n, theta, b_sq, lower, upper, V, U, mean_se(r.F_hat for r in recs), warnings, recs))
    return out


def blend_cost(field: FieldRealization, theta: float, grid: GridSpec, opts: SolverOptions | None = None,
               potential: PotentialSpec | None = None) -> float:
    """Energy raised by forcing a Neumann minimizer onto the ``+S`` data across a unit collar.

    The competitor equals the Neumann minimizer away from the boundary and
    interpolates linearly to ``S`` over the last unit of distance.
    """
    potential = potential or PotentialSpec()
    u = neumann_minimizer(field, theta, grid, opts, potential)
    S = boundary_level(potential, theta, field.gmax)
    dist = np.full(grid.shape, np.inf)
    for j in range(grid.dim):
        x = grid.axis(j) - grid.center[j]
        dj = grid.n / 2.0 - np.abs(x)
        shape = [1] * grid.dim
        shape[j] = -1
        dist = np.minimum(dist, dj.reshape(shape))
    chi = np.clip(dist, 0.0, 1.0)
    blended = DiscreteProfile(grid.with_bc("dirichlet_plus", S), chi * u.values + (1.0 - chi) * S, "blended")
    return energy(blended, field, theta, potential=potential).total - energy(u, field, theta, potential=potential).total
