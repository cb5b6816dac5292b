"""Experiment execution, persistence and plot-script emission.

A run writes, under ``<output_dir>/<kind>-seed<master_seed>/``:

* one CSV of :class:`~randac.stats.StatRecord` rows per (dim, n, theta) cell,
* ``aggregate.csv`` with one row per cell,
* ``verdicts.txt`` listing every check as PASS / FAIL / WARN,
* ``manifest.json``, written last and atomically.

Work is farmed out with ``ProcessPoolExecutor.map``, which returns results
in submission order, so file contents do not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable

from . import __version__
from . import checks
from .config import ExperimentConfig, KINDS
from .errors import ConfigurationError, RandacError
from .solver import boundary_level, lipschitz_bound
from .stats import (CSV_COLUMNS, AggregateReport, CellFailure, CellTask, Verdict, clt_from_records,
                    energy_density_from_records, loglog_slope, mean_se, record_row, run_cell,
                    trend_decreasing, uniqueness_verdicts, variance_suite, blend_cost)

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    kind: str
    master_seed: int
    workers: int
    config: dict
    started: str
    finished: str = ""
    cells: list = field(default_factory=list)
    aggregate_csv: str = ""
    report: str = ""
    verdicts: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    artifact_version: str = __version__

    @property
    def passed(self) -> bool:
        return all(v["passed"] or v["advisory"] for v in self.verdicts)

    def to_json(self) -> str:
        d = dict(self.__dict__)
        d["status"] = "pass" if self.passed else "fail"
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"manifest not found: {path}")
        d = json.loads(path.read_text())
        d.pop("status", None)
        return cls(**d)


def atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def _mapper(workers: int):
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield partial(pool.map, chunksize=4)


class _Run:
    def __init__(self, cfg: ExperimentConfig, kind: str, outdir: Path, map_fn: Callable):
        self.cfg = cfg
        self.kind = kind
        self.outdir = outdir
        self.map = map_fn
        self.cells: list[dict] = []
        self.rows: list[dict] = []
        self.verdicts: list[Verdict] = []
        self.data: dict = {}

    # -- helpers

    def task(self, n: int, theta: float, **kw) -> CellTask:
        c = self.cfg
        return CellTask(c.dim, n, theta, c.master_seed, c.p, c.potential, c.dist, c.solver,
                        m_extra=c.m_extra, failure_budget=c.failure_budget, **kw)

    def check_spec(self, n: int, theta: float) -> checks.CheckSpec:
        c = self.cfg
        return checks.CheckSpec(c.dim, n, theta, c.master_seed, c.p, c.potential, c.dist, c.solver,
                                c.truncation_offset)

    def write_cell(self, name: str, records) -> None:
        path = self.outdir / f"cell_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow(record_row(r))
        r0 = records[0] if records else None
        self.cells.append({"name": name, "path": path.name, "count": len(records),
                           "dim": self.cfg.dim, "n": r0.n if r0 else None, "theta": r0.theta if r0 else None})

    def cell(self, n: int, theta: float, reps: int | None = None, tag: str = "", **kw):
        """Run a cell, persist it, and return its records (``None`` if the cell was aborted)."""
        name = f"d{self.cfg.dim}_n{n}_theta{theta:g}{tag}"
        try:
            recs = run_cell(self.task(n, theta, **kw), reps or self.cfg.reps, self.map)
        except CellFailure as exc:
            self.verdicts.append(Verdict(f"cell_{name}", False, f"aborted: {exc}"))
            return None
        self.write_cell(name, recs)
        row = AggregateReport.from_records(recs, reps or self.cfg.reps).row() if recs else {}
        row["cell"] = name
        self.rows.append(row)
        return recs

    def add(self, name: str, ok: bool, detail: str, advisory: bool = False) -> None:
        self.verdicts.append(Verdict(name, bool(ok), detail, advisory))

    def check_map(self, fn, spec, reps):
        return list(self.map(partial(fn, spec), range(reps)))

    # -- suites

    def sanity(self):
        c = self.cfg
        for theta in c.theta:
            S = boundary_level(c.potential, theta, c.dist.gmax)
            for n in c.n:
                recs = self.cell(n, theta, antithetic=True)
                if recs is None:
                    continue
                lin = max(r.linfty_max for r in recs)
                self.add(f"linfty_bound_n{n}_theta{theta:g}", lin <= S + 1e-6, f"max |v| = {lin:.8f}, S = {S:g}")
                anti = math.fsum(r.D_n for r in recs) / len(recs)
                self.add(f"antithetic_mean_n{n}_theta{theta:g}", anti == 0.0, f"mean D_n = {anti!r}")
                if theta == 0:
                    worst = max(max(abs(r.D_n), abs(r.e_hat_plus), abs(r.e_hat_minus)) * n**c.dim for r in recs)
                    gi = max(abs(r.gap_integral - 2.0) for r in recs)
                    self.add(f"deterministic_wells_n{n}", worst < 1e-8 and gi < 1e-6,
                             f"max |energy| = {worst:.3e}, max |gap integral - 2| = {gi:.3e}")

    def lemmas(self):
        c = self.cfg
        for theta in c.theta:
            for n in c.n:
                recs = self.cell(n, theta)
                if recs is None:
                    continue
                spec = self.check_spec(n, theta)
                tol = spec.tol
                tr = self.check_map(checks.truncation_check, spec, c.reps)
                worst_gap = max(t["gap"] for t in tr)
                worst_bound = max(t["gap"] - t["bound"] for t in tr)
                self.add(f"truncation_n{n}_theta{theta:g}", worst_gap <= 0 and worst_bound <= 1e-8,
                         f"max gap {worst_gap:.3e}, max(gap - bound) {worst_bound:.3e}")
                sw = self.check_map(checks.sandwich_check, spec, c.reps)
                viol = max(s["violation"] for s in sw)
                lin = max(s["linfty_excess"] for s in sw)
                self.add(f"extremal_sandwich_n{n}_theta{theta:g}", viol < 1e-6, f"max violation {viol:.3e}")
                self.add(f"linfty_bound_n{n}_theta{theta:g}", lin <= 1e-6, f"max |v| - S = {lin:.3e}")
                fg = self.check_map(checks.fgk_check, spec, c.reps)
                fv = max(f["violation"] for f in fg)
                fmin = min(f["min_interior_gap"] for f in fg)
                self.add(f"ordered_traces_n{n}_theta{theta:g}", fv <= 0 and fmin > 0,
                         f"max order violation {fv:.3e}, min interior gap {fmin:.3e}")
                mo = self.check_map(checks.monotonicity_check, spec, c.reps)
                exc = max(m["sandwich_excess"] for m in mo)
                drop = max(m["integral_drop"] for m in mo)
                self.add(f"field_sandwich_n{n}_theta{theta:g}", exc <= 2 * tol and drop <= 2 * tol,
                         f"max bracket excess {exc:.3e}, max cell-integral drop {drop:.3e}")
                dv = self.check_map(checks.derivative_check, spec, min(c.reps, 20))
                derr = max(max(d["err_plus"], d["err_minus"]) for d in dv)
                self.add(f"field_derivative_n{n}_theta{theta:g}", derr <= max(1e-4, 5 * tol),
                         f"max |FD - closed form| {derr:.3e}")

    def scaling(self):
        c = self.cfg
        for theta in c.theta:
            means, lips, lip_max, ns = [], [], [], []
            for n in c.n:
                recs = self.cell(n, theta)
                if recs is None:
                    return
                ns.append(n)
                means.append(mean_se(abs(r.D_n) for r in recs).mean)
                lips.append(mean_se(r.lipschitz_seminorm for r in recs).mean)
                lip_max.append(max(r.lipschitz_seminorm for r in recs))
            if theta == 0:
                self.add("gap_zero_theta0", all(m == 0 for m in means), f"mean |D_n| {means}")
                continue
            slope = loglog_slope(ns, means)
            target = c.dim - 1 + 0.15
            self.data[f"gap_slope_theta{theta:g}"] = slope
            self.add(f"gap_scaling_theta{theta:g}", slope <= target,
                     f"slope {slope:.4f} (limit {target:g}); mean |D_n| " +
                     " ".join(f"{m:.4g}" for m in means))
            worst = max(lip_max)
            if c.dim == 1:
                bound = lipschitz_bound(c.potential, theta, c.dist.gmax)
                self.add(f"lipschitz_bound_theta{theta:g}", worst <= bound,
                         f"max seminorm {worst:.4g} <= a priori {bound:.4g}")
            # the sup over n^d cells creeps up like an extreme value while interfaces fill in
            lslope = loglog_slope(ns, lips) if min(lips) > 0 else 0.0
            self.add(f"lipschitz_trend_theta{theta:g}", lslope <= 0.3,
                     f"log-log slope {lslope:.4f}; mean seminorm " + " ".join(f"{v:.4g}" for v in lips),
                     advisory=True)
            costs = []
            for n in ns:
                spec = self.check_spec(n, theta)
                vals = list(self.map(partial(_blend_one, spec), range(min(c.reps, 10))))
                costs.append(mean_se(vals).mean)
            if all(v > 0 for v in costs):
                bslope = loglog_slope(ns, costs)
                self.data[f"blend_slope_theta{theta:g}"] = bslope
                self.add(f"blend_cost_scaling_theta{theta:g}", bslope <= target,
                         f"slope {bslope:.4f}; mean cost " + " ".join(f"{v:.4g}" for v in costs), advisory=True)

    def fluctuation(self):
        c = self.cfg
        for theta in c.theta:
            for n in c.n:
                anti = self.cell(n, theta, antithetic=True, tag="_antithetic")
                if anti is not None:
                    m = math.fsum(r.D_n for r in anti) / len(anti)
                    self.add(f"antithetic_mean_n{n}_theta{theta:g}", m == 0.0, f"mean D_n = {m!r}")
                try:
                    vr = variance_suite(c.dim, theta, [n], c.reps, c.K_F, c.a_list, c.master_seed, c.p, c.K_W,
                                        dist=c.dist, potential=c.potential, m_extra=c.m_extra,
                                        with_increments=c.dim == 1, map_fn=self.map)[0]
                except CellFailure as exc:
                    self.add(f"cell_d{c.dim}_n{n}_theta{theta:g}_nested", False, f"aborted: {exc}")
                    continue
                name = f"d{c.dim}_n{n}_theta{theta:g}_nested"
                self.write_cell(name, vr.records)
                row = AggregateReport.from_records(vr.records, c.reps).row()
                row.update(cell=name, b_sq_lower_mean=vr.b_sq_lower.mean, b_sq_lower_se=vr.b_sq_lower.se,
                           b_sq_upper=vr.b_sq_upper, V_hat_mean=vr.V_hat.mean, V_hat_se=vr.V_hat.se)
                for a, u in vr.U_hat.items():
                    row[f"U_hat_{a:g}_mean"] = u.mean
                    row[f"U_hat_{a:g}_se"] = u.se
                self.rows.append(row)
                f = vr.F_hat
                self.add(f"F_hat_mean_zero_n{n}_theta{theta:g}", f.within(0.0) or f.mean == 0.0,
                         f"mean {f.mean:.4g} (se {f.se:.3g})")
                self.add(f"b_sq_sandwich_n{n}_theta{theta:g}", vr.sandwich_ok,
                         f"lower {vr.b_sq_lower.mean:.4g}+-{vr.b_sq_lower.se:.3g} <= "
                         f"b^2 {vr.b_sq_hat.mean:.4g}+-{vr.b_sq_hat.se:.3g} <= upper {vr.b_sq_upper:.4g}")
                W0_bound = 2 * theta * boundary_level(c.potential, theta, c.dist.gmax)
                wmax = max(abs(r.W0_hat) for r in vr.records)
                self.add(f"W0_bound_n{n}_theta{theta:g}", wmax <= 2 * W0_bound,
                         f"max |W0_hat| {wmax:.4g}, bound 2 theta S = {W0_bound:.4g} (replica bound twice that)")
                for w in vr.warnings:
                    self.add(f"budget_n{n}_theta{theta:g}", False, w, advisory=True)
            if c.dim == 1 and len(c.n) >= 3 and theta > 0:
                us = [r for r in self.rows if r.get("cell", "").endswith("_nested") and r["theta"] == theta]
                for a in c.a_list:
                    key = f"U_hat_{a:g}"
                    means = [r[f"{key}_mean"] for r in us]
                    ses = [r[f"{key}_se"] for r in us]
                    self.add(f"U_hat_trend_a{a:g}_theta{theta:g}", trend_decreasing(means, ses),
                             " ".join(f"{m:.4g}" for m in means), advisory=True)

    def uniqueness(self):
        c = self.cfg
        for theta in c.theta:
            by_n = {}
            for n in c.n:
                recs = self.cell(n, theta)
                if recs is None:
                    return
                by_n[n] = recs
            reports = [AggregateReport.from_records(r) for r in by_n.values()]
            self.verdicts.extend(uniqueness_verdicts(reports))
            _, ev = energy_density_from_records(theta, by_n)
            self.verdicts.extend(ev)
            self.data[f"gap_integral_theta{theta:g}"] = {
                str(r.n): r.estimates["gap_integral"].mean for r in reports}

    def clt(self):
        c = self.cfg
        if c.dim != 1:
            raise ConfigurationError("clt runs in d = 1 only")
        for theta in c.theta:
            by_n = {}
            for n in c.n:
                recs = self.cell(n, theta, K_F=c.K_F)
                if recs is None:
                    return
                by_n[n] = recs
            rep = clt_from_records(c.n[-1], by_n)
            self.add(f"F_hat_mean_zero_theta{theta:g}", rep.mean.within(0.0) or rep.mean.mean == 0.0,
                     f"mean {rep.mean.mean:.4g} (se {rep.mean.se:.3g}), var {rep.variance:.4g}, KS {rep.ks_distance:.3f}")
            vv = [rep.var_over_volume[n] for n in c.n]
            if theta > 0 and len(vv) > 1:
                self.add(f"var_over_volume_decreasing_theta{theta:g}", trend_decreasing(vv),
                         " ".join(f"{v:.4g}" for v in vv), advisory=True)
            self.data[f"clt_theta{theta:g}"] = {"ks": rep.ks_distance, "variance": rep.variance,
                                                "var_over_volume": {str(k): v for k, v in rep.var_over_volume.items()}}

    # -- output

    def write_aggregate(self) -> Path:
        path = self.outdir / "aggregate.csv"
        keys = ["cell", "dim", "n", "theta", "count"]
        extra = sorted({k for r in self.rows for k in r} - set(keys))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys + extra)
            for r in self.rows:
                w.writerow([repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys + extra])
        return path

    def write_report(self) -> Path:
        path = self.outdir / "verdicts.txt"
        lines = [f"kind: {self.kind}", f"master_seed: {self.cfg.master_seed}"]
        lines += [v.line() for v in self.verdicts]
        hard = [v for v in self.verdicts if not v.passed and not v.advisory]
        lines.append(f"overall: {'FAIL' if hard else 'PASS'} ({len(hard)} hard failures)")
        path.write_text("\n".join(lines) + "\n")
        return path


def _blend_one(spec: checks.CheckSpec, index: int) -> float:
    return blend_cost(spec.field(index), spec.theta, spec.grid, spec.opts, spec.potential)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run(cfg: ExperimentConfig, kind: str | None = None, workers: int = 1, seed: int | None = None) -> RunManifest:
    """Execute one experiment suite and return its (already written) manifest."""
    kind = kind or cfg.kind
    if kind not in KINDS:
        raise ConfigurationError(f"kind must be one of {KINDS}, got {kind!r}")
    if seed is not None:
        cfg = replace(cfg, master_seed=int(seed))
    outdir = Path(cfg.output_dir) / f"{kind}-seed{cfg.master_seed}"
    outdir.mkdir(parents=True, exist_ok=True)
    stale = outdir / "manifest.json"
    if stale.exists():
        stale.unlink()
    manifest = RunManifest(kind, cfg.master_seed, workers, cfg.snapshot(), _now())
    with _mapper(workers) as map_fn:
        r = _Run(cfg, kind, outdir, map_fn)
        getattr(r, kind)()
    manifest.aggregate_csv = r.write_aggregate().name
    manifest.report = r.write_report().name
    manifest.cells = r.cells
    manifest.verdicts = [{"name": v.name, "passed": v.passed, "advisory": v.advisory, "detail": v.detail}
                         for v in r.verdicts]
    manifest.data = r.data
    manifest.finished = _now()
    atomic_write(outdir / "manifest.json", manifest.to_json())
    log.info("run %s finished: %s", kind, "pass" if manifest.passed else "fail")
    return manifest


# ---------------------------------------------------------------------------
# plot scripts

_PLOT_HEADER = '''"""Generated plotting script; needs pandas and matplotlib."""
import pandas as pd
import matplotlib.pyplot as plt
import numpy as np

HERE = {here!r}
'''

_SCALING = '''
agg = pd.read_csv(HERE + "/{aggregate}")
agg = agg[~agg["cell"].astype(str).str.contains("nested|antithetic")]
fig, ax = plt.subplots()
for theta, grp in agg.groupby("theta"):
    ax.errorbar(grp["n"], grp["abs_D_n_mean"], yerr=grp["abs_D_n_se"], marker="o", label=f"theta={{theta:g}}")
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("n")
ax.set_ylabel("mean |D_n|")
ax.set_title({title!r})
ax.legend()
fig.savefig(HERE + "/gap_scaling.png", dpi=150)
'''

_HIST = '''
from math import sqrt
cells = {cells!r}
fig, ax = plt.subplots()
for path in cells:
    df = pd.read_csv(HERE + "/" + path)
    z = df["F_hat"].dropna() / np.sqrt(df["n"] ** df["dim"])
    ax.hist(z, bins=30, density=True, alpha=0.5, label=path)
    s = z.std(ddof=1)
    x = np.linspace(z.min(), z.max(), 200)
    if s > 0:
        ax.plot(x, np.exp(-x**2 / (2 * s * s)) / (s * sqrt(2 * np.pi)))
ax.set_xlabel("F_hat / sqrt(|Lambda_n|)")
ax.legend()
fig.savefig(HERE + "/f_hat_histogram.png", dpi=150)
'''

_TREND = '''
agg = pd.read_csv(HERE + "/{aggregate}")
fig, ax = plt.subplots()
for theta, grp in agg.groupby("theta"):
    ax.errorbar(grp["n"], grp["gap_integral_mean"], yerr=grp["gap_integral_se"], marker="o", label=f"theta={{theta:g}}")
ax.set_xscale("log")
ax.set_xlabel("n")
ax.set_ylabel("mean n^-d integral of (v+ - v-)")
ax.legend()
fig.savefig(HERE + "/gap_integral_trend.png", dpi=150)
'''


def emit_plots(manifest_path) -> list[Path]:
    """Write plotting scripts next to the manifest; nothing is written if any input is missing."""
    manifest_path = Path(manifest_path)
    m = RunManifest.load(manifest_path)
    base = manifest_path.parent
    if not m.cells:
        raise ConfigurationError(f"manifest {manifest_path} lists no cells")
    missing = [str(base / c["path"]) for c in m.cells if not (base / c["path"]).is_file()]
    if not (base / m.aggregate_csv).is_file():
        missing.append(str(base / m.aggregate_csv))
    if missing:
        raise ConfigurationError("missing CSV files: " + ", ".join(missing))
    header = _PLOT_HEADER.format(here=str(base.resolve()))
    scripts = {}
    if m.kind in ("scaling", "sanity"):
        slopes = {k: v for k, v in m.data.items() if k.startswith("gap_slope")}
        title = "gap scaling; " + ", ".join(f"{k[len('gap_slope_'):]}: slope {v:.3f}" for k, v in slopes.items())
        scripts["plot_scaling.py"] = header + _SCALING.format(aggregate=m.aggregate_csv, title=title)
    if m.kind in ("fluctuation", "clt"):
        cells = [c["path"] for c in m.cells if "antithetic" not in c["name"]]
        scripts["plot_f_hat_histogram.py"] = header + _HIST.format(cells=cells)
    if m.kind == "uniqueness":
        scripts["plot_gap_integral.py"] = header + _TREND.format(aggregate=m.aggregate_csv)
    if not scripts:
        scripts["plot_scaling.py"] = header + _SCALING.format(aggregate=m.aggregate_csv, title=m.kind)
    out = []
    for name, text in scripts.items():
        p = base / name
        atomic_write(p, text)
        out.append(p)
    return out


__all__ = ["RunManifest", "run", "emit_plots", "RandacError"]
