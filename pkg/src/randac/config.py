"""Experiment configuration: flat ``key = value`` text with dotted sections.

Example::

    master_seed = 7
    dim = 1
    theta = 0.2, 0.5
    n = 8, 16, 32
    solver.residual_tol = 1e-8
    nested.K_F = 8

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .field import DistributionSpec
from .grid_energy import GridSpec
from .potential import PotentialSpec, verify_h1
from .solver import SolverOptions, boundary_level
from .stats import default_margin

KINDS = ("sanity", "lemmas", "scaling", "fluctuation", "uniqueness", "clt")
OUTPUT_ENV = "RANDAC_OUTPUT_DIR"


class ConfigParseError(ConfigurationError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    dim: int = 1
    theta: tuple[float, ...] = (0.5,)
    n: tuple[int, ...] = (8, 16, 32)
    reps: int = 20
    p: int = 8
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    dist: DistributionSpec = field(default_factory=DistributionSpec)
    solver: SolverOptions = field(default_factory=SolverOptions)
    K_F: int = 8
    K_W: int = 16
    m_extra: int | None = None
    a_list: tuple[float, ...] = (0.1, 0.25)
    truncation_offset: float = 0.5
    failure_budget: int = 0
    output_dir: str = "randac_out"
    kind: str | None = None
    source: str | None = None

    @property
    def margin(self) -> int:
        return default_margin(self.potential.C0) if self.m_extra is None else self.m_extra

    def snapshot(self) -> dict:
        s = self.solver
        return {
            "master_seed": self.master_seed, "dim": self.dim, "theta": list(self.theta), "n": list(self.n),
            "reps": self.reps, "p": self.p,
            "potential": {"C0": self.potential.C0, "delta0": self.potential.delta0,
                          "glue_coeffs": list(self.potential.glue_coeffs)},
            "dist": {"kind": self.dist.kind, "gmax": self.dist.gmax},
            "solver": {"time_step": s.time_step, "residual_tol": s.residual_tol, "energy_tol": s.energy_tol,
                       "max_iters": s.max_iters, "monotone_shift": s.monotone_shift, "scheme": s.scheme,
                       "extremal": s.extremal, "levels": s.levels},
            "nested": {"K_F": self.K_F, "K_W": self.K_W, "m_extra": self.margin, "a_list": list(self.a_list)},
            "truncation": {"offset": self.truncation_offset},
            "failure_budget": self.failure_budget, "output_dir": self.output_dir, "kind": self.kind,
        }


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _opt_float(v: str) -> float | None:
    return None if v.lower() in ("", "auto", "none") else float(v)


# key -> (target group, attribute, converter)
_KEYS = {
    "master_seed": ("top", "master_seed", int),
    "dim": ("top", "dim", int),
    "theta": ("top", "theta", _floats),
    "n": ("top", "n", _ints),
    "reps": ("top", "reps", int),
    "p": ("top", "p", int),
    "kind": ("top", "kind", str),
    "output_dir": ("top", "output_dir", str),
    "failure_budget": ("top", "failure_budget", int),
    "potential.C0": ("potential", "C0", float),
    "potential.delta0": ("potential", "delta0", float),
    "dist.kind": ("dist", "kind", str),
    "dist.gmax": ("dist", "gmax", float),
    "solver.time_step": ("solver", "time_step", _opt_float),
    "solver.residual_tol": ("solver", "residual_tol", _opt_float),
    "solver.energy_tol": ("solver", "energy_tol", float),
    "solver.max_iters": ("solver", "max_iters", int),
    "solver.monotone_shift": ("solver", "monotone_shift", _opt_float),
    "solver.scheme": ("solver", "scheme", str),
    "solver.extremal": ("solver", "extremal", str),
    "solver.levels": ("solver", "levels", int),
    "nested.K_F": ("top", "K_F", int),
    "nested.K_W": ("top", "K_W", int),
    "nested.m_extra": ("top", "m_extra", lambda v: None if v.lower() == "auto" else int(v)),
    "nested.a_list": ("top", "a_list", _floats),
    "truncation.offset": ("top", "truncation_offset", float),
}


def parse_config(text: str, path=None) -> ExperimentConfig:
    groups: dict[str, dict] = {"top": {}, "potential": {}, "dist": {}, "solver": {}}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigParseError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ConfigParseError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        group, attr, conv = _KEYS[key]
        try:
            groups[group][attr] = conv(value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key}: {exc}", lineno, path) from None
    try:
        top = groups["top"]
        cfg = ExperimentConfig(potential=PotentialSpec(**groups["potential"]),
                               dist=DistributionSpec(**groups["dist"]),
                               solver=SolverOptions(**groups["solver"]),
                               source=str(path) if path else None, **top)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    check_config(cfg)
    return cfg


def check_config(cfg: ExperimentConfig) -> None:
    """Cross-validate a config; raises :class:`ConfigurationError` naming the failed invariant."""
    if cfg.kind is not None and cfg.kind not in KINDS:
        raise ConfigurationError(f"kind must be one of {KINDS}")
    if not cfg.n or list(cfg.n) != sorted(cfg.n) or len(set(cfg.n)) != len(cfg.n):
        raise ConfigurationError("n list must be non-empty and strictly ascending")
    if not cfg.theta or any(t < 0 for t in cfg.theta):
        raise ConfigurationError("theta list must be non-empty and nonnegative")
    if cfg.reps < 1:
        raise ConfigurationError("reps must be >= 1")
    if cfg.K_F < 1 or cfg.K_W < 1:
        raise ConfigurationError("nested budgets must be >= 1")
    if cfg.m_extra is not None and cfg.m_extra < 0:
        raise ConfigurationError("m_extra must be >= 0")
    if cfg.failure_budget < 0:
        raise ConfigurationError("failure_budget must be >= 0")
    for n in cfg.n:
        GridSpec(cfg.dim, n, cfg.p)  # grid invariants (dim, p >= 2, parity)
    rep = verify_h1(cfg.potential)
    if not rep.passed:
        raise ConfigurationError(f"potential fails the double-well checks: {', '.join(rep.failures())}")
    for t in cfg.theta:
        cfg.solver.resolve(cfg.potential, t, cfg.dist.gmax, cfg.dim)
        if cfg.truncation_offset <= 0:
            level = boundary_level(cfg.potential, t, cfg.dist.gmax) + cfg.truncation_offset
            raise ConfigurationError(f"truncation level {level} must exceed 1 + C0*theta*gmax "
                                     f"(truncation.offset must be positive)")


def validate_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, path)
    override = os.environ.get(OUTPUT_ENV)
    if override:
        cfg = replace(cfg, output_dir=override)
    return cfg


def default_config_path() -> Path:
    return Path(__file__).with_name("configs") / "default.cfg"
