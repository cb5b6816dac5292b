"""Double-well potential with quadratic wells glued to an inner polynomial.

For ``|s| > 1 - delta0`` the potential is ``(|s| - 1)**2 / (2*C0)``.  On the
inner interval it is a polynomial (ascending coefficients ``glue_coeffs``);
the default is the even quartic matching value, slope and curvature at the
gluing points, which for ``C0 = 1, delta0 = 1/2`` is ``s**4 - s**2 + 5/16``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError


def default_glue(C0: float, delta0: float) -> tuple[float, float, float, float, float]:
    """Even quartic ``a + b s^2 + c s^4`` that is C^2-matched at ``s0 = 1 - delta0``."""
    s0 = 1.0 - delta0
    c = 1.0 / (8.0 * C0 * s0**3)
    b = (1.0 / C0 - 12.0 * c * s0**2) / 2.0
    a = (s0 - 1.0) ** 2 / (2.0 * C0) - b * s0**2 - c * s0**4
    return (a, 0.0, b, 0.0, c)


@dataclass(frozen=True)
class PotentialSpec:
    C0: float = 1.0
    delta0: float = 0.5
    glue_coeffs: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if not self.C0 > 0:
            raise ConfigurationError("C0 must be positive")
        if not 0.0 < self.delta0 < 1.0:
            raise ConfigurationError("delta0 must lie in (0, 1)")
        if self.glue_coeffs is None:
            object.__setattr__(self, "glue_coeffs", default_glue(self.C0, self.delta0))
        else:
            object.__setattr__(self, "glue_coeffs", tuple(float(c) for c in self.glue_coeffs))

    @property
    def s0(self) -> float:
        """Gluing point ``1 - delta0``."""
        return 1.0 - self.delta0

    @property
    def deriv_coeffs(self) -> tuple[float, ...]:
        return tuple(k * c for k, c in enumerate(self.glue_coeffs))[1:] or (0.0,)

    @property
    def second_coeffs(self) -> tuple[float, ...]:
        return tuple(k * (k - 1) * c for k, c in enumerate(self.glue_coeffs))[2:] or (0.0,)


def _horner(coeffs: Sequence[float], s):
    out = np.zeros_like(s) + coeffs[-1]
    for c in reversed(coeffs[:-1]):
        out = c + s * out
    return out


def _piecewise(spec: PotentialSpec, s, inner, upper, lower):
    s_arr = np.asarray(s, dtype=np.float64)
    out = np.where(s_arr > spec.s0, upper(s_arr), np.where(s_arr < -spec.s0, lower(s_arr), inner(s_arr)))
    return float(out) if np.ndim(s) == 0 else out


def w(spec: PotentialSpec, s):
    """Potential value (scalar in, scalar out; arrays elementwise)."""
    k = 1.0 / (2.0 * spec.C0)
    return _piecewise(spec, s, lambda x: _horner(spec.glue_coeffs, x),
                      lambda x: k * (x - 1.0) ** 2, lambda x: k * (x + 1.0) ** 2)


def w_prime(spec: PotentialSpec, s):
    k = 1.0 / spec.C0
    return _piecewise(spec, s, lambda x: _horner(spec.deriv_coeffs, x),
                      lambda x: k * (x - 1.0), lambda x: k * (x + 1.0))


def w_second(spec: PotentialSpec, s):
    k = 1.0 / spec.C0
    return _piecewise(spec, s, lambda x: _horner(spec.second_coeffs, x),
                      lambda x: np.full_like(x, k), lambda x: np.full_like(x, k))


def sup_w_second(spec: PotentialSpec, S: float, samples: int = 20001) -> float:
    """Largest curvature on ``[-S, S]`` (dense scan plus the gluing points)."""
    s = np.concatenate([np.linspace(-S, S, samples), [spec.s0, -spec.s0]])
    s = s[np.abs(s) <= S]
    return float(np.max(w_second(spec, s)))


@dataclass
class H1Report:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = (bool(ok), detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, (ok, _) in self.checks.items() if not ok]

    def __str__(self) -> str:
        return "\n".join(f"{'PASS' if ok else 'FAIL'} {k} {d}" for k, (ok, d) in self.checks.items())


def verify_h1(spec: PotentialSpec, lo: float = -3.0, hi: float = 3.0, samples: int = 10_000,
              match_tol: float = 1e-12) -> H1Report:
    """Check the double-well assumptions on a dense grid plus exact gluing-point checks."""
    rep = H1Report()
    s = np.linspace(lo, hi, samples)
    ws = w(spec, s)
    s0 = spec.s0
    k = 1.0 / spec.C0

    # one-sided limits at the gluing points, from the inner polynomial and the outer branch
    gaps = []
    for g in (s0, -s0):
        sign = 1.0 if g > 0 else -1.0
        inner = (_horner(spec.glue_coeffs, g), _horner(spec.deriv_coeffs, g), _horner(spec.second_coeffs, g))
        outer = (0.5 * k * (g - sign) ** 2, k * (g - sign), k)
        gaps.extend(abs(float(a) - float(b)) for a, b in zip(inner, outer))
    rep.add("C2_matching", max(gaps) < match_tol, f"max jump {max(gaps):.3e}")

    rep.add("nonnegative", bool(np.all(ws >= 0.0)) and w(spec, 0.0) >= 0.0, f"min {ws.min():.3e}")

    wells_zero = abs(w(spec, 1.0)) == 0.0 and abs(w(spec, -1.0)) == 0.0
    away = np.abs(np.abs(s) - 1.0) > 1e-6
    rep.add("zeros_only_at_wells", wells_zero and bool(np.all(ws[away] > 0.0)),
            f"min off-well {ws[away].min():.3e}")

    asym = float(np.max(np.abs(ws - w(spec, -s))))
    rep.add("symmetric", asym <= 1e-12, f"max |W(s)-W(-s)| {asym:.3e}")

    t = np.linspace(0.0, 1.0, samples)[1:-1]
    rep.add("strictly_decreasing_0_1", bool(np.all(np.diff(w(spec, np.linspace(0.0, 1.0, samples))) < 0.0))
            and bool(np.all(w_prime(spec, t) < 0.0)), f"max W' on (0,1) {np.max(w_prime(spec, t)):.3e}")

    tail = s[s > s0 + 1e-6]
    tail_err = float(np.max(np.abs(w(spec, tail) - 0.5 * k * (tail - 1.0) ** 2))) if tail.size else 0.0
    rep.add("quadratic_tail", tail_err == 0.0, f"max deviation {tail_err:.3e}")
    return rep
