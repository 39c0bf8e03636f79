"""Diffusion coefficients, level sets and scale-function quantities.

The generator is ``A f = 0.5 a(x) f'' + b(x) f'`` on an interval whose finite
endpoints are either natural (open) or absorbing.  Levels are indexed from 1
to N, matching the region convention ``R(x) = i`` iff ``x_i < x <= x_{i+1}``
with ``x_0 = -inf`` and ``x_{N+1} = +inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .coeff_expr import Coefficient
from .errors import NumericalFailure, ValidationError

NATURAL = "natural"
ABSORBING = "absorbing"
_BOUNDARY_ALIASES = {"natural": NATURAL, "open": NATURAL, "absorbing": ABSORBING}

# |s| beyond this multiple of the local scale counts as unbounded
UNBOUNDED_SCALE = 1e8
LIMIT_RTOL = 1e-8


def _as_bound(v):
    if isinstance(v, str):
        key = v.strip().lower()
        if key in ("-inf", "-infinity"):
            return -math.inf
        if key in ("inf", "+inf", "infinity"):
            return math.inf
    return float(v)


@dataclass(frozen=True)
class DiffusionSpec:
    a: Coefficient
    b: Coefficient
    interval: tuple = (-math.inf, math.inf)
    lo_boundary: str = NATURAL
    hi_boundary: str = NATURAL

    def __init__(self, a, b, interval=(-math.inf, math.inf), lo_boundary=NATURAL, hi_boundary=NATURAL):
        where = "diffusion_model.DiffusionSpec"
        lo, hi = (_as_bound(v) for v in interval)
        if not lo < hi:
            raise ValidationError(where, f"interval must satisfy lo < hi, got ({lo}, {hi})")
        bounds = []
        for name, value, end in (("lo_boundary", lo_boundary, lo), ("hi_boundary", hi_boundary, hi)):
            kind = _BOUNDARY_ALIASES.get(str(value).lower())
            if kind is None:
                raise ValidationError(where, f"{name} must be 'natural' or 'absorbing', got {value!r}")
            if kind == ABSORBING and math.isinf(end):
                raise ValidationError(where, f"{name} cannot be absorbing at an infinite endpoint")
            bounds.append(kind)
        object.__setattr__(self, "a", Coefficient(a))
        object.__setattr__(self, "b", Coefficient(b))
        object.__setattr__(self, "interval", (lo, hi))
        object.__setattr__(self, "lo_boundary", bounds[0])
        object.__setattr__(self, "hi_boundary", bounds[1])
        self._check_coefficients()

    def _check_coefficients(self):
        where = "diffusion_model.DiffusionSpec"
        xs = self.sample_points()
        try:
            a = np.asarray(self.a(xs), dtype=float)
            b = np.asarray(self.b(xs), dtype=float)
        except Exception as exc:  # DomainError and friends
            raise ValidationError(where, f"coefficient evaluation failed: {exc}") from exc
        if np.any(~(a > 0)):
            bad = xs[np.flatnonzero(~(a > 0))[0]]
            raise ValidationError(where, f"a(x) must be > 0 in the interior; a({bad:g}) = {self.a(bad)}")
        if not np.all(np.isfinite(b)):
            raise ValidationError(where, "b(x) must be finite in the interior")

    def sample_points(self, n=201):
        lo, hi = self.interval
        span_lo = lo if math.isfinite(lo) else (min(-50.0, hi - 50.0) if math.isfinite(hi) else -50.0)
        span_hi = hi if math.isfinite(hi) else (max(50.0, lo + 50.0) if math.isfinite(lo) else 50.0)
        t = (np.arange(n) + 0.5) / n
        return span_lo + (span_hi - span_lo) * t

    def contains(self, x):
        lo, hi = self.interval
        return lo < x < hi

    @property
    def is_brownian(self):
        """Constant coefficients: exact Gaussian increments are available."""
        return self.a.constant and self.b.constant


@dataclass(frozen=True)
class LevelSet:
    levels: tuple = field(default_factory=tuple)

    def __init__(self, levels: Sequence[float], spec: DiffusionSpec | None = None):
        where = "diffusion_model.LevelSet"
        values = tuple(float(v) for v in levels)
        if len(values) < 1:
            raise ValidationError(where, "need at least one level")
        if any(not math.isfinite(v) for v in values):
            raise ValidationError(where, "levels must be finite")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValidationError(where, f"levels must be strictly increasing, got {list(values)}")
        if spec is not None and not all(spec.contains(v) for v in values):
            raise ValidationError(where, f"every level must lie strictly inside {spec.interval}")
        object.__setattr__(self, "levels", values)

    def __len__(self):
        return len(self.levels)

    @property
    def N(self):
        return len(self.levels)

    def x(self, i):
        """Position of level ``i`` (1-based)."""
        if not 1 <= i <= len(self.levels):
            raise ValidationError("diffusion_model.LevelSet", f"level index {i} outside 1..{len(self.levels)}")
        return self.levels[i - 1]

    def as_array(self):
        return np.asarray(self.levels)


def region_of(levels: LevelSet, x):
    """Region index: ``i`` with ``x_i < x <= x_{i+1}``; works on arrays."""
    r = np.searchsorted(levels.as_array(), x, side="left")
    return int(r) if np.ndim(r) == 0 else r


def _scale_rhs(spec):
    def rhs(x, y):
        # y = (log s', s)
        return [-2.0 * spec.b(x) / spec.a(x), math.exp(y[0]) if y[0] < 700 else math.inf]
    return rhs


def _integrate_scale(spec, x0, x):
    """Return (s(x), log s'(x)) with s(x0)=0, s'(x0)=1; s=±inf if it overflows."""
    if x == x0:
        return 0.0, 0.0

    def overflow(t, y):
        return 690.0 - y[0]
    overflow.terminal = True

    sol = solve_ivp(_scale_rhs(spec), (x0, x), [0.0, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, events=overflow)
    if sol.status == 1:
        return math.copysign(math.inf, x - x0), math.inf
    if sol.status != 0:
        raise NumericalFailure("diffusion_model.scale_function", f"quadrature failed: {sol.message}")
    return float(sol.y[1, -1]), float(sol.y[0, -1])


def scale_function(spec: DiffusionSpec, x0: float, x: float) -> float:
    """Scale function normalized by ``s(x0) = 0`` and ``s'(x0) = 1``."""
    return _integrate_scale(spec, x0, x)[0]


def scale_derivative(spec: DiffusionSpec, x0: float, x: float) -> float:
    return math.exp(_integrate_scale(spec, x0, x)[1])


def truncation_points(spec: DiffusionSpec, x: float, side: str, start: float = 1.0, count: int = 60):
    """Points approaching the interval boundary on ``side`` from ``x``.

    Infinite ends: geometric doubling of the distance.  Finite natural ends:
    halving the gap to the endpoint.  Absorbing ends: the endpoint itself.
    """
    lo, hi = spec.interval
    end, kind = (hi, spec.hi_boundary) if side == "up" else (lo, spec.lo_boundary)
    sign = 1.0 if side == "up" else -1.0
    if kind == ABSORBING:
        return [end]
    if math.isinf(end):
        return [x + sign * start * 2.0**k for k in range(count)]
    gap = abs(end - x)
    return [end - sign * gap * 2.0**-k for k in range(1, count + 1)]


def scale_at_boundary(spec: DiffusionSpec, x0: float, side: str) -> float:
    """``lim s(l)`` as ``l`` tends to the boundary on ``side`` (s(x0)=0).

    Returns ``±inf`` when the scale function is unbounded there.
    """
    where = "diffusion_model.scale_at_boundary"
    sign = 1.0 if side == "up" else -1.0
    pts = truncation_points(spec, x0, side)
    if len(pts) == 1:
        return scale_function(spec, x0, pts[0])
    prev = None
    for pt in pts:
        s = scale_function(spec, x0, pt)
        if math.isinf(s) or abs(s) > UNBOUNDED_SCALE:
            return sign * math.inf
        if prev is not None and abs(s - prev) <= LIMIT_RTOL * max(abs(s), 1e-300):
            return s
        prev = s
    raise NumericalFailure(where, f"scale function limit toward the {side} boundary did not converge")


def hitting_probability(spec: DiffusionSpec, levels: LevelSet, i: int, direction: str) -> float:
    """``P^{x_i}(H_target < inf)`` for the adjacent level in ``direction``."""
    where = "diffusion_model.hitting_probability"
    target = i + 1 if direction == "up" else i - 1
    if not 1 <= target <= levels.N:
        raise ValidationError(where, f"level {i} has no neighbour in direction {direction!r}")
    xi, xt = levels.x(i), levels.x(target)
    st = scale_function(spec, xi, xt)
    # judge convergence on the scale limit itself: p creeps toward 1 when it is unbounded
    sl = scale_at_boundary(spec, xi, "down" if direction == "up" else "up")
    if math.isinf(sl):
        return 1.0
    return float(np.clip(-sl / (st - sl), 0.0, 1.0))
