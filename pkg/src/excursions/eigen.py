"""Monotone solutions of ``A phi = lam * phi`` and the Laplace exponents built from them.

Two routes to the log-derivative ``phi'/phi`` at a level:

* :func:`solve_eigen` integrates the linear second-order ODE from the vanishing
  endpoint with ``phi = 0, |phi'| = 1`` (rescaling on overflow).  It returns a
  full :class:`EigenSolution` and is used for inspection and cross-checks.
* The exponent functions use the reciprocal ratio ``v = phi/phi'``, which
  satisfies ``v' = 1 - (2/a)(lam v^2 - b v)`` with ``v = 0`` at the vanishing
  endpoint.  ``v`` is bounded (``phi'`` never vanishes for a monotone
  solution), the equation is contracting in the integration direction, and a
  whole array of ``lam`` values is integrated on one shared mesh.  The shared
  mesh keeps the quadrature error smooth in ``lam``, which matters because the
  Gaver-Stehfest weights amplify any jitter by ~1e9.

Levels are 1-based.  ``side``/``direction`` is ``"up"`` or ``"down"``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .diffusion import (
    ABSORBING,
    DiffusionSpec,
    LevelSet,
    hitting_probability,
    scale_at_boundary,
    scale_function,
)
from .errors import ConsistencyFailure, NumericalFailure, ValidationError

RTOL = 1e-12
TRUNCATION_RTOL = 1e-10
NEGATIVE_SLACK = 1e-9
MAX_DOUBLINGS = 40
OVERFLOW = 1e100
# integrated relaxation (in nats) that sets the first truncation distance
DECAY_NATS = 20.0
# relaxation rate times leg length above which a leg is integrated implicitly
STIFF_RATIO = 2000.0

CASES = (
    "plus", "minus", "tilde_plus", "tilde_minus", "pair_up", "pair_down",
    "zero_plus", "zero_minus", "one_plus", "one_minus",
)


def _check_side(side, where):
    if side not in ("up", "down"):
        raise ValidationError(where, f"side must be 'up' or 'down', got {side!r}")


def _as_lams(lam, where):
    arr = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError(where, "lambda must be finite and >= 0")
    return arr


def _shape_like(lam, values):
    return float(values[0]) if np.ndim(lam) == 0 else values.reshape(np.shape(lam))


# ---------------------------------------------------------------------------
# reciprocal log-derivative engine


def _v_rhs(spec, lams):
    def rhs(x, y):
        a = spec.a(x)
        b = spec.b(x)
        return 1.0 - (2.0 / a) * (lams * y * y - b * y)
    return rhs


def _stiff_options(spec, lams, x_from, x_to):
    """DOP853 unless the leg is stiff, then Radau with the diagonal Jacobian.

    A far truncation point under a strong drift makes the Riccati equation
    stiff: the relaxation rate ``|2b/a|`` times the leg length is large.
    """
    xs = np.linspace(x_from, x_to, 65)
    a, b = np.broadcast_to(spec.a(xs), xs.shape), np.broadcast_to(spec.b(xs), xs.shape)
    rate = np.max(np.abs(2.0 * b / a) + np.sqrt(8.0 * lams.max() / a))
    if rate * abs(x_to - x_from) < STIFF_RATIO:
        return {"method": "DOP853"}

    def jac(x, y):
        return np.diag(-(2.0 / spec.a(x)) * (2.0 * lams * y - spec.b(x)))
    return {"method": "Radau", "jac": jac}


def _integrate_v(spec, lams, x_from, x_to, where, log_from=None):
    """Integrate ``v`` from ``x_from`` (v=0) to ``x_to``; returns v(x_to).

    With ``log_from`` set, the first leg stops there and a second leg carries
    ``int 1/v dx`` (the log growth of phi) from ``log_from`` to ``x_to``.
    """
    if spec.is_brownian:
        return _integrate_v_constant(spec, lams, x_from, x_to, log_from)
    atol = 1e-17 / np.sqrt(1.0 + lams)
    first_to = x_to if log_from is None else log_from
    v = np.zeros_like(lams)
    if first_to != x_from:
        sol = solve_ivp(_v_rhs(spec, lams), (x_from, first_to), v, rtol=RTOL, atol=atol,
                        **_stiff_options(spec, lams, x_from, first_to))
        if sol.status != 0:
            raise NumericalFailure(where, f"ODE integration failed: {sol.message}")
        v = sol.y[:, -1]
    if log_from is None:
        return v, None
    if np.any(v == 0):
        raise NumericalFailure(where, "solution vanishes at the evaluation point")
    base = _v_rhs(spec, lams)
    n = lams.size

    def rhs(x, y):
        return np.concatenate([base(x, y[:n]), 1.0 / y[:n]])

    sol = solve_ivp(rhs, (log_from, x_to), np.concatenate([v, np.zeros(n)]), method="DOP853",
                    rtol=RTOL, atol=np.concatenate([atol, np.full(n, 1e-14)]))
    if sol.status != 0:
        raise NumericalFailure(where, f"ODE integration failed: {sol.message}")
    return sol.y[:n, -1], sol.y[n:, -1]


def _constant_step(lams, a, b, v0, t):
    """Exact propagation of ``v`` over a signed step ``t`` for constant a, b.

    Returns ``(v, log_growth)`` where ``log_growth = int 1/v`` over the step
    (only meaningful when ``v0 != 0``).  With ``phi(x0) = v0, phi'(x0) = 1``
    and roots ``r_pm`` of ``r^2 + beta r - alpha``, both are written so that
    no exponential overflows and small ``lam`` does not cancel.
    """
    alpha, beta = 2.0 * lams / a, 2.0 * b / a
    disc = np.sqrt(beta * beta + 4.0 * alpha)
    r_plus = np.where(beta > 0, 2.0 * alpha / (beta + disc), 0.5 * (disc - beta))
    r_minus = np.where(beta > 0, -0.5 * (beta + disc), -2.0 * alpha / (disc - beta + 1e-300))
    w = 1.0 - r_minus * v0
    with np.errstate(divide="ignore", invalid="ignore"):
        if t < 0:
            # (1 - exp(D t)) / D, tends to -t as D -> 0
            g = np.where(disc > 0, -np.expm1(disc * t) / np.where(disc > 0, disc, 1.0), -t)
            num = v0 - g * w
            den = 1.0 - r_plus * g * w
            growth = r_minus * t + np.log(num / v0)
        else:
            f = np.exp(-disc * t)
            g = np.where(disc > 0, -np.expm1(-disc * t) / np.where(disc > 0, disc, 1.0), t)
            num = v0 * f + g * w
            den = f + r_plus * g * w
            growth = r_plus * t + np.log(num / v0)
    return num / den, growth


def _integrate_v_constant(spec, lams, x_from, x_to, log_from=None):
    a, b = float(spec.a(0.0)), float(spec.b(0.0))
    first_to = x_to if log_from is None else log_from
    v = np.zeros_like(lams)
    if first_to != x_from:
        v, _ = _constant_step(lams, a, b, v, first_to - x_from)
    if log_from is None:
        return v, None
    v_end, growth = _constant_step(lams, a, b, v, x_to - log_from)
    return v_end, growth


def _kappa(spec, y, lams):
    a = np.broadcast_to(spec.a(y), np.shape(y))
    b = np.broadcast_to(spec.b(y), np.shape(y))
    return np.sqrt(b[:, None] ** 2 + 2.0 * a[:, None] * lams[None, :]) / a[:, None]


def _decay_length(spec, x, lams, side):
    """Distance toward ``side`` over which ``int kappa`` reaches ``DECAY_NATS``.

    ``kappa = sqrt(b^2 + 2 a lam) / a`` is half the relaxation rate of the
    ``v`` equation, so truncating there perturbs ``v`` at ``x`` by about
    ``exp(-2 DECAY_NATS)``.  A growing drift shortens the length a lot
    compared with the local value at ``x``.
    """
    local = DECAY_NATS / np.maximum(_kappa(spec, np.array([x]), lams)[0], 1e-12)
    if spec.is_brownian:
        return local
    lo, hi = spec.interval
    sign = 1.0 if side == "up" else -1.0
    room = (hi - x) if side == "up" else (x - lo)
    reach = min(float(local.max()), 0.999 * room)
    s = reach * np.linspace(0.0, 1.0, 2001) ** 2
    k = _kappa(spec, x + sign * s, lams)
    cum = np.concatenate([np.zeros((1, lams.size)), np.cumsum(0.5 * (k[1:] + k[:-1]) * np.diff(s)[:, None], axis=0)])
    first = np.argmax(cum >= DECAY_NATS, axis=0)
    found = cum[-1] >= DECAY_NATS
    return np.where(found, s[np.maximum(first, 1)], local)


def _boundary_start_points(spec, x, side, length):
    """Truncation sequence toward the boundary on ``side`` starting near ``length``."""
    lo, hi = spec.interval
    end, kind = (hi, spec.hi_boundary) if side == "up" else (lo, spec.lo_boundary)
    sign = 1.0 if side == "up" else -1.0
    if kind == ABSORBING:
        return [end]
    if math.isinf(end):
        return [x + sign * length * 2.0**k for k in range(MAX_DOUBLINGS)]
    gap = abs(end - x)
    k0 = max(1, int(math.floor(math.log2(gap / length)))) if length < gap else 1
    k0 = max(1, k0)
    return [end - sign * gap * 2.0**-k for k in range(k0, k0 + MAX_DOUBLINGS)]


def _tilde_v(spec, x, side, lams, where, log_to=None):
    """``v`` at ``x`` for the solution vanishing at the boundary on ``side``.

    Converged by doubling the truncation (per block of similar ``lam``).
    With ``log_to``, also returns ``int_x^{log_to} 1/v``.
    """
    v_out = np.empty_like(lams)
    log_out = np.empty_like(lams) if log_to is not None else None
    lengths = _decay_length(spec, x, lams, side)
    bins = np.floor(np.log2(lengths)).astype(int)
    for bin_id in np.unique(bins):
        sel = bins == bin_id
        block = lams[sel]
        pts = _boundary_start_points(spec, x, side, 2.0 ** (bin_id + 1))
        prev = None
        for k, pt in enumerate(pts):
            v, lg = _integrate_v(spec, block, pt, x if log_to is None else log_to, where,
                                 log_from=None if log_to is None else x)
            if len(pts) == 1:
                break
            if prev is not None:
                change = np.abs(1.0 / v - 1.0 / prev[0]) / np.maximum(np.abs(1.0 / v), 1e-300)
                if np.all(change < TRUNCATION_RTOL) or (np.all(np.abs(v - prev[0]) <= 1e-15 * np.abs(v))):
                    break
            prev = (v, lg)
        else:
            raise NumericalFailure(where, f"truncation toward the {side} boundary did not converge")
        v_out[sel] = v
        if log_out is not None:
            log_out[sel] = lg
    return v_out, log_out


# ---------------------------------------------------------------------------
# lambda = 0 limits (the equation reduces to the scale equation)


def _side_at_zero(spec, levels, i, side):
    xi = levels.x(i)
    if side == "up":
        return 0.5 / scale_function(spec, xi, levels.x(i + 1))
    return -0.5 / scale_function(spec, xi, levels.x(i - 1))


def _tilde_at_zero(spec, levels, i, side):
    s_end = scale_at_boundary(spec, levels.x(i), side)
    if math.isinf(s_end):
        return 0.0
    return 0.5 / s_end if side == "up" else -0.5 / s_end


# ---------------------------------------------------------------------------
# public exponents


def psi_side(spec: DiffusionSpec, levels: LevelSet, i: int, side: str, lam):
    """``psi_i^+`` (side="up") or ``psi_i^-`` (side="down").

    Up: decreasing solution on ``[x_i, x_{i+1}]`` vanishing at ``x_{i+1}``,
    ``psi = -phi'/(2 phi)`` at ``x_i``.  Down mirrors it with the increasing
    solution vanishing at ``x_{i-1}``.
    """
    where = "eigen.psi_side"
    _check_side(side, where)
    nb = i + 1 if side == "up" else i - 1
    if not (1 <= i <= levels.N and 1 <= nb <= levels.N):
        raise ValidationError(where, f"level {i} has no neighbour on side {side!r}")
    lams = _as_lams(lam, where)
    out = np.empty_like(lams)
    zero = lams == 0
    if np.any(zero):
        out[zero] = _side_at_zero(spec, levels, i, side)
    pos = ~zero
    if np.any(pos):
        v, _ = _integrate_v(spec, lams[pos], levels.x(nb), levels.x(i), where)
        out[pos] = (-0.5 if side == "up" else 0.5) / v
    return _shape_like(lam, out)


def psi_tilde(spec: DiffusionSpec, levels: LevelSet, i: int, side: str, lam):
    """Like :func:`psi_side` with the solution vanishing at the interval boundary."""
    where = "eigen.psi_tilde"
    _check_side(side, where)
    levels.x(i)
    lams = _as_lams(lam, where)
    out = np.empty_like(lams)
    zero = lams == 0
    if np.any(zero):
        out[zero] = _tilde_at_zero(spec, levels, i, side)
    pos = ~zero
    if np.any(pos):
        v, _ = _tilde_v(spec, levels.x(i), side, lams[pos], where)
        out[pos] = (-0.5 if side == "up" else 0.5) / v
    return _shape_like(lam, out)


def psi_pair(spec: DiffusionSpec, levels: LevelSet, i: int, direction: str, lam):
    """``psi_{i,i+1} = psi_i^+ + tilde psi_i^-`` (up) and the mirrored sum (down)."""
    where = "eigen.psi_pair"
    _check_side(direction, where)
    other = "down" if direction == "up" else "up"
    return psi_side(spec, levels, i, direction, lam) + psi_tilde(spec, levels, i, other, lam)


def hitting_transform(spec: DiffusionSpec, levels: LevelSet, i: int, direction: str, lam):
    """``E^{x_i} exp(-lam H)`` for the adjacent level in ``direction``.

    Ratio ``phi(x_i)/phi(x_target)`` of the solution that increases toward the
    target and vanishes at the far boundary.
    """
    where = "eigen.hitting_transform"
    _check_side(direction, where)
    target = i + 1 if direction == "up" else i - 1
    if not (1 <= i <= levels.N and 1 <= target <= levels.N):
        raise ValidationError(where, f"level {i} has no neighbour in direction {direction!r}")
    lams = _as_lams(lam, where)
    out = np.empty_like(lams)
    zero = lams == 0
    if np.any(zero):
        out[zero] = hitting_probability(spec, levels, i, direction)
    pos = ~zero
    if np.any(pos):
        far = "down" if direction == "up" else "up"
        _, log_growth = _tilde_v(spec, levels.x(i), far, lams[pos], where, log_to=levels.x(target))
        out[pos] = np.exp(-log_growth)
    return _shape_like(lam, out)


def _clamp_nonnegative(values, where):
    if np.any(values < -NEGATIVE_SLACK):
        worst = float(values.min())
        raise ConsistencyFailure(where, f"exponent negative beyond tolerance ({worst:.3e})")
    return np.maximum(values, 0.0)


def pair_at_zero(spec, levels, i, direction):
    return float(psi_pair(spec, levels, i, direction, 0.0))


def psi_one(spec: DiffusionSpec, levels: LevelSet, i: int, direction: str, lam):
    """Exponent of excursions from ``x_i`` that reach the neighbour in ``direction``.

    ``P(H < inf) * psi_pair(0) - E[exp(-lam H)] * psi_pair(lam)``.
    """
    where = "eigen.psi_one"
    lams = _as_lams(lam, where)
    p_hit = hitting_probability(spec, levels, i, direction)
    pair0 = pair_at_zero(spec, levels, i, direction)
    values = p_hit * pair0 - (np.atleast_1d(hitting_transform(spec, levels, i, direction, lams))
                              * np.atleast_1d(psi_pair(spec, levels, i, direction, lams)))
    values[lams == 0] = 0.0
    return _shape_like(lam, _clamp_nonnegative(values, where))


def psi_zero(spec: DiffusionSpec, levels: LevelSet, i: int, side: str, lam):
    """Exponent of excursions from ``x_i`` on ``side`` that return to ``x_i``.

    ``psi_i^{side}(lam) - psi_i^{side}(0)``; at the extreme levels (no
    neighbour on that side) it is the tilde exponent.
    """
    where = "eigen.psi_zero"
    _check_side(side, where)
    lams = _as_lams(lam, where)
    extreme = (side == "up" and i == levels.N) or (side == "down" and i == 1)
    if extreme:
        values = np.atleast_1d(psi_tilde(spec, levels, i, side, lams)).copy()
    else:
        values = np.atleast_1d(psi_side(spec, levels, i, side, lams)) - _side_at_zero(spec, levels, i, side)
        values[lams == 0] = 0.0
    return _shape_like(lam, _clamp_nonnegative(values, where))


def exponent_function(spec: DiffusionSpec, levels: LevelSet, i: int, case: str) -> Callable:
    """Callable ``lam -> psi`` for one of :data:`CASES`."""
    table = {
        "plus": lambda l: psi_side(spec, levels, i, "up", l),
        "minus": lambda l: psi_side(spec, levels, i, "down", l),
        "tilde_plus": lambda l: psi_tilde(spec, levels, i, "up", l),
        "tilde_minus": lambda l: psi_tilde(spec, levels, i, "down", l),
        "pair_up": lambda l: psi_pair(spec, levels, i, "up", l),
        "pair_down": lambda l: psi_pair(spec, levels, i, "down", l),
        "zero_plus": lambda l: psi_zero(spec, levels, i, "up", l),
        "zero_minus": lambda l: psi_zero(spec, levels, i, "down", l),
        "one_plus": lambda l: psi_one(spec, levels, i, "up", l),
        "one_minus": lambda l: psi_one(spec, levels, i, "down", l),
    }
    if case not in table:
        raise ValidationError("eigen.exponent_function", f"unknown case {case!r}")
    return table[case]


def available_cases(levels: LevelSet, i: int):
    """Cases defined at level ``i``."""
    out = ["tilde_plus", "tilde_minus", "zero_plus", "zero_minus"]
    if i < levels.N:
        out += ["plus", "pair_up", "one_plus"]
    if i > 1:
        out += ["minus", "pair_down", "one_minus"]
    return [c for c in CASES if c in out]


@dataclass(frozen=True)
class ExponentTable:
    level: int
    case: str
    lambdas: np.ndarray
    psi: np.ndarray
    psi_at_zero: float

    def rows(self):
        for lam, value in zip(self.lambdas, self.psi):
            yield self.level, self.case, float(lam), float(value)


def exponent_table(spec, levels, i, case, lambdas) -> ExponentTable:
    f = exponent_function(spec, levels, i, case)
    lambdas = np.asarray(lambdas, dtype=float)
    return ExponentTable(i, case, lambdas, np.asarray(f(lambdas), dtype=float), float(f(0.0)))


def bernstein_violations(table: ExponentTable, slope_tol=1e-10, concavity_tol=1e-8):
    """List of human-readable Bernstein-property violations (empty when fine).

    Checks ``psi(0) >= 0``, nondecreasing values and nonincreasing chord
    slopes on the (possibly nonuniform) grid.
    """
    problems = []
    if table.psi_at_zero < 0:
        problems.append(f"psi(0) = {table.psi_at_zero} < 0")
    lam = np.concatenate([[0.0], table.lambdas])
    psi = np.concatenate([[table.psi_at_zero], table.psi])
    diffs = np.diff(psi)
    scale = np.maximum(np.abs(psi[1:]), 1.0)
    if np.any(diffs < -slope_tol * scale):
        problems.append(f"decreasing step {diffs.min():.3e}")
    slopes = diffs / np.diff(lam)
    slope_scale = np.maximum(np.abs(slopes[:-1]), 1.0)
    if np.any(np.diff(slopes) > concavity_tol * slope_scale):
        problems.append(f"convex kink {np.diff(slopes).max():.3e}")
    return problems


def richardson_limit(f, lams=(1e-3, 5e-4, 2.5e-4, 1.25e-4), powers=(0.5, 1.0), tol=1e-7):
    """Richardson extrapolation of ``f(lam)`` to ``lam -> 0`` on a halving sequence.

    Error terms ``lam**p`` are eliminated in the order of ``powers``; the
    square-root term comes first because the exponents toward an infinite
    natural boundary behave like ``sqrt(lam)`` near 0.  Returns
    ``(estimate, converged)`` where converged means the last two
    extrapolants differ by less than ``tol``.
    """
    col = [float(f(l)) for l in lams]
    for p in powers:
        if len(col) < 3:
            break
        k = 2.0 ** p
        col = [(k * col[j + 1] - col[j]) / (k - 1.0) for j in range(len(col) - 1)]
    return col[-1], abs(col[-1] - col[-2]) < tol


# ---------------------------------------------------------------------------
# linear second-order route


@dataclass
class EigenSolution:
    spec: DiffusionSpec
    lam: float
    subinterval: tuple
    direction: str
    start: float
    end: float
    _segments: list
    _log_norm: float

    def values(self, x):
        """``(phi(x), phi'(x))`` normalized so ``phi(end) = 1``."""
        lo, hi = sorted((self.start, self.end))
        if not lo <= x <= hi:
            raise ValidationError("eigen.EigenSolution", f"x={x} outside [{lo}, {hi}]")
        for seg_lo, seg_hi, sol, log_scale in self._segments:
            if seg_lo <= x <= seg_hi:
                y = sol.sol(x)
                factor = math.exp(log_scale - self._log_norm)
                return float(y[0] * factor), float(y[1] * factor)
        raise NumericalFailure("eigen.EigenSolution", f"no segment covers x={x}")

    def log_derivative(self, x=None):
        phi, dphi = self.values(self.end if x is None else x)
        return dphi / phi

    def check_points(self, n=20):
        lo, hi = sorted((self.start, self.end))
        return lo + (hi - lo) * (np.arange(1, n + 1) / (n + 1))

    def residual(self, n=20, h=1e-5):
        """Max of |A phi - lam phi| / max(|lam phi|, 1) at interior check points,
        with phi'' from central differences of phi'."""
        worst = 0.0
        for x in self.check_points(n):
            phi, dphi = self.values(x)
            step = h * max(1.0, abs(x))
            dp_plus = self.values(x + step)[1]
            dp_minus = self.values(x - step)[1]
            d2 = (dp_plus - dp_minus) / (2 * step)
            r = abs(0.5 * self.spec.a(x) * d2 + self.spec.b(x) * dphi - self.lam * phi)
            worst = max(worst, r / max(abs(self.lam * phi), 1.0))
        return worst


def _linear_leg(spec, lam, x_from, x_to, initial_slope, where):
    segments = []
    log_scale = 0.0
    y0 = np.array([0.0, initial_slope])
    x0 = x_from

    def rhs(x, y):
        return [y[1], 2.0 * (lam * y[0] - spec.b(x) * y[1]) / spec.a(x)]

    def blowup(x, y):
        return OVERFLOW - abs(y[0])
    blowup.terminal = True

    for _ in range(10_000):
        sol = solve_ivp(rhs, (x0, x_to), y0, method="DOP853", rtol=1e-10, atol=1e-14,
                        dense_output=True, events=blowup)
        if sol.status == -1:
            raise NumericalFailure(where, f"ODE integration failed: {sol.message}")
        x_end = float(sol.t[-1])
        segments.append((min(x0, x_end), max(x0, x_end), sol, log_scale))
        if sol.status == 0:
            return segments, log_scale, sol.y[:, -1]
        y0 = sol.y[:, -1] / OVERFLOW
        log_scale += math.log(OVERFLOW)
        x0 = x_end
    raise NumericalFailure(where, "rescale-and-retry exhausted")


def solve_eigen(spec: DiffusionSpec, lam: float, subinterval, direction: str, boundary: str) -> EigenSolution:
    """Monotone solution of ``A phi = lam phi`` by direct linear integration.

    ``boundary`` is ``vanish_at_left``, ``vanish_at_right`` or
    ``natural_at_infinite`` (the infinite/open end of ``subinterval`` is
    truncated and the truncation doubled until ``phi'/phi`` at the other end
    settles to 1e-9 relative).
    """
    where = "eigen.solve_eigen"
    if not lam > 0:
        raise ValidationError(where, "lambda must be > 0")
    if direction not in ("increasing", "decreasing"):
        raise ValidationError(where, f"direction must be increasing|decreasing, got {direction!r}")
    xl, xr = (float(v) for v in subinterval)
    lo, hi = spec.interval
    if not (lo <= xl < xr <= hi):
        raise ValidationError(where, f"subinterval {subinterval} not inside {spec.interval}")
    slope = -1.0 if direction == "decreasing" else 1.0

    def build(x_zero, x_eval):
        segs, log_scale, y_end = _linear_leg(spec, lam, x_zero, x_eval, slope, where)
        norm = log_scale + math.log(abs(y_end[0]))
        return EigenSolution(spec, lam, (xl, xr), direction, x_zero, x_eval, segs, norm)

    if boundary == "vanish_at_right":
        return build(xr, xl)
    if boundary == "vanish_at_left":
        return build(xl, xr)
    if boundary != "natural_at_infinite":
        raise ValidationError(where, f"unknown boundary {boundary!r}")
    side = "up" if direction == "decreasing" else "down"
    x_eval = xl if side == "up" else xr
    end = xr if side == "up" else xl
    if math.isfinite(end) and spec.contains(end):
        return build(end, x_eval)
    length = float(_decay_length(spec, x_eval, np.array([lam]), side)[0])
    points = _boundary_start_points(spec, x_eval, side, length)
    if len(points) == 1:
        return build(points[0], x_eval)
    prev = None
    for pt in points:
        sol = build(pt, x_eval)
        w = sol.log_derivative()
        if prev is not None and abs(w - prev) < 1e-9 * abs(w):
            return sol
        prev = w
    raise NumericalFailure(where, "truncation did not converge")


# ---------------------------------------------------------------------------
# decay rate of excursions confined between two levels


def _has_interior_zero(spec, rate, lo, hi):
    """Whether ``0.5 a phi'' + b phi' = -rate phi``, phi(lo)=0, phi'(lo)=1, vanishes in (lo, hi]."""
    def rhs(x, y):
        return [y[1], -2.0 * (spec.b(x) * y[1] + rate * y[0]) / spec.a(x)]

    def crossing(x, y):
        return y[0]
    crossing.terminal = True
    crossing.direction = -1
    sol = solve_ivp(rhs, (lo, hi), [0.0, 1.0], method="DOP853", rtol=1e-11, atol=1e-14, events=crossing)
    if sol.status == -1:
        raise NumericalFailure("eigen.principal_rate", f"ODE integration failed: {sol.message}")
    return sol.status == 1 or sol.y[0, -1] <= 0.0


def principal_rate(spec: DiffusionSpec, lo: float, hi: float, rtol: float = 1e-10) -> float:
    """Smallest ``c > 0`` with a Dirichlet eigenfunction ``A phi = -c phi`` on ``(lo, hi)``.

    Excursions confined to ``(lo, hi)`` have duration tails decaying like
    ``exp(-c x)``.  By Sturm comparison the solution started at ``lo`` has a
    zero in ``(lo, hi]`` exactly when the trial rate is at least ``c``, so
    bisection on that predicate converges to ``c``.
    """
    where = "eigen.principal_rate"
    if not lo < hi:
        raise ValidationError(where, f"need lo < hi, got ({lo}, {hi})")
    xs = np.linspace(lo, hi, 33)
    a_max = float(np.max(spec.a(xs)))
    low, high = 0.0, math.pi**2 * a_max / (2.0 * (hi - lo) ** 2)
    for _ in range(200):
        if _has_interior_zero(spec, high, lo, hi):
            break
        low, high = high, 2.0 * high
    else:
        raise NumericalFailure(where, "no eigenvalue bracket found")
    while high - low > rtol * high:
        mid = 0.5 * (low + high)
        if _has_interior_zero(spec, mid, lo, hi):
            high = mid
        else:
            low = mid
    return 0.5 * (low + high)
