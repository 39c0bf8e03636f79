"""Gaver-Stehfest inversion of Laplace exponents into Levy-measure tails.

A Laplace exponent ``psi(lam) = lam * int_0^inf exp(-lam x) T(x) dx`` is
inverted for the tail ``T(x) = F[x, inf]`` by applying Gaver-Stehfest to
``psi(lam)/lam``.  Only real ``lam`` are needed.

Double precision puts a noise floor on the result: the order-14 weights sum
to ~6.5e8 in absolute value, and on exponentially decaying tails the method
rings at the 1e-5 level.  :func:`build_tail_grid` therefore marks where the
inverted tail is resolved and continues it past that point with a
log-linear fit in ``x`` (exponential decay).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import isotonic_regression

from .errors import NumericalFailure, OutOfSupport, ValidationError

log = logging.getLogger(__name__)

ORDERS = (8, 10, 12, 14, 16)
DEFAULT_ORDER = 14
MONOTONE_SLACK = 1e-9
NOISE_FACTOR = 50.0
FIT_FRACTION = 0.25
LN2 = math.log(2.0)


@lru_cache(maxsize=None)
def stehfest_weights(order: int) -> np.ndarray:
    """Stehfest coefficients V_1..V_N, computed exactly then rounded."""
    if order not in ORDERS:
        raise ValidationError("laplace.invert_tail", f"order must be one of {ORDERS}, got {order}")
    half = order // 2
    out = []
    for k in range(1, order + 1):
        s = Fraction(0)
        for j in range((k + 1) // 2, min(k, half) + 1):
            s += Fraction(
                j**half * math.factorial(2 * j),
                math.factorial(half - j) * math.factorial(j) * math.factorial(j - 1)
                * math.factorial(k - j) * math.factorial(2 * j - k),
            )
        out.append(float((-1) ** (k + half) * s))
    w = np.array(out)
    w.setflags(write=False)
    return w


def stehfest(transform: Callable, t, order: int = DEFAULT_ORDER):
    """Invert ``transform`` (a function of real ``lam``, vectorized) at times ``t``."""
    where = "laplace.stehfest"
    weights = stehfest_weights(order)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(~(ts > 0)):
        raise ValidationError(where, "inversion points must be > 0")
    k = np.arange(1, order + 1)
    lams = k[None, :] * LN2 / ts[:, None]
    values = np.asarray(transform(lams.ravel()), dtype=float).reshape(lams.shape)
    # the weights sum to zero; subtracting a per-row constant removes the
    # rounding error of that sum from the result
    centred = values - values[:, [order // 2]]
    out = LN2 / ts * (centred @ weights)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(where, "non-finite Gaver-Stehfest sum")
    return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))


def invert_tail(psi: Callable, x, order: int = DEFAULT_ORDER):
    """Tail ``F[x, inf]`` of the Levy measure with Laplace exponent ``psi``."""
    return stehfest(lambda lam: np.asarray(psi(lam), dtype=float) / lam, x, order)


def invert_density(transform: Callable, x, order: int = DEFAULT_ORDER):
    """Density whose Laplace transform is ``transform``."""
    return stehfest(transform, x, order)


def default_x_grid(lo=1e-4, hi=1e3, points=400):
    if not (0 < lo < hi) or points < 3:
        raise ValidationError("laplace.x_grid", f"need 0 < min < max and >= 3 points, got ({lo}, {hi}, {points})")
    return np.geomspace(lo, hi, int(points))


@dataclass(frozen=True)
class TailGrid:
    """Tail ``F[x, inf]`` sampled on a log-spaced grid.

    ``resolved`` marks nodes where the inversion is above its noise floor;
    the remaining (trailing) nodes hold the exponential continuation.
    """

    level: int
    case: str
    x: np.ndarray
    tail: np.ndarray
    resolved: np.ndarray
    order: int = DEFAULT_ORDER
    projection_delta: float = 0.0
    noise_floor: float = 0.0
    atom: float = 0.0
    hazard: np.ndarray | None = field(default=None, compare=False)

    @property
    def log_x(self):
        return np.log(self.x)

    def _log_tail(self):
        return np.log(np.maximum(self.tail, 1e-300))

    def value(self, u, extrapolate=False):
        """Tail at ``u``: linear in log-tail vs log-x between nodes.

        Beyond the grid maximum the last log-log slope is continued when
        ``extrapolate`` is set; otherwise (and always below the grid minimum)
        :class:`OutOfSupport` is raised.
        """
        us = np.atleast_1d(np.asarray(u, dtype=float))
        lo, hi = self.x[0], self.x[-1]
        if np.any(us < lo * (1 - 1e-12)) or (not extrapolate and np.any(us > hi * (1 + 1e-12))):
            raise OutOfSupport("laplace.TailGrid", f"age {us.min() if np.any(us < lo) else us.max():g} outside grid [{lo:g}, {hi:g}]")
        lx, lt = self.log_x, self._log_tail()
        lu = np.log(np.maximum(us, lo))
        out = np.interp(lu, lx, lt)
        beyond = lu > lx[-1]
        if np.any(beyond):
            slope = (lt[-1] - lt[-2]) / (lx[-1] - lx[-2])
            out[beyond] = lt[-1] + slope * (lu[beyond] - lx[-1])
        out = np.exp(out)
        out[self.tail.max() <= 0] = 0.0
        return float(out[0]) if np.ndim(u) == 0 else out.reshape(np.shape(u))

    def density_on_grid(self):
        """``-dT/dx`` at the nodes from central differences in ``log x``.

        Fourth-order stencil inside, second order at the two outer nodes.
        Linear in the tail, so densities of summed tails add up exactly.
        """
        return np.maximum(-log_derivative(self.tail, self.log_x) / self.x, 0.0)

    def rows(self):
        hz = self.hazard if self.hazard is not None else np.full(self.x.shape, np.nan)
        for xv, tv, hv in zip(self.x, self.tail, hz):
            yield self.level, self.case, float(xv), float(tv), float(hv)


def log_derivative(values, log_x):
    """``d values / d log x`` on a uniform ``log_x`` grid."""
    h = log_x[1] - log_x[0]
    out = np.gradient(values, log_x)
    if len(values) >= 5:
        out[2:-2] = (values[:-4] - 8 * values[1:-3] + 8 * values[3:-1] - values[4:]) / (12 * h)
    return out


def _continue_unresolved(x, tail, resolved, atom=0.0, decay_rate=None):
    """Replace the unresolved suffix by ``atom`` plus a log-linear (in x) decay.

    With ``decay_rate`` the slope is fixed and only the level is fitted.  The
    fit window blends from the inverted values into the fitted line.
    """
    n_res = int(resolved.sum())
    if n_res == len(x):
        return tail
    tail = tail - atom
    out = tail.copy()
    if n_res < 3:
        out[n_res:] = 0.0 if n_res == 0 else tail[n_res - 1]
        return out + atom
    # fit over the upper part of the resolved x range (at least 3 nodes)
    start = max(0, min(n_res - 3, int(np.searchsorted(x, FIT_FRACTION * x[n_res - 1]))))
    xs, lt = x[start:n_res], np.log(np.maximum(tail[start:n_res], 1e-300))
    if decay_rate is not None:
        slope = -float(decay_rate)
        anchor = float(np.mean(lt - slope * (xs - x[n_res - 1])))
    else:
        slope = min(np.polyfit(xs, lt, 1)[0], 0.0)
        anchor = lt[-1]
    out[n_res:] = np.exp(anchor + slope * (x[n_res:] - x[n_res - 1]))
    # hand over smoothly inside the fit window so no kink shows in higher differences
    w = _smooth_step(np.linspace(0.0, 1.0, n_res - start))
    fitted = anchor + slope * (xs - x[n_res - 1])
    out[start:n_res] = np.exp((1.0 - w) * lt + w * fitted)
    return out + atom


def _smooth_step(s):
    """Infinitely differentiable step from 0 at ``s = 0`` to 1 at ``s = 1``."""
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def postprocess_tail(raw, x, atom=0.0, decay_rate=None):
    """Monotone projection, noise floor and continuation of a raw inversion.

    ``atom`` is the mass at infinity (``psi(0+)``); the tail levels off there.

    Returns ``(tail, resolved, projection_delta, noise_floor)``.
    """
    where = "laplace.build_tail_grid"
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise NumericalFailure(where, "non-finite tail values")
    negative = max(0.0, atom - float(raw.min()))
    # the most negative value measures the ringing amplitude; keep values
    # well above it so the resolved part carries a few percent error at most
    noise_floor = NOISE_FACTOR * negative
    delta = 0.0
    tail = raw
    if np.any(np.diff(raw) > MONOTONE_SLACK):
        tail = isotonic_regression(raw, increasing=False).x
        delta = float(np.max(np.abs(tail - raw)))
        log.info("isotonic projection applied, max correction %.3e", delta)
    tail = np.maximum(tail, atom)
    below = tail - atom <= noise_floor
    if np.any(below):
        first = int(np.argmax(below))
        resolved = np.arange(len(x)) < first
    else:
        resolved = np.ones(len(x), dtype=bool)
    tail = _continue_unresolved(x, tail, resolved, atom, decay_rate)
    return tail, resolved, delta, noise_floor


def build_tail_grid(psi: Callable, level: int, case: str, x_grid=None, order: int = DEFAULT_ORDER,
                    atom: float | None = None, decay_rate: float | None = None) -> TailGrid:
    """Invert ``psi`` on ``x_grid`` and clean the result into a :class:`TailGrid`.

    ``atom`` defaults to ``psi(0)``, which the engine returns as the
    ``lam -> 0+`` limit.  ``decay_rate``, when known, fixes the exponential
    rate used past the resolved part of the grid.
    """
    x = default_x_grid() if x_grid is None else np.asarray(x_grid, dtype=float)
    if atom is None:
        atom = max(float(np.asarray(psi(np.array([0.0])), dtype=float)[0]), 0.0)
    raw = invert_tail(psi, x, order)
    tail, resolved, delta, floor = postprocess_tail(raw, x, atom, decay_rate)
    return TailGrid(level, case, x, tail, resolved, order, delta, floor, atom)


def sum_tails(first: TailGrid, second: TailGrid, case: str) -> TailGrid:
    """Pointwise sum of two tails on the same grid."""
    if not np.array_equal(first.x, second.x):
        raise ValidationError("laplace.sum_tails", "tails live on different grids")
    return TailGrid(first.level, case, first.x, first.tail + second.tail,
                    first.resolved & second.resolved, first.order,
                    max(first.projection_delta, second.projection_delta),
                    first.noise_floor + second.noise_floor, first.atom + second.atom)


def zero_tail(like: TailGrid, case: str) -> TailGrid:
    return TailGrid(like.level, case, like.x, np.zeros_like(like.tail), np.ones_like(like.resolved), like.order)


UNDERFLOW = 1e-280
MAX_LOG_STEP = 0.25


def hazard_curve(numerator: TailGrid, denominator: TailGrid) -> np.ndarray:
    """``density(numerator) / denominator`` at every grid node.

    Where the denominator has underflowed or drops faster than
    ``MAX_LOG_STEP`` per node, or the difference stencil reaches into such
    nodes, the last clean hazard is held.
    """
    dens = numerator.density_on_grid()
    den = denominator.tail
    ok = den > UNDERFLOW
    # the linear stencil is only trusted while the tail changes slowly per node
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.abs(np.diff(np.log(np.where(ok, den, 1.0))))
    ok[1:] &= step <= MAX_LOG_STEP
    clean = ok.copy()
    for shift in (1, 2):
        clean[:-shift] &= ok[shift:]
        clean[-shift:] &= ok[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(clean, dens / np.where(clean, den, 1.0), 0.0)
    if not clean.all() and clean.any():
        last = int(np.flatnonzero(clean)[-1])
        h[last + 1:] = h[last]
    return h


def hazard(numerator: TailGrid, denominator: TailGrid, u) -> float:
    """Instantaneous rate at age ``u``: numerator density over denominator tail."""
    where = "laplace.hazard"
    us = np.atleast_1d(np.asarray(u, dtype=float))
    x = numerator.x
    if np.any(us < x[0] * (1 - 1e-12)) or np.any(us > x[-1] * (1 + 1e-12)):
        raise OutOfSupport(where, f"u outside grid [{x[0]:g}, {x[-1]:g}]")
    den = denominator.value(us)
    if np.any(den <= UNDERFLOW):
        raise OutOfSupport(where, "denominator tail underflow")
    # interpolate u * hazard linearly in log u (exact for power-law tails)
    uh = hazard_curve(numerator, denominator) * x
    out = np.interp(np.log(us), np.log(x), uh) / us
    return float(out[0]) if np.ndim(u) == 0 else out.reshape(np.shape(u))


def forward_transform(grid: TailGrid, lam: float, extension: str = "power") -> float:
    """``lam * int_0^inf exp(-lam x) T(x) dx`` by quadrature on the grid.

    Below the grid the tail is continued by its first log-log slope
    (``extension="power"``) or held at the first value (``"constant"``);
    beyond the grid it is taken as zero.
    """
    x, t = grid.x, grid.tail
    lx = np.log(x)
    integrand = t * np.exp(-lam * x) * x
    body = np.trapezoid(integrand, lx)
    if extension == "constant" or t[0] <= 0 or t[1] <= 0:
        head = t[0] * (1 - math.exp(-lam * x[0])) / lam
    else:
        slope = (math.log(t[1]) - math.log(t[0])) / (lx[1] - lx[0])
        if slope <= -1:
            raise NumericalFailure("laplace.forward_transform", "tail not integrable at 0")
        # int_0^x0 t0 (x/x0)^slope dx, exp(-lam x) ~ 1 - lam x on [0, x0]
        p = slope
        head = t[0] * x[0] / (p + 1) - lam * t[0] * x[0] ** 2 / (p + 2)
    return lam * (head + body)


def complete_monotonicity_violations(grid: TailGrid, max_order: int = 4, slack: float = 1e-6, stride: int = 8):
    """Worst sign violation of ``(-1)^n Delta^n T`` relative to ``T``.

    Differences are taken over every ``stride``-th resolved node: on adjacent
    nodes a fourth difference is ~1e-5 of the tail, below the inversion bias,
    while at the default stride (``Delta log x ~ 0.3``) it is a few percent.
    The grid is not uniform, so ``Delta^n`` is the n-th divided difference
    over ``n + 1`` nodes scaled by ``n! h^n`` (``h`` the mean spacing); for a
    completely monotone tail its sign alternates exactly.  Each value is
    divided by the tail (less any atom) at the first of its nodes.  Returns
    ``order -> worst signed value``; values below ``-slack`` are violations.
    """
    t = grid.tail - grid.atom
    keep = grid.resolved & (t > UNDERFLOW)
    x, t = grid.x[keep][::stride], t[keep][::stride]
    worst = {}
    dd = t.copy()
    for n in range(1, max_order + 1):
        if len(x) <= n:
            break
        dd = (dd[1:] - dd[:-1]) / (x[n:] - x[:-n])
        h = (x[n:] - x[:-n]) / n
        scaled = (-1) ** n * dd * math.factorial(n) * h**n / t[:-n]
        worst[n] = float(scaled.min())
    return worst


def max_step_increment(grid: TailGrid):
    """Largest ``|T(x_k) - T(x_{k+1})|`` and its index."""
    inc = np.abs(np.diff(grid.tail))
    k = int(np.argmax(inc))
    return float(inc[k]), k


def refinement_ratio(psi: Callable, grid: TailGrid, order: int | None = None):
    """Halve the spacing at the steepest step; ratio of new to old max increment.

    A continuous tail gives ~0.5.  Uses fresh inversions at the midpoint.
    """
    order = order or grid.order
    old, k = max_step_increment(grid)
    mid = math.sqrt(grid.x[k] * grid.x[k + 1])
    vals = invert_tail(psi, np.array([grid.x[k], mid, grid.x[k + 1]]), order)
    new = max(abs(vals[0] - vals[1]), abs(vals[1] - vals[2]))
    return new / old if old > 0 else 0.0


@dataclass
class CrosscheckReport:
    level: int
    direction: str
    x: np.ndarray
    direct: np.ndarray
    convolution: np.ndarray
    total_mass: float
    max_relative_discrepancy: float
    max_pointwise_relative: float

    def rows(self):
        for xv, d, c in zip(self.x, self.direct, self.convolution):
            yield float(xv), float(d), float(c), abs(d - c) / self.total_mass if self.total_mass > 0 else 0.0


def crosscheck_convolution(spec, levels, i, direction, x_grid=None, order=DEFAULT_ORDER,
                           w_step=2.5e-3, t_step=2e-3) -> CrosscheckReport:
    """Compare the inverted one-case tail with its convolution representation.

    ``F^1[x, inf) = P(H < inf) psi_pair(0) - int_0^x g(x - u) Tbar(u) du`` with
    ``g`` the hitting-time density and ``Tbar`` the tail of ``psi_pair``.
    The convolution uses ``u = w^2`` (the pair tail behaves like u^-1/2 at 0)
    and the trapezoid rule in ``w``; ``g`` comes from a cubic spline through
    inversions on a uniform time grid.

    ``max_relative_discrepancy`` is the sup-norm difference divided by the
    total mass ``P psi_pair(0)`` of the one-case measure.
    """
    from . import eigen
    from .diffusion import hitting_probability

    x = np.geomspace(0.05, 5.0, 60) if x_grid is None else np.asarray(x_grid, dtype=float)
    xmax = float(x.max())
    p_hit = hitting_probability(spec, levels, i, direction)
    pair0 = eigen.pair_at_zero(spec, levels, i, direction)
    total = p_hit * pair0

    direct = invert_tail(lambda l: eigen.psi_one(spec, levels, i, direction, l), x, order)

    n_w = int(math.ceil(math.sqrt(xmax) / w_step))
    w = np.linspace(0.0, math.sqrt(xmax), n_w + 1)
    u = w[1:] ** 2
    pair_tail = invert_tail(lambda l: eigen.psi_pair(spec, levels, i, direction, l), u, order)
    # 2 w Tbar(w^2) is finite at w = 0; extrapolate it linearly
    weighted = np.empty_like(w)
    weighted[1:] = 2.0 * w[1:] * pair_tail
    weighted[0] = 2 * weighted[1] - weighted[2]

    t = np.arange(1, int(math.ceil(xmax / t_step)) + 1) * t_step
    g = invert_density(lambda l: eigen.hitting_transform(spec, levels, i, direction, l), t, order)
    spline = CubicSpline(np.concatenate([[0.0], t]), np.concatenate([[0.0], g]))

    conv = np.empty_like(x)
    for k, xv in enumerate(x):
        top = math.sqrt(xv)
        m = int(np.searchsorted(w, top, side="right"))
        ws = np.concatenate([w[:m], [top]])
        vals = np.concatenate([weighted[:m], [np.interp(top, w, weighted)]])
        gv = spline(np.maximum(xv - ws**2, 0.0))
        conv[k] = np.trapezoid(gv * vals, ws)
    rhs = total - conv
    scale = total if total > 0 else 1.0
    diff = np.abs(direct - rhs)
    big = direct > 1e-3 * scale
    pointwise = float(np.max(diff[big] / direct[big])) if np.any(big) else 0.0
    return CrosscheckReport(i, direction, x, direct, rhs, total, float(diff.max() / scale), pointwise)
