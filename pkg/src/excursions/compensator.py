"""Conditional end laws, hazards and compensators for the coarse observer.

The observer sees the last level visited (1-based index), the side of the
current excursion and its age.  Given that state the current excursion ends
at level ``j`` according to the Levy measure selected by :func:`case_select`,
normalized by the summed tail of the two measures leaving that level on that
side.  Mass at infinity (an excursion that never ends) is carried by the
``atom`` of each tail and reported as ``p_never``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import eigen
from .diffusion import ABSORBING, DiffusionSpec, LevelSet
from .errors import OutOfSupport, ValidationError
from .laplace import DEFAULT_ORDER, UNDERFLOW, TailGrid, build_tail_grid, default_x_grid, hazard, hazard_curve, sum_tails

SIDES = ("up", "down")


@dataclass(frozen=True)
class ObserverState:
    """``(last level, side, age)``; the region is ``last_level`` for up, one below for down."""

    last_level: int
    side: str
    age: float = 0.0

    def __post_init__(self):
        where = "compensator.ObserverState"
        if self.side not in SIDES:
            raise ValidationError(where, f"side must be 'up' or 'down', got {self.side!r}")
        if int(self.last_level) != self.last_level or self.last_level < 1:
            raise ValidationError(where, f"last_level must be a 1-based index, got {self.last_level}")
        if not (math.isfinite(self.age) and self.age >= 0):
            raise ValidationError(where, f"age must be finite and >= 0, got {self.age}")

    @property
    def region(self):
        return self.last_level if self.side == "up" else self.last_level - 1


@dataclass(frozen=True)
class Segment:
    """One excursion of an observation history; ``end`` is None while it runs."""

    start: float
    end: float | None
    level: int
    side: str
    end_level: int | None


@dataclass(frozen=True)
class ObservationHistory:
    """Excursion-end events ``(time, level reached, side of the next excursion)``.

    The first excursion starts at ``start_time`` from ``initial_level`` on
    ``initial_side``.  An up excursion from level ``i`` can only end at ``i``
    or ``i + 1``, a down excursion at ``i`` or ``i - 1``.
    """

    initial_level: int
    initial_side: str
    events: tuple = ()
    start_time: float = 0.0

    def __init__(self, initial_level, initial_side, events=(), start_time=0.0):
        where = "compensator.ObservationHistory"
        ObserverState(initial_level, initial_side)
        evs = tuple((float(t), int(lv), str(sd)) for t, lv, sd in events)
        prev_t, level, side = float(start_time), int(initial_level), initial_side
        for k, (t, lv, sd) in enumerate(evs):
            if not t > prev_t:
                raise ValidationError(where, f"event {k}: times must be strictly increasing ({t} after {prev_t})")
            allowed = (level, level + 1) if side == "up" else (level, level - 1)
            if lv not in allowed:
                raise ValidationError(
                    where, f"event {k}: a {side} excursion from level {level} cannot end at level {lv}")
            ObserverState(lv, sd)
            prev_t, level, side = t, lv, sd
        object.__setattr__(self, "initial_level", int(initial_level))
        object.__setattr__(self, "initial_side", initial_side)
        object.__setattr__(self, "events", evs)
        object.__setattr__(self, "start_time", float(start_time))

    def segments(self):
        out = []
        start, level, side = self.start_time, self.initial_level, self.initial_side
        for t, lv, sd in self.events:
            out.append(Segment(start, t, level, side, lv))
            start, level, side = t, lv, sd
        out.append(Segment(start, None, level, side, None))
        return out

    def state_at(self, t: float) -> ObserverState:
        if t < self.start_time:
            raise ValidationError("compensator.ObservationHistory", f"t={t} precedes the history start")
        seg = [s for s in self.segments() if s.start <= t][-1]
        return ObserverState(seg.level, seg.side, t - seg.start)

    def max_level(self):
        return max([self.initial_level] + [lv for _, lv, _ in self.events])

    def shifted(self, offset: float) -> "ObservationHistory":
        return ObservationHistory(self.initial_level, self.initial_side,
                                  [(t + offset, lv, sd) for t, lv, sd in self.events], self.start_time + offset)


def case_select(state: ObserverState, target: int, n_levels: int | None = None):
    """``(level, case)`` of the measure governing an end at ``target``, or None."""
    if n_levels is not None and not 1 <= target <= n_levels:
        return None
    i = state.last_level
    if state.side == "up":
        if i == target - 1:
            return (target - 1, "one_plus")
        if i == target:
            return (target, "zero_plus")
    else:
        if i == target:
            return (target, "zero_minus")
        if i == target + 1:
            return (target + 1, "one_minus")
    return None


def _leaving_cases(levels: LevelSet, level: int, side: str):
    """``[(target, case)]`` for excursions leaving ``level`` on ``side``."""
    if side == "up":
        out = [(level, "zero_plus")]
        if level < levels.N:
            out.append((level + 1, "one_plus"))
    else:
        out = [(level, "zero_minus")]
        if level > 1:
            out.append((level - 1, "one_minus"))
    return out


class _CumulativeHazard:
    """``int_{x0}^u hazard`` for a fixed (state level, side, target).

    ``u * hazard`` is linear in ``log u`` between nodes, so the integral of
    the interpolant is the trapezoid rule in ``log u``.  Past the grid the
    last ``u * hazard`` is held (the tail's last log-log slope).
    """

    def __init__(self, numerator: TailGrid, denominator: TailGrid):
        self.x = numerator.x
        self.lx = np.log(self.x)
        self.uh = hazard_curve(numerator, denominator) * self.x
        steps = 0.5 * (self.uh[1:] + self.uh[:-1]) * np.diff(self.lx)
        self.cum = np.concatenate([[0.0], np.cumsum(steps)])

    def __call__(self, u):
        """Return ``(integral from grid minimum to u, extrapolated flag)``."""
        if u < self.x[0] * (1 - 1e-12):
            raise OutOfSupport("compensator.accumulate_compensator", f"age {u:g} below grid minimum {self.x[0]:g}")
        lu = math.log(max(u, self.x[0]))
        if lu >= self.lx[-1]:
            return float(self.cum[-1] + self.uh[-1] * (lu - self.lx[-1])), lu > self.lx[-1] + 1e-12
        k = int(np.searchsorted(self.lx, lu, side="right")) - 1
        frac = (lu - self.lx[k]) / (self.lx[k + 1] - self.lx[k])
        uh_u = self.uh[k] + frac * (self.uh[k + 1] - self.uh[k])
        return float(self.cum[k] + 0.5 * (self.uh[k] + uh_u) * (lu - self.lx[k])), False

    def batch(self, us):
        """Vectorized :meth:`__call__`; ``us`` must be >= the grid minimum."""
        lu = np.log(np.maximum(np.asarray(us, dtype=float), self.x[0]))
        k = np.clip(np.searchsorted(self.lx, lu, side="right") - 1, 0, len(self.lx) - 2)
        frac = (lu - self.lx[k]) / (self.lx[k + 1] - self.lx[k])
        uh_u = self.uh[k] + frac * (self.uh[k + 1] - self.uh[k])
        inside = self.cum[k] + 0.5 * (self.uh[k] + uh_u) * (lu - self.lx[k])
        beyond = lu > self.lx[-1]
        out = np.where(beyond, self.cum[-1] + self.uh[-1] * (lu - self.lx[-1]), inside)
        return out, bool(np.any(lu > self.lx[-1] + 1e-12))


class TailBank:
    """Lazily built tails for one diffusion and level set.

    Every query reads immutable grids, so a bank can be shared freely once
    built; :meth:`prebuild` fills it eagerly.
    """

    def __init__(self, spec: DiffusionSpec, levels: LevelSet, x_grid=None, order: int = DEFAULT_ORDER):
        self.spec = spec
        self.levels = levels
        self.x_grid = default_x_grid() if x_grid is None else np.asarray(x_grid, dtype=float)
        self.order = order
        self._tails: dict = {}
        self._sums: dict = {}
        self._cumulative: dict = {}
        self._rates: dict = {}

    def confining_region(self, level: int, case: str):
        """Bounded region the excursions of ``case`` stay in, or None."""
        side = "up" if case.endswith("plus") else "down"
        x = self.levels.x(level)
        lo, hi = self.spec.interval
        if side == "up":
            if level < self.levels.N:
                return (x, self.levels.x(level + 1))
            return (x, hi) if self.spec.hi_boundary == ABSORBING else None
        if level > 1:
            return (self.levels.x(level - 1), x)
        return (lo, x) if self.spec.lo_boundary == ABSORBING else None

    def decay_rate(self, level: int, case: str):
        region = self.confining_region(level, case)
        if region is None:
            return None
        if region not in self._rates:
            self._rates[region] = eigen.principal_rate(self.spec, *region)
        return self._rates[region]

    def tail(self, level: int, case: str) -> TailGrid:
        key = (level, case)
        if key not in self._tails:
            psi = eigen.exponent_function(self.spec, self.levels, level, case)
            self._tails[key] = build_tail_grid(psi, level, case, self.x_grid, self.order,
                                               decay_rate=self.decay_rate(level, case))
        return self._tails[key]

    def sum_tail(self, level: int, side: str) -> TailGrid:
        key = (level, side)
        if key not in self._sums:
            parts = [self.tail(level, case) for _, case in _leaving_cases(self.levels, level, side)]
            tag = "sum_plus" if side == "up" else "sum_minus"
            total = parts[0] if len(parts) == 1 else sum_tails(parts[0], parts[1], tag)
            if len(parts) == 1:
                total = TailGrid(level, tag, total.x, total.tail, total.resolved, total.order,
                                 total.projection_delta, total.noise_floor, total.atom)
            self._sums[key] = total
        return self._sums[key]

    def target_tails(self, level: int, side: str):
        """``{target: TailGrid}`` for the measures leaving ``level`` on ``side``."""
        return {j: self.tail(level, case) for j, case in _leaving_cases(self.levels, level, side)}

    def cumulative(self, level: int, side: str, target: int) -> _CumulativeHazard | None:
        key = (level, side, target)
        if key not in self._cumulative:
            tails = self.target_tails(level, side)
            self._cumulative[key] = (
                _CumulativeHazard(tails[target], self.sum_tail(level, side)) if target in tails else None)
        return self._cumulative[key]

    def prebuild(self):
        for i in range(1, self.levels.N + 1):
            for side in SIDES:
                self.sum_tail(i, side)
        return self

    def check_state(self, state: ObserverState):
        if state.last_level > self.levels.N:
            raise ValidationError("compensator.end_law", f"last_level {state.last_level} exceeds N={self.levels.N}")


@dataclass
class ConditionalEndLaw:
    """End-level probabilities given the observer state, with remaining-duration tails."""

    state: ObserverState
    probabilities: dict
    p_never: float
    tails: dict = field(repr=False)
    sum_tail: TailGrid = field(repr=False)

    def remaining_tail(self, target: int, s: float, extrapolate: bool = False) -> float:
        """``P(remaining > s | ends at target, age)``."""
        if target not in self.tails:
            return 0.0
        tg = self.tails[target]
        now = tg.value(self.state.age) - tg.atom
        if now <= 0:
            return 0.0
        later = tg.value(self.state.age + s, extrapolate=extrapolate) - tg.atom
        return float(max(later, 0.0) / now)

    def total_remaining_tail(self, s: float, extrapolate: bool = False) -> float:
        """``P(remaining > s | age)``, never-ending excursions included."""
        later = sum(tg.value(self.state.age + s, extrapolate=extrapolate) for tg in self.tails.values())
        return float(later / sum(tg.value(self.state.age) for tg in self.tails.values()))


def end_law(state: ObserverState, bank: TailBank) -> ConditionalEndLaw:
    """Probabilities ``p_j = (T_j(age) - atom_j) / T_sum(age)`` and ``p_never``."""
    where = "compensator.end_law"
    bank.check_state(state)
    total = bank.sum_tail(state.last_level, state.side)
    if state.age < total.x[0] * (1 - 1e-12) or state.age > total.x[-1] * (1 + 1e-12):
        raise OutOfSupport(where, f"age {state.age:g} outside the tail grid [{total.x[0]:g}, {total.x[-1]:g}]")
    tails = bank.target_tails(state.last_level, state.side)
    # summing the interpolated parts keeps the law normalized between grid nodes
    den = sum(tg.value(state.age) for tg in tails.values())
    if den <= UNDERFLOW:
        raise OutOfSupport(where, f"summed tail underflows at age {state.age:g}")
    probs = {}
    for j, tg in tails.items():
        assert case_select(state, j, bank.levels.N) == (tg.level, tg.case)
        probs[j] = float(max(tg.value(state.age) - tg.atom, 0.0) / den)
    p_never = float(sum(tg.atom for tg in tails.values()) / den)
    return ConditionalEndLaw(state, probs, p_never, tails, total)


@dataclass(frozen=True)
class HazardReport:
    state: ObserverState
    hazards: dict
    total: float


def total_hazard(state: ObserverState, bank: TailBank) -> HazardReport:
    """Per-target hazards ``density_j(age) / T_sum(age)`` and their sum."""
    bank.check_state(state)
    total = bank.sum_tail(state.last_level, state.side)
    hz = {j: float(hazard(tg, total, state.age)) for j, tg in bank.target_tails(state.last_level, state.side).items()}
    return HazardReport(state, hz, float(sum(hz.values())))


def target_hazard(state: ObserverState, target: int, bank: TailBank) -> float:
    """Hazard of ending at ``target``; exactly 0 when no case applies."""
    if case_select(state, target, bank.levels.N) is None:
        return 0.0
    return total_hazard(state, bank).hazards[target]


@dataclass(frozen=True)
class CompensatorValue:
    value: float
    extrapolated: bool


def compensator_value(history: ObservationHistory, target: int, floor: float, t: float,
                      bank: TailBank) -> CompensatorValue:
    """Compensator of endings at ``target`` with duration > ``floor``, up to time ``t``.

    Each excursion contributes ``int hazard_target(u) du`` over ages in
    ``(max(floor, grid minimum), age reached by min(t, end)]``.
    """
    where = "compensator.accumulate_compensator"
    if not (math.isfinite(t) and t >= history.start_time):
        raise ValidationError(where, f"t must be >= the history start, got {t}")
    if not (math.isfinite(floor) and floor >= 0):
        raise ValidationError(where, f"duration floor must be >= 0, got {floor}")
    if history.max_level() > bank.levels.N:
        raise ValidationError(where, f"history visits level {history.max_level()} > N={bank.levels.N}")
    lo = max(floor, float(bank.x_grid[0]))
    total, flagged = 0.0, False
    for seg in history.segments():
        if seg.start >= t:
            break
        reach = (t if seg.end is None else min(t, seg.end)) - seg.start
        if reach <= lo:
            continue
        cum = bank.cumulative(seg.level, seg.side, target)
        if cum is None:
            continue
        upper, ext = cum(reach)
        lower, _ = cum(lo)
        total += upper - lower
        flagged |= ext
    return CompensatorValue(total, flagged)


def accumulate_compensator(history: ObservationHistory, target: int, floor: float, t: float,
                           bank: TailBank) -> float:
    return compensator_value(history, target, floor, t, bank).value


def counted_endings(history: ObservationHistory, target: int, floor: float, t: float) -> int:
    """Excursions ended at ``target`` by time ``t`` with duration > ``floor``."""
    return sum(1 for s in history.segments()
               if s.end is not None and s.end <= t and s.end_level == target and s.end - s.start > floor)


def compensator_table(history: ObservationHistory, target: int, floor: float, times: Sequence[float],
                      bank: TailBank):
    """Rows ``(t, count, compensator, extrapolated)`` at each requested time."""
    rows = []
    for t in times:
        cv = compensator_value(history, target, floor, t, bank)
        rows.append((float(t), counted_endings(history, target, floor, t), cv.value, cv.extrapolated))
    return rows


def compensator_batch(start, end, level, up, target: int, floor: float, times, bank: TailBank):
    """Compensator at each of ``times`` for excursions given as arrays.

    ``end`` is ``inf`` for an excursion still running.  Returns the values
    and a flag telling whether any age went past the tail grid.
    """
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    level, up = np.asarray(level, dtype=int), np.asarray(up, dtype=bool)
    lo = max(float(floor), float(bank.x_grid[0]))
    out = np.zeros(len(times))
    flagged = False
    for lv in np.unique(level):
        for is_up in (True, False):
            sel = (level == lv) & (up == is_up)
            if not sel.any():
                continue
            cum = bank.cumulative(int(lv), "up" if is_up else "down", target)
            if cum is None:
                continue
            base, _ = cum(lo)
            s0, e0 = start[sel], end[sel]
            for k, t in enumerate(times):
                reach = np.minimum(t, e0) - s0
                reach = reach[reach > lo]
                if reach.size:
                    vals, ext = cum.batch(reach)
                    out[k] += float(np.sum(vals - base))
                    flagged |= ext
    return out, flagged
