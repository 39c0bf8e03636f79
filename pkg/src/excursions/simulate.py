"""Monte Carlo paths, excursion extraction and empirical checks.

Paths live on the grid ``t_k = k h``.  Level crossings are seen only through
changes of the region index at grid points: an excursion record is a maximal
run of grid points in one region, starting at the first point of the run.
Records are therefore multiples of ``h`` long, and excursions shorter than
the grid resolution are missed; all comparisons with theory condition on an
age ``u >> h``.

Each replication draws from its own Philox stream keyed by
``(seed, replication)``, so results do not depend on chunking or order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .compensator import ObservationHistory, TailBank, compensator_batch
from .diffusion import ABSORBING, DiffusionSpec, LevelSet, region_of
from .errors import DomainError, InsufficientData, NumericalFailure, ValidationError

SCHEMES = ("exact_bm", "euler_maruyama")
MIN_RECORDS = 100
# paths simulated together by the Euler-Maruyama scheme
CHUNK = 64


@dataclass(frozen=True)
class PathConfig:
    h: float
    T: float
    start: float
    seed: int = 0
    scheme: str = "exact_bm"

    def __post_init__(self):
        where = "simulate.PathConfig"
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValidationError(where, f"h must be > 0, got {self.h}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValidationError(where, f"T must be > 0, got {self.T}")
        if self.scheme not in SCHEMES:
            raise ValidationError(where, f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError(where, f"seed must be a non-negative integer, got {self.seed}")

    @property
    def steps(self):
        return int(round(self.T / self.h))

    def validate_for(self, spec: DiffusionSpec):
        where = "simulate.PathConfig"
        if not spec.contains(self.start):
            raise ValidationError(where, f"start {self.start} is not inside {spec.interval}")
        if self.scheme == "exact_bm" and not spec.is_brownian:
            raise ValidationError(where, "exact_bm needs constant a and b; use euler_maruyama")


@dataclass(frozen=True)
class SampledPath:
    times: np.ndarray
    values: np.ndarray


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replication)])))


def _normals(config: PathConfig, replication: int) -> np.ndarray:
    return replication_rng(config.seed, replication).standard_normal(config.steps)


def _euler_maruyama(spec: DiffusionSpec, config: PathConfig, noise: np.ndarray) -> np.ndarray:
    """Vectorized over rows of ``noise`` (paths x steps)."""
    where = "simulate.simulate_path"
    n_paths, n = noise.shape
    lo, hi = spec.interval
    out = np.empty((n_paths, n + 1))
    x = np.full(n_paths, float(config.start))
    out[:, 0] = x
    frozen = np.zeros(n_paths, dtype=bool)
    sqrt_h = math.sqrt(config.h)
    for k in range(n):
        try:
            a = spec.a(x)
            b = spec.b(x)
        except DomainError as exc:
            raise NumericalFailure(where, f"coefficient evaluation failed at step {k} (t={k * config.h:g}): {exc}") from exc
        step = b * config.h + np.sqrt(a) * sqrt_h * noise[:, k]
        x = np.where(frozen, x, x + step)
        if spec.lo_boundary == ABSORBING:
            hit = x <= lo
            x = np.where(hit, lo, x)
            frozen |= hit
        if spec.hi_boundary == ABSORBING:
            hit = x >= hi
            x = np.where(hit, hi, x)
            frozen |= hit
        outside = ~frozen & ((x <= lo) | (x >= hi))
        if np.any(outside):
            raise NumericalFailure(where, f"path left the state interval at step {k + 1} (t={(k + 1) * config.h:g})")
        out[:, k + 1] = x
    return out


def simulate_paths(spec: DiffusionSpec, config: PathConfig, replications: Sequence[int]) -> np.ndarray:
    """Values of the given replications on the grid, one row per replication."""
    config.validate_for(spec)
    reps = list(replications)
    noise = np.stack([_normals(config, r) for r in reps]) if reps else np.empty((0, config.steps))
    if config.scheme == "exact_bm":
        a, b = float(spec.a(0.0)), float(spec.b(0.0))
        inc = b * config.h + math.sqrt(a * config.h) * noise
        out = np.empty((len(reps), config.steps + 1))
        out[:, 0] = config.start
        np.cumsum(inc, axis=1, out=out[:, 1:])
        out[:, 1:] += config.start
        return out
    return _euler_maruyama(spec, config, noise)


def simulate_path(spec: DiffusionSpec, config: PathConfig, replication: int = 0) -> SampledPath:
    values = simulate_paths(spec, config, [replication])[0]
    return SampledPath(np.arange(config.steps + 1) * config.h, values)


@dataclass(frozen=True)
class RegionSteps:
    """Region index as a step function: initial value plus change points."""

    initial: int
    change_times: np.ndarray
    regions: np.ndarray

    def at(self, t):
        k = int(np.searchsorted(self.change_times, t, side="right"))
        return self.initial if k == 0 else int(self.regions[k - 1])


def _regions(values, levels: LevelSet, starts_on_level: bool):
    r = np.asarray(region_of(levels, values))
    if starts_on_level and len(r) > 1:
        # the start point sits on a level; its excursion side shows one step later
        r = r.copy()
        r[0] = r[1]
    return r


def _starts_on_level(values, levels):
    return bool(np.any(levels.as_array() == values[0]))


def region_process(path: SampledPath, levels: LevelSet) -> RegionSteps:
    r = np.asarray(region_of(levels, path.values))
    idx = np.flatnonzero(r[1:] != r[:-1]) + 1
    return RegionSteps(int(r[0]), path.times[idx], r[idx])


def crossing_times(path: SampledPath, levels: LevelSet) -> np.ndarray:
    """Grid times at which a new region is entered (the time-0 start included when on a level)."""
    on_level = _starts_on_level(path.values, levels)
    r = _regions(path.values, levels, on_level)
    idx = np.flatnonzero(r[1:] != r[:-1]) + 1
    times = path.times[idx]
    return np.concatenate([[path.times[0]], times]) if on_level else times


def u_process(path: SampledPath, levels: LevelSet, t: float) -> float:
    """Time since the last detected crossing (``t`` itself before any crossing)."""
    if t > path.times[-1] + 1e-12:
        raise ValidationError("simulate.u_process", f"t={t} beyond the horizon {path.times[-1]}")
    ct = crossing_times(path, levels)
    k = int(np.searchsorted(ct, t + 1e-12 * max(1.0, t), side="right"))
    return float(t if k == 0 else t - ct[k - 1])


@dataclass(frozen=True)
class ExcursionRecord:
    start_time: float
    end_time: float
    start_level: int
    side: str
    end_level: int | None
    censored: bool = False

    @property
    def duration(self):
        return self.end_time - self.start_time


@dataclass
class ExcursionTable:
    """Excursion records as columns; ``end_level`` is -1 for censored rows.

    Rows are ordered by replication, then time, so the rows of one
    replication chain: each ends where the next one starts.
    """

    start: np.ndarray
    end: np.ndarray
    start_level: np.ndarray
    up: np.ndarray
    end_level: np.ndarray
    censored: np.ndarray
    replication: np.ndarray

    def __len__(self):
        return len(self.start)

    @property
    def duration(self):
        return self.end - self.start

    def select(self, mask) -> "ExcursionTable":
        return ExcursionTable(*(getattr(self, f)[mask] for f in _TABLE_FIELDS))

    def for_replication(self, r: int) -> "ExcursionTable":
        lo, hi = np.searchsorted(self.replication, [r, r + 1])
        return self.select(slice(lo, hi))

    def records(self) -> list:
        return [ExcursionRecord(float(a), float(b), int(lv), "up" if u else "down",
                                None if c else int(e), bool(c))
                for a, b, lv, u, e, c in zip(self.start, self.end, self.start_level, self.up,
                                             self.end_level, self.censored)]

    @classmethod
    def from_records(cls, records: Sequence[ExcursionRecord], replication: int = 0) -> "ExcursionTable":
        n = len(records)
        return cls(np.array([r.start_time for r in records], dtype=float),
                   np.array([r.end_time for r in records], dtype=float),
                   np.array([r.start_level for r in records], dtype=int),
                   np.array([r.side == "up" for r in records], dtype=bool),
                   np.array([-1 if r.end_level is None else r.end_level for r in records], dtype=int),
                   np.array([r.censored for r in records], dtype=bool),
                   np.full(n, replication, dtype=int))

    @classmethod
    def concat(cls, tables: Sequence["ExcursionTable"]) -> "ExcursionTable":
        if not tables:
            return cls(*(np.empty(0, dtype=d) for d in (float, float, int, bool, int, bool, int)))
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in _TABLE_FIELDS))

    def rows(self):
        for a, b, lv, u, e, c in zip(self.start, self.end, self.start_level, self.up, self.end_level, self.censored):
            yield float(a), float(b), int(lv), "up" if u else "down", float(b - a), int(e), bool(c)


_TABLE_FIELDS = ("start", "end", "start_level", "up", "end_level", "censored", "replication")


def excursion_table(values: np.ndarray, levels: LevelSet, h: float, replications=None, t0: float = 0.0) -> ExcursionTable:
    """Records of many sampled paths (rows of ``values``) at once.

    Every row must start at the same point.  Runs of equal region index are
    records; a run that starts by entering its region from below starts at
    the level under it, on the up side, and vice versa.  The initial run of
    a path started on a level starts there; otherwise it is discarded.  Runs
    reaching the horizon are censored.
    """
    values = np.atleast_2d(values)
    n_paths, n_pts = values.shape
    reps = np.arange(n_paths) if replications is None else np.asarray(replications, dtype=int)
    if n_pts < 2 or n_paths == 0:
        return ExcursionTable.concat([])
    on_level = _starts_on_level(values[0], levels)
    regions = np.asarray(region_of(levels, values))
    if on_level:
        regions[:, 0] = regions[:, 1]
    rows, cols = np.nonzero(regions[:, 1:] != regions[:, :-1])
    cols = cols + 1
    # boundaries: 0 = path start, 1 = region change, 2 = past the horizon
    b_row = np.concatenate([np.arange(n_paths), rows, np.arange(n_paths)])
    b_pos = np.concatenate([np.zeros(n_paths, dtype=int), cols, np.full(n_paths, n_pts)])
    b_kind = np.concatenate([np.zeros(n_paths, dtype=int), np.ones(len(rows), dtype=int), np.full(n_paths, 2)])
    order = np.lexsort((b_kind, b_pos, b_row))
    b_row, b_pos, b_kind = b_row[order], b_pos[order], b_kind[order]
    ok = (b_row[:-1] == b_row[1:]) & (b_pos[1:] > b_pos[:-1])
    row, i0, i1 = b_row[:-1][ok], b_pos[:-1][ok], b_pos[1:][ok]
    k0, k1 = b_kind[:-1][ok], b_kind[1:][ok]
    reg = regions[row, i0]
    prev = regions[row, np.maximum(i0 - 1, 0)]
    entered_up = reg > prev
    start_level = np.where(entered_up, reg, reg + 1)
    up = entered_up.copy()
    first = k0 == 0
    if on_level:
        lvl = int(np.flatnonzero(levels.as_array() == values[0, 0])[0]) + 1
        start_level[first] = lvl
        up[first] = reg[first] == lvl
        keep = np.ones(len(row), dtype=bool)
    else:
        keep = ~first
    censored = k1 == 2
    i1 = np.minimum(i1, n_pts - 1)  # a run entered at the last point is censored with zero length
    nxt = regions[row, i1]
    end_level = np.where(censored, -1, np.where(nxt > reg, reg + 1, reg))
    return ExcursionTable(t0 + i0[keep] * h, t0 + i1[keep] * h, start_level[keep], up[keep],
                          end_level[keep], censored[keep], reps[row[keep]])


def extract_excursions(path: SampledPath, levels: LevelSet) -> list:
    """Excursion records of one path; the last one is censored at the horizon."""
    h = float(path.times[1] - path.times[0])
    return excursion_table(path.values[None, :], levels, h, t0=float(path.times[0])).records()


def history_from_records(records) -> ObservationHistory:
    recs = records.records() if isinstance(records, ExcursionTable) else list(records)
    if not recs:
        raise ValidationError("simulate.history_from_records", "no records")
    events = [(a.end_time, a.end_level, b.side) for a, b in zip(recs, recs[1:])]
    return ObservationHistory(recs[0].start_level, recs[0].side, events, recs[0].start_time)


def simulate_records(spec: DiffusionSpec, levels: LevelSet, config: PathConfig, replications: Iterable[int],
                     chunk: int = CHUNK) -> ExcursionTable:
    """Excursion table of the given replications, in replication order."""
    reps = list(replications)
    parts = []
    for first in range(0, len(reps), chunk):
        block = reps[first:first + chunk]
        parts.append(excursion_table(simulate_paths(spec, config, block), levels, config.h, block))
    return ExcursionTable.concat(parts)


# ---------------------------------------------------------------------------
# estimators


def _as_table(records) -> ExcursionTable:
    return records if isinstance(records, ExcursionTable) else ExcursionTable.from_records(list(records))


@dataclass
class EmpiricalEndLaw:
    """End-level probabilities among excursions older than ``age``.

    Censored records stay in the risk set but never count as ending, which
    makes the probabilities Aalen-Johansen cumulative incidences; without
    censoring they reduce to plain frequencies.  Standard errors are
    binomial with the number at risk.
    """

    start_level: int
    side: str
    age: float
    n_at_risk: int
    n_matching: int
    probabilities: dict
    standard_errors: dict
    _durations: np.ndarray = field(repr=False)
    _events: np.ndarray = field(repr=False)

    def survival(self, s):
        """Kaplan-Meier ``P(remaining > s | age)`` and its Greenwood standard error."""
        d = np.sort(self._durations - self.age, kind="stable")
        ev = self._events[np.argsort(self._durations, kind="stable")]
        times, starts = np.unique(d, return_index=True)
        deaths = np.add.reduceat(ev.astype(int), starts)
        at_risk = len(d) - starts
        use = times <= s
        deaths, at_risk = deaths[use], at_risk[use]
        surv = float(np.prod(1.0 - deaths / at_risk))
        ok = at_risk > deaths
        var = float(np.sum(deaths[ok] / (at_risk[ok] * (at_risk[ok] - deaths[ok]))))
        return surv, surv * math.sqrt(var)

    def remaining_quantiles(self, probs=(0.1, 0.25, 0.5, 0.75, 0.9)):
        """Remaining-duration quantiles of the completed records."""
        d = (self._durations - self.age)[self._events]
        return np.quantile(d, probs)


def empirical_end_law(records, start_level: int, side: str, age: float) -> EmpiricalEndLaw:
    """Empirical counterpart of the conditional end law from excursion records."""
    where = "simulate.empirical_end_law"
    tab = _as_table(records)
    match = (tab.start_level == start_level) & (tab.up == (side == "up"))
    dur_all = tab.duration
    older = match & (dur_all > age)
    n = int(older.sum())
    if n < MIN_RECORDS:
        raise InsufficientData(where, f"{n} records of ({start_level}, {side}) older than {age:g}; need {MIN_RECORDS}")
    dur, done, ends = dur_all[older], ~tab.censored[older], tab.end_level[older]
    order = np.argsort(dur, kind="stable")
    dur_s, done_s, ends_s = dur[order], done[order], ends[order]
    at_risk = n - np.arange(n)
    # Aalen-Johansen: each ending weighted by survival just before it
    hazard_step = np.where(done_s, 1.0 / at_risk, 0.0)
    surv_before = np.concatenate([[1.0], np.cumprod(1.0 - hazard_step)[:-1]])
    weight = surv_before * hazard_step
    targets = sorted({int(e) for e in ends_s[done_s]})
    probs = {j: float(weight[ends_s == j].sum()) for j in targets}
    ses = {j: math.sqrt(max(p * (1 - p), 0.0) / n) for j, p in probs.items()}
    return EmpiricalEndLaw(start_level, side, float(age), n, int(match.sum()), probs, ses, dur, done)


@dataclass
class MartingaleReport:
    target: int
    floor: float
    checkpoints: np.ndarray
    means: np.ndarray
    standard_errors: np.ndarray
    replications: int
    mean_counts: np.ndarray
    extrapolated: bool

    @property
    def passed(self):
        return bool(np.all(np.abs(self.means) <= 3.0 * self.standard_errors))

    def rows(self):
        for t, m, se, c in zip(self.checkpoints, self.means, self.standard_errors, self.mean_counts):
            yield float(t), float(m), float(se), float(c), bool(abs(m) <= 3 * se)


def compensated_counts(records, target: int, floor: float, checkpoints, bank: TailBank):
    """``count(t) - compensator(t)`` at each checkpoint for one replication."""
    tab = _as_table(records)
    end_open = np.where(tab.censored, np.inf, tab.end)
    comp, flagged = compensator_batch(tab.start, end_open, tab.start_level, tab.up, target, floor, checkpoints, bank)
    hit = ~tab.censored & (tab.end_level == target) & (tab.duration > floor)
    counts = np.array([np.sum(hit & (tab.end <= t)) for t in checkpoints])
    return counts - comp, counts, flagged


def martingale_check(spec: DiffusionSpec, levels: LevelSet, config: PathConfig, target: int, floor: float,
                     checkpoints: Sequence[float], replications: int, bank: TailBank | None = None,
                     chunk: int = CHUNK) -> MartingaleReport:
    """Mean of the compensated count of endings at ``target`` across replications."""
    where = "simulate.martingale_check"
    bank = bank or TailBank(spec, levels)
    if floor < bank.x_grid[0]:
        raise ValidationError(where, f"floor {floor} below the grid minimum age {bank.x_grid[0]}")
    cps = np.asarray(checkpoints, dtype=float)
    if np.any(cps > config.T + 1e-12) or np.any(cps < 0):
        raise ValidationError(where, "checkpoints must lie in [0, T]")
    values = np.zeros((replications, len(cps)))
    counts = np.zeros_like(values)
    flagged = False
    for first in range(0, replications, chunk):
        reps = list(range(first, min(first + chunk, replications)))
        tab = simulate_records(spec, levels, config, reps, chunk)
        for r in reps:
            values[r], counts[r], f = compensated_counts(tab.for_replication(r), target, floor, cps, bank)
            flagged |= f
    means = values.mean(axis=0)
    ses = values.std(axis=0, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros_like(means)
    return MartingaleReport(target, float(floor), cps, means, ses, replications, counts.mean(axis=0), flagged)


def discretization_study(spec: DiffusionSpec, levels: LevelSet, config: PathConfig, start_level: int, side: str,
                         target: int, age: float, replications: int, factors=(1, 2, 4), chunk: int = CHUNK):
    """Empirical ``p(end at target | age)`` at steps ``h * f`` from common fine paths.

    Coarser grids subsample the fine paths, so the differences between step
    sizes are not swamped by independent Monte Carlo noise.  Returns
    ``{step: p}``.
    """
    parts = {f: [] for f in factors}
    for first in range(0, replications, chunk):
        reps = list(range(first, min(first + chunk, replications)))
        values = simulate_paths(spec, config, reps)
        for f in factors:
            parts[f].append(excursion_table(values[:, ::f], levels, config.h * f, reps))
    out = {}
    for f in factors:
        law = empirical_end_law(ExcursionTable.concat(parts[f]), start_level, side, age)
        out[config.h * f] = law.probabilities.get(target, 0.0)
    return out


def convergence_ratio(probabilities: dict) -> float:
    """``(p(h) - p(2h)) / (p(2h) - p(4h))`` for three step sizes ``h < 2h < 4h``."""
    steps = sorted(probabilities)
    p = [probabilities[s] for s in steps]
    return (p[0] - p[1]) / (p[1] - p[2])
