"""Acceptance checks against standard Brownian motion.

Each check compares the engines with an independent reference (closed
forms from :mod:`oracle_bm`, or Monte Carlo) and returns a :class:`Check`.
The CLI ``verify`` subcommand prints them as a table; the test suite runs
them at the acceptance sizes.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import eigen
from .compensator import ObserverState, TailBank, case_select, end_law
from .diffusion import DiffusionSpec, LevelSet, hitting_probability
from .errors import InsufficientData
from .laplace import crosscheck_convolution, invert_tail
from .oracle_bm import bm_psi
from .simulate import PathConfig, empirical_end_law, martingale_check, simulate_records

BM_LAMBDAS = (0.1, 1.0, 10.0)
# (engine level, engine case, oracle case) on levels {0, 1}
BM_CASES = (
    (1, "tilde_minus", "tilde"), (2, "tilde_plus", "tilde"),
    (1, "plus", "side"), (2, "minus", "side"),
    (1, "pair_up", "pair"), (2, "pair_down", "pair"),
    (1, "zero_plus", "zero"), (2, "zero_minus", "zero"),
    (1, "one_plus", "one"), (2, "one_minus", "one"),
    (1, "zero_minus", "extreme_zero"), (2, "zero_plus", "extreme_zero"),
)
LARGE_LAMBDAS = (1e2, 1e3, 1e4, 1e5)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}  ({self.seconds:.1f} s)"


@dataclass(frozen=True)
class McSettings:
    """Monte Carlo sizes; the defaults are the acceptance sizes."""

    h: float = 1e-4
    T: float = 10.0
    seed: int = 11
    replications: int = 4000
    martingale_seed: int = 2024
    martingale_replications: int = 2000


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return Check(name, bool(passed), detail, time.perf_counter() - t0)


def bm_levels():
    return DiffusionSpec("1", "0"), LevelSet([0.0, 1.0])


def exponent_suite(rtol=1e-6):
    """Engine exponents against the closed forms at ``BM_LAMBDAS`` with gap 1."""
    def run():
        spec, levels = bm_levels()
        worst, where = 0.0, ""
        for level, case, oracle in BM_CASES:
            got = eigen.exponent_function(spec, levels, level, case)(np.array(BM_LAMBDAS))
            ref = bm_psi(oracle, 1.0, np.array(BM_LAMBDAS))
            err = np.abs(got / ref - 1.0)
            if err.max() > worst:
                worst, where = float(err.max()), f"{case}@{level}"
        return worst <= rtol, f"max rel err {worst:.2e} ({where}) <= {rtol:g}"
    return _timed("exponents vs closed form", run)


def large_lambda_limit(b="0", rtol=1e-4):
    """``psi_one(lam)`` for growing ``lam`` against ``P(hit) * psi_pair(0)``.

    The reference takes ``psi_pair(0)`` by Richardson extrapolation from
    small ``lam``, not through the scale function used inside the engine.
    """
    def run():
        spec, levels = DiffusionSpec("1", b), LevelSet([0.0, 1.0])
        values = [float(eigen.psi_one(spec, levels, 1, "up", lam)) for lam in LARGE_LAMBDAS]
        pair0, converged = eigen.richardson_limit(lambda l: eigen.psi_pair(spec, levels, 1, "up", l))
        ref = hitting_probability(spec, levels, 1, "up") * pair0
        err = abs(values[-1] / ref - 1.0)
        note = "" if converged else ", extrapolants spread > 1e-7"
        return err <= rtol, f"limit {values[-1]:.8f} vs {ref:.8f}, rel {err:.1e}{note}"
    return _timed(f"large-lambda limit (b={b})", run)


def inversion_suite():
    def run():
        xs = np.array([0.25, 1.0, 4.0])
        got = invert_tail(lambda lam: np.sqrt(lam / 2.0), xs)
        ref = (2.0 * math.pi * xs) ** -0.5
        rel = float(np.max(np.abs(got / ref - 1.0)))
        pair = float(invert_tail(lambda lam: lam / (lam + 1.0), 1.0))
        err = abs(pair - math.exp(-1.0))
        return rel <= 1e-4 and err <= 1e-5, f"sqrt rel {rel:.1e} <= 1e-4; exp abs {err:.1e} <= 1e-5"
    return _timed("inversion pairs", run)


def convolution_check(tol=2e-3):
    def run():
        spec, levels = bm_levels()
        rep = crosscheck_convolution(spec, levels, 1, "up")
        return rep.max_relative_discrepancy < tol, f"max discrepancy {rep.max_relative_discrepancy:.1e} < {tol:g}"
    return _timed("convolution cross-check", run)


def _band(se):
    return max(3.0 * se, 0.02)


def end_law_mc(settings: McSettings = McSettings(), ages=(0.05, 0.2, 1.0), bank=None, records=None):
    """Empirical end-at-1 probability and remaining-duration tail against the end law.

    Returns one check per age plus one for the record count.
    """
    spec, levels = bm_levels()
    bank = bank or TailBank(spec, levels)
    t0 = time.perf_counter()
    if records is None:
        cfg = PathConfig(settings.h, settings.T, 0.0, settings.seed)
        records = simulate_records(spec, levels, cfg, range(settings.replications))
    n = int(np.sum((records.start_level == 1) & records.up))
    checks = [Check("excursions from (1, up)", n >= 100_000, f"{n} records >= 100000",
                    time.perf_counter() - t0)]
    for u in ages:
        t1 = time.perf_counter()
        law = end_law(ObserverState(1, "up", u), bank)
        try:
            emp = empirical_end_law(records, 1, "up", u)
        except InsufficientData as exc:
            checks.append(Check(f"end law vs MC, u={u:g}", False, exc.message, time.perf_counter() - t1))
            continue
        p, q = law.probabilities[2], emp.probabilities.get(2, 0.0)
        ok = abs(p - q) <= _band(emp.standard_errors.get(2, 0.0))
        detail = [f"p={q:.4f} vs {p:.4f} (se {emp.standard_errors.get(2, 0.0):.4f})"]
        for s in emp.remaining_quantiles():
            surv, se = emp.survival(s)
            ref = law.total_remaining_tail(s, extrapolate=True)
            ok &= abs(surv - ref) <= _band(se)
            detail.append(f"{surv:.3f}/{ref:.3f}")
        checks.append(Check(f"end law vs MC, u={u:g}", ok, "; tail ".join(detail[:1] + [" ".join(detail[1:])]),
                            time.perf_counter() - t1))
    return checks


def martingale(settings: McSettings = McSettings(), target=2, floor=0.1, checkpoints=(2.0, 5.0, 10.0), bank=None):
    def run():
        spec, levels = bm_levels()
        cfg = PathConfig(settings.h, settings.T, 0.0, settings.martingale_seed)
        cps = [c for c in checkpoints if c <= settings.T]
        rep = martingale_check(spec, levels, cfg, target, floor, cps, settings.martingale_replications, bank)
        parts = [f"t={t:g}: {m:+.3f}/{se:.3f}" for t, m, se, _, _ in rep.rows()]
        return rep.passed, "mean/se " + ", ".join(parts)
    return _timed(f"martingale, target level {target}", run)


def three_level(settings: McSettings = McSettings(), age=0.2, tol=0.03):
    """Levels {-1, 0, 1}: routing, support of the end law and MC agreement."""
    def run():
        spec, levels = DiffusionSpec("1", "0"), LevelSet([-1.0, 0.0, 1.0])
        # paths start at 0, the middle level
        cases = set()
        for last in (1, 2, 3):
            for side in ("up", "down"):
                for target in (1, 2, 3):
                    hit = case_select(ObserverState(last, side), target, 3)
                    if hit:
                        cases.add(hit[1])
        routed = cases == {"one_plus", "zero_plus", "zero_minus", "one_minus"}
        law = end_law(ObserverState(2, "up", age), TailBank(spec, levels))
        p = {j: law.probabilities.get(j, 0.0) for j in (1, 2, 3)}
        support = p[1] == 0.0 and p[2] > 0 and p[3] > 0
        cfg = PathConfig(settings.h, settings.T, 0.0, settings.seed)
        emp = empirical_end_law(simulate_records(spec, levels, cfg, range(settings.replications)), 2, "up", age)
        worst = max(abs(p[j] - emp.probabilities.get(j, 0.0)) for j in (2, 3))
        band = max(tol, 3.0 * max(emp.standard_errors.values()))
        return routed and support and worst <= band, (
            f"cases {len(cases)}/4, p={p[2]:.4f},{p[3]:.4f}, MC diff {worst:.4f} <= {band:.3f}")
    return _timed("three-level run", run)


def oracle_checks():
    return [exponent_suite(), large_lambda_limit("0"), large_lambda_limit("-0.5"), inversion_suite(),
            convolution_check()]


def bm_suite(settings: McSettings = McSettings()):
    """Every check, oracle ones first; the Monte Carlo ones use ``settings``."""
    spec, levels = bm_levels()
    bank = TailBank(spec, levels).prebuild()
    checks = oracle_checks()
    checks += end_law_mc(settings, bank=bank)
    checks += [martingale(settings, target, bank=bank) for target in (1, 2)]
    checks.append(three_level(settings))
    return checks
