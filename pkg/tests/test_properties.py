"""Property suites: Bernstein exponents, tail shape, continuity, end-law identities, seeds."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from excursions import eigen
from excursions.compensator import ObserverState, TailBank, end_law
from excursions.diffusion import DiffusionSpec, LevelSet
from excursions.laplace import complete_monotonicity_violations, refinement_ratio
from excursions.simulate import PathConfig, simulate_records

LAMBDAS = np.geomspace(1e-3, 1e4, 36)

SPECS = {
    "bm": DiffusionSpec("1", "0"),
    "drift_up": DiffusionSpec("1", "0.5"),
    "drift_down": DiffusionSpec("1", "-0.5"),
    "varying_a": DiffusionSpec("1 + 0.5*tanh(x)^2", "0"),
    "mean_reverting": DiffusionSpec("0.5", "-0.3*x"),
}
LEVEL_SETS = {"pair": LevelSet([0.0, 1.0]), "triple": LevelSet([-1.0, 0.0, 1.0]), "single": LevelSet([0.0])}


@pytest.mark.parametrize("levels", LEVEL_SETS.values(), ids=LEVEL_SETS.keys())
@pytest.mark.parametrize("spec", SPECS.values(), ids=SPECS.keys())
def test_every_exponent_table_is_bernstein(spec, levels):
    for i in range(1, levels.N + 1):
        for case in eigen.available_cases(levels, i):
            table = eigen.exponent_table(spec, levels, i, case, LAMBDAS)
            assert eigen.bernstein_violations(table) == [], (i, case)


@settings(max_examples=12, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-1.0, 1.0), st.floats(0.3, 2.0))
def test_random_constant_coefficients_are_bernstein(a, b, gap):
    spec, levels = DiffusionSpec(repr(a), repr(b)), LevelSet([0.0, gap])
    for i in (1, 2):
        for case in eigen.available_cases(levels, i):
            assert eigen.bernstein_violations(eigen.exponent_table(spec, levels, i, case, LAMBDAS)) == []


@pytest.fixture(scope="module", params=["bm", "drift_up", "varying_a"])
def bank(request):
    return TailBank(SPECS[request.param], LevelSet([0.0, 1.0])).prebuild()


def test_tails_nonincreasing(bank):
    for i in (1, 2):
        for side in ("up", "down"):
            for grid in [*bank.target_tails(i, side).values(), bank.sum_tail(i, side)]:
                assert np.all(grid.tail >= 0) and np.all(np.diff(grid.tail) <= 1e-12), (i, grid.case)


def test_return_tails_completely_monotone(bank):
    # only return and summed tails are mixtures of exponentials; the one-case tail has an inflection
    for i in (1, 2):
        for side in ("up", "down"):
            grids = [bank.sum_tail(i, side), bank.tail(i, "zero_plus" if side == "up" else "zero_minus")]
            for grid in grids:
                worst = complete_monotonicity_violations(grid)
                assert all(v >= -1e-6 for v in worst.values()), (i, grid.case, worst)


@pytest.mark.parametrize("level, case", [(1, "zero_plus"), (1, "one_plus"), (2, "zero_plus"), (2, "one_minus")])
def test_refinement_halves_largest_step(bank, level, case):
    psi = eigen.exponent_function(bank.spec, bank.levels, level, case)
    assert 0.3 <= refinement_ratio(psi, bank.tail(level, case)) <= 0.7


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 20.0), st.sampled_from([(1, "up"), (1, "down"), (2, "up"), (2, "down")]))
def test_end_law_normalized(bank, age, state):
    law = end_law(ObserverState(state[0], state[1], age), bank)
    assert all(0.0 <= p <= 1.0 for p in law.probabilities.values()) and law.p_never >= 0
    assert sum(law.probabilities.values()) + law.p_never == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.integers(1, 80), st.sampled_from([(1, "up"), (2, "down")]))
def test_age_consistency(bank, i, k, state):
    x = bank.x_grid
    u, v = float(x[i]), float(x[i + k])
    now = end_law(ObserverState(state[0], state[1], u), bank)
    later = end_law(ObserverState(state[0], state[1], v), bank)
    weights = {j: now.probabilities[j] * now.remaining_tail(j, v - u) for j in now.probabilities}
    survive = now.total_remaining_tail(v - u)
    # never-ending excursions survive any extra time
    assert now.p_never / survive == pytest.approx(later.p_never, rel=1e-9, abs=1e-15)
    for j, w in weights.items():
        assert w / survive == pytest.approx(later.probabilities[j], rel=1e-9, abs=1e-15)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 1000))
def test_seed_determinism(seed, first):
    cfg = PathConfig(1e-3, 1.0, 0.0, seed=seed)
    levels = LevelSet([0.0, 1.0])
    reps = range(first, first + 3)
    a = simulate_records(SPECS["bm"], levels, cfg, reps)
    b = simulate_records(SPECS["bm"], levels, cfg, reps, chunk=1)
    for f in ("start", "end", "start_level", "up", "end_level", "censored", "replication"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
