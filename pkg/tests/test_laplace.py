import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from excursions import eigen
from excursions.compensator import TailBank
from excursions.diffusion import DiffusionSpec, LevelSet
from excursions.errors import NumericalFailure, OutOfSupport, ValidationError
from excursions.laplace import (
    TailGrid,
    build_tail_grid,
    complete_monotonicity_violations,
    crosscheck_convolution,
    default_x_grid,
    forward_transform,
    hazard,
    hazard_curve,
    invert_tail,
    log_derivative,
    refinement_ratio,
    stehfest_weights,
    sum_tails,
)
from excursions.oracle_bm import bm_psi, bm_tail_series

BM = DiffusionSpec("1", "0")
LEVELS = LevelSet([0.0, 1.0])


def sqrt_psi(lam):
    return np.sqrt(np.asarray(lam) / 2.0)


@pytest.fixture(scope="module")
def bank():
    return TailBank(BM, LEVELS).prebuild()


def test_stehfest_weights_order_8():
    # published Gaver-Stehfest coefficients for N = 8
    expected = [Fraction(-1, 3), Fraction(145, 3), -906, Fraction(16394, 3), Fraction(-43130, 3), 18730,
                Fraction(-35840, 3), Fraction(8960, 3)]
    assert np.allclose(stehfest_weights(8), [float(v) for v in expected], rtol=1e-15)


@pytest.mark.parametrize("order", [8, 10, 12, 14, 16])
def test_weights_sum_to_zero(order):
    # a constant transform 1/s inverts to 1: sum V_k / k = 1/ln 2 * ln 2 ... reduces to sum V_k = 0
    w = stehfest_weights(order)
    assert abs(w.sum()) < 1e-6 * np.abs(w).max()


@pytest.mark.parametrize("x, expected", [(0.25, 0.79788), (1.0, 0.39894), (4.0, 0.19947)])
def test_invert_square_root_exponent(x, expected):
    exact = (2 * math.pi * x) ** -0.5
    assert exact == pytest.approx(expected, abs=5e-6)
    assert float(invert_tail(sqrt_psi, x)) == pytest.approx(exact, rel=1e-4)


def test_invert_exponential_pair():
    assert float(invert_tail(lambda lam: lam / (lam + 1.0), 1.0)) == pytest.approx(math.exp(-1), abs=1e-5)


@pytest.mark.parametrize("order", [7, 18, 0])
def test_order_validated(order):
    with pytest.raises(ValidationError):
        invert_tail(sqrt_psi, 1.0, order)


def test_nonpositive_x_rejected():
    with pytest.raises(ValidationError):
        invert_tail(sqrt_psi, 0.0)


def test_non_finite_transform_fails():
    with pytest.raises(NumericalFailure):
        invert_tail(lambda lam: np.full(np.shape(lam), np.nan), 1.0)


def test_default_grid():
    x = default_x_grid()
    assert len(x) == 400 and x[0] == pytest.approx(1e-4) and x[-1] == pytest.approx(1e3)
    assert np.allclose(np.diff(np.log(x)), np.log(x[1] / x[0]))


@pytest.mark.parametrize("case", ["zero_plus", "one_plus"])
def test_bm_tails_match_eigenfunction_series(bank, case):
    grid = bank.tail(1, case)
    exact = bm_tail_series(case, 1.0, grid.x)
    assert np.max(np.abs(grid.tail - exact)) < 2e-4
    small = grid.x < 0.3
    assert np.max(np.abs(grid.tail[small] / exact[small] - 1)) < 1e-3


def test_extreme_level_tail_is_power_law(bank):
    grid = bank.tail(2, "zero_plus")
    assert np.allclose(grid.tail, (2 * math.pi * grid.x) ** -0.5, rtol=1e-5)


def test_spot_value_order_stable(bank):
    psi = eigen.exponent_function(BM, LEVELS, 1, "zero_plus")
    assert bank.tail(1, "zero_plus").value(0.01) == pytest.approx(float(invert_tail(psi, 0.01, 16)), rel=0.02)


def test_one_case_vanishes_far_out(bank):
    grid = bank.tail(1, "one_plus")
    assert grid.atom == 0.0 and grid.tail[-1] < 1e-20
    # total mass 1/(2d)
    assert grid.tail[0] == pytest.approx(0.5, rel=1e-5)


def test_sum_grid_is_componentwise_sum(bank):
    total = bank.sum_tail(1, "up")
    assert np.array_equal(total.tail, bank.tail(1, "zero_plus").tail + bank.tail(1, "one_plus").tail)


def test_tails_nonincreasing_and_nonnegative(bank):
    for level in (1, 2):
        for side in ("up", "down"):
            for grid in list(bank.target_tails(level, side).values()) + [bank.sum_tail(level, side)]:
                assert np.all(grid.tail >= 0)
                assert np.all(np.diff(grid.tail) <= 1e-9)


def test_atom_for_transient_escape():
    # drift up from the top level: some excursions never return, the tail keeps an atom
    spec = DiffusionSpec("1", "0.5")
    grid = TailBank(spec, LEVELS).tail(2, "zero_plus")
    assert grid.atom == pytest.approx(float(eigen.psi_tilde(spec, LEVELS, 2, "up", 0.0)), rel=1e-12)
    assert grid.atom == pytest.approx(0.5, rel=1e-9)  # b/a for a = 1
    assert grid.tail[-1] == pytest.approx(grid.atom, rel=1e-6)


@pytest.mark.parametrize("u, expected", [(2.0, 0.25), (0.5, 1.0), (0.01, 50.0)])
def test_single_level_total_hazard(u, expected):
    grid = build_tail_grid(sqrt_psi, 1, "zero_plus")
    # hazard of a tail over itself is -d/du log (2 pi u)^(-1/2) = 1/(2u)
    assert hazard(grid, grid, u) == pytest.approx(expected, rel=1e-5)


def test_hazard_curve_matches_log_slope(bank):
    total = bank.sum_tail(1, "up")
    hz = hazard_curve(total, total)
    live = total.tail > 1e-250
    ref = -log_derivative(np.log(total.tail[live]), total.log_x[live]) / total.x[live]
    inner = slice(2, int(live.sum()) - 2)
    assert np.allclose(hz[live][inner], ref[inner], rtol=1e-3)
    # deep in the tail the hazard settles at the principal decay rate pi^2 / 2
    assert hz[-1] == pytest.approx(math.pi ** 2 / 2, rel=1e-3)


def test_hazard_outside_grid(bank):
    total = bank.sum_tail(1, "up")
    with pytest.raises(OutOfSupport):
        hazard(bank.tail(1, "one_plus"), total, 5e3)
    with pytest.raises(OutOfSupport):
        hazard(bank.tail(1, "one_plus"), total, 1e-6)


def test_hazard_underflow():
    x = default_x_grid()
    tiny = TailGrid(1, "zero_plus", x, np.exp(-x * 1e4), np.ones_like(x, dtype=bool))
    with pytest.raises(OutOfSupport, match="underflow"):
        hazard(tiny, tiny, 500.0)


def test_hazards_finite_nonnegative(bank):
    for side in ("up", "down"):
        total = bank.sum_tail(1, side)
        for grid in bank.target_tails(1, side).values():
            hz = hazard_curve(grid, total)[2:-2]
            assert np.all(np.isfinite(hz)) and np.all(hz >= 0)


@pytest.mark.parametrize("lam", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("case, oracle", [("zero_plus", "zero"), ("one_plus", "one")])
def test_forward_transform_round_trip(bank, lam, case, oracle):
    got = forward_transform(bank.tail(1, case), lam)
    assert got == pytest.approx(bm_psi(oracle, 1.0, lam), rel=1e-2)


def test_round_trip_square_root():
    grid = build_tail_grid(sqrt_psi, 1, "zero_plus")
    for lam in (0.5, 1.0, 5.0):
        assert forward_transform(grid, lam) == pytest.approx(math.sqrt(lam / 2), rel=1e-3)


def test_order_stability_power_law():
    x = default_x_grid()
    a, b = invert_tail(sqrt_psi, x, 14), invert_tail(sqrt_psi, x, 16)
    assert np.max(np.abs(a / b - 1)) < 1e-4


@pytest.mark.xfail(strict=True, reason="orders 14 and 16 differ by ~1e-3 relative on exponentially "
                                       "decaying tails; the inversion bias exceeds 1e-4 there")
def test_order_stability_exponential_tail():
    psi = eigen.exponent_function(BM, LEVELS, 1, "zero_plus")
    x = default_x_grid()
    a, b = invert_tail(psi, x, 14), invert_tail(psi, x, 16)
    keep = b > 1e-6
    assert np.max(np.abs(a[keep] / b[keep] - 1)) < 1e-4


@pytest.mark.parametrize("case", ["zero_plus", "zero_minus"])
def test_complete_monotonicity_zero_and_sum(bank, case):
    for grid in (bank.tail(1, case), bank.sum_tail(1, "up" if case.endswith("plus") else "down")):
        worst = complete_monotonicity_violations(grid)
        assert all(v >= -1e-6 for v in worst.values()), worst


def test_violation_detected_on_one_case(bank):
    assert complete_monotonicity_violations(bank.tail(1, "one_plus"))[2] < -1e-2


def test_one_case_is_not_completely_monotone():
    # the exact 1+ tail has an inflection, so second differences change sign
    x = np.geomspace(0.01, 3, 200)
    second = np.diff(bm_tail_series("one", 1.0, x), 2)
    assert np.any(second > 0) and np.any(second < 0)


@pytest.mark.parametrize("case", ["zero_plus", "one_plus"])
def test_refinement_halves_max_jump(bank, case):
    psi = eigen.exponent_function(BM, LEVELS, 1, case)
    assert 0.3 <= refinement_ratio(psi, bank.tail(1, case)) <= 0.7


def test_crosscheck_convolution():
    rep = crosscheck_convolution(BM, LEVELS, 1, "up")
    assert rep.max_relative_discrepancy < 2e-3
    assert rep.total_mass == pytest.approx(0.5, rel=1e-9)
    assert rep.convolution[0] == pytest.approx(0.5, rel=0.02)
    assert abs(rep.direct[-1]) < 1e-3 and abs(rep.convolution[-1]) < 1e-3


def test_crosscheck_mirrored():
    rep = crosscheck_convolution(BM, LEVELS, 2, "down")
    assert rep.max_relative_discrepancy < 2e-3


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0))
def test_exponential_pairs_invert(rate):
    # lam / (lam + c) is the transform of the tail exp(-c x)
    x = np.array([0.1, 0.5, 1.0])
    got = invert_tail(lambda lam: lam / (lam + rate), x)
    assert np.allclose(got, np.exp(-rate * x), atol=2e-4)


def test_sum_tails_requires_same_grid(bank):
    other = build_tail_grid(sqrt_psi, 1, "zero_plus", x_grid=np.geomspace(1e-3, 1, 50))
    with pytest.raises(ValidationError):
        sum_tails(bank.tail(1, "zero_plus"), other, "sum_plus")
