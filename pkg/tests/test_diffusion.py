import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from excursions.diffusion import (
    DiffusionSpec,
    LevelSet,
    hitting_probability,
    region_of,
    scale_function,
)
from excursions.errors import ValidationError

BM = DiffusionSpec("1", "0")
LEVELS = LevelSet([0.0, 1.0])


@pytest.mark.parametrize("x, region", [(-0.5, 0), (0.0, 0), (0.3, 1), (1.0, 1), (1.2, 2)])
def test_region_half_open(x, region):
    assert region_of(LEVELS, x) == region


def test_region_vectorized():
    assert list(region_of(LEVELS, np.array([-0.5, 0.3, 1.2]))) == [0, 1, 2]


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6, unique=True), st.floats(-6, 6), st.floats(-6, 6))
def test_region_monotone(raw, x, y):
    levels = LevelSet(sorted(raw))
    lo, hi = sorted((x, y))
    assert region_of(levels, lo) <= region_of(levels, hi)
    assert 0 <= region_of(levels, lo) <= levels.N


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6, unique=True))
def test_region_jumps_by_one_at_each_level(raw):
    levels = LevelSet(sorted(raw))
    for i, xi in enumerate(levels.levels, start=1):
        assert region_of(levels, xi) == i - 1
        assert region_of(levels, np.nextafter(xi, math.inf)) == i


@pytest.mark.parametrize(
    "b, x, expected",
    [
        ("0", 2.0, 2.0),
        # s(x) = (exp(2x) - 1) / 2 for a = 1, b = -1
        ("-1", 1.0, (math.exp(2.0) - 1.0) / 2.0),
        ("-1", 0.0, 0.0),
        # b = +1: s(x) = (1 - exp(-2x)) / 2
        ("1", 1.0, (1.0 - math.exp(-2.0)) / 2.0),
    ],
)
def test_scale_function(b, x, expected):
    assert scale_function(DiffusionSpec("1", b), 0.0, x) == pytest.approx(expected, rel=1e-9, abs=1e-14)


@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from(["0", "-1", "0.5*x", "-tanh(x)"]))
def test_scale_strictly_increasing(x, y, b):
    if abs(x - y) < 1e-6:
        return
    spec = DiffusionSpec("1 + 0.5*tanh(x)^2", b)
    lo, hi = sorted((x, y))
    assert scale_function(spec, 0.0, lo) < scale_function(spec, 0.0, hi)


@pytest.mark.parametrize(
    "b, i, direction, expected",
    [
        ("0", 1, "up", 1.0),
        ("0", 2, "down", 1.0),
        # drift -1 toward -inf: P(hit 1 from 0) = exp(-2)
        ("-1", 1, "up", math.exp(-2.0)),
        ("-1", 2, "down", 1.0),
        ("1", 2, "down", math.exp(-2.0)),
    ],
)
def test_hitting_probability(b, i, direction, expected):
    assert hitting_probability(DiffusionSpec("1", b), LEVELS, i, direction) == pytest.approx(expected, rel=1e-8)


def test_hitting_probability_absorbing_two_barrier():
    # absorbed at -1: P(hit 1 before -1 from 0) for BM is 1/2
    spec = DiffusionSpec("1", "0", (-1.0, math.inf), lo_boundary="absorbing")
    assert hitting_probability(spec, LEVELS, 1, "up") == pytest.approx(0.5, rel=1e-10)
    spec = DiffusionSpec("1", "-1", (-1.0, math.inf), lo_boundary="absorbing")
    s = lambda x: (math.exp(2 * x) - 1) / 2  # noqa: E731
    assert hitting_probability(spec, LEVELS, 1, "up") == pytest.approx(-s(-1) / (s(1) - s(-1)), rel=1e-8)


@given(st.floats(-2, 2), st.floats(0.5, 2))
def test_hitting_probability_in_unit_interval(b, a):
    p = hitting_probability(DiffusionSpec(repr(a), repr(b)), LEVELS, 1, "up")
    assert 0.0 <= p <= 1.0


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(a="-1", b="0"), "a\\(x\\) must be > 0"),
        (dict(a="x", b="0"), "a\\(x\\) must be > 0"),
        (dict(a="1", b="0", interval=(1.0, 0.0)), "lo < hi"),
        (dict(a="1", b="0", lo_boundary="reflecting"), "natural"),
        (dict(a="1", b="0", lo_boundary="absorbing"), "infinite endpoint"),
        (dict(a="1", b="log(x)"), "coefficient evaluation failed"),
    ],
)
def test_spec_validation(kwargs, match):
    with pytest.raises(ValidationError, match=match):
        DiffusionSpec(**kwargs)


@pytest.mark.parametrize("levels", [[], [1.0, 0.0], [0.0, 0.0], [0.0, math.inf]])
def test_levelset_validation(levels):
    with pytest.raises(ValidationError, match="diffusion_model.LevelSet"):
        LevelSet(levels)


def test_levels_inside_interval():
    with pytest.raises(ValidationError, match="strictly inside"):
        LevelSet([0.0, 1.0], DiffusionSpec("1", "0", (0.0, 2.0)))
