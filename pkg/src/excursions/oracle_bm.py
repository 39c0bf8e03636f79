"""Closed-form exponents and tails for standard Brownian motion (a = 1, b = 0).

Adjacent levels are a gap ``d`` apart.  With ``q = sqrt(2 lam)`` the solutions
of ``phi''/2 = lam phi`` are exponentials and hyperbolic functions, giving

* tilde (vanishing at an infinite boundary): ``e^{-q|x|}``, so ``sqrt(lam/2)``
* side (vanishing at the neighbour): ``sinh(q(d - x))``, so ``(q/2) coth(q d)``
* pair = side + tilde
* zero = side(lam) - side(0) = ``(q/2) coth(q d) - 1/(2d)``
* one  = ``1/(2d) - (q/2)/sinh(q d)``; the hitting transform is ``e^{-q d}``
  and the pair at zero is ``1/(2d)``
* extreme-level zero = tilde, because the tilde exponent vanishes at 0.

Up and down cases coincide by symmetry.  The finite-gap tails follow from
the partial fractions ``z coth z = 1 + 2 sum z^2/(z^2 + n^2 pi^2)`` and
``z / sinh z = 1 + 2 sum (-1)^n z^2/(z^2 + n^2 pi^2)``: each term
``lam/(lam + c_n)`` inverts to ``exp(-c_n x)`` with ``c_n = n^2 pi^2 / (2 d^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .laplace import invert_tail

CASES = ("tilde", "side", "pair", "zero", "one", "extreme_zero", "hitting")
SERIES_CASES = ("zero", "one")


@dataclass(frozen=True)
class BmOracleConfig:
    gap: float = 1.0

    def __post_init__(self):
        if not self.gap > 0:
            raise ValidationError("oracle_bm.BmOracleConfig", f"gap must be > 0, got {self.gap}")


def _normalize_case(case):
    # accept engine case tags such as "zero_plus" or "tilde_minus"
    base = case.rsplit("_", 1)[0] if case.endswith(("_plus", "_minus")) else case
    if base not in CASES:
        raise ValidationError("oracle_bm.bm_psi", f"unknown case {case!r}; expected one of {CASES}")
    return base


def bm_psi(case: str, d: float, lam):
    """Closed-form exponent of ``case`` at ``lam`` for level gap ``d``."""
    BmOracleConfig(d)
    base = _normalize_case(case)
    lam = np.asarray(lam, dtype=float)
    q = np.sqrt(2.0 * lam)
    qd = q * d
    # q/2 coth(qd) and (q/2)/sinh(qd), both tending to 1/(2d) as lam -> 0
    safe = np.where(qd > 0, qd, 1.0)
    side = np.where(qd > 0, 0.5 * q / np.tanh(safe), 0.5 / d)
    over_sinh = np.where(qd > 0, q * np.exp(-safe) / -np.expm1(-2.0 * safe), 0.5 / d)
    tilde = np.sqrt(lam / 2.0)
    out = {
        "tilde": tilde,
        "extreme_zero": tilde,
        "side": side,
        "pair": side + tilde,
        "zero": side - 0.5 / d,
        "one": 0.5 / d - over_sinh,
        "hitting": np.exp(-qd),
    }[base]
    return float(out) if out.ndim == 0 else out


def bm_tail_series(case: str, d: float, x):
    """Exact tail of the finite-gap zero or one case as an eigenfunction series."""
    BmOracleConfig(d)
    base = _normalize_case(case)
    if base not in SERIES_CASES:
        raise ValidationError("oracle_bm.bm_tail_series", f"series only for {SERIES_CASES}, got {case!r}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(~(xs > 0)):
        raise ValidationError("oracle_bm.bm_tail_series", "x must be > 0")
    rate = math.pi**2 / (2.0 * d * d)
    # enough terms that the first dropped one is below exp(-60)
    terms = int(math.ceil(math.sqrt(60.0 / (rate * xs.min())))) + 2
    n = np.arange(1, terms + 1)[:, None]
    sign = 1.0 if base == "zero" else (-1.0) ** (n + 1)
    out = (sign * np.exp(-rate * n * n * xs[None, :])).sum(axis=0) / d
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def bm_tail(case: str, d: float, x, order: int = 16):
    """Tail ``F[x, inf]``.

    The extreme-level zero (and tilde) case is the exact ``(2 pi x)^{-1/2}``;
    the others are semi-analytic: order-``order`` inversion of :func:`bm_psi`.
    """
    base = _normalize_case(case)
    xs = np.asarray(x, dtype=float)
    if np.any(~(xs > 0)):
        raise ValidationError("oracle_bm.bm_tail", "x must be > 0")
    if base in ("tilde", "extreme_zero"):
        out = (2.0 * math.pi * xs) ** -0.5
        return float(out) if out.ndim == 0 else out
    if base == "hitting":
        raise ValidationError("oracle_bm.bm_tail", "the hitting transform has no tail; it is a density transform")
    return invert_tail(lambda lam: bm_psi(base, d, lam), x, order)


def bm_total_mass(case: str, d: float) -> float:
    """``F(0, inf]``: infinite for zero, tilde, side and pair; ``1/(2d)`` for one."""
    base = _normalize_case(case)
    return 0.5 / d if base == "one" else math.inf
