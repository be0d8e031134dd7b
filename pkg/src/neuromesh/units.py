"""Exact energy units.

All energies are accumulated as integer attojoules (1e-18 J), i.e. fixed-point
picojoules with six decimal places. Each contribution is rounded once, when it
is produced; sums after that are exact.
"""

from __future__ import annotations

from fractions import Fraction

AJ_PER_J = 10**18
AJ_PER_PJ = 10**6


def exact(value: float | int | str) -> Fraction:
    """Decimal value of a config coefficient, e.g. ``1e-11`` -> ``1/10**11``."""
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(repr(value) if isinstance(value, float) else value)


def energy_aj(joules: Fraction) -> int:
    """Round an exact joule quantity to integer attojoules (ties toward +inf)."""
    scaled = joules * AJ_PER_J
    return (scaled.numerator * 2 + scaled.denominator) // (2 * scaled.denominator)


class Scaled:
    """Integer multiplier ``k -> round(k * factor)`` in attojoules, precomputed."""

    __slots__ = ("num", "den")

    def __init__(self, joules_per_unit: Fraction):
        f = joules_per_unit * AJ_PER_J
        self.num = f.numerator
        self.den = f.denominator

    def __call__(self, count: int) -> int:
        return (count * self.num * 2 + self.den) // (2 * self.den)


def pj_string(aj: int) -> str:
    """Fixed six-decimal picojoule rendering of an attojoule count."""
    sign = "-" if aj < 0 else ""
    q, r = divmod(abs(aj), AJ_PER_PJ)
    return f"{sign}{q}.{r:06d}"


def parse_pj_string(text: str) -> int:
    sign = -1 if text.startswith("-") else 1
    whole, _, frac = text.lstrip("-").partition(".")
    return sign * (int(whole) * AJ_PER_PJ + int(frac.ljust(6, "0")[:6]))


def joules(aj: int) -> float:
    return aj / AJ_PER_J
