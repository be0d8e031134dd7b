"""Signed fixed-point formats.

A format ``sI.F`` has one sign bit, ``I`` integer bits and ``F`` fraction
bits; the represented value is ``raw / 2**F``. Raw values are plain Python
ints (or int64 numpy arrays) and every arithmetic helper here saturates at
the format bounds instead of wrapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedFormat:
    int_bits: int
    frac_bits: int

    def __post_init__(self) -> None:
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError("fixed-point bit counts must be non-negative")
        if 1 + self.int_bits + self.frac_bits > 32:
            raise ValueError(f"{self} does not fit a 32-bit container")

    @property
    def width(self) -> int:
        return 1 + self.int_bits + self.frac_bits

    @property
    def one(self) -> int:
        return 1 << self.frac_bits

    @property
    def min_raw(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def ulp(self) -> float:
        return 1.0 / self.one

    def saturate(self, raw: int) -> int:
        return min(max(raw, self.min_raw), self.max_raw)

    def saturate_array(self, raw: np.ndarray) -> tuple[np.ndarray, int]:
        """Clip an int64 array to the format; also return how many entries clipped."""
        clipped = np.clip(raw, self.min_raw, self.max_raw)
        return clipped, int(np.count_nonzero(clipped != raw))

    def from_float(self, value: float) -> int:
        """Quantize ``value`` to the nearest raw value (ties toward +inf), saturating."""
        if not math.isfinite(value):
            raise ValueError(f"cannot represent non-finite value {value!r}")
        return self.saturate(math.floor(value * self.one + 0.5))

    def to_float(self, raw: int) -> float:
        return raw / self.one

    def representable(self, value: float) -> bool:
        return self.min_raw <= math.floor(value * self.one + 0.5) <= self.max_raw

    def __str__(self) -> str:
        return f"s{self.int_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text: str) -> FixedFormat:
        """Parse ``"s16.15"``-style notation."""
        body = text.strip().lower()
        if not body.startswith("s") or "." not in body:
            raise ValueError(f"bad fixed-point format {text!r}, expected e.g. 's16.15'")
        ib, fb = body[1:].split(".", 1)
        return cls(int(ib), int(fb))


S16_15 = FixedFormat(16, 15)
S8_8 = FixedFormat(8, 8)


@dataclass(frozen=True)
class FixedPoint:
    raw: int
    fmt: FixedFormat = S16_15

    def __post_init__(self) -> None:
        if not self.fmt.min_raw <= self.raw <= self.fmt.max_raw:
            raise ValueError(f"raw value {self.raw} out of range for {self.fmt}")

    @classmethod
    def from_float(cls, value: float, fmt: FixedFormat = S16_15) -> FixedPoint:
        return cls(fmt.from_float(value), fmt)

    @property
    def value(self) -> float:
        return self.fmt.to_float(self.raw)

    def __add__(self, other: FixedPoint) -> FixedPoint:
        self._check(other)
        return FixedPoint(self.fmt.saturate(self.raw + other.raw), self.fmt)

    def __sub__(self, other: FixedPoint) -> FixedPoint:
        self._check(other)
        return FixedPoint(self.fmt.saturate(self.raw - other.raw), self.fmt)

    def __mul__(self, other: FixedPoint) -> FixedPoint:
        self._check(other)
        return FixedPoint(self.fmt.saturate(mul_round(self.raw, other.raw, self.fmt.frac_bits)), self.fmt)

    def __float__(self) -> float:
        return self.value

    def _check(self, other: FixedPoint) -> None:
        if other.fmt != self.fmt:
            raise ValueError(f"format mismatch: {self.fmt} vs {other.fmt}")


def mul_round(a: int, b: int, shift: int) -> int:
    """``round(a*b / 2**shift)`` with ties toward +inf, in exact integer arithmetic."""
    if shift == 0:
        return a * b
    return (a * b + (1 << (shift - 1))) >> shift


def mul_round_array(a: np.ndarray, b: np.ndarray, shift: int) -> np.ndarray:
    """Vector form of :func:`mul_round`; operands must keep ``a*b`` inside int64."""
    prod = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    if shift == 0:
        return prod
    return (prod + (1 << (shift - 1))) >> shift
