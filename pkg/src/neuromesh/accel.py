"""Bit-exact emulations of the per-core numerical accelerators.

* ``accel_exp`` -- fixed-point exponential for the decay domain ``[-16, 0]``.
* ``RngStream`` -- per-core counter-based generator. It stands in for the
  hardware's clock-jitter entropy source, which cannot be reproduced; every
  stream is a pure function of (global seed, chip, core).
* ``mac_layer`` / ``mac_offload_step`` -- the integer MAC array used for
  dense-layer offload, with its cycle model.
"""

from __future__ import annotations

import decimal
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .fixedpoint import S16_15, FixedPoint
from .units import energy_aj

# ---------------------------------------------------------------------------
# exponential unit
# ---------------------------------------------------------------------------

EXP_MIN_RAW = -(16 << 15)
_TABLE_FRAC = 62
_OUT_SHIFT = 2 * _TABLE_FRAC - 15


def _exp_table(count: int, step_exponent: int) -> tuple[int, ...]:
    # exp(-i * 2**-step_exponent) in Q62; Decimal.exp is correctly rounded,
    # so the tables are identical on every platform.
    ctx = decimal.Context(prec=60)
    scale = decimal.Decimal(1 << _TABLE_FRAC)
    step = decimal.Decimal(1) / decimal.Decimal(1 << step_exponent)
    out = []
    for i in range(count):
        val = ctx.multiply(ctx.exp(-step * i), scale)
        out.append(int(val.to_integral_value(rounding=decimal.ROUND_HALF_EVEN)))
    return tuple(out)


# raw input n = -x_raw is split as n = a*2**10 + b*2**5 + c
_EXP_HI = _exp_table(513, 5)    # exp(-a/32)
_EXP_MID = _exp_table(32, 10)   # exp(-b/1024)
_EXP_LO = _exp_table(32, 15)    # exp(-c/32768)
_HALF_T = 1 << (_TABLE_FRAC - 1)
_HALF_OUT = 1 << (_OUT_SHIFT - 1)


def exp_raw(x_raw: int) -> int:
    """Exponential on raw s16.15 values; returns raw s16.15, rounded to nearest."""
    if x_raw > 0:
        raise DomainError(f"accel_exp domain is x <= 0, got raw {x_raw}")
    n = -x_raw
    if n > -EXP_MIN_RAW:
        return 0
    t = (_EXP_HI[n >> 10] * _EXP_MID[(n >> 5) & 31] + _HALF_T) >> _TABLE_FRAC
    return (t * _EXP_LO[n & 31] + _HALF_OUT) >> _OUT_SHIFT


def accel_exp(x: FixedPoint) -> FixedPoint:
    """exp(x) for ``-16 <= x <= 0`` in s16.15.

    Inputs below -16 saturate to 0. Positive inputs raise :class:`DomainError`
    since decay factors never exceed one.
    """
    if x.fmt != S16_15:
        x = FixedPoint(S16_15.saturate(_rescale(x.raw, x.fmt.frac_bits, 15)), S16_15)
    return FixedPoint(exp_raw(x.raw), S16_15)


def _rescale(raw: int, from_frac: int, to_frac: int) -> int:
    if to_frac >= from_frac:
        return raw << (to_frac - from_frac)
    shift = from_frac - to_frac
    return (raw + (1 << (shift - 1))) >> shift


def decay_factor(timestep_s: float | Fraction, tau_m_s: float | Fraction) -> FixedPoint:
    """exp(-dt/tau) through the exp unit, as used for LIF membrane decay."""
    x = -_frac(timestep_s) / _frac(tau_m_s)
    raw = max(round(x * S16_15.one), EXP_MIN_RAW - 1)
    return FixedPoint(exp_raw(raw), S16_15)


def _frac(v: float | Fraction) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(repr(v)) if isinstance(v, float) else Fraction(v)


# ---------------------------------------------------------------------------
# random number source
# ---------------------------------------------------------------------------

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """The SplitMix64 / MurmurHash3 finalizer (a bijection on 64-bit words)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix_gamma(z: int) -> int:
    # Same construction as SplittableRandom: odd, with enough bit transitions
    # that the Weyl sequence is not degenerate.
    z = mix64(z) | 1
    if bin(z ^ (z >> 1)).count("1") < 24:
        z ^= 0xAAAAAAAAAAAAAAAA
    return z


def derive_stream_id(seed: int, *parts: int) -> int:
    """Fold integer labels into a 64-bit stream id."""
    h = mix64(seed ^ 0x5851F42D4C957F2D)
    for p in parts:
        h = mix64(h + _GOLDEN + (p & MASK64))
    return h


class RngStream:
    """Counter-based 32-bit generator owned by exactly one core.

    Output ``i`` of a stream is ``mix64(base + i*gamma) >> 32`` where ``base``
    and the odd increment ``gamma`` both derive from the stream id, so two ids
    walk different Weyl sequences. The 64-bit counter is the only mutable state.
    """

    __slots__ = ("stream_id", "_base", "_gamma", "counter")

    def __init__(self, stream_id: int, counter: int = 0):
        self.stream_id = stream_id & MASK64
        self._base = mix64(self.stream_id)
        self._gamma = _mix_gamma(self.stream_id ^ _GOLDEN)
        self.counter = counter & MASK64

    @classmethod
    def for_core(cls, seed: int, chip_x: int, chip_y: int, core: int) -> RngStream:
        return cls(derive_stream_id(seed, 1, chip_x, chip_y, core))

    def next(self) -> int:
        out = mix64(self._base + self.counter * self._gamma) >> 32
        self.counter = (self.counter + 1) & MASK64
        return out

    def take(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as uint32; same values as ``n`` calls to :meth:`next`."""
        idx = np.arange(n, dtype=np.uint64) + np.uint64(self.counter)
        with np.errstate(over="ignore"):
            z = np.uint64(self._base) + idx * np.uint64(self._gamma)
            out = (_mix64_array(z) >> np.uint64(32)).astype(np.uint32)
        self.counter = (self.counter + n) & MASK64
        return out

    def copy(self) -> RngStream:
        return RngStream(self.stream_id, self.counter)

    def __repr__(self) -> str:
        return f"RngStream(id={self.stream_id:#018x}, counter={self.counter})"


def rng_next(stream: RngStream) -> int:
    return stream.next()


def bernoulli_threshold(p: float) -> int:
    """Integer threshold ``t`` such that ``draw < t`` happens with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    return min(round(Fraction(p) * (1 << 32)), 1 << 32)


# ---------------------------------------------------------------------------
# MAC array
# ---------------------------------------------------------------------------

OPERAND_MIN, OPERAND_MAX = -128, 127
ACC_MAX = (1 << 31) - 1
_MAX_PRODUCT = 128 * 128


@dataclass(frozen=True)
class MacArrayConfig:
    rows: int = 16
    cols: int = 16
    pass_cycles: int = 16
    setup_cycles: int = 4

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("MAC array needs at least one row and one column")
        if self.pass_cycles < 0 or self.setup_cycles < 0:
            raise ValueError("MAC cycle parameters must be non-negative")
        if self.rows * self.cols * _MAX_PRODUCT > ACC_MAX:
            raise ValueError(
                f"{self.rows}x{self.cols} MAC array can overflow its 32-bit accumulator in one pass"
            )

    def cycles(self, m: int, n: int) -> int:
        return -(-m // self.rows) * -(-n // self.cols) * self.pass_cycles + self.setup_cycles


def mac_layer(weights, inputs, cfg: MacArrayConfig) -> tuple[np.ndarray, int]:
    """Integer matrix-vector product on the MAC array.

    ``weights`` is M x N and ``inputs`` has length N, both 8-bit signed. The
    result is exact (int32); cycles follow the tiled pass model of ``cfg``.
    """
    w = np.asarray(weights, dtype=np.int64)
    x = np.asarray(inputs, dtype=np.int64)
    if w.ndim != 2 or x.ndim != 1:
        raise ValueError("mac_layer expects a 2-D weight matrix and a 1-D input vector")
    m, n = w.shape
    if m < 1 or n < 1:
        raise ValueError("mac_layer dimensions must be >= 1")
    if x.shape[0] != n:
        raise ValueError(f"dimension mismatch: weights are {m}x{n}, input has length {x.shape[0]}")
    for name, arr in (("weights", w), ("input", x)):
        if arr.size and (arr.min() < OPERAND_MIN or arr.max() > OPERAND_MAX):
            raise ValueError(f"{name} outside the 8-bit signed operand range")
    if n * _MAX_PRODUCT > ACC_MAX:
        raise ValueError(f"row length {n} can overflow the 32-bit accumulator")
    out = (w @ x).astype(np.int32)
    return out, cfg.cycles(m, n)


@dataclass(frozen=True)
class MacResult:
    output: np.ndarray
    cycles: int
    energy_aj: int

    @property
    def energy_j(self) -> float:
        return self.energy_aj / 1e18


def mac_offload_step(weights, inputs, cfg: MacArrayConfig, c_eff_mac: float, voltage: float) -> MacResult:
    """Run one dense layer on the MAC array of its host core.

    Energy is ``cycles * c_eff_mac * V**2`` at the host core's operating voltage
    for this timestep. The cycles are the MAC's own; they never count against
    the host core's deadline.
    """
    out, cycles = mac_layer(weights, inputs, cfg)
    energy = energy_aj(cycles * Fraction(repr(c_eff_mac)) * Fraction(repr(voltage)) ** 2)
    return MacResult(out, cycles, energy)
