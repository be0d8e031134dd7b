"""Machine description: geometry, DVFS table, energy and cycle coefficients.

System documents are UTF-8 JSON; see ``docs/formats.md`` for the schema.
Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Any

from .accel import MacArrayConfig
from .errors import ConfigSyntaxError, ValidationError
from .fixedpoint import FixedFormat

V_MIN_ABB = 0.40
V_MIN_NO_ABB = 0.50


@dataclass(frozen=True)
class PerfLevel:
    frequency: float  # Hz
    voltage: float  # V

    def __post_init__(self) -> None:
        if not self.frequency > 0:
            raise ValidationError(f"perf level frequency must be > 0, got {self.frequency}")
        if not self.voltage > 0:
            raise ValidationError(f"perf level voltage must be > 0, got {self.voltage}")

    @property
    def mhz(self) -> float:
        return self.frequency / 1e6


@dataclass(frozen=True)
class EnergyCoefficients:
    c_eff: float = 1e-11  # J / (cycle * V^2)
    k_leak: float = 1e-4  # W / V, per core
    abb_leak_factor: float = 0.5
    e_bit: float = 1e-12  # J / bit
    e_wake: float = 1e-10  # J / link power-up
    c_eff_mac: float = 2e-12  # J / (MAC cycle * V^2)

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ValidationError(f"energy.{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class CycleCostCoefficients:
    c_fixed: int = 1000
    c_neuron_sw: int = 50
    c_neuron_acc: int = 30
    c_syn_sw: int = 20
    c_syn_acc: int = 5

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ValidationError(f"cost.{name} must be a non-negative integer, got {value!r}")
        if self.c_neuron_acc > self.c_neuron_sw:
            raise ValidationError("cost.c_neuron_acc must not exceed cost.c_neuron_sw")
        if self.c_syn_acc > self.c_syn_sw:
            raise ValidationError("cost.c_syn_acc must not exceed cost.c_syn_sw")

    def per_neuron(self, accel: bool) -> int:
        return self.c_neuron_acc if accel else self.c_neuron_sw

    def per_event(self, accel: bool) -> int:
        return self.c_syn_acc if accel else self.c_syn_sw


@dataclass(frozen=True)
class AcceleratorConfig:
    enabled: bool = True  # exp unit + synaptic accelerators present
    mac: MacArrayConfig = field(default_factory=MacArrayConfig)
    membrane_format: FixedFormat = FixedFormat(16, 15)
    weight_format: FixedFormat = FixedFormat(8, 8)

    def __post_init__(self) -> None:
        if self.weight_format.frac_bits > self.membrane_format.frac_bits:
            raise ValidationError("weight format cannot have more fraction bits than the membrane format")


@dataclass(frozen=True)
class KeyLayout:
    """Bit widths of the 32-bit multicast key, most significant field first."""

    x_bits: int = 8
    y_bits: int = 8
    core_bits: int = 5
    neuron_bits: int = 11

    def __post_init__(self) -> None:
        widths = (self.x_bits, self.y_bits, self.core_bits, self.neuron_bits)
        if any(w < 0 for w in widths) or sum(widths) != 32:
            raise ValidationError(f"key layout widths must be >= 0 and sum to 32, got {widths}")


@dataclass(frozen=True)
class SystemConfig:
    mesh_width: int
    mesh_height: int
    cores_per_chip: int
    perf_levels: tuple[PerfLevel, ...]
    timestep_us: int = 1000
    energy: EnergyCoefficients = field(default_factory=EnergyCoefficients)
    cost: CycleCostCoefficients = field(default_factory=CycleCostCoefficients)
    accel: AcceleratorConfig = field(default_factory=AcceleratorConfig)
    abb_enabled: bool = False
    seed: int = 0
    max_neurons_per_core: int = 1000
    key_layout: KeyLayout = field(default_factory=KeyLayout)
    table_capacity: int = 16384
    packet_bits: int = 40
    trace_cap: int = 1_000_000

    def __post_init__(self) -> None:
        validate_system(self)

    @property
    def timestep(self) -> float:
        """Timestep in seconds."""
        return self.timestep_us * 1e-6

    @property
    def timestep_exact(self) -> Fraction:
        return Fraction(self.timestep_us, 1_000_000)

    @property
    def n_chips(self) -> int:
        return self.mesh_width * self.mesh_height

    @property
    def n_cores(self) -> int:
        return self.n_chips * self.cores_per_chip

    @property
    def v_min(self) -> float:
        return V_MIN_ABB if self.abb_enabled else V_MIN_NO_ABB

    @property
    def max_frequency(self) -> float:
        return self.perf_levels[-1].frequency

    def cycle_budgets(self) -> tuple[int, ...]:
        """Cycles available per timestep at each perf level (exact floor)."""
        dt = self.timestep_exact
        return tuple(int(Fraction(repr(lv.frequency)) * dt) for lv in self.perf_levels)

    def with_seed(self, seed: int) -> SystemConfig:
        return replace(self, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mesh": {"width": self.mesh_width, "height": self.mesh_height},
            "cores_per_chip": self.cores_per_chip,
            "perf_levels": [{"mhz": lv.frequency / 1e6, "volts": lv.voltage} for lv in self.perf_levels],
            "timestep_us": self.timestep_us,
            "energy": asdict(self.energy),
            "cost": asdict(self.cost),
            "accel": {
                "enabled": self.accel.enabled,
                "mac": asdict(self.accel.mac),
                "membrane_format": str(self.accel.membrane_format),
                "weight_format": str(self.accel.weight_format),
            },
            "abb_enabled": self.abb_enabled,
            "seed": self.seed,
            "max_neurons_per_core": self.max_neurons_per_core,
            "key_layout": asdict(self.key_layout),
            "router": {"table_capacity": self.table_capacity, "packet_bits": self.packet_bits},
            "trace_cap": self.trace_cap,
        }


def validate_system(sys: SystemConfig) -> None:
    for name in ("mesh_width", "mesh_height", "cores_per_chip", "max_neurons_per_core", "table_capacity"):
        value = getattr(sys, name)
        if not _is_int(value) or value < 1:
            raise ValidationError(f"{name} must be an integer >= 1, got {value!r}")
    if not _is_int(sys.timestep_us) or sys.timestep_us <= 0:
        raise ValidationError(f"timestep must be > 0, got {sys.timestep_us!r} us")
    if not _is_int(sys.packet_bits) or sys.packet_bits < 1:
        raise ValidationError(f"packet_bits must be >= 1, got {sys.packet_bits!r}")
    if not _is_int(sys.trace_cap) or sys.trace_cap < 0:
        raise ValidationError(f"trace_cap must be >= 0, got {sys.trace_cap!r}")
    if not _is_int(sys.seed) or not 0 <= sys.seed < 1 << 64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {sys.seed!r}")

    levels = sys.perf_levels
    if not levels:
        raise ValidationError("perf_levels must not be empty")
    for prev, cur in zip(levels, levels[1:]):
        if not cur.frequency > prev.frequency:
            raise ValidationError("perf_levels not ascending in frequency")
        if cur.voltage < prev.voltage:
            raise ValidationError("perf_levels voltage must be non-descending with frequency")
    for lv in levels:
        if lv.voltage < sys.v_min:
            raise ValidationError(
                f"voltage below v_min: {lv.voltage} V < {sys.v_min} V "
                f"(abb_enabled={str(sys.abb_enabled).lower()})"
            )

    kl = sys.key_layout
    for what, count, bits in (
        ("mesh_width", sys.mesh_width, kl.x_bits),
        ("mesh_height", sys.mesh_height, kl.y_bits),
        ("cores_per_chip", sys.cores_per_chip, kl.core_bits),
        ("max_neurons_per_core", sys.max_neurons_per_core, kl.neuron_bits),
    ):
        if count > 1 << bits:
            raise ValidationError(f"{what}={count} does not fit {bits} key bits")
    # route bitset: 6 link bits + one bit per local core, no fixed width limit


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


# ---------------------------------------------------------------------------
# JSON document parsing
# ---------------------------------------------------------------------------

def load_json(text: str, source: str | None = None) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.msg, exc.lineno, exc.colno, source) from None


class _Reader:
    """Pulls typed values out of a JSON object and rejects leftovers."""

    def __init__(self, obj: Any, path: str):
        if not isinstance(obj, dict):
            raise ValidationError(f"{path or 'document'} must be a JSON object")
        self.obj = obj
        self.path = path
        self.seen: set[str] = set()

    def _name(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.obj

    def raw(self, key: str, default: Any = ..., required: bool = False) -> Any:
        self.seen.add(key)
        if key not in self.obj:
            if required or default is ...:
                raise ValidationError(f"missing required key {self._name(key)!r}")
            return default
        return self.obj[key]

    def int(self, key: str, default: Any = ...) -> int:
        v = self.raw(key, default)
        if not _is_int(v):
            raise ValidationError(f"{self._name(key)} must be an integer, got {v!r}")
        return v

    def number(self, key: str, default: Any = ...) -> float:
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"{self._name(key)} must be a number, got {v!r}")
        return float(v)

    def bool(self, key: str, default: Any = ...) -> bool:
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ValidationError(f"{self._name(key)} must be true or false, got {v!r}")
        return v

    def str(self, key: str, default: Any = ...) -> str:
        v = self.raw(key, default)
        if not isinstance(v, str):
            raise ValidationError(f"{self._name(key)} must be a string, got {v!r}")
        return v

    def sub(self, key: str) -> _Reader:
        return _Reader(self.raw(key, {}), self._name(key))

    def list(self, key: str, default: Any = ...) -> list:
        v = self.raw(key, default)
        if not isinstance(v, list):
            raise ValidationError(f"{self._name(key)} must be an array")
        return v

    def done(self) -> None:
        extra = sorted(set(self.obj) - self.seen)
        if extra:
            raise ValidationError(f"unknown key {self._name(extra[0])!r}")


def parse_system_config(text: str, source: str | None = None) -> SystemConfig:
    """Parse and validate a system document, filling in defaults."""
    return system_from_dict(load_json(text, source))


def system_from_dict(doc: Any) -> SystemConfig:
    r = _Reader(doc, "")
    mesh = r.sub("mesh")
    width, height = mesh.int("width"), mesh.int("height")
    mesh.done()
    cores = r.int("cores_per_chip")

    levels = []
    for i, item in enumerate(r.list("perf_levels")):
        lr = _Reader(item, f"perf_levels[{i}]")
        levels.append(PerfLevel(frequency=lr.number("mhz") * 1e6, voltage=lr.number("volts")))
        lr.done()

    defaults_e = EnergyCoefficients()
    er = r.sub("energy")
    energy = EnergyCoefficients(**{k: er.number(k, getattr(defaults_e, k)) for k in asdict(defaults_e)})
    er.done()

    defaults_c = CycleCostCoefficients()
    cr = r.sub("cost")
    cost = CycleCostCoefficients(**{k: cr.int(k, getattr(defaults_c, k)) for k in asdict(defaults_c)})
    cr.done()

    ar = r.sub("accel")
    mr = ar.sub("mac")
    dm = MacArrayConfig()
    try:
        mac = MacArrayConfig(**{k: mr.int(k, getattr(dm, k)) for k in asdict(dm)})
        membrane = FixedFormat.parse(ar.str("membrane_format", "s16.15"))
        weight = FixedFormat.parse(ar.str("weight_format", "s8.8"))
    except ValueError as exc:
        raise ValidationError(f"accel: {exc}") from None
    mr.done()
    accel = AcceleratorConfig(
        enabled=ar.bool("enabled", True),
        mac=mac,
        membrane_format=membrane,
        weight_format=weight,
    )
    ar.done()

    dk = KeyLayout()
    kr = r.sub("key_layout")
    layout = KeyLayout(**{k: kr.int(k, getattr(dk, k)) for k in asdict(dk)})
    kr.done()

    rr = r.sub("router")
    table_capacity = rr.int("table_capacity", 16384)
    packet_bits = rr.int("packet_bits", 40)
    rr.done()

    sys = SystemConfig(
        mesh_width=width,
        mesh_height=height,
        cores_per_chip=cores,
        perf_levels=tuple(levels),
        timestep_us=r.int("timestep_us", 1000),
        energy=energy,
        cost=cost,
        accel=accel,
        abb_enabled=r.bool("abb_enabled", False),
        seed=r.int("seed", 0),
        max_neurons_per_core=r.int("max_neurons_per_core", 1000),
        key_layout=layout,
        table_capacity=table_capacity,
        packet_bits=packet_bits,
        trace_cap=r.int("trace_cap", 1_000_000),
    )
    r.done()
    return sys


def dump_system(sys: SystemConfig) -> str:
    return json.dumps(sys.to_dict(), indent=2) + "\n"
