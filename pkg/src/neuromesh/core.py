"""One core's millisecond: cost estimate, DVFS choice, LIF update, energy.

The cycle model is linear in the load and stands in for whatever the real
DVFS controller uses; coefficients come from ``CycleCostCoefficients``.

Neurons are current-based delta-synapse LIF cells with an inclusive
threshold and no refractory period::

    v <- v_rest + alpha * (v - v_rest) + sum(weights of this step's events)
    if v >= v_threshold: emit, v <- v_reset

with ``alpha = exp(-dt/tau_m)`` from the exp unit. A core whose neurons all
sit at rest and that has no events this step is clock-gated: the update is
provably a no-op, so it charges zero cycles and only leaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .accel import RngStream, bernoulli_threshold, mac_layer
from .config import CycleCostCoefficients, EnergyCoefficients, PerfLevel, SystemConfig
from .fixedpoint import FixedFormat, mul_round_array
from .units import Scaled, energy_aj, exact, joules

CYCLE_MAX = (1 << 64) - 1
ALPHA_SHIFT = 15  # decay factors are s16.15


def estimate_cycles(
    n_synaptic_events: int, n_neurons: int, cost: CycleCostCoefficients, accel_enabled: bool
) -> int:
    """Cycles to process one timestep's load, saturating at ``CYCLE_MAX``."""
    total = (
        cost.c_fixed
        + cost.per_neuron(accel_enabled) * n_neurons
        + cost.per_event(accel_enabled) * n_synaptic_events
    )
    return min(total, CYCLE_MAX)


def cycle_budget(level: PerfLevel, timestep: float | Fraction) -> int:
    dt = timestep if isinstance(timestep, Fraction) else exact(timestep)
    return int(exact(level.frequency) * dt)


def select_level_index(estimated_cycles: int, budgets: tuple[int, ...] | list[int]) -> tuple[int, bool]:
    for i, budget in enumerate(budgets):
        if estimated_cycles <= budget:
            return i, False
    return len(budgets) - 1, True


def select_perf_level(
    estimated_cycles: int, levels: tuple[PerfLevel, ...], timestep: float | Fraction
) -> tuple[PerfLevel, bool]:
    """Lowest-frequency level that fits the deadline, else the fastest with ``miss=True``."""
    budgets = [cycle_budget(lv, timestep) for lv in levels]
    i, miss = select_level_index(estimated_cycles, budgets)
    return levels[i], miss


def core_energy(
    level: PerfLevel, actual_cycles: int, timestep: float, energy: EnergyCoefficients, abb_enabled: bool
) -> tuple[float, float]:
    """(dynamic, leakage) joules for one core-timestep."""
    dyn, leak = core_energy_aj(level, actual_cycles, exact(timestep), energy, abb_enabled)
    return joules(dyn), joules(leak)


def core_energy_aj(
    level: PerfLevel, actual_cycles: int, timestep: Fraction, energy: EnergyCoefficients, abb_enabled: bool
) -> tuple[int, int]:
    v = exact(level.voltage)
    dyn = energy_aj(actual_cycles * exact(energy.c_eff) * v * v)
    factor = exact(energy.abb_leak_factor) if abb_enabled else 1
    leak = energy_aj(exact(energy.k_leak) * v * timestep * factor)
    return dyn, leak


def spike_probability(rate_hz: float, timestep: float) -> float:
    return -math.expm1(-rate_hz * timestep)


def generate_stimulus(rate_hz: float, n_neurons: int, timestep: float, rng: RngStream) -> np.ndarray:
    """Indices of neurons receiving a Poisson spike this timestep.

    Draws one value per neuron from ``rng`` unless ``rate_hz`` is zero, in which
    case nothing is drawn and nothing fires.
    """
    if rate_hz <= 0 or n_neurons == 0:
        return np.zeros(0, np.int64)
    thr = bernoulli_threshold(spike_probability(rate_hz, timestep))
    draws = rng.take(n_neurons)
    return np.flatnonzero(draws < thr)


class EnergyModel:
    """Per-level integer energy factors for one machine, in attojoules."""

    def __init__(self, sys: SystemConfig):
        e = sys.energy
        dt = sys.timestep_exact
        factor = exact(e.abb_leak_factor) if sys.abb_enabled else Fraction(1)
        self.dynamic: list[Scaled] = []
        self.mac: list[Scaled] = []
        self.leak: list[int] = []
        for lv in sys.perf_levels:
            v2 = exact(lv.voltage) ** 2
            self.dynamic.append(Scaled(exact(e.c_eff) * v2))
            self.mac.append(Scaled(exact(e.c_eff_mac) * v2))
            self.leak.append(energy_aj(exact(e.k_leak) * exact(lv.voltage) * dt * factor))
        self.link_bit = Scaled(exact(e.e_bit))
        self.link_wake = Scaled(exact(e.e_wake))


@dataclass
class HostedLayer:
    name: str
    weights: np.ndarray
    input_population: str | None
    input_constant: np.ndarray | None


@dataclass
class MacRecord:
    layer: str
    output: np.ndarray
    cycles: int
    energy_aj: int


@dataclass
class TimestepOutcome:
    emitted: np.ndarray  # local neuron indices, ascending
    estimated_cycles: int
    actual_cycles: int
    level_index: int
    level: PerfLevel
    miss: bool
    dynamic_aj: int
    leakage_aj: int
    inbox_packets: int = 0
    inbox_events: int = 0
    stimulus_events: int = 0
    phantoms: int = 0
    saturations: int = 0
    mac: list[MacRecord] = field(default_factory=list)

    @property
    def dynamic_energy(self) -> float:
        return joules(self.dynamic_aj)

    @property
    def leakage_energy(self) -> float:
        return joules(self.leakage_aj)


@dataclass
class CoreState:
    """Dynamic and static state of one core.

    ``v`` holds raw membrane-format potentials; ``alpha`` raw s16.15 decay
    factors. ``inbox`` holds the key ranks of packets delivered at the last
    barrier, sorted ascending (rank order is key order).
    """

    gid: int
    coords: tuple[int, int, int]
    v: np.ndarray
    alpha: np.ndarray
    v_rest: np.ndarray
    v_reset: np.ndarray
    v_threshold: np.ndarray
    rng: RngStream
    membrane_format: FixedFormat
    weight_shift: int
    inbox: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    level_index: int = 0
    deadline_miss_count: int = 0
    saturation_count: int = 0

    @property
    def n_neurons(self) -> int:
        return int(self.v.size)

    def at_rest(self) -> bool:
        return bool(np.array_equal(self.v, self.v_rest)) and not bool(np.any(self.v_rest >= self.v_threshold))


def step_neurons(
    state: CoreState,
    targets: np.ndarray,
    weights: np.ndarray,
    cost: CycleCostCoefficients,
    accel_enabled: bool,
) -> tuple[np.ndarray, int]:
    """Advance every neuron of ``state`` by one timestep.

    ``targets``/``weights`` are this step's synaptic events (local neuron index
    and raw weight-format weight). Returns the indices of neurons that fired and
    the cycles actually spent. Sums are taken in 64 bits and saturated once to
    the membrane format; each clipped neuron bumps ``state.saturation_count``.
    """
    n = state.n_neurons
    n_events = int(targets.size)
    if n_events == 0 and state.at_rest():
        return np.zeros(0, np.int64), 0
    if n_events:
        # float64 bincount is exact for integer sums below 2**53
        current = np.bincount(targets, weights=weights, minlength=n).astype(np.int64) << state.weight_shift
    else:
        current = 0
    v = state.v_rest + mul_round_array(state.alpha, state.v - state.v_rest, ALPHA_SHIFT) + current
    v, clipped = state.membrane_format.saturate_array(v)
    state.saturation_count += clipped
    fired = v >= state.v_threshold
    v = np.where(fired, state.v_reset, v)
    state.v = v
    return np.flatnonzero(fired), estimate_cycles(n_events, n, cost, accel_enabled)


def run_core_timestep(
    state: CoreState,
    resolve,
    stimulus,
    sys: SystemConfig,
    budgets: tuple[int, ...],
    model: EnergyModel,
    layers: list[HostedLayer] = (),
    layer_inputs: dict[str, np.ndarray] | None = None,
) -> TimestepOutcome:
    """Phase A for one core: DVFS choice from the inbox, stimulus, update, energy.

    ``resolve(inbox) -> (targets, weights, phantoms)`` maps delivered packets to
    synaptic events and ``stimulus`` lists this core's stimulus segments.
    """
    accel = sys.accel.enabled
    targets, weights, phantoms = resolve(state.inbox)
    inbox_events = int(targets.size)
    estimated = estimate_cycles(inbox_events, state.n_neurons, sys.cost, accel)
    li, _ = select_level_index(estimated, budgets)

    stim_t, stim_w = [], []
    for seg in stimulus:
        hit = generate_stimulus(seg.rate_hz, seg.local_stop - seg.local_start, sys.timestep, state.rng)
        if hit.size:
            stim_t.append(hit + seg.local_start)
            stim_w.append(np.full(hit.size, seg.weight, np.int64))
    n_stim = sum(a.size for a in stim_t)
    if n_stim:
        targets = np.concatenate([targets, *stim_t])
        weights = np.concatenate([weights, *stim_w])

    sat_before = state.saturation_count
    emitted, actual = step_neurons(state, targets, weights, sys.cost, accel)
    miss = actual > budgets[li]
    state.level_index = li
    if miss:
        state.deadline_miss_count += 1

    mac = []
    for layer in layers:
        inp = layer.input_constant if layer.input_constant is not None else layer_inputs[layer.name]
        # same energy as mac_offload_step, via the precomputed per-level factor
        out, cycles = mac_layer(layer.weights, inp, sys.accel.mac)
        mac.append(MacRecord(layer.name, out, cycles, model.mac[li](cycles)))

    return TimestepOutcome(
        emitted=emitted,
        estimated_cycles=estimated,
        actual_cycles=actual,
        level_index=li,
        level=sys.perf_levels[li],
        miss=miss,
        dynamic_aj=model.dynamic[li](actual),
        leakage_aj=model.leak[li],
        inbox_packets=int(state.inbox.size),
        inbox_events=inbox_events,
        stimulus_events=n_stim,
        phantoms=phantoms,
        saturations=state.saturation_count - sat_before,
        mac=mac,
    )


__all__ = [
    "CYCLE_MAX",
    "CoreState",
    "EnergyModel",
    "HostedLayer",
    "TimestepOutcome",
    "core_energy",
    "estimate_cycles",
    "generate_stimulus",
    "run_core_timestep",
    "select_perf_level",
    "step_neurons",
]
