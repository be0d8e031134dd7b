"""Barrier-synchronous timestep loop.

Every simulated millisecond runs in two phases:

A. each core independently resolves its inbox, picks a perf level, draws its
   stimulus, updates its neurons and runs any MAC layers it hosts;
B. a single barrier step routes all emitted spikes into next-step inboxes and
   charges link energy.

Phase A may use a thread pool; results are merged in core order and every core
owns its RNG stream, so output does not depend on the worker count.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .accel import RngStream
from .config import SystemConfig
from .core import CoreState, EnergyModel, HostedLayer, TimestepOutcome, run_core_timestep
from .fabric import LinkState, build_routing_tables, compile_routes, exchange_phase
from .ledger import EnergyLedger
from .network import NetworkDesc
from .placement import SynapseTable, place_and_build
from .units import exact

CHECKPOINT_FORMAT = "neuromesh-checkpoint"
CHECKPOINT_VERSION = 1


class InvariantViolation(RuntimeError):
    """An internal consistency check failed during simulation."""


def config_digest(sys: SystemConfig, net: NetworkDesc) -> str:
    doc = {"system": sys.to_dict(), "network": net.to_dict()}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


@dataclass
class CoreStats:
    spikes: int = 0
    misses: int = 0
    cycles: int = 0
    estimated_cycles: int = 0
    level_counts: list[int] = field(default_factory=list)


@dataclass
class LayerStats:
    invocations: int = 0
    cycles: int = 0
    last_output: list[int] = field(default_factory=list)


@dataclass
class StepRecord:
    """What happened in one timestep; ``outcomes`` is indexed by core id."""

    t: int
    outcomes: list[TimestepOutcome]
    emitted: int
    delivered: int
    dropped: int
    wakes: int
    dynamic_aj: int
    leakage_aj: int
    link_aj: int
    mac_aj: int
    misses: int


class Simulation:
    """A placed network on a machine, advanced one timestep at a time."""

    def __init__(
        self,
        sys: SystemConfig,
        net: NetworkDesc,
        workers: int = 1,
        trace: bool = False,
        trace_cap: int | None = None,
    ):
        self.sys = sys
        self.net = net
        self.workers = max(1, int(workers))
        self.digest = config_digest(sys, net)
        self.build = place_and_build(net, sys)
        self.tables = build_routing_tables(self.build)
        self.routes = compile_routes(self.build, self.tables)
        self.model = EnergyModel(sys)
        self.budgets = sys.cycle_budgets()
        self.trace = trace
        self.trace_cap = sys.trace_cap if trace_cap is None else trace_cap

        pl = self.build.placement
        nlev = len(sys.perf_levels)
        offsets = net.offsets()
        pop_of_g = np.repeat(np.arange(len(net.populations)), [p.size for p in net.populations])
        alpha_pop = np.array([self.build.alpha_of_pop[p.name] for p in net.populations], np.int64)
        rest_pop = np.array([p.params.v_rest for p in net.populations], np.int64)
        reset_pop = np.array([p.params.v_reset for p in net.populations], np.int64)
        thr_pop = np.array([p.params.v_threshold for p in net.populations], np.int64)
        wshift = sys.accel.membrane_format.frac_bits - sys.accel.weight_format.frac_bits

        self.cores: list[CoreState] = []
        self.first_g: list[int] = []
        self.resolvers = []
        self.layers: list[list[HostedLayer]] = [[] for _ in range(sys.n_cores)]
        for gid in range(sys.n_cores):
            lo = int(np.searchsorted(pl.core_of, gid, "left"))
            hi = int(np.searchsorted(pl.core_of, gid, "right"))
            pops = pop_of_g[lo:hi]
            x, y, c = pl.coords(gid)
            self.cores.append(
                CoreState(
                    gid=gid,
                    coords=(x, y, c),
                    v=rest_pop[pops].copy(),
                    alpha=alpha_pop[pops],
                    v_rest=rest_pop[pops],
                    v_reset=reset_pop[pops],
                    v_threshold=thr_pop[pops],
                    rng=RngStream.for_core(sys.seed, x, y, c),
                    membrane_format=sys.accel.membrane_format,
                    weight_shift=wshift,
                )
            )
            self.first_g.append(lo)
            self.resolvers.append(self.build.synapse_tables.get(gid, SynapseTable.empty()).resolve)
        for d in net.dense_layers:
            self.layers[pl.layer_core[d.name]].append(
                HostedLayer(
                    d.name,
                    np.array(d.weights, np.int64),
                    d.input_population,
                    None if d.input_constant is None else np.array(d.input_constant, np.int64),
                )
            )
        self._pop_slices = {p.name: (offsets[p.name], offsets[p.name] + p.size) for p in net.populations}
        self._first_g = np.array(self.first_g, np.int64)

        # dynamic state
        self.t = 0
        self.links = LinkState.idle(self.routes.n_links)
        self.ledger = EnergyLedger()
        self.core_stats = [CoreStats(level_counts=[0] * nlev) for _ in range(sys.n_cores)]
        self.layer_stats = {d.name: LayerStats() for d in net.dense_layers}
        self.last_fired = np.zeros(net.n_neurons, bool)
        self.series: list[dict[str, int]] = []
        self.raster: list[tuple[int, int]] = []
        self.raster_truncated = False
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    # ------------------------------------------------------------------
    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> Simulation:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------------
    def _layer_inputs(self) -> dict[str, np.ndarray]:
        out = {}
        for d in self.net.dense_layers:
            if d.input_population is not None:
                lo, hi = self._pop_slices[d.input_population]
                out[d.name] = self.last_fired[lo:hi].astype(np.int64)
        return out

    def _phase_a(self, gid: int, layer_inputs) -> TimestepOutcome:
        return run_core_timestep(
            self.cores[gid],
            self.resolvers[gid],
            self.build.stimulus.get(gid, ()),
            self.sys,
            self.budgets,
            self.model,
            self.layers[gid],
            layer_inputs,
        )

    def advance(self) -> StepRecord:
        """Run one timestep (phase A on all cores, then the barrier exchange)."""
        layer_inputs = self._layer_inputs()
        gids = range(self.sys.n_cores)
        if self._pool is not None:
            outcomes = list(self._pool.map(lambda g: self._phase_a(g, layer_inputs), gids))
        else:
            outcomes = [self._phase_a(g, layer_inputs) for g in gids]

        led = self.ledger
        t = self.t
        dyn = leak = mac_aj = misses = 0
        fired_g = []
        for gid, out in enumerate(outcomes):
            st = self.core_stats[gid]
            led.add("core_dynamic", gid, out.dynamic_aj)
            led.add("core_leakage", gid, out.leakage_aj)
            dyn += out.dynamic_aj
            leak += out.leakage_aj
            st.level_counts[out.level_index] += 1
            st.cycles += out.actual_cycles
            st.estimated_cycles += out.estimated_cycles
            st.spikes += int(out.emitted.size)
            if out.miss:
                st.misses += 1
                misses += 1
            led.count("synaptic_events", out.inbox_events)
            led.count("stimulus_events", out.stimulus_events)
            led.count("phantom_packets", out.phantoms)
            led.count("saturations", out.saturations)
            led.count("core_cycles", out.actual_cycles)
            for rec in out.mac:
                led.add("mac", rec.layer, rec.energy_aj)
                led.count("mac_cycles", rec.cycles)
                mac_aj += rec.energy_aj
                ls = self.layer_stats[rec.layer]
                ls.invocations += 1
                ls.cycles += rec.cycles
                ls.last_output = [int(v) for v in rec.output]
            if out.emitted.size:
                fired_g.append(out.emitted + self._first_g[gid])
        led.count("deadline_misses", misses)

        fired = np.concatenate(fired_g) if fired_g else np.zeros(0, np.int64)
        ranks = self.build.rank_of[fired]
        ex = exchange_phase(ranks, self.routes, self.links, self.sys.packet_bits)
        if ex.emitted != ex.delivered + ex.dropped or ex.emitted != fired.size:
            raise InvariantViolation(f"spike conservation violated at t={t}")
        for core in self.cores:
            core.inbox = ex.inboxes.get(core.gid, _EMPTY)

        link_aj = 0
        for lid in np.flatnonzero(ex.bits):
            e = self.model.link_bit(int(ex.bits[lid])) + self.model.link_wake(int(ex.wakes[lid]))
            led.add("link", int(lid), e)
            link_aj += e
        n_wakes = int(ex.wakes.sum())
        led.count("spikes_emitted", ex.emitted)
        led.count("packets_delivered", ex.delivered)
        led.count("packets_dropped", ex.dropped)
        led.count("link_wakes", n_wakes)
        led.count("hops", ex.hops)
        led.count("route_misses", ex.misses)

        self.last_fired = np.zeros_like(self.last_fired)
        self.last_fired[fired] = True
        if self.trace and ranks.size:
            keys = np.sort(self.build.keys_by_rank[ranks])
            room = self.trace_cap - len(self.raster)
            if room < keys.size:
                self.raster_truncated = True
            self.raster.extend((t, int(k)) for k in keys[: max(room, 0)])
        self.series.append(
            {
                "t": t,
                "spikes": ex.emitted,
                "dynamic_aj": dyn,
                "leakage_aj": leak,
                "link_aj": link_aj,
                "mac_aj": mac_aj,
                "misses": misses,
                "delivered": ex.delivered,
                "dropped": ex.dropped,
            }
        )
        self.t += 1
        return StepRecord(t, outcomes, ex.emitted, ex.delivered, ex.dropped, n_wakes, dyn, leak, link_aj, mac_aj, misses)

    def run(self, n_timesteps: int) -> None:
        if n_timesteps < 0:
            raise ValueError("n_timesteps must be >= 0")
        for _ in range(n_timesteps):
            self.advance()

    # ------------------------------------------------------------------
    def spike_raster(self) -> list[tuple[int, int]]:
        return list(self.raster)

    def report(self):
        from .report import build_report

        self.ledger.check()
        return build_report(self)

    # ------------------------------------------------------------------
    def snapshot(self) -> dict[str, Any]:
        """JSON-serialisable state sufficient for a bit-exact resume."""
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config_digest": self.digest,
            "t": self.t,
            "cores": [
                {
                    "v": c.v.tolist(),
                    "rng_counter": c.rng.counter,
                    "inbox": c.inbox.tolist(),
                    "level_index": c.level_index,
                    "deadline_miss_count": c.deadline_miss_count,
                    "saturation_count": c.saturation_count,
                    "stats": [s.spikes, s.misses, s.cycles, s.estimated_cycles, s.level_counts],
                }
                for c, s in zip(self.cores, self.core_stats)
            ],
            "links": {
                "wake_count": self.links.wake_count.tolist(),
                "total_bits": self.links.total_bits.tolist(),
            },
            "ledger": self.ledger.to_state(),
            "layers": {k: [v.invocations, v.cycles, v.last_output] for k, v in self.layer_stats.items()},
            "last_fired": np.flatnonzero(self.last_fired).tolist(),
            "series": self.series,
            "trace": {"enabled": self.trace, "cap": self.trace_cap, "truncated": self.raster_truncated, "spikes": self.raster},
        }

    def restore(self, snap: dict[str, Any]) -> None:
        if snap.get("format") != CHECKPOINT_FORMAT or snap.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported checkpoint")
        if snap["config_digest"] != self.digest:
            raise ValueError("checkpoint was taken with a different system/network")
        self.t = int(snap["t"])
        for c, s, cs in zip(self.cores, self.core_stats, snap["cores"]):
            c.v = np.array(cs["v"], np.int64)
            c.rng.counter = int(cs["rng_counter"])
            c.inbox = np.array(cs["inbox"], np.int64)
            c.level_index = int(cs["level_index"])
            c.deadline_miss_count = int(cs["deadline_miss_count"])
            c.saturation_count = int(cs["saturation_count"])
            s.spikes, s.misses, s.cycles, s.estimated_cycles, s.level_counts = cs["stats"]
            s.level_counts = list(s.level_counts)
        self.links = LinkState.idle(self.routes.n_links)
        self.links.wake_count = np.array(snap["links"]["wake_count"], np.int64)
        self.links.total_bits = np.array(snap["links"]["total_bits"], np.int64)
        self.ledger = EnergyLedger.from_state(snap["ledger"])
        for k, (inv, cyc, last) in snap["layers"].items():
            self.layer_stats[k] = LayerStats(inv, cyc, list(last))
        self.last_fired = np.zeros(self.net.n_neurons, bool)
        self.last_fired[np.array(snap["last_fired"], np.int64)] = True
        self.series = [dict(r) for r in snap["series"]]
        tr = snap["trace"]
        self.trace = bool(tr["enabled"])
        self.trace_cap = int(tr["cap"])
        self.raster_truncated = bool(tr["truncated"])
        self.raster = [(int(a), int(b)) for a, b in tr["spikes"]]


_EMPTY = np.zeros(0, np.int64)


def run_simulation(
    sys: SystemConfig, net: NetworkDesc, n_timesteps: int, workers: int = 1, trace: bool = False, trace_cap: int | None = None
):
    """Place, build and run ``n_timesteps``; returns the :class:`SimReport`."""
    with Simulation(sys, net, workers=workers, trace=trace, trace_cap=trace_cap) as sim:
        sim.run(n_timesteps)
        return sim.report()


def advance_timestep(sim: Simulation) -> StepRecord:
    return sim.advance()


# ---------------------------------------------------------------------------
# capacity arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapacityReport:
    cores_a: int
    cores_b: int
    core_ratio: Fraction
    frequency_ratio: Fraction
    cycle_ratio: Fraction  # cycles per workload unit, a over b
    per_core_throughput_ratio: Fraction
    capacity_ratio: Fraction

    def to_dict(self) -> dict[str, Any]:
        return {
            "cores_a": self.cores_a,
            "cores_b": self.cores_b,
            "core_ratio": float(self.core_ratio),
            "frequency_ratio": float(self.frequency_ratio),
            "cycle_ratio": float(self.cycle_ratio),
            "per_core_throughput_ratio": float(self.per_core_throughput_ratio),
            "capacity_ratio": float(self.capacity_ratio),
        }

    def summary(self) -> str:
        return (
            f"cores x{float(self.core_ratio):g}, per-core throughput x{float(self.per_core_throughput_ratio):g} "
            f"(clock x{float(self.frequency_ratio):g}, cycles/event x{float(self.cycle_ratio):g}) "
            f"=> modeled capacity x{float(self.capacity_ratio):g}"
        )


def capacity_ratio(
    sys_a: SystemConfig, sys_b: SystemConfig, neuron_updates: int = 0, synaptic_events: int = 1
) -> CapacityReport:
    """Analytic capacity of ``sys_b`` relative to ``sys_a``.

    Per-core throughput scales with the fastest clock and inversely with the
    cycles one reference workload unit costs under each machine's accelerator
    setting. The default unit is one synaptic event.
    """

    def unit_cycles(s: SystemConfig) -> int:
        acc = s.accel.enabled
        return s.cost.per_neuron(acc) * neuron_updates + s.cost.per_event(acc) * synaptic_events

    ca, cb = unit_cycles(sys_a), unit_cycles(sys_b)
    if ca == 0 or cb == 0:
        raise ValueError("reference workload costs zero cycles on one of the machines")
    core_ratio = Fraction(sys_b.n_cores, sys_a.n_cores)
    freq_ratio = exact(sys_b.max_frequency) / exact(sys_a.max_frequency)
    cyc_ratio = Fraction(ca, cb)
    per_core = freq_ratio * cyc_ratio
    return CapacityReport(sys_a.n_cores, sys_b.n_cores, core_ratio, freq_ratio, cyc_ratio, per_core, core_ratio * per_core)


__all__ = [
    "CapacityReport",
    "InvariantViolation",
    "Simulation",
    "StepRecord",
    "advance_timestep",
    "capacity_ratio",
    "config_digest",
    "run_simulation",
]
