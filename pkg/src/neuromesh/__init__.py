"""Deterministic simulator of a many-core neuromorphic machine."""

from .accel import MacArrayConfig, RngStream, accel_exp, mac_layer, mac_offload_step, rng_next
from .config import PerfLevel, SystemConfig, parse_system_config
from .core import core_energy, estimate_cycles, generate_stimulus, select_perf_level, step_neurons
from .errors import CapacityError, ConfigSyntaxError, DomainError, NeuromeshError, ValidationError
from .fabric import build_routing_tables, exchange_phase, link_energy, route_packet
from .fixedpoint import FixedFormat, FixedPoint
from .kernel import Simulation, advance_timestep, capacity_ratio, run_simulation
from .network import NetworkDesc, parse_network
from .placement import place_and_build
from .report import SimReport, emit_report

__all__ = [
    "CapacityError",
    "ConfigSyntaxError",
    "DomainError",
    "FixedFormat",
    "FixedPoint",
    "MacArrayConfig",
    "NetworkDesc",
    "NeuromeshError",
    "PerfLevel",
    "RngStream",
    "SimReport",
    "Simulation",
    "SystemConfig",
    "ValidationError",
    "accel_exp",
    "advance_timestep",
    "build_routing_tables",
    "capacity_ratio",
    "core_energy",
    "emit_report",
    "estimate_cycles",
    "exchange_phase",
    "generate_stimulus",
    "link_energy",
    "mac_layer",
    "mac_offload_step",
    "parse_network",
    "parse_system_config",
    "place_and_build",
    "rng_next",
    "route_packet",
    "run_simulation",
    "select_perf_level",
    "step_neurons",
]
