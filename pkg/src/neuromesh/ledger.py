"""Run-level energy ledger and event counters.

Energy is held as integer attojoules per (category, component) so totals are
exact sums of their parts.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Any

CATEGORIES = ("core_dynamic", "core_leakage", "link", "mac")
COUNTERS = (
    "spikes_emitted",
    "packets_delivered",
    "packets_dropped",
    "deadline_misses",
    "link_wakes",
    "hops",
    "route_misses",
    "phantom_packets",
    "synaptic_events",
    "stimulus_events",
    "saturations",
    "core_cycles",
    "mac_cycles",
)


class EnergyLedger:
    def __init__(self) -> None:
        self.entries: dict[str, dict[Any, int]] = {c: defaultdict(int) for c in CATEGORIES}
        self.totals: dict[str, int] = {c: 0 for c in CATEGORIES}
        self.counters: dict[str, int] = {c: 0 for c in COUNTERS}

    def add(self, category: str, component: Any, aj: int) -> None:
        if aj < 0:
            raise ValueError(f"negative energy for {category}/{component}")
        if aj:
            self.entries[category][component] += aj
            self.totals[category] += aj

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] += n

    def total(self) -> int:
        return sum(self.totals.values())

    def non_leakage(self) -> int:
        return self.total() - self.totals["core_leakage"]

    def component(self, category: str, component: Any) -> int:
        return self.entries[category].get(component, 0)

    def check(self) -> None:
        """Raise if any category total differs from the sum of its entries."""
        for c in CATEGORIES:
            if sum(self.entries[c].values()) != self.totals[c]:
                raise AssertionError(f"ledger category {c} total does not match its entries")

    def to_state(self) -> dict[str, Any]:
        return {
            "entries": {c: [[_enc(k), v] for k, v in sorted(self.entries[c].items(), key=lambda kv: str(kv[0]))] for c in CATEGORIES},
            "counters": dict(self.counters),
        }

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> EnergyLedger:
        led = cls()
        for c in CATEGORIES:
            for k, v in state["entries"][c]:
                led.add(c, _dec(k), int(v))
        led.counters.update({k: int(v) for k, v in state["counters"].items()})
        return led


def _enc(k: Any) -> Any:
    return list(k) if isinstance(k, tuple) else k


def _dec(k: Any) -> Any:
    return tuple(k) if isinstance(k, list) else k
