"""Simulation reports and their JSON/CSV renderings.

Energies are written as exact six-decimal picojoule strings (``"pj"``) with a
float joule value alongside for convenience. Key order is fixed and floats use
Python's shortest round-trip repr, so identical reports give identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .fabric import N_LINKS, Direction
from .ledger import CATEGORIES
from .units import joules, parse_pj_string, pj_string

REPORT_FORMAT = "neuromesh-report"
REPORT_VERSION = 1
SERIES_COLUMNS = ("t", "spikes", "dynamic_pj", "leakage_pj", "link_pj", "mac_pj", "misses", "delivered", "dropped")


def energy_field(aj: int) -> dict[str, Any]:
    return {"pj": pj_string(aj), "joules": joules(aj)}


@dataclass
class SimReport:
    config_digest: str
    steps: int
    machine: dict[str, Any]
    totals: dict[str, Any]
    cores: list[dict[str, Any]]
    links: list[dict[str, Any]]
    mac_layers: list[dict[str, Any]]
    series: list[dict[str, int]] = field(default_factory=list)
    raster: list[tuple[int, int]] | None = None
    raster_truncated: bool = False

    def energy_aj(self, category: str) -> int:
        return parse_pj_string(self.totals["energy"][category]["pj"])

    def counter(self, name: str) -> int:
        return self.totals["counters"][name]

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config_digest": self.config_digest,
            "steps": self.steps,
            "machine": self.machine,
            "totals": self.totals,
            "cores": self.cores,
            "links": self.links,
            "mac_layers": self.mac_layers,
            "series": [
                {
                    "t": r["t"],
                    "spikes": r["spikes"],
                    "dynamic_pj": pj_string(r["dynamic_aj"]),
                    "leakage_pj": pj_string(r["leakage_aj"]),
                    "link_pj": pj_string(r["link_aj"]),
                    "mac_pj": pj_string(r["mac_aj"]),
                    "misses": r["misses"],
                    "delivered": r["delivered"],
                    "dropped": r["dropped"],
                }
                for r in self.series
            ],
        }
        if self.raster is not None:
            doc["raster"] = {"truncated": self.raster_truncated, "spikes": [list(s) for s in self.raster]}
        return doc

    def to_json(self) -> str:
        return dumps_stable(self.to_dict())

    def series_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(SERIES_COLUMNS) + "\n")
        for row in self.to_dict()["series"]:
            buf.write(",".join(str(row[c]) for c in SERIES_COLUMNS) + "\n")
        return buf.getvalue()

    def raster_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,key\n")
        for t, key in self.raster or ():
            buf.write(f"{t},0x{key:08x}\n")
        return buf.getvalue()


def dumps_stable(doc: Any) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=True, allow_nan=False) + "\n"


def build_report(sim) -> SimReport:
    led = sim.ledger
    sys = sim.sys
    pl = sim.build.placement
    freqs = [lv.frequency for lv in sys.perf_levels]

    level_counts = [0] * len(freqs)
    cores = []
    for gid, (core, st) in enumerate(zip(sim.cores, sim.core_stats)):
        for i, n in enumerate(st.level_counts):
            level_counts[i] += n
        cores.append({
            "core": list(pl.coords(gid)),
            "neurons": core.n_neurons,
            "spikes": st.spikes,
            "deadline_misses": st.misses,
            "cycles": st.cycles,
            "estimated_cycles": st.estimated_cycles,
            "level_counts": list(st.level_counts),
            "energy": {
                "core_dynamic": energy_field(led.component("core_dynamic", gid)),
                "core_leakage": energy_field(led.component("core_leakage", gid)),
            },
        })
    steps_total = sum(level_counts)
    mean_mhz = sum(n * f for n, f in zip(level_counts, freqs)) / steps_total / 1e6 if steps_total else 0.0

    links = []
    w = sys.mesh_width
    for lid in range(sim.links.wake_count.size):
        bits, wakes = int(sim.links.total_bits[lid]), int(sim.links.wake_count[lid])
        if bits or wakes:
            chip, d = divmod(lid, N_LINKS)
            links.append({
                "chip": [chip % w, chip // w],
                "dir": Direction(d).name,
                "bits": bits,
                "wakes": wakes,
                "energy": energy_field(led.component("link", lid)),
            })

    layers = []
    for d in sim.net.dense_layers:
        ls = sim.layer_stats[d.name]
        layers.append({
            "name": d.name,
            "core": list(d.core),
            "invocations": ls.invocations,
            "cycles": ls.cycles,
            "energy": energy_field(led.component("mac", d.name)),
            "last_output": list(ls.last_output),
        })

    energy = {c: energy_field(led.totals[c]) for c in CATEGORIES}
    energy["non_leakage"] = energy_field(led.non_leakage())
    energy["total"] = energy_field(led.total())
    totals = {
        "energy": energy,
        "counters": dict(led.counters),
        "level_counts": level_counts,
        "mean_frequency_mhz": mean_mhz,
        "lowest_level_fraction": level_counts[0] / steps_total if steps_total else 1.0,
    }
    machine = {
        "mesh": [sys.mesh_width, sys.mesh_height],
        "cores_per_chip": sys.cores_per_chip,
        "cores": sys.n_cores,
        "neurons": sim.net.n_neurons,
        "synapses": int(sim.build.edges_src.size),
        "routing_entries": sum(len(t) for t in sim.tables.values()),
        "perf_levels_mhz": [f / 1e6 for f in freqs],
    }
    return SimReport(
        config_digest=sim.digest,
        steps=sim.t,
        machine=machine,
        totals=totals,
        cores=cores,
        links=links,
        mac_layers=layers,
        series=list(sim.series),
        raster=list(sim.raster) if sim.trace else None,
        raster_truncated=sim.raster_truncated,
    )


def emit_report(report: SimReport, json_path, csv_path=None, raster_path=None) -> list[Path]:
    """Write the requested files atomically; either all appear or none do."""
    outputs = [(Path(json_path), report.to_json())]
    if csv_path is not None:
        outputs.append((Path(csv_path), report.series_csv()))
    if raster_path is not None:
        outputs.append((Path(raster_path), report.raster_csv()))
    staged = []
    try:
        for path, text in outputs:
            try:
                fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or Path("."))
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    return [p for p, _ in outputs]
