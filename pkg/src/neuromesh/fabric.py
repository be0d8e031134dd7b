"""Multicast spike transport over a 2-D chip mesh.

Each chip holds an ordered key/mask table. A packet matches an entry when
``key & mask == entry.key``; the first matching entry fires and the packet is
copied to every link and local core in its route. Unmatched packets are
dropped and counted. Tables are built for dimension-ordered (X then Y) trees.

Delivery completes inside the timestep barrier; there is no congestion or
per-hop latency model.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .config import EnergyCoefficients
from .errors import CapacityError
from .placement import MachineBuild
from .units import energy_aj, exact, joules

MASK32 = 0xFFFFFFFF
N_LINKS = 6


class Direction(IntEnum):
    E = 0
    NE = 1
    N = 2
    W = 3
    SW = 4
    S = 5


DELTA = {
    Direction.E: (1, 0),
    Direction.NE: (1, 1),
    Direction.N: (0, 1),
    Direction.W: (-1, 0),
    Direction.SW: (-1, -1),
    Direction.S: (0, -1),
}
_DELTA_LIST = [DELTA[Direction(i)] for i in range(N_LINKS)]


def core_bit(core: int) -> int:
    return 1 << (N_LINKS + core)


def link_bit(d: Direction) -> int:
    return 1 << int(d)


@dataclass(frozen=True)
class RoutingEntry:
    key: int
    mask: int
    route: int  # bits 0-5: links; bit 6+c: local core c

    def __post_init__(self) -> None:
        if self.key & ~self.mask & MASK32:
            raise ValueError(f"entry key {self.key:#010x} has bits outside mask {self.mask:#010x}")
        if self.route == 0:
            raise ValueError("routing entry needs a non-empty route")

    def matches(self, key: int) -> bool:
        return key & self.mask == self.key

    @property
    def links(self) -> list[Direction]:
        return [Direction(i) for i in range(N_LINKS) if self.route >> i & 1]

    @property
    def cores(self) -> list[int]:
        r = self.route >> N_LINKS
        out, c = [], 0
        while r:
            if r & 1:
                out.append(c)
            r >>= 1
            c += 1
        return out

    def route_names(self) -> list[str]:
        return [d.name for d in self.links] + [f"core{c}" for c in self.cores]


@dataclass
class RoutingTable:
    chip: tuple[int, int]
    entries: list[RoutingEntry] = field(default_factory=list)

    def lookup(self, key: int) -> RoutingEntry | None:
        for e in self.entries:
            if e.matches(key):
                return e
        return None

    def __len__(self) -> int:
        return len(self.entries)


Tables = dict[tuple[int, int], RoutingTable]


def dor_path(src: tuple[int, int], dst: tuple[int, int]) -> list[tuple[tuple[int, int], Direction | None]]:
    """Chips visited from ``src`` to ``dst`` moving in X first, then Y.

    Each item is ``(chip, outgoing direction)``; the last chip has ``None``.
    """
    (x, y), (tx, ty) = src, dst
    path = []
    while x != tx:
        d = Direction.E if tx > x else Direction.W
        path.append(((x, y), d))
        x += 1 if d == Direction.E else -1
    while y != ty:
        d = Direction.N if ty > y else Direction.S
        path.append(((x, y), d))
        y += 1 if d == Direction.N else -1
    path.append(((x, y), None))
    return path


def multicast_tree(src: tuple[int, int], targets: dict[tuple[int, int], set[int]]) -> dict[tuple[int, int], int]:
    """Route bits per chip for a DOR multicast tree from ``src`` to target cores."""
    routes: dict[tuple[int, int], int] = defaultdict(int)
    for chip, cores in targets.items():
        for hop, d in dor_path(src, chip):
            if d is not None:
                routes[hop] |= link_bit(d)
        for c in cores:
            routes[chip] |= core_bit(c)
    return dict(routes)


def build_routing_tables(build: MachineBuild) -> Tables:
    """Key/mask tables realising every synapse table's source set.

    When every neuron of a source core has the same target-core set, the core
    gets one entry per tree chip with the neuron-index bits masked out;
    otherwise each neuron with targets gets exact-match entries. Neurons with
    no targets get no entries.
    """
    sys, pl, ks = build.sys, build.placement, build.keyspace
    tables: Tables = {(x, y): RoutingTable((x, y)) for y in range(sys.mesh_height) for x in range(sys.mesh_width)}
    if build.edges_src.size:
        pair = np.unique(build.edges_src * sys.n_cores + pl.core_of[build.edges_tgt])
        src_g, tgt_core = np.divmod(pair, sys.n_cores)
    else:
        src_g = tgt_core = np.zeros(0, np.int64)

    targets_of: dict[int, frozenset[int]] = {}
    if src_g.size:
        bounds = np.flatnonzero(np.diff(src_g)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, src_g.size]):
            targets_of[int(src_g[lo])] = frozenset(int(c) for c in tgt_core[lo:hi])

    neuron_mask = ks.neuron_mask
    for gid in range(sys.n_cores):
        lo = int(np.searchsorted(pl.core_of, gid, "left"))
        hi = int(np.searchsorted(pl.core_of, gid, "right"))
        if lo == hi:
            continue
        sets = [targets_of.get(g, frozenset()) for g in range(lo, hi)]
        if not any(sets):
            continue
        sx, sy, sc = pl.coords(gid)
        if all(s == sets[0] for s in sets):
            groups = [(ks.core_key(sx, sy, sc), MASK32 & ~neuron_mask, sets[0])]
        else:
            groups = [(int(build.keys[g]), MASK32, s) for g, s in zip(range(lo, hi), sets) if s]
        for key, mask, tset in groups:
            per_chip: dict[tuple[int, int], set[int]] = defaultdict(set)
            for tc in sorted(tset):
                tx, ty, tcore = pl.coords(tc)
                per_chip[(tx, ty)].add(tcore)
            for chip, route in sorted(multicast_tree((sx, sy), per_chip).items(), key=lambda kv: (kv[0][1], kv[0][0])):
                tables[chip].entries.append(RoutingEntry(key, mask, route))

    for chip, table in tables.items():
        if len(table) > sys.table_capacity:
            raise CapacityError(
                f"routing table capacity exceeded at chip {chip}: {len(table)} entries > {sys.table_capacity}"
            )
    return tables


def dump_tables(tables: Tables) -> str:
    """One line per entry: ``chip=(x,y) key=0x... mask=0x... route=[...]``."""
    lines = []
    for chip in sorted(tables, key=lambda c: (c[1], c[0])):
        for e in tables[chip].entries:
            lines.append(
                f"chip=({chip[0]},{chip[1]}) key=0x{e.key:08x} mask=0x{e.mask:08x} route=[{','.join(e.route_names())}]"
            )
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# packet routing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpikePacket:
    key: int
    emit_timestep: int


@dataclass
class RouteResult:
    destinations: set[tuple[int, int, int]]  # (chip x, chip y, core)
    link_bits: dict[tuple[int, int, Direction], int]
    hops: int = 0
    misses: int = 0  # chips where no entry matched (or a link led off the mesh)

    @property
    def dropped(self) -> bool:
        return not self.destinations


def route_packet(
    key: int,
    source_chip: tuple[int, int],
    tables: Tables,
    mesh: tuple[int, int],
    packet_bits: int = 40,
) -> RouteResult:
    """Walk one packet through the tables starting at its source chip."""
    width, height = mesh
    result = RouteResult(set(), {})
    queue = [source_chip]
    budget = width * height * N_LINKS
    while queue and budget > 0:
        budget -= 1
        chip = queue.pop(0)
        table = tables.get(chip)
        entry = table.lookup(key) if table is not None else None
        if entry is None:
            result.misses += 1
            continue
        for c in entry.cores:
            result.destinations.add((chip[0], chip[1], c))
        for d in entry.links:
            dx, dy = DELTA[d]
            nxt = (chip[0] + dx, chip[1] + dy)
            link = (chip[0], chip[1], d)
            result.link_bits[link] = result.link_bits.get(link, 0) + packet_bits
            result.hops += 1
            if 0 <= nxt[0] < width and 0 <= nxt[1] < height:
                queue.append(nxt)
            else:
                result.misses += 1
    return result


@dataclass
class RouteMap:
    """Per-key routing outcome for every placed neuron, indexed by key rank.

    ``dest_*`` is a CSR of destination core ids, ``link_*`` a CSR of traversed
    link ids (``chip_index * 6 + direction``), one entry per traversal.
    """

    dest_indptr: np.ndarray
    dest_core: np.ndarray
    link_indptr: np.ndarray
    link_id: np.ndarray
    hops: np.ndarray
    misses: np.ndarray
    n_links: int

    def destinations(self, rank: int) -> np.ndarray:
        return self.dest_core[self.dest_indptr[rank] : self.dest_indptr[rank + 1]]

    def links(self, rank: int) -> np.ndarray:
        return self.link_id[self.link_indptr[rank] : self.link_indptr[rank + 1]]


def compile_routes(build: MachineBuild, tables: Tables) -> RouteMap:
    """Route every placed key at once; same semantics as :func:`route_packet`."""
    sys, pl = build.sys, build.placement
    width, height, cpc = sys.mesh_width, sys.mesh_height, sys.cores_per_chip
    keys = build.keys_by_rank
    n = keys.size
    home = pl.core_of[build.g_of_rank] // cpc  # chip index of each rank

    compiled = {}
    for chip, table in tables.items():
        if table.entries:
            compiled[chip] = (
                np.array([e.key for e in table.entries], np.int64),
                np.array([e.mask for e in table.entries], np.int64),
                [e.route for e in table.entries],
            )

    misses = np.zeros(n, np.int64)
    dest_r, dest_c, link_r, link_l = [], [], [], []
    frontier: dict[int, list[np.ndarray]] = defaultdict(list)
    order = np.argsort(home, kind="stable")
    hs = home[order]
    bounds = np.flatnonzero(np.diff(hs)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, n]):
        if hi > lo:
            frontier[int(hs[lo])].append(order[lo:hi])

    for _ in range(width * height * N_LINKS):
        if not frontier:
            break
        nxt: dict[int, list[np.ndarray]] = defaultdict(list)
        for ci in sorted(frontier):
            ranks = np.concatenate(frontier[ci])
            x, y = ci % width, ci // width
            if (x, y) not in compiled:
                np.add.at(misses, ranks, 1)
                continue
            ekeys, emasks, routes = compiled[(x, y)]
            matched = _first_match(keys[ranks], ekeys, emasks)
            np.add.at(misses, ranks[matched < 0], 1)
            for ei in np.unique(matched[matched >= 0]):
                rr = ranks[matched == ei]
                route = routes[ei]
                for c in range(cpc):
                    if route & core_bit(c):
                        dest_r.append(rr)
                        dest_c.append(np.full(rr.size, ci * cpc + c, np.int64))
                for d in range(N_LINKS):
                    if route >> d & 1:
                        link_r.append(rr)
                        link_l.append(np.full(rr.size, ci * N_LINKS + d, np.int64))
                        dx, dy = _DELTA_LIST[d]
                        nx, ny = x + dx, y + dy
                        if 0 <= nx < width and 0 <= ny < height:
                            nxt[ny * width + nx].append(rr)
                        else:
                            np.add.at(misses, rr, 1)
        frontier = nxt

    dest_indptr, dest_core = _csr(n, dest_r, dest_c, dedupe=True)
    link_indptr, link_id = _csr(n, link_r, link_l, dedupe=False)
    hops = np.diff(link_indptr)
    return RouteMap(dest_indptr, dest_core, link_indptr, link_id, hops, misses, width * height * N_LINKS)


def _first_match(keys: np.ndarray, ekeys: np.ndarray, emasks: np.ndarray) -> np.ndarray:
    out = np.full(keys.size, -1, np.int64)
    block = max(1, (1 << 22) // max(1, ekeys.size))
    for lo in range(0, keys.size, block):
        k = keys[lo : lo + block, None]
        hit = (k & emasks[None, :]) == ekeys[None, :]
        any_hit = hit.any(axis=1)
        first = hit.argmax(axis=1)
        out[lo : lo + block] = np.where(any_hit, first, -1)
    return out


def _csr(n: int, rows: list[np.ndarray], vals: list[np.ndarray], dedupe: bool) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        return np.zeros(n + 1, np.int64), np.zeros(0, np.int64)
    r = np.concatenate(rows)
    v = np.concatenate(vals)
    order = np.lexsort((v, r))
    r, v = r[order], v[order]
    if dedupe and r.size:
        keep = np.r_[True, (np.diff(r) != 0) | (np.diff(v) != 0)]
        r, v = r[keep], v[keep]
    indptr = np.zeros(n + 1, np.int64)
    np.add.at(indptr, r + 1, 1)
    return np.cumsum(indptr), v


# ---------------------------------------------------------------------------
# barrier exchange and link energy
# ---------------------------------------------------------------------------


@dataclass
class LinkState:
    """Per directed chip-to-chip link, indexed by ``chip_index * 6 + direction``."""

    bits: np.ndarray  # bits carried in the current timestep
    powered: np.ndarray
    wake_count: np.ndarray  # cumulative power-up events
    total_bits: np.ndarray  # cumulative bits

    @classmethod
    def idle(cls, n_links: int) -> LinkState:
        z = np.zeros(n_links, np.int64)
        return cls(z.copy(), np.zeros(n_links, bool), z.copy(), z.copy())


@dataclass
class ExchangeResult:
    inboxes: dict[int, np.ndarray]  # core id -> sorted key ranks
    emitted: int
    delivered: int
    dropped: int
    wakes: np.ndarray  # per-link wake events this phase (0/1)
    bits: np.ndarray  # per-link bits this phase
    hops: int
    misses: int


def exchange_phase(emitted_ranks: np.ndarray, routes: RouteMap, links: LinkState, packet_bits: int) -> ExchangeResult:
    """Deliver all packets emitted in one timestep before the next one starts.

    Inboxes are sorted by source key, so any arrival order of the same packet
    multiset gives the same result. Links that carry traffic power up (one wake
    event if they were down) and power down again at phase end.
    """
    ranks = np.sort(np.asarray(emitted_ranks, dtype=np.int64))
    d_lo, d_hi = routes.dest_indptr[ranks], routes.dest_indptr[ranks + 1]
    n_dest = d_hi - d_lo
    src = np.repeat(ranks, n_dest)
    cores = routes.dest_core[_gather(d_lo, n_dest)]
    order = np.argsort(cores, kind="stable")
    src, cores = src[order], cores[order]
    inboxes = {}
    if cores.size:
        bounds = np.flatnonzero(np.diff(cores)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, cores.size]):
            inboxes[int(cores[lo])] = src[lo:hi]

    l_lo, l_hi = routes.link_indptr[ranks], routes.link_indptr[ranks + 1]
    n_link = l_hi - l_lo
    used = routes.link_id[_gather(l_lo, n_link)]
    bits = np.bincount(used, minlength=routes.n_links).astype(np.int64) * packet_bits
    active = bits > 0
    wakes = (active & ~links.powered).astype(np.int64)
    links.bits = bits
    links.wake_count += wakes
    links.total_bits += bits
    links.powered = np.zeros_like(links.powered)  # powered down at phase end

    delivered = int(np.count_nonzero(n_dest))
    return ExchangeResult(
        inboxes=inboxes,
        emitted=int(ranks.size),
        delivered=delivered,
        dropped=int(ranks.size) - delivered,
        wakes=wakes,
        bits=bits,
        hops=int(n_link.sum()),
        misses=int(routes.misses[ranks].sum()),
    )


def _gather(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, np.int64)
    offs = np.cumsum(lens) - lens
    return np.arange(total, dtype=np.int64) + np.repeat(starts - offs, lens)


def link_energy_aj(bits: int, wake_count: int, energy: EnergyCoefficients) -> int:
    return energy_aj(exact(energy.e_bit) * bits) + energy_aj(exact(energy.e_wake) * wake_count)


def link_energy(bits: int, wake_count: int, energy: EnergyCoefficients) -> float:
    """Joules for one link: ``e_bit * bits + e_wake * wakes``; zero when idle."""
    return joules(link_energy_aj(bits, wake_count, energy))
