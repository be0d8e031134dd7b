"""Placement of neurons onto cores, multicast key assignment and synapse tables.

Placement is greedy and sequential: neurons are taken in population order and
packed into cores in row-major chip order (``y`` outer, ``x`` inner), then core
index, splitting populations at core boundaries. Everything here is a pure
function of ``(net, sys)``; probabilistic projections are expanded with
streams derived from the global seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .accel import RngStream, bernoulli_threshold, decay_factor, derive_stream_id
from .config import KeyLayout, SystemConfig
from .errors import CapacityError, ValidationError
from .network import NetworkDesc

_EXPAND_CHUNK = 1 << 22


@dataclass(frozen=True)
class KeySpace:
    layout: KeyLayout

    @property
    def _shifts(self) -> tuple[int, int, int]:
        lay = self.layout
        return (
            lay.y_bits + lay.core_bits + lay.neuron_bits,
            lay.core_bits + lay.neuron_bits,
            lay.neuron_bits,
        )

    def encode(self, x: int, y: int, core: int, neuron: int) -> int:
        lay = self.layout
        for value, bits, what in (
            (x, lay.x_bits, "chip x"),
            (y, lay.y_bits, "chip y"),
            (core, lay.core_bits, "core"),
            (neuron, lay.neuron_bits, "neuron index"),
        ):
            if not 0 <= value < 1 << bits:
                raise ValueError(f"{what} {value} does not fit {bits} key bits")
        sx, sy, sc = self._shifts
        return (x << sx) | (y << sy) | (core << sc) | neuron

    def decode(self, key: int) -> tuple[int, int, int, int]:
        lay = self.layout
        sx, sy, sc = self._shifts
        return (
            (key >> sx) & ((1 << lay.x_bits) - 1),
            (key >> sy) & ((1 << lay.y_bits) - 1),
            (key >> sc) & ((1 << lay.core_bits) - 1),
            key & ((1 << lay.neuron_bits) - 1),
        )

    @property
    def neuron_mask(self) -> int:
        return (1 << self.layout.neuron_bits) - 1

    def core_key(self, x: int, y: int, core: int) -> int:
        return self.encode(x, y, core, 0)


@dataclass(frozen=True)
class PlacementSegment:
    population: str
    start: int  # first neuron index within the population
    stop: int
    core: tuple[int, int, int]


@dataclass
class Placement:
    """Where every neuron and dense layer lives.

    ``core_of[g]`` / ``local_of[g]`` give the global core id and core-local
    index of global neuron ``g`` (population order). Global core ids are
    ``(y * mesh_width + x) * cores_per_chip + core``.
    """

    mesh_width: int
    mesh_height: int
    cores_per_chip: int
    segments: tuple[PlacementSegment, ...]
    core_of: np.ndarray
    local_of: np.ndarray
    layer_core: dict[str, int]

    def coords(self, gid: int) -> tuple[int, int, int]:
        chip, core = divmod(gid, self.cores_per_chip)
        y, x = divmod(chip, self.mesh_width)
        return x, y, core

    def gid(self, x: int, y: int, core: int) -> int:
        return (y * self.mesh_width + x) * self.cores_per_chip + core

    def chip_index(self, x: int, y: int) -> int:
        return y * self.mesh_width + x

    def neurons_on(self, gid: int) -> int:
        return int(np.count_nonzero(self.core_of == gid))


@dataclass
class SynapseTable:
    """Incoming synapses of one core, keyed by source neuron.

    Rows are sorted by source key (stored as the source's key rank) and each
    row lists ``(local target, raw weight)`` pairs sorted by target.
    """

    src_rank: np.ndarray
    indptr: np.ndarray
    target: np.ndarray
    weight: np.ndarray

    @classmethod
    def empty(cls) -> SynapseTable:
        return cls(
            np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
        )

    @property
    def n_synapses(self) -> int:
        return int(self.target.size)

    def resolve(self, inbox: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """Expand sorted inbox source ranks to synaptic events.

        Returns ``(targets, weights, phantoms)`` where events keep the inbox
        order (source key, then target) and ``phantoms`` counts packets with no
        row in this table.
        """
        if inbox.size == 0 or self.src_rank.size == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), int(inbox.size)
        rows = np.searchsorted(self.src_rank, inbox)
        rows_c = np.minimum(rows, self.src_rank.size - 1)
        hit = self.src_rank[rows_c] == inbox
        rows = rows_c[hit]
        phantoms = int(inbox.size - rows.size)
        starts = self.indptr[rows]
        lens = self.indptr[rows + 1] - starts
        total = int(lens.sum())
        if total == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), phantoms
        offs = np.cumsum(lens) - lens
        idx = np.arange(total, dtype=np.int64) + np.repeat(starts - offs, lens)
        return self.target[idx], self.weight[idx], phantoms

    def as_dict(self, keys_by_rank: np.ndarray) -> dict[int, list[tuple[int, int]]]:
        out = {}
        for i, r in enumerate(self.src_rank):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            out[int(keys_by_rank[r])] = [(int(t), int(w)) for t, w in zip(self.target[lo:hi], self.weight[lo:hi])]
        return out


@dataclass
class StimulusSegment:
    """One stimulus entry restricted to the neurons of one core."""

    local_start: int
    local_stop: int
    rate_hz: float
    weight: int


@dataclass
class MachineBuild:
    """Result of :func:`place_and_build`."""

    sys: SystemConfig
    net: NetworkDesc
    placement: Placement
    keyspace: KeySpace
    keys: np.ndarray  # key of global neuron g
    rank_of: np.ndarray  # key rank of global neuron g
    g_of_rank: np.ndarray
    keys_by_rank: np.ndarray
    edges_src: np.ndarray  # global source neuron per synapse
    edges_tgt: np.ndarray
    edges_weight: np.ndarray  # raw weight-format
    synapse_tables: dict[int, SynapseTable]
    alpha_of_pop: dict[str, int]  # raw s16.15 decay factor per population
    stimulus: dict[int, list[StimulusSegment]] = field(default_factory=dict)

    def __iter__(self):
        # allows ``placement, keyspace, tables = place_and_build(...)``
        return iter((self.placement, self.keyspace, self.synapse_tables))

    def target_cores(self, g: int) -> set[int]:
        return {int(c) for c in self.placement.core_of[self.edges_tgt[self.edges_src == g]]}


def place(net: NetworkDesc, sys: SystemConfig) -> Placement:
    cap = sys.max_neurons_per_core
    total_slots = sys.n_cores * cap
    if net.n_neurons > total_slots:
        acc = 0
        for p in net.populations:
            if acc + p.size > total_slots:
                raise CapacityError(
                    f"capacity exceeded: population {p.name!r} cannot be placed "
                    f"({net.n_neurons} neurons > {sys.n_cores} cores x {cap} per core)"
                )
            acc += p.size
    g = np.arange(net.n_neurons, dtype=np.int64)
    core_of = g // cap
    local_of = g % cap

    segments = []
    offset = 0
    for p in net.populations:
        i = 0
        while i < p.size:
            gid = (offset + i) // cap
            room = cap - (offset + i) % cap
            n = min(room, p.size - i)
            chip, core = divmod(gid, sys.cores_per_chip)
            y, x = divmod(chip, sys.mesh_width)
            segments.append(PlacementSegment(p.name, i, i + n, (x, y, core)))
            i += n
        offset += p.size

    layer_core = {}
    for d in net.dense_layers:
        x, y, c = d.core
        if not (0 <= x < sys.mesh_width and 0 <= y < sys.mesh_height and 0 <= c < sys.cores_per_chip):
            raise ValidationError(f"dense layer {d.name!r} assigned to nonexistent core {d.core}")
        layer_core[d.name] = (y * sys.mesh_width + x) * sys.cores_per_chip + c

    return Placement(sys.mesh_width, sys.mesh_height, sys.cores_per_chip, tuple(segments), core_of, local_of, layer_core)


def expand_projection(n_src: int, n_tgt: int, p: float, seed: int, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Bernoulli(p) draw for every (source, target) pair, in row-major pair order."""
    if p <= 0.0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if p >= 1.0:
        s = np.repeat(np.arange(n_src, dtype=np.int64), n_tgt)
        t = np.tile(np.arange(n_tgt, dtype=np.int64), n_src)
        return s, t
    stream = RngStream(derive_stream_id(seed, 2, index))
    thr = bernoulli_threshold(p)
    rows_per_chunk = max(1, _EXPAND_CHUNK // n_tgt)
    srcs, tgts = [], []
    for r0 in range(0, n_src, rows_per_chunk):
        r1 = min(n_src, r0 + rows_per_chunk)
        draws = stream.take((r1 - r0) * n_tgt)
        hit = np.flatnonzero(draws < thr)
        srcs.append(hit // n_tgt + r0)
        tgts.append(hit % n_tgt)
    return np.concatenate(srcs).astype(np.int64), np.concatenate(tgts).astype(np.int64)


def place_and_build(net: NetworkDesc, sys: SystemConfig) -> MachineBuild:
    """Place the network, assign keys and build per-core synapse tables."""
    if net.membrane_format != sys.accel.membrane_format or net.weight_format != sys.accel.weight_format:
        raise ValidationError("network fixed-point formats differ from the system's accel formats")
    placement = place(net, sys)
    keyspace = KeySpace(sys.key_layout)

    x, y, c = _coords_array(placement, placement.core_of)
    lay = sys.key_layout
    keys = (
        (x << (lay.y_bits + lay.core_bits + lay.neuron_bits))
        | (y << (lay.core_bits + lay.neuron_bits))
        | (c << lay.neuron_bits)
        | placement.local_of
    ).astype(np.int64)
    g_of_rank = np.argsort(keys, kind="stable")
    rank_of = np.empty_like(g_of_rank)
    rank_of[g_of_rank] = np.arange(keys.size)
    keys_by_rank = keys[g_of_rank]

    offsets = net.offsets()
    srcs, tgts, wts = [], [], []
    for i, pr in enumerate(net.projections):
        so, to = offsets[pr.source], offsets[pr.target]
        if pr.pairs is not None:
            arr = np.asarray(pr.pairs, dtype=np.int64).reshape(-1, 2)
            s, t = arr[:, 0], arr[:, 1]
        else:
            s, t = expand_projection(
                net.population(pr.source).size, net.population(pr.target).size, pr.probability, sys.seed, i
            )
        srcs.append(s + so)
        tgts.append(t + to)
        wts.append(np.full(s.size, pr.weight, dtype=np.int64))
    edges_src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
    edges_tgt = np.concatenate(tgts) if tgts else np.zeros(0, np.int64)
    edges_w = np.concatenate(wts) if wts else np.zeros(0, np.int64)

    tables = _synapse_tables(placement, rank_of, edges_src, edges_tgt, edges_w)

    dt = sys.timestep_exact
    alpha = {p.name: decay_factor(dt, Fraction(p.params.tau_m_us, 10**6)).raw for p in net.populations}

    stimulus: dict[int, list[StimulusSegment]] = {}
    cap = sys.max_neurons_per_core
    for st in net.stimuli:
        lo = offsets[st.target]
        hi = lo + net.population(st.target).size
        for gid in range(lo // cap, (hi - 1) // cap + 1):
            a, b = max(lo, gid * cap), min(hi, (gid + 1) * cap)
            stimulus.setdefault(gid, []).append(StimulusSegment(a - gid * cap, b - gid * cap, st.rate_hz, st.weight))

    return MachineBuild(
        sys=sys,
        net=net,
        placement=placement,
        keyspace=keyspace,
        keys=keys,
        rank_of=rank_of,
        g_of_rank=g_of_rank,
        keys_by_rank=keys_by_rank,
        edges_src=edges_src,
        edges_tgt=edges_tgt,
        edges_weight=edges_w,
        synapse_tables=tables,
        alpha_of_pop=alpha,
        stimulus=stimulus,
    )


def _coords_array(placement: Placement, gids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    chip, core = np.divmod(gids, placement.cores_per_chip)
    y, x = np.divmod(chip, placement.mesh_width)
    return x, y, core


def _synapse_tables(placement, rank_of, src, tgt, w) -> dict[int, SynapseTable]:
    if src.size == 0:
        return {}
    core = placement.core_of[tgt]
    local = placement.local_of[tgt]
    srank = rank_of[src]
    order = np.lexsort((local, srank, core))
    core, srank, local, w = core[order], srank[order], local[order], w[order]
    tables = {}
    bounds = np.flatnonzero(np.diff(core)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, core.size]):
        sr = srank[lo:hi]
        starts = np.r_[0, np.flatnonzero(np.diff(sr)) + 1]
        tables[int(core[lo])] = SynapseTable(
            src_rank=sr[starts].copy(),
            indptr=np.r_[starts, sr.size].astype(np.int64),
            target=local[lo:hi].copy(),
            weight=w[lo:hi].copy(),
        )
    return tables
