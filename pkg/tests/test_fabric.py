import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_system
from neuromesh.config import EnergyCoefficients
from neuromesh.errors import CapacityError
from neuromesh.fabric import (
    Direction,
    LinkState,
    RoutingEntry,
    RoutingTable,
    build_routing_tables,
    compile_routes,
    core_bit,
    dor_path,
    dump_tables,
    exchange_phase,
    link_bit,
    link_energy,
    route_packet,
)
from neuromesh.network import network_from_dict
from neuromesh.placement import place_and_build
from reference import brute_force_reach, random_network_doc


def build_for(doc, **sys_kw):
    sys = make_system(**sys_kw)
    b = place_and_build(network_from_dict(doc), sys)
    return sys, b, build_routing_tables(b)


def test_entry_invariants():
    with pytest.raises(ValueError):
        RoutingEntry(0x3, 0x1, core_bit(0))
    with pytest.raises(ValueError):
        RoutingEntry(0, 0xFFFFFFFF, 0)
    e = RoutingEntry(0x100, 0xFFFFFF00, link_bit(Direction.E) | core_bit(3))
    assert e.matches(0x1FF) and not e.matches(0x200)
    assert e.route_names() == ["E", "core3"]


def test_local_only_route():
    doc = {"populations": [{"name": "a", "size": 2}, {"name": "b", "size": 2}],
           "projections": [{"source": "a", "target": "b", "connectivity": {"probability": 1.0}, "weight": 1.0}]}
    sys, b, tables = build_for(doc, max_neurons_per_core=2)
    entries = tables[(0, 0)].entries
    assert len(entries) == 1  # both neurons share a target set -> merged
    e = entries[0]
    assert e.links == [] and e.cores == [1]
    assert e.mask == 0xFFFFFFFF & ~b.keyspace.neuron_mask
    assert all(not t.entries for chip, t in tables.items() if chip != (0, 0))


def test_dimension_order_path():
    path = dor_path((0, 0), (2, 1))
    assert [c for c, _ in path] == [(0, 0), (1, 0), (2, 0), (2, 1)]
    assert [d for _, d in path] == [Direction.E, Direction.E, Direction.N, None]


def test_tables_follow_x_then_y():
    # 3x2 mesh, 1 core/chip, 1 neuron/core: source on (0,0), target on (2,1)
    doc = {"populations": [{"name": "p", "size": 6}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 5]]}, "weight": 1.0}]}
    sys, b, tables = build_for(doc, mesh={"width": 3, "height": 2}, cores_per_chip=1, max_neurons_per_core=1)
    with_entries = sorted(chip for chip, t in tables.items() if t.entries)
    assert with_entries == sorted([(0, 0), (1, 0), (2, 0), (2, 1)])
    res = route_packet(int(b.keys[0]), (0, 0), tables, (3, 2))
    assert res.destinations == {(2, 1, 0)}
    assert res.hops == 3
    assert set(res.link_bits) == {(0, 0, Direction.E), (1, 0, Direction.E), (2, 0, Direction.N)}
    assert all(v == 40 for v in res.link_bits.values())


def test_distinct_target_sets_not_merged():
    doc = {"populations": [{"name": "p", "size": 6}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 2], [1, 4]]}, "weight": 1.0}]}
    sys, b, tables = build_for(doc, max_neurons_per_core=2)
    entries = tables[(0, 0)].entries
    assert len(entries) == 2
    assert all(e.mask == 0xFFFFFFFF for e in entries)


def test_unmatched_key_dropped():
    tables = {(0, 0): RoutingTable((0, 0), [RoutingEntry(0x10, 0xFFFFFFFF, core_bit(3))])}
    res = route_packet(0x10, (0, 0), tables, (1, 1))
    assert res.destinations == {(0, 0, 3)}
    miss = route_packet(0x11, (0, 0), tables, (1, 1))
    assert miss.destinations == set() and miss.dropped and miss.misses == 1


def test_first_match_wins():
    t = RoutingTable((0, 0), [RoutingEntry(0x10, 0xFFFFFFF0, core_bit(1)), RoutingEntry(0x11, 0xFFFFFFFF, core_bit(2))])
    assert t.lookup(0x11).cores == [1]


def test_table_capacity_error():
    doc = {"populations": [{"name": "p", "size": 6}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 2], [1, 4]]}, "weight": 1.0}]}
    sys = make_system(max_neurons_per_core=2, router={"table_capacity": 1})
    with pytest.raises(CapacityError, match=r"chip \(0, 0\): 2 entries"):
        build_routing_tables(place_and_build(network_from_dict(doc), sys))


def test_dump_format():
    doc = {"populations": [{"name": "p", "size": 2}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 1]]}, "weight": 1.0}]}
    # one neuron per core, so the entry masks out the neuron field
    _, _, tables = build_for(doc, max_neurons_per_core=1)
    assert dump_tables(tables) == "chip=(0,0) key=0x00000000 mask=0xfffff800 route=[core1]\n"


@pytest.mark.parametrize("seed", range(6))
def test_random_4x4_keys_match_oracle(seed):
    rng = random.Random(seed)
    doc = random_network_doc(rng, max_pop=64, max_pops=4)
    sys, b, tables = build_for(doc, mesh={"width": 4, "height": 4}, cores_per_chip=3, max_neurons_per_core=8)
    routes = compile_routes(b, tables)
    for _ in range(100):
        g = rng.randrange(b.keys.size)
        key = int(b.keys[g])
        home = b.placement.coords(int(b.placement.core_of[g]))[:2]
        oracle = brute_force_reach(key, home, tables, (4, 4))
        assert route_packet(key, home, tables, (4, 4)).destinations == oracle
        compiled = {b.placement.coords(int(c)) for c in routes.destinations(int(b.rank_of[g]))}
        assert compiled == oracle
        assert {b.placement.coords(c) for c in b.target_cores(g)} == oracle


def _routes_for_small():
    doc = random_network_doc(random.Random(11), max_pop=40)
    sys, b, tables = build_for(doc, mesh={"width": 3, "height": 3}, cores_per_chip=2, max_neurons_per_core=8)
    return sys, b, compile_routes(b, tables)


def test_exchange_no_packets():
    sys, b, routes = _routes_for_small()
    links = LinkState.idle(routes.n_links)
    ex = exchange_phase(np.zeros(0, np.int64), routes, links, 40)
    assert ex.inboxes == {} and ex.wakes.sum() == 0 and ex.emitted == 0


def test_exchange_one_link_and_repeats():
    doc = {"populations": [{"name": "p", "size": 2}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 1]]}, "weight": 1.0}]}
    sys, b, tables = build_for(doc, mesh={"width": 2, "height": 1}, cores_per_chip=1, max_neurons_per_core=1)
    routes = compile_routes(b, tables)
    links = LinkState.idle(routes.n_links)
    ex = exchange_phase(np.array([b.rank_of[0]]), routes, links, 40)
    lid = 0 * 6 + Direction.E
    assert ex.wakes[lid] == 1 and ex.bits[lid] == 40 and ex.wakes.sum() == 1
    assert ex.inboxes == {1: [b.rank_of[0]]} or ex.inboxes[1].tolist() == [b.rank_of[0]]
    ex = exchange_phase(np.array([b.rank_of[0]] * 5), routes, links, 40)
    assert ex.wakes[lid] == 1 and ex.bits[lid] == 200
    assert links.wake_count[lid] == 2 and links.total_bits[lid] == 240
    assert not links.powered.any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), max_size=60), st.randoms())
def test_exchange_order_independent(raw, rnd):
    sys, b, routes = _routes_for_small()
    ranks = [r % b.keys.size for r in raw]
    shuffled = list(ranks)
    rnd.shuffle(shuffled)
    a = exchange_phase(np.array(ranks, np.int64), routes, LinkState.idle(routes.n_links), 40)
    c = exchange_phase(np.array(shuffled, np.int64), routes, LinkState.idle(routes.n_links), 40)
    assert a.inboxes.keys() == c.inboxes.keys()
    for k in a.inboxes:
        assert np.array_equal(a.inboxes[k], c.inboxes[k])
        assert np.all(np.diff(a.inboxes[k]) >= 0)
    assert np.array_equal(a.bits, c.bits) and np.array_equal(a.wakes, c.wakes)
    assert a.emitted == a.delivered + a.dropped


def test_no_phantom_deliveries():
    sys, b, routes = _routes_for_small()
    ex = exchange_phase(np.arange(b.keys.size), routes, LinkState.idle(routes.n_links), 40)
    for gid, inbox in ex.inboxes.items():
        _, _, phantoms = b.synapse_tables[gid].resolve(inbox)
        assert phantoms == 0


def test_link_energy_examples():
    e = EnergyCoefficients(e_bit=1e-12, e_wake=100e-12)
    assert link_energy(0, 0, e) == 0.0
    assert link_energy(1000, 1, e) == pytest.approx(1.1e-9, rel=1e-15)
    base = link_energy(0, 3, e)
    assert link_energy(2000, 3, e) - base == pytest.approx(2 * (link_energy(1000, 3, e) - base), rel=1e-15)
