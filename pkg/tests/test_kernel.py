import json
import random

import numpy as np
import pytest

from conftest import make_system
from neuromesh.config import parse_system_config
from neuromesh.kernel import Simulation, capacity_ratio, config_digest, run_simulation
from neuromesh.ledger import CATEGORIES, EnergyLedger
from neuromesh.network import network_from_dict
from neuromesh.report import dumps_stable
from reference import random_network_doc

FEEDFWD = {
    "populations": [{"name": "a", "size": 20}, {"name": "b", "size": 30}],
    "projections": [{"source": "a", "target": "b", "connectivity": {"probability": 1.0}, "weight": 0.125}],
    "stimuli": [{"target": "a", "rate_hz": 400.0, "weight": 1.0}],
    "dense_layers": [{"name": "m", "rows": 3, "cols": 20, "weights": [[1] * 20, [-2] * 20, list(range(-10, 10))],
                      "input": {"population": "a"}, "core": [1, 1, 0]}],
}


def sim_for(doc, **kw):
    return Simulation(make_system(**kw.pop("sys", {})), network_from_dict(doc), **kw)


def test_zero_steps_is_empty():
    rep = run_simulation(make_system(), network_from_dict(FEEDFWD), 0)
    assert rep.steps == 0
    assert rep.series == []
    assert all(rep.energy_aj(c) == 0 for c in CATEGORIES)
    assert rep.counter("spikes_emitted") == 0


def test_quiescent_machine():
    doc = {"populations": [{"name": "a", "size": 50}],
           "projections": [{"source": "a", "target": "a", "connectivity": {"probability": 0.2}, "weight": 1.0}]}
    with sim_for(doc) as sim:
        for _ in range(20):
            rec = sim.advance()
            assert rec.emitted == 0
            assert all(o.level_index == 0 for o in rec.outcomes)
        rep = sim.report()
    assert rep.energy_aj("core_dynamic") == 0
    assert rep.energy_aj("link") == 0
    assert rep.energy_aj("mac") == 0
    assert rep.energy_aj("core_leakage") > 0
    assert rep.totals["lowest_level_fraction"] == 1.0


def test_one_spike_to_neighbour_chip():
    doc = {"populations": [{"name": "p", "size": 2, "params": {"v_rest": 0.0, "v_threshold": 1.0}}],
           "projections": [{"source": "p", "target": "p", "connectivity": {"pairs": [[0, 1]]}, "weight": 0.25}],
           "stimuli": []}
    sys = make_system(cores_per_chip=1, max_neurons_per_core=1)
    with Simulation(sys, network_from_dict(doc)) as sim:
        sim.cores[0].v[:] = 2 << 15  # still above threshold after decay
        rec = sim.advance()
        assert rec.emitted == 1 and rec.delivered == 1 and rec.wakes == 1
        assert sim.cores[1].inbox.tolist() == [sim.build.rank_of[0]]
        assert sum(c.inbox.size for c in sim.cores) == 1
        rec = sim.advance()
        assert rec.outcomes[1].inbox_events == 1


def test_conservation_every_step():
    doc = random_network_doc(random.Random(5), max_total=256)
    with sim_for(doc) as sim:
        for _ in range(50):
            rec = sim.advance()
            assert rec.emitted == rec.delivered + rec.dropped
        c = sim.ledger.counters
        assert c["spikes_emitted"] == c["packets_delivered"] + c["packets_dropped"]


def test_ledger_additivity_over_steps():
    with sim_for(FEEDFWD) as sim:
        totals = {c: 0 for c in CATEGORIES}
        for _ in range(100):
            rec = sim.advance()
            totals["core_dynamic"] += rec.dynamic_aj
            totals["core_leakage"] += rec.leakage_aj
            totals["link"] += rec.link_aj
            totals["mac"] += rec.mac_aj
        assert totals == sim.ledger.totals
        sim.ledger.check()


def test_checkpoint_resume_equivalence():
    net = network_from_dict(FEEDFWD)
    sys = make_system()
    with Simulation(sys, net, trace=True) as whole:
        whole.run(70)
        expect = whole.report().to_json()
    with Simulation(sys, net, trace=True) as first:
        first.run(30)
        snap = json.loads(dumps_stable(first.snapshot()))
    with Simulation(sys, net, trace=True) as second:
        second.restore(snap)
        second.run(40)
        assert second.report().to_json() == expect


def test_restore_rejects_other_config():
    with sim_for(FEEDFWD) as sim:
        snap = sim.snapshot()
    other = dict(FEEDFWD, stimuli=[])
    with sim_for(other) as sim, pytest.raises(ValueError, match="different"):
        sim.restore(snap)


def test_worker_count_invisible():
    doc = random_network_doc(random.Random(8), max_total=256)
    outs = []
    for workers in (1, 3, 8):
        with sim_for(doc, workers=workers, trace=True) as sim:
            sim.run(60)
            outs.append(sim.report().to_json())
    assert outs[0] == outs[1] == outs[2]


def test_mac_layer_output_and_entries():
    with sim_for(FEEDFWD) as sim:
        w = np.array(FEEDFWD["dense_layers"][0]["weights"])
        rec = sim.advance()
        mac = [o for o in rec.outcomes if o.mac][0].mac[0]
        assert mac.output.tolist() == [0, 0, 0]  # no spikes before step 0
        assert mac.cycles > 0 and rec.mac_aj > 0
        fired_a = sim.last_fired[:20].astype(int)
        rec2 = sim.advance()
        mac2 = [o for o in rec2.outcomes if o.mac][0].mac[0]
        assert mac2.output.tolist() == (w @ fired_a).tolist()
        assert sim.layer_stats["m"].invocations == 2
        assert [r["mac_aj"] > 0 for r in sim.series] == [True, True]


def test_mac_cycles_not_charged_to_core():
    no_mac = dict(FEEDFWD, dense_layers=[])
    a = run_simulation(make_system(), network_from_dict(FEEDFWD), 30)
    b = run_simulation(make_system(), network_from_dict(no_mac), 30)
    assert a.energy_aj("core_dynamic") == b.energy_aj("core_dynamic")
    assert a.energy_aj("mac") > 0 == b.energy_aj("mac")


def test_raster_truncation():
    with sim_for(FEEDFWD, trace=True, trace_cap=5) as sim:
        sim.run(20)
        rep = sim.report()
    assert len(rep.raster) == 5
    assert rep.raster_truncated


def test_digest_stable():
    net = network_from_dict(FEEDFWD)
    assert config_digest(make_system(), net) == config_digest(make_system(), network_from_dict(FEEDFWD))
    assert config_digest(make_system(), net) != config_digest(make_system(seed=2), net)


def test_capacity_ratio_examples(tmp_path):
    base = {"mesh": {"width": 10, "height": 10}, "cores_per_chip": 10, "perf_levels": [{"mhz": 200, "volts": 1.0}],
            "accel": {"enabled": False}, "cost": {"c_syn_sw": 25}}
    a = parse_system_config(json.dumps(base))
    same = capacity_ratio(a, a)
    assert same.to_dict()["capacity_ratio"] == same.to_dict()["core_ratio"] == 1.0
    big = dict(base, mesh={"width": 10, "height": 100})
    assert capacity_ratio(a, parse_system_config(json.dumps(big))).core_ratio == 10
    gen2 = dict(big, perf_levels=[{"mhz": 400, "volts": 1.0}], accel={"enabled": True}, cost={"c_syn_sw": 25, "c_syn_acc": 10})
    rep = capacity_ratio(a, parse_system_config(json.dumps(gen2)))
    assert rep.per_core_throughput_ratio == 5
    assert rep.capacity_ratio == 50


def test_ledger_state_roundtrip():
    led = EnergyLedger()
    led.add("link", 3, 10)
    led.add("mac", "m", 5)
    led.count("hops", 4)
    again = EnergyLedger.from_state(json.loads(json.dumps(led.to_state())))
    assert again.totals == led.totals and again.counters == led.counters
    with pytest.raises(ValueError):
        led.add("link", 0, -1)
