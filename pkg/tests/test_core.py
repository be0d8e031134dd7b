import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_system
from neuromesh.accel import RngStream
from neuromesh.config import CycleCostCoefficients, EnergyCoefficients, PerfLevel
from neuromesh.core import (
    CYCLE_MAX,
    CoreState,
    EnergyModel,
    core_energy,
    estimate_cycles,
    generate_stimulus,
    run_core_timestep,
    select_perf_level,
    spike_probability,
    step_neurons,
)
from neuromesh.fixedpoint import S16_15
from neuromesh.placement import StimulusSegment, SynapseTable

COST = CycleCostCoefficients()
LEVELS = (PerfLevel(100e6, 0.5), PerfLevel(200e6, 0.6), PerfLevel(400e6, 0.8))
ONE = S16_15.one


def core(v, alpha=ONE // 2, v_rest=0, v_reset=0, thr=ONE, seed=0):
    n = len(v)
    full = lambda x: np.full(n, x, np.int64)
    return CoreState(
        gid=0, coords=(0, 0, 0), v=np.array(v, np.int64), alpha=full(alpha), v_rest=full(v_rest),
        v_reset=full(v_reset), v_threshold=full(thr), rng=RngStream.for_core(seed, 0, 0, 0),
        membrane_format=S16_15, weight_shift=7,
    )


NO_EVENTS = (np.zeros(0, np.int64), np.zeros(0, np.int64))


def test_estimate_cycles_examples():
    assert estimate_cycles(0, 0, COST, False) == 1000
    assert estimate_cycles(100, 10, COST, False) == 3500
    assert estimate_cycles(100, 10, COST, True) == 1800
    assert estimate_cycles(10**30, 0, COST, False) == CYCLE_MAX


@given(st.integers(1, 10**6), st.integers(0, 10**4))
def test_accelerator_advantage(events, neurons):
    assert estimate_cycles(events, neurons, COST, True) < estimate_cycles(events, neurons, COST, False)


@pytest.mark.parametrize("cycles, mhz, miss", [(50_000, 100, False), (150_000, 200, False), (10**6, 400, True),
                                               (100_000, 100, False), (100_001, 200, False)])
def test_select_perf_level(cycles, mhz, miss):
    level, m = select_perf_level(cycles, LEVELS, 1e-3)
    assert level.frequency == mhz * 1e6
    assert m is miss


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_level_monotone_in_load(a, b):
    lo, hi = sorted((a, b))
    assert select_perf_level(lo, LEVELS, 1e-3)[0].frequency <= select_perf_level(hi, LEVELS, 1e-3)[0].frequency


def test_core_energy_examples():
    e = EnergyCoefficients(c_eff=10e-12, k_leak=1e-4)
    dyn, leak = core_energy(PerfLevel(100e6, 0.5), 0, 1e-3, e, False)
    assert dyn == 0 and leak > 0
    dyn, _ = core_energy(PerfLevel(100e6, 0.5), 10**5, 1e-3, e, False)
    assert dyn == pytest.approx(0.25e-6, rel=1e-12)
    hi, _ = core_energy(PerfLevel(100e6, 0.8), 10**5, 1e-3, e, False)
    assert hi / dyn == pytest.approx(2.56, rel=1e-12)
    _, leak_abb = core_energy(PerfLevel(100e6, 0.5), 0, 1e-3, e, True)
    assert leak_abb == pytest.approx(leak * e.abb_leak_factor)


def test_threshold_is_inclusive():
    st_ = core([ONE], v_reset=-ONE // 4)
    st_.alpha[:] = ONE  # no decay
    fired, _ = step_neurons(st_, *NO_EVENTS, COST, False)
    assert fired.tolist() == [0]
    assert st_.v.tolist() == [-ONE // 4]


def test_closed_form_decay_half():
    st_ = core([ONE])
    for _ in range(3):
        step_neurons(st_, *NO_EVENTS, COST, False)
    assert abs(st_.v[0] / ONE - 0.125) <= 3 / ONE


@pytest.mark.parametrize("tau_ms", [5, 10, 20])
def test_decay_tracks_double_within_ulp_per_step(tau_ms):
    from neuromesh.accel import decay_factor

    alpha = decay_factor(1e-3, tau_ms * 1e-3).raw
    st_ = core([ONE * 3 // 2], alpha=alpha, thr=10 * ONE)
    for k in range(1, 101):
        step_neurons(st_, *NO_EVENTS, COST, False)
        exact = 1.5 * math.exp(-k / tau_ms)
        assert abs(st_.v[0] / ONE - exact) <= k / ONE


def test_strong_input_fires_once():
    st_ = core([0, 0])
    fired, cycles = step_neurons(st_, np.array([1]), np.array([256]), COST, False)
    assert fired.tolist() == [1]
    assert cycles == estimate_cycles(1, 2, COST, False)


def test_saturation_is_counted():
    st_ = core([S16_15.max_raw - 5], thr=S16_15.max_raw, alpha=ONE)
    st_.v_reset[:] = 0
    fired, _ = step_neurons(st_, np.array([0]), np.array([10_000]), COST, False)
    assert st_.saturation_count == 1
    assert fired.tolist() == [0]


def test_idle_core_is_clock_gated():
    st_ = core([0, 0, 0])
    fired, cycles = step_neurons(st_, *NO_EVENTS, COST, False)
    assert fired.size == 0 and cycles == 0


def test_emitted_equals_threshold_crossings():
    rng = np.random.default_rng(0)
    st_ = core(rng.integers(-ONE, 2 * ONE, 500).tolist(), alpha=ONE)
    before = st_.v.copy()
    fired, _ = step_neurons(st_, *NO_EVENTS, COST, False)
    assert fired.tolist() == np.flatnonzero(before >= ONE).tolist()


def test_stimulus_rate_zero_draws_nothing():
    rng = RngStream(1)
    assert generate_stimulus(0.0, 1000, 1e-3, rng).size == 0
    assert rng.counter == 0


def test_stimulus_empirical_rate():
    rng = RngStream(2)
    hits = sum(generate_stimulus(1000.0, 1000, 1e-3, rng).size for _ in range(100))
    p = spike_probability(1000.0, 1e-3)
    assert p == pytest.approx(1 - math.exp(-1))
    assert abs(hits / 100_000 - p) <= 0.01


def test_stimulus_deterministic():
    a = generate_stimulus(300.0, 500, 1e-3, RngStream(3))
    b = generate_stimulus(300.0, 500, 1e-3, RngStream(3))
    assert np.array_equal(a, b)


def _run_core(rate, steps=1000, sys=None):
    sys = sys or make_system()
    model = EnergyModel(sys)
    budgets = sys.cycle_budgets()
    st_ = core([0] * 16, alpha=30000, seed=4)
    stim = [StimulusSegment(0, 16, rate, 200)]
    resolve = SynapseTable.empty().resolve
    dyn = 0
    for _ in range(steps):
        out = run_core_timestep(st_, resolve, stim, sys, budgets, model)
        dyn += out.dynamic_aj
    return dyn


def test_dynamic_energy_monotone_in_rate():
    energies = [_run_core(r) for r in (0, 10, 100, 500, 1000)]
    assert energies[0] == 0
    assert energies == sorted(energies)


def test_miss_recomputed_from_actual_cycles():
    # accel on: estimate = 1000 + 30*16 = 1480 fits the 1.5 MHz budget of 1500,
    # but 16 stimulus events add 5 cycles each at run time
    sys = make_system(perf_levels=[{"mhz": 1, "volts": 0.5}, {"mhz": 1.5, "volts": 0.6}])
    st_ = core([0] * 16, alpha=30000)
    out = run_core_timestep(st_, SynapseTable.empty().resolve, [StimulusSegment(0, 16, 1e6, 10)], sys,
                            sys.cycle_budgets(), EnergyModel(sys))
    assert out.estimated_cycles == 1480
    assert out.level_index == 1
    assert out.stimulus_events == 16
    assert out.actual_cycles == 1560
    assert out.miss
    assert st_.deadline_miss_count == 1
