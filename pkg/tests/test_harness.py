import math
from dataclasses import replace

import numpy as np
import pytest

from empc_wds.harness import (DAY4, ScenarioConfig, capacity_shortfall_hour, compare,
                              cost_ratio, depth_at_hour, run_closed_loop)
from empc_wds.errors import InvalidInputError
from empc_wds.model import LPS, DemandProfile, richmond_pruned


def _cfg(demand_lps, controller="empc", **kw):
    return ScenarioConfig(richmond_pruned(demand_lps), controller, **kw)


@pytest.fixture(scope="module")
def runs():
    """Both controllers at d = 5 L/s over the default 96 h."""
    return {c: run_closed_loop(_cfg(5, c)) for c in ("empc", "trigger")}


def test_config_validation():
    with pytest.raises(InvalidInputError):
        _cfg(5, "pid")
    with pytest.raises(InvalidInputError):
        _cfg(5, sim_hours=12)
    with pytest.raises(InvalidInputError):
        _cfg(5, dt_plant_s=700)


def test_idle_trigger_run_is_flat_and_free():
    cfg = _cfg(0, "trigger", trigger_initial_on=())
    trace, metrics = run_closed_loop(cfg)
    assert np.all(trace.array("depth_m") == 3.12)
    assert metrics.total_cost_pence == 0.0
    assert metrics.total_volume_m3 == 0.0


def test_trace_shape(runs):
    trace = runs["empc"].trace
    assert len(trace) == 96 * 3600 // 300
    t = trace.array("time_s")
    assert np.all(np.diff(t) > 0)
    assert t[0] == 300.0 and t[-1] == 96 * 3600.0


@pytest.mark.parametrize("controller", ["empc", "trigger"])
def test_energy_cost_and_volume_bookkeeping(runs, controller):
    trace, m = runs[controller]
    dt = 300.0
    energy = math.fsum(p * dt / 3600 for p in trace.columns["power_kw"])
    cost = math.fsum(pr * p * dt / 3600 for pr, p in
                     zip(trace.columns["price_p_per_kwh"], trace.columns["power_kw"]))
    volume = math.fsum(q * dt for q in trace.columns["inflow_m3s"])
    demand = math.fsum(d * dt for d in trace.columns["demand_m3s"])
    area = 500.0
    assert m.total_energy_kwh == pytest.approx(energy, rel=1e-9)
    assert m.total_cost_pence == pytest.approx(cost, rel=1e-9)
    assert m.total_volume_m3 == pytest.approx(volume, rel=1e-9)
    closure = area * (m.final_depth_m - m.initial_depth_m) + demand
    assert m.total_volume_m3 == pytest.approx(closure, rel=1e-9)


def test_per_day_sums_to_totals(runs):
    m = runs["trigger"].metrics
    assert len(m.per_day) == 4
    assert math.fsum(d.volume_m3 for d in m.per_day) == pytest.approx(m.total_volume_m3)
    assert math.fsum(d.energy_kwh for d in m.per_day) == pytest.approx(m.total_energy_kwh)
    assert math.fsum(d.cost_pounds for d in m.per_day) == pytest.approx(m.total_cost_pounds)
    assert m.cost_per_m3 == pytest.approx(m.total_cost_pounds / m.total_volume_m3)


def test_low_demand_empc_pumps_off_peak_and_beats_trigger(runs):
    trace, m = runs["empc"]
    pumping = (trace.array("n1") + trace.array("n2")) > 0
    assert pumping.any()
    assert np.all(trace.array("price_p_per_kwh")[pumping] == 2.41)
    assert m.total_cost_pence < runs["trigger"].metrics.total_cost_pence
    assert not m.violations and not m.failed


def test_trigger_run_charges_table_power_for_the_20_combination(runs):
    trace = runs["trigger"].trace
    n1, n2, p = trace.array("n1"), trace.array("n2"), trace.array("power_kw")
    both = (n1 == 2) & (n2 == 0)
    if both.any():
        assert np.all(p[both] == 87.03)
    assert set(zip(n1.astype(int), n2.astype(int))) <= {(0, 0), (1, 0), (2, 0), (1, 1), (2, 1)}


def test_over_capacity_demand_fails_with_hour():
    trace, m = run_closed_loop(_cfg(60))
    assert m.failed
    assert m.failure_hour is not None
    assert len(trace) < 96 * 12  # stopped early
    assert "infeasible" in m.failure
    # the failing hour still ran the maximum-flow combination
    last = slice(-12, None)
    assert set(zip(trace.array("n1")[last], trace.array("n2")[last])) == {(2, 1)}


def test_capacity_shortfall_hour():
    assert capacity_shortfall_hour(richmond_pruned(55)) is None
    flat = DemandProfile(58.5 * LPS, (1.0,) * 24)
    model = replace(richmond_pruned(), demand=flat)
    h = capacity_shortfall_hour(model)
    # 0.62 L/s net loss over 500 m2 empties the 1.72 m margin after ~308 h
    assert h == math.floor(1.72 * 500 / (0.62e-3 * 3600))


def test_deterministic_traces():
    a = run_closed_loop(_cfg(25, sim_hours=24))
    b = run_closed_loop(_cfg(25, sim_hours=24))
    assert a.trace.columns == b.trace.columns
    assert a.metrics == b.metrics


def test_plant_mismatch_scales_delivered_flow():
    trace, _ = run_closed_loop(_cfg(25, sim_hours=24, plant_mismatch=0.95))
    q = trace.array("inflow_m3s")
    assert set(np.round(q[q > 0] / 0.95 / LPS, 6)) <= {25.21, 30.82, 43.23, 57.88}


def test_depth_at_hour(runs):
    trace = runs["empc"].trace
    assert depth_at_hour(trace, 0) == 3.12
    assert depth_at_hour(trace, 1) == trace.columns["depth_m"][11]
    with pytest.raises(ValueError):
        depth_at_hour(trace, 0.01)


def test_cost_ratio_examples():
    assert cost_ratio(0.0134, 0.0328) == pytest.approx(2.4478, abs=1e-4)
    assert cost_ratio(0.02, 0.02) == 1.0
    assert cost_ratio(None, 0.02) is None


def test_compare_report(runs):
    rep = compare(runs["empc"].metrics, runs["trigger"].metrics)
    d = rep.to_dict()
    assert d["cost_ratio"] == round(rep.cost_ratio, 4)
    assert rep.cost_ratio >= 1.0
    e4, t4 = rep.day4()
    assert e4.label == t4.label
    assert DAY4 == (72, 96)
    assert set(d["day4"]) == {"empc", "trigger"}


def test_compare_reports_undefined_ratio_for_zero_volume():
    idle = run_closed_loop(_cfg(0, sim_hours=24)).metrics
    trig = run_closed_loop(_cfg(5, "trigger", sim_hours=24)).metrics
    rep = compare(idle, trig)
    assert rep.cost_ratio is None
    assert "undefined" in rep.to_dict()["cost_ratio_note"]


def test_high_demand_uses_two_ps1_pumps_only_off_peak():
    trace, m = run_closed_loop(_cfg(45))
    n1 = trace.array("n1")
    hour = ((trace.array("time_s") - 300.0) // 3600).astype(int) % 24
    assert (n1[hour < 7] == 2).any()
    assert np.all(n1[hour >= 7] == 1)
    assert not m.failed and m.min_depth_m >= 1.4
