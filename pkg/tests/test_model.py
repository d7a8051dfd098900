import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from empc_wds.errors import InadmissibleControlError, InvalidInputError
from empc_wds.model import (LPS, CostWeights, DemandProfile, LinearConstraint,
                            PumpComboRecord, PumpStationGroup, TankSpec, TariffSchedule,
                            demand_at, depth_in_bounds, diurnal_profile, is_admissible,
                            node_balance_residual, pump_flow, pump_power, richmond_pruned,
                            stage_cost_economic, stage_cost_switching, tank_update, tariff_at)

W = CostWeights.diag(100, 50)
CHAIN = [(0, 0), (1, 0), (1, 1), (2, 1)]


# --- tank_update ------------------------------------------------------------------

@pytest.mark.parametrize("x, q_in, q_out, expected", [
    (2.0, 0.0, 0.0, 2.0),
    (2.0, 0.025, 0.005, 2.072),
    (3.0, 0.0, 0.010, 2.964),
])
def test_tank_update_examples(x, q_in, q_out, expected):
    assert tank_update(x, q_in, q_out, 3600, 1000) == pytest.approx(expected, abs=1e-12)


def test_tank_update_does_not_clamp():
    assert tank_update(0.1, 0.0, 0.1, 3600, 100) < 0


@pytest.mark.parametrize("args", [
    (math.nan, 0, 0, 1, 1), (1.0, math.inf, 0, 1, 1), (1.0, 0, 0, 0, 1),
    (1.0, 0, 0, 1, -5), (1.0, -0.1, 0, 1, 1),
])
def test_tank_update_rejects_bad_input(args):
    with pytest.raises(InvalidInputError):
        tank_update(*args)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.06), st.floats(0, 0.06)), min_size=1, max_size=48),
       st.floats(50, 2000), st.floats(0, 5))
def test_mass_conservation(flows, area, x0):
    dt = 300.0
    x = x0
    for q_in, q_out in flows:
        x = tank_update(x, q_in, q_out, dt, area)
    net = math.fsum(dt * (a - b) for a, b in flows)
    lhs = (x - x0) * area
    assert lhs == pytest.approx(net, rel=1e-12, abs=1e-9)


# --- pump maps --------------------------------------------------------------------

def test_pump_flow_examples(model):
    g = model.group
    assert pump_flow(g, (0, 0)) == 0.0
    assert pump_flow(g, (1, 0)) == pytest.approx(25.21 * LPS)
    assert pump_flow(g, (2, 1)) == pytest.approx(57.88 * LPS)


def test_pump_flow_rejects_unknown_combo(model):
    with pytest.raises(InadmissibleControlError):
        pump_flow(model.group, (0, 1))


def test_pump_power_examples(model, table_model):
    assert pump_power(table_model.group, (1, 1), W) == pytest.approx(80.93)
    assert pump_power(model.group, (1, 1), W) == pytest.approx(80.42)
    for g in (model.group, table_model.group):
        assert pump_power(g, (0, 0), W) == 0.0


def test_flow_and_power_strictly_increase_along_admissible_chain(table_model):
    g = table_model.group
    flows = [pump_flow(g, u) for u in CHAIN]
    powers = [pump_power(g, u, W) for u in CHAIN]
    assert all(a < b for a, b in zip(flows, flows[1:]))
    assert all(a < b for a, b in zip(powers, powers[1:]))


# --- stage costs ------------------------------------------------------------------

def test_stage_cost_economic_examples(model, table_model):
    assert stage_cost_economic((2, 1), 2.41, 1, model.group, W) == pytest.approx(290.7183)
    assert stage_cost_economic((0, 0), 6.79, 1, model.group, W) == 0.0
    assert stage_cost_economic((1, 0), 6.79, 1, table_model.group, W) == pytest.approx(314.5128)


@pytest.mark.parametrize("du, expected", [((0, 0), 0.0), ((1, 1), 150.0), ((-1, 0), 100.0)])
def test_stage_cost_switching_examples(du, expected):
    assert stage_cost_switching(du, (0, 0), W.matrix) == expected


def test_stage_cost_switching_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        stage_cost_switching((1, 0, 0), (0, 0), W.matrix)


u_st = st.tuples(st.integers(0, 2), st.integers(0, 1))


@given(u_st, u_st)
def test_switching_cost_symmetric_and_zero_on_diagonal(u, v):
    R = W.matrix
    assert stage_cost_switching(u, u, R) == 0
    assert stage_cost_switching(u, v, R) == stage_cost_switching(v, u, R)


def test_cost_weights_validation():
    with pytest.raises(InvalidInputError):
        CostWeights(((1.0, 2.0), (0.0, 1.0)))  # not symmetric
    with pytest.raises(InvalidInputError):
        CostWeights(((1.0, 0.0), (0.0, -1.0)))  # negative eigenvalue
    assert CostWeights.diag(0, 0).matrix.sum() == 0


# --- tariff & demand --------------------------------------------------------------

def test_tariff_examples(model):
    t = model.tariff
    assert tariff_at(t, 3) == 2.41
    assert tariff_at(t, 12) == 6.79
    assert tariff_at(t, 27) == 2.41
    assert tariff_at(t, 7) == 6.79  # window is half-open


def test_tariff_window_wraps_midnight():
    t = TariffSchedule(1.0, 2.0, 22.0, 6.0)
    assert [tariff_at(t, h) for h in (21, 22, 23, 0, 5, 6)] == [2.0, 1.0, 1.0, 1.0, 1.0, 2.0]


def test_demand_examples():
    flat = (1.0,) * 24
    assert demand_at(DemandProfile(0.0, diurnal_profile()), 13) == 0.0
    assert demand_at(DemandProfile(25 * LPS, flat), 5) == pytest.approx(25 * LPS)
    p = DemandProfile(5 * LPS, diurnal_profile())
    assert demand_at(p, 9) == demand_at(p, 33)


@given(st.integers(0, 10_000), st.floats(0, 23.99))
def test_tariff_and_demand_are_24h_periodic(day, h):
    m = richmond_pruned(25)
    k = day * 24 + h
    assert tariff_at(m.tariff, k) == tariff_at(m.tariff, k + 24)
    assert demand_at(m.demand, k) == demand_at(m.demand, k + 24)


def test_demand_profile_validation():
    with pytest.raises(InvalidInputError):
        DemandProfile(0.005, (1.1,) * 24)
    with pytest.raises(InvalidInputError):
        DemandProfile(0.005, (1.0,) * 23)
    with pytest.raises(InvalidInputError):
        DemandProfile(-0.005, (1.0,) * 24)


@pytest.mark.parametrize("seed", [None, 0, 7, 12345])
def test_diurnal_profile_shape(seed):
    m = np.array(diurnal_profile(seed))
    assert m.size == 24
    assert abs(m.mean() - 1.0) <= 1e-9
    assert 0.2 <= m.min() and m.max() <= 1.8
    assert m[8] > m[3] and m[19] > m[14]  # morning and evening peaks


def test_diurnal_profile_seed_is_deterministic():
    assert diurnal_profile(3) == diurnal_profile(3)
    assert diurnal_profile(3) != diurnal_profile(4)


# --- admissibility & bounds -------------------------------------------------------

def test_is_admissible_examples(model):
    g = model.group
    assert not is_admissible(g, (2, 0))
    assert is_admissible(g, (2, 1))
    assert not is_admissible(g, (0, 1))


def test_exactly_four_admissible_vectors(model):
    g = model.group
    grid = [(a, b) for a in range(3) for b in range(2)]
    assert sorted(u for u in grid if is_admissible(g, u)) == sorted(CHAIN)
    assert set(g.admissible_controls()) == set(CHAIN)


@pytest.mark.parametrize("x, ok", [(1.4, True), (3.38, False), (3.12, True), (3.37, True)])
def test_depth_in_bounds(model, x, ok):
    assert depth_in_bounds(model.tank, x) is ok


@pytest.mark.parametrize("ins, outs, expected", [
    ([0.025], [0.025], 0.0), ([0.025, 0.018], [0.043], 0.0), ([0.025], [0.030], -0.005),
])
def test_node_balance_residual(ins, outs, expected):
    assert node_balance_residual(ins, outs) == pytest.approx(expected, abs=1e-15)


# --- construction invariants ------------------------------------------------------

def test_tank_spec_invariants():
    with pytest.raises(InvalidInputError):
        TankSpec("A", -1.0, 1.4, 3.37, 3.12)
    with pytest.raises(InvalidInputError):
        TankSpec("A", 400.0, 3.4, 3.37, 3.4)
    with pytest.raises(InvalidInputError):
        TankSpec("A", 400.0, 1.4, 3.37, 3.5)


def test_group_requires_every_admissible_combo():
    combos = (PumpComboRecord((0, 0), 0.0, 0.0), PumpComboRecord((1, 0), 0.025, 46.0))
    with pytest.raises(InvalidInputError):
        PumpStationGroup((2, 1), combos, "table", (LinearConstraint((1.0, -1.0), 0.0, 1.0),))


def test_group_requires_zero_combo():
    combos = (PumpComboRecord((1,), 0.025, 46.0),)
    with pytest.raises(InvalidInputError):
        PumpStationGroup((1,), combos, "table")


def test_zero_combo_must_have_zero_flow():
    with pytest.raises(InvalidInputError):
        PumpComboRecord((0, 0), 0.01, 0.0)


def test_heads_and_efficiencies_are_metadata_only(table_model):
    rec = table_model.group.record((1, 1))
    assert rec.heads_m == (105.48, 30.35)
    assert rec.efficiencies == (0.75, 0.60)
    assert sum(rec.station_power_kw) == pytest.approx(rec.power_kw)
