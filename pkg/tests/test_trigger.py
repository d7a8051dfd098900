import pytest
from hypothesis import given
from hypothesis import strategies as st

from empc_wds.errors import InvalidInputError
from empc_wds.trigger import DEFAULT_BANDS, TriggerBand, TriggerState, trigger_step

IDS = [b.pump_id for b in DEFAULT_BANDS]


def _flags(state):
    return dict(zip(IDS, state.on_flags))


def test_default_bands_match_table():
    assert [(b.pump_id, b.on_below_m, b.off_above_m) for b in DEFAULT_BANDS] == [
        ("1A", 2.37, 2.98), ("2A", 1.40, 3.25), ("3A", 1.90, 3.11)]


def test_band_must_be_nonempty():
    with pytest.raises(InvalidInputError):
        TriggerBand("X", 0, 2.0, 2.0)


def test_unknown_initial_pump():
    with pytest.raises(InvalidInputError):
        TriggerState.with_on(["9Z"])


def test_pump_2a_turns_off_above_its_off_level():
    state, _ = trigger_step(TriggerState.with_on(["2A"]), 3.30)
    assert not _flags(state)["2A"]


def test_pump_1a_turns_on_below_its_on_level():
    state, counts = trigger_step(TriggerState.all_off(), 2.30)
    assert _flags(state)["1A"]
    assert counts == (1, 0)


def test_inside_bands_only_1a_reacts():
    prev = TriggerState.with_on(["3A"])
    state, counts = trigger_step(prev, 2.00)
    assert _flags(state) == {"1A": True, "2A": False, "3A": True}
    assert counts == (1, 1)


def test_two_ps1_pumps_give_the_20_combination():
    # the trigger controller is not bound by the EMPC admissibility filter
    state, counts = trigger_step(TriggerState.with_on(["1A", "2A"]), 2.5)
    assert counts == (2, 0)


def test_booster_interlock():
    alone = TriggerState.with_on(["3A"])
    _, counts = trigger_step(alone, 3.0)
    assert counts == (0, 0)
    state, counts = trigger_step(alone, 3.0, booster_interlock=False)
    assert counts == (0, 1)
    assert _flags(state)["3A"]  # latched either way


def test_flag_count_must_match_bands():
    with pytest.raises(InvalidInputError):
        trigger_step(TriggerState((True,)), 2.0)


flags = st.tuples(st.booleans(), st.booleans(), st.booleans()).map(TriggerState)
depth = st.floats(0.5, 4.0)


@given(flags, depth)
def test_hysteresis_holds_inside_band(state, x):
    new, _ = trigger_step(state, x)
    for before, after, band in zip(state.on_flags, new.on_flags, DEFAULT_BANDS):
        if band.on_below_m < x < band.off_above_m:
            assert after == before


@given(flags, depth, depth)
def test_monotone_response(state, x1, x2):
    lo, hi = sorted((x1, x2))
    at_lo, _ = trigger_step(state, lo)
    at_hi, _ = trigger_step(state, hi)
    for a, b in zip(at_lo.on_flags, at_hi.on_flags):
        assert a >= b  # a pump on at the higher depth is also on at the lower one


@given(flags, depth)
def test_deterministic(state, x):
    assert trigger_step(state, x) == trigger_step(state, x)
