"""Trigger-level (depth hysteresis) baseline pump controller."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidInputError


@dataclass(frozen=True)
class TriggerBand:
    pump_id: str
    station: int  # 0-based index of the station this pump belongs to
    on_below_m: float
    off_above_m: float

    def __post_init__(self):
        if not self.on_below_m < self.off_above_m:
            raise InvalidInputError(
                f"pump {self.pump_id}: on_below_m must be < off_above_m")


# Tank A trigger levels for pumps 1A, 2A (station 1) and 3A (station 2)
DEFAULT_BANDS = (
    TriggerBand("1A", 0, 2.37, 2.98),
    TriggerBand("2A", 0, 1.40, 3.25),
    TriggerBand("3A", 1, 1.90, 3.11),
)


@dataclass(frozen=True)
class TriggerState:
    on_flags: tuple

    @classmethod
    def all_off(cls, bands=DEFAULT_BANDS):
        return cls((False,) * len(bands))

    @classmethod
    def with_on(cls, pump_ids, bands=DEFAULT_BANDS):
        unknown = set(pump_ids) - {b.pump_id for b in bands}
        if unknown:
            raise InvalidInputError(f"unknown pump ids: {sorted(unknown)}")
        return cls(tuple(b.pump_id in pump_ids for b in bands))


def trigger_step(state: TriggerState, x: float, bands=DEFAULT_BANDS,
                 n_stations: int = 2, booster_interlock: bool = True):
    """Update the latched pump flags at depth ``x`` and aggregate to pump counts.

    A pump switches on at or below its ON level, off at or above its OFF
    level, and otherwise keeps its previous flag. With ``booster_interlock``
    a pump in a downstream station (index > 0) only counts as running while
    station 0 has a pump running; its flag stays latched either way.
    """
    if len(state.on_flags) != len(bands):
        raise InvalidInputError("one flag per trigger band required")
    flags = []
    for on, band in zip(state.on_flags, bands):
        if x <= band.on_below_m:
            on = True
        elif x >= band.off_above_m:
            on = False
        flags.append(on)
    counts = [0] * n_stations
    for on, band in zip(flags, bands):
        if on:
            counts[band.station] += 1
    if booster_interlock and counts[0] == 0:
        counts = [0] * n_stations
    return TriggerState(tuple(flags)), tuple(counts)
