"""Flow-based network model: tank mass balance, pump tables, tariff, demand, stage costs.

Everything here is an immutable value or a pure function. Units are SI
internally: depths in m, flows in m^3/s, power in kW, energy in kWh,
prices in pence/kWh, money in pence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InadmissibleControlError, InvalidInputError

LPS = 1e-3  # m^3/s per L/s
HOURS_PER_DAY = 24


def _finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class TankSpec:
    id: str
    area_m2: float
    depth_min_m: float
    depth_max_m: float
    depth_init_m: float

    def __post_init__(self):
        _finite("tank parameters", self.area_m2, self.depth_min_m,
                self.depth_max_m, self.depth_init_m)
        if self.area_m2 <= 0:
            raise InvalidInputError(f"tank {self.id}: area_m2 must be > 0")
        if not 0 <= self.depth_min_m < self.depth_max_m:
            raise InvalidInputError(
                f"tank {self.id}: need 0 <= depth_min_m < depth_max_m")
        if not self.depth_min_m <= self.depth_init_m <= self.depth_max_m:
            raise InvalidInputError(
                f"tank {self.id}: depth_init_m outside [depth_min_m, depth_max_m]")

    @property
    def band_m(self) -> float:
        return self.depth_max_m - self.depth_min_m


@dataclass(frozen=True)
class PumpComboRecord:
    """One row of the pump-combination table.

    Heads, efficiencies and per-station powers are reporting metadata; they
    never enter the dynamics.
    """

    counts: tuple
    flow_m3s: float
    power_kw: float
    heads_m: Optional[tuple] = None
    efficiencies: Optional[tuple] = None
    station_power_kw: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        _finite("combo flow/power", self.flow_m3s, self.power_kw)
        if self.flow_m3s < 0 or self.power_kw < 0:
            raise InvalidInputError(f"combo {self.counts}: flow and power must be >= 0")
        if not any(self.counts) and (self.flow_m3s != 0 or self.power_kw != 0):
            raise InvalidInputError("all-zero combo must have zero flow and power")


@dataclass(frozen=True)
class LinearConstraint:
    """``lo <= coeffs . u <= hi`` on a pump-count vector."""

    coeffs: tuple
    lo: float = -math.inf
    hi: float = math.inf

    def holds(self, u) -> bool:
        s = sum(c * n for c, n in zip(self.coeffs, u))
        return self.lo <= s <= self.hi


POWER_MODES = ("table", "constant")


@dataclass(frozen=True)
class PumpStationGroup:
    """Pump stations feeding one tank, with their tabulated combinations.

    ``combos`` holds every tabulated row, including rows that the
    admissibility constraints exclude from optimization (a rule-based
    controller can still reach them). ``power_mode`` selects how the
    optimizer prices a combination: the tabulated total power, or
    ``(sum of counts) * p_kw``.
    """

    max_counts: tuple
    combos: tuple
    power_mode: str = "table"
    constraints: tuple = ()
    station_names: tuple = ()
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "max_counts", tuple(int(n) for n in self.max_counts))
        object.__setattr__(self, "combos", tuple(self.combos))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.power_mode not in POWER_MODES:
            raise InvalidInputError(f"power_mode must be one of {POWER_MODES}")
        dim = len(self.max_counts)
        index = {}
        for rec in self.combos:
            if len(rec.counts) != dim:
                raise InvalidInputError(f"combo {rec.counts} has wrong dimension")
            if any(not 0 <= n <= m for n, m in zip(rec.counts, self.max_counts)):
                raise InvalidInputError(f"combo {rec.counts} outside [0, {self.max_counts}]")
            if rec.counts in index:
                raise InvalidInputError(f"duplicate combo {rec.counts}")
            index[rec.counts] = rec
        if (0,) * dim not in index:
            raise InvalidInputError("combo table must contain the all-zero combination")
        object.__setattr__(self, "_index", index)
        missing = [u for u in self._admissible_box() if u not in index]
        if missing:
            raise InvalidInputError(f"admissible combos missing from table: {missing}")

    @property
    def n_stations(self) -> int:
        return len(self.max_counts)

    def _admissible_box(self):
        for u in itertools.product(*(range(m + 1) for m in self.max_counts)):
            if all(c.holds(u) for c in self.constraints):
                yield u

    def record(self, u) -> PumpComboRecord:
        try:
            return self._index[tuple(u)]
        except (KeyError, TypeError):
            raise InadmissibleControlError(f"no combo table row for {u!r}") from None

    def admissible_controls(self) -> list:
        """Admissible vectors in tie-break order: fewer pumps, then lower n_1, n_2, ..."""
        return sorted(self._admissible_box(), key=lambda u: (sum(u), *u))

    def max_admissible_flow(self) -> float:
        return max(self.record(u).flow_m3s for u in self.admissible_controls())


@dataclass(frozen=True)
class TariffSchedule:
    """Two-rate time-of-use tariff with a daily off-peak window ``[start, end)``.

    The window may wrap past midnight (``start > end``).
    """

    price_offpeak: float
    price_peak: float
    offpeak_start_h: float = 0.0
    offpeak_end_h: float = 7.0
    period_hours: int = HOURS_PER_DAY

    def __post_init__(self):
        _finite("tariff", self.price_offpeak, self.price_peak,
                self.offpeak_start_h, self.offpeak_end_h)
        if self.price_offpeak <= 0 or self.price_peak <= 0:
            raise InvalidInputError("tariff prices must be > 0")
        for h in (self.offpeak_start_h, self.offpeak_end_h):
            if not 0 <= h <= self.period_hours:
                raise InvalidInputError("off-peak window must lie within [0, 24]")

    def is_offpeak(self, k) -> bool:
        h = k % self.period_hours
        a, b = self.offpeak_start_h, self.offpeak_end_h
        if a <= b:
            return a <= h < b
        return h >= a or h < b


@dataclass(frozen=True)
class DemandProfile:
    base_demand_m3s: float
    multipliers: tuple

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))
        _finite("demand", self.base_demand_m3s, *self.multipliers)
        if self.base_demand_m3s < 0:
            raise InvalidInputError("base demand must be >= 0")
        if len(self.multipliers) != HOURS_PER_DAY:
            raise InvalidInputError("demand profile needs exactly 24 multipliers")
        if min(self.multipliers) < 0:
            raise InvalidInputError("demand multipliers must be >= 0")
        mean = sum(self.multipliers) / HOURS_PER_DAY
        if abs(mean - 1.0) > 1e-9:
            raise InvalidInputError(f"demand multipliers must have mean 1.0, got {mean:.12g}")

    def with_base(self, base_demand_m3s: float) -> "DemandProfile":
        return DemandProfile(base_demand_m3s, self.multipliers)

    @property
    def mean_m3s(self) -> float:
        return self.base_demand_m3s * sum(self.multipliers) / HOURS_PER_DAY


@dataclass(frozen=True)
class CostWeights:
    """Switching-penalty matrix and per-pump constant power.

    ``R`` must be symmetric with non-negative eigenvalues; ``R = 0`` is
    accepted so the penalty can be switched off for comparisons.
    """

    R: tuple
    p_kw: float = 40.21

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1] or not np.all(np.isfinite(R)):
            raise InvalidInputError("R must be a finite square matrix")
        if not np.allclose(R, R.T):
            raise InvalidInputError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() < -1e-12:
            raise InvalidInputError("R must be positive semi-definite")
        object.__setattr__(self, "R", tuple(tuple(row) for row in R.tolist()))
        _finite("p_kw", self.p_kw)
        if self.p_kw < 0:
            raise InvalidInputError("p_kw must be >= 0")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.R, dtype=float)

    @classmethod
    def diag(cls, *weights, p_kw=40.21):
        return cls(tuple(tuple(w if i == j else 0.0 for j in range(len(weights)))
                         for i, w in enumerate(weights)), p_kw)


@dataclass(frozen=True)
class NetworkModel:
    """Single-tank network: pump stations fill the tank, one demand node drains it."""

    tank: TankSpec
    group: PumpStationGroup
    tariff: TariffSchedule
    demand: DemandProfile

    def with_demand(self, base_demand_m3s: float) -> "NetworkModel":
        return NetworkModel(self.tank, self.group, self.tariff,
                            self.demand.with_base(base_demand_m3s))


# --- pure evaluation functions ---------------------------------------------

def tank_update(x, q_in, q_out, dt, area):
    """Depth after ``dt`` seconds of constant net inflow. No clamping."""
    _finite("tank_update input", x, q_in, q_out, dt, area)
    if area <= 0 or dt <= 0:
        raise InvalidInputError("area and dt must be > 0")
    if q_in < 0 or q_out < 0:
        raise InvalidInputError("flows must be >= 0")
    return x + (dt / area) * (q_in - q_out)


def pump_flow(group: PumpStationGroup, u) -> float:
    return group.record(u).flow_m3s


def pump_power(group: PumpStationGroup, u, weights: CostWeights) -> float:
    rec = group.record(u)
    if group.power_mode == "table":
        return rec.power_kw
    return sum(rec.counts) * weights.p_kw


def stage_cost_economic(u, price, dt, group, weights) -> float:
    """Energy cost in pence of running ``u`` for ``dt`` hours at ``price`` pence/kWh."""
    if not dt > 0:
        raise InvalidInputError("dt must be > 0")
    return price * pump_power(group, u, weights) * dt


def stage_cost_switching(u, u_prev, R) -> float:
    R = np.atleast_2d(np.asarray(R, dtype=float))
    u, u_prev = np.asarray(u, dtype=float), np.asarray(u_prev, dtype=float)
    if u.shape != u_prev.shape or u.shape != (R.shape[0],):
        raise InvalidInputError(
            f"dimension mismatch: u {u.shape}, u_prev {u_prev.shape}, R {R.shape}")
    du = u - u_prev
    return float(du @ R @ du)


def tariff_at(schedule: TariffSchedule, k) -> float:
    return schedule.price_offpeak if schedule.is_offpeak(k) else schedule.price_peak


def demand_at(profile: DemandProfile, k) -> float:
    return profile.base_demand_m3s * profile.multipliers[int(math.floor(k)) % HOURS_PER_DAY]


def is_admissible(group: PumpStationGroup, u) -> bool:
    u = tuple(u)
    if len(u) != group.n_stations:
        return False
    if any(not 0 <= n <= m for n, m in zip(u, group.max_counts)):
        return False
    return all(c.holds(u) for c in group.constraints)


def depth_in_bounds(tank: TankSpec, x) -> bool:
    return tank.depth_min_m <= x <= tank.depth_max_m


def node_balance_residual(inflows: Sequence[float], outflows: Sequence[float]) -> float:
    return math.fsum(inflows) - math.fsum(outflows)


# --- reference instance ------------------------------------------------------

def diurnal_profile(seed: Optional[int] = None, jitter: float = 0.08) -> tuple:
    """Smooth double-peak 24-h multiplier curve, normalized to mean 1.0.

    Morning peak near 08:00, evening peak near 19:30, night trough around
    0.4; values stay within [0.2, 1.8]. With a seed, each hour gets a multiplicative perturbation of up to
    ``jitter`` before renormalization.
    """
    h = np.arange(HOURS_PER_DAY) + 0.5
    m = (0.35 + 1.15 * np.exp(-0.5 * ((h - 8.0) / 2.0) ** 2)
         + 0.95 * np.exp(-0.5 * ((h - 19.5) / 2.5) ** 2))
    if seed is not None:
        rng = np.random.default_rng(seed)
        m = m * (1.0 + rng.uniform(-jitter, jitter, size=m.size))
    m = m / m.mean()
    for _ in range(20):  # keep the perturbed curve inside [0.2, 1.8]
        if m.min() >= 0.2 and m.max() <= 1.8:
            break
        m = np.clip(m, 0.21, 1.79)
        m = m / m.mean()
    m = np.round(m, 6)
    m[-1] = round(HOURS_PER_DAY - math.fsum(m[:-1]), 6)  # mean 1 after rounding
    return tuple(float(v) for v in m)


RICHMOND_COMBOS = (
    PumpComboRecord((0, 0), 0.0, 0.0, station_power_kw=(0.0, 0.0)),
    PumpComboRecord((1, 0), 25.21 * LPS, 46.32, (123.88, None), (0.66, None), (46.32, 0.0)),
    PumpComboRecord((2, 0), 30.82 * LPS, 87.03, (126.92, None), (0.44, None), (87.03, 0.0)),
    PumpComboRecord((1, 1), 43.23 * LPS, 80.93, (105.48, 30.35), (0.75, 0.60), (59.52, 21.41)),
    PumpComboRecord((2, 1), 57.88 * LPS, 120.64, (121.63, 27.42), (0.70, 0.70), (98.45, 22.19)),
)

# n_1 >= n_2 and n_1 - n_2 <= 1
RICHMOND_CONSTRAINTS = (LinearConstraint((1.0, -1.0), 0.0, 1.0),)


def richmond_pruned(base_demand_lps: float = 5.0, power_mode: str = "constant",
                    area_m2: float = 500.0) -> NetworkModel:
    """The bundled single-tank, two-station reference network."""
    return NetworkModel(
        tank=TankSpec("A", area_m2, 1.4, 3.37, 3.12),
        group=PumpStationGroup((2, 1), RICHMOND_COMBOS, power_mode,
                               RICHMOND_CONSTRAINTS, ("PS1", "PS2")),
        tariff=TariffSchedule(2.41, 6.79, 0.0, 7.0),
        demand=DemandProfile(base_demand_lps * LPS, diurnal_profile()),
    )
