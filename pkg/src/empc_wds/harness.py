"""Closed-loop simulation of EMPC or trigger-level control on the flow-based plant.

The outer loop runs at the control interval (EMPC re-solves once per
interval); the inner loop integrates the tank at the plant substep. The plant
is the same flow-based model the controller uses, optionally with a
multiplicative error on delivered pump flow. Energy is always charged at the
tabulated power of the combination actually running, at the price of the
substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .empc import ControllerState, EmpcConfig, Plan, receding_horizon_step
from .errors import InfeasibleError, InvalidInputError
from .model import NetworkModel, demand_at, pump_flow, tank_update, tariff_at
from .trigger import DEFAULT_BANDS, TriggerState, trigger_step

CONTROLLERS = ("empc", "trigger")
TRACE_COLUMNS = ("time_s", "depth_m", "n1", "n2", "inflow_m3s", "demand_m3s",
                 "power_kw", "price_p_per_kwh", "energy_kwh", "cost_pence")
PUMP_IDS = ("1A", "2A", "3A")
DAY4 = (72, 96)


@dataclass(frozen=True)
class ScenarioConfig:
    model: NetworkModel
    controller: str = "empc"
    empc_cfg: EmpcConfig = field(default_factory=EmpcConfig)
    trigger_bands: tuple = DEFAULT_BANDS
    trigger_initial_on: tuple = ()
    booster_interlock: bool = True
    sim_hours: int = 96
    dt_plant_s: float = 300.0
    plant_mismatch: float = 1.0
    u_prev0: Optional[tuple] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise InvalidInputError(f"controller must be one of {CONTROLLERS}")
        if self.sim_hours < 24:
            raise InvalidInputError("sim_hours must be >= 24")
        if not self.dt_plant_s > 0:
            raise InvalidInputError("dt_plant_s must be > 0")
        ratio = self.empc_cfg.dt_control_s / self.dt_plant_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidInputError("dt_control must be an integer multiple of dt_plant")
        if not self.plant_mismatch > 0:
            raise InvalidInputError("plant_mismatch must be > 0")

    @property
    def substeps_per_control(self) -> int:
        return int(round(self.empc_cfg.dt_control_s / self.dt_plant_s))

    @property
    def n_control_steps(self) -> int:
        return int(round(self.sim_hours * 3600 / self.empc_cfg.dt_control_s))

    def with_demand(self, base_demand_m3s) -> "ScenarioConfig":
        return replace(self, model=self.model.with_demand(base_demand_m3s))


@dataclass
class SimulationTrace:
    """Column-oriented per-substep record; ``time_s`` is the end of each substep."""

    initial_depth_m: float
    dt_plant_s: float
    columns: dict = field(default_factory=lambda: {c: [] for c in TRACE_COLUMNS})
    plans: list = field(default_factory=list)  # (hour, Plan) for EMPC runs

    def append(self, **row):
        for c in TRACE_COLUMNS:
            self.columns[c].append(row[c])

    def __len__(self):
        return len(self.columns["time_s"])

    def array(self, name) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    def rows(self):
        for i in range(len(self)):
            yield {c: self.columns[c][i] for c in TRACE_COLUMNS}


@dataclass(frozen=True)
class PeriodMetrics:
    label: str
    volume_m3: float
    energy_kwh: float
    cost_pounds: float

    @property
    def cost_per_m3(self) -> Optional[float]:
        return self.cost_pounds / self.volume_m3 if self.volume_m3 > 0 else None


@dataclass(frozen=True)
class RunMetrics:
    total_volume_m3: float
    total_energy_kwh: float
    total_cost_pence: float
    per_day: tuple
    avg_efficiency: dict
    switch_count: int
    initial_depth_m: float
    final_depth_m: float
    min_depth_m: float
    max_depth_m: float
    total_demand_m3: float
    violations: tuple = ()
    failed: bool = False
    failure: Optional[str] = None
    failure_hour: Optional[int] = None

    @property
    def total_cost_pounds(self) -> float:
        return self.total_cost_pence / 100.0

    @property
    def cost_per_m3(self) -> Optional[float]:
        """Pounds per m^3 delivered; None when nothing was pumped."""
        if self.total_volume_m3 <= 0:
            return None
        return self.total_cost_pounds / self.total_volume_m3

    def day(self, index) -> Optional[PeriodMetrics]:
        return self.per_day[index] if index < len(self.per_day) else None

    def to_dict(self) -> dict:
        return {
            "total_volume_m3": self.total_volume_m3,
            "total_energy_kwh": self.total_energy_kwh,
            "total_cost_pence": self.total_cost_pence,
            "total_cost_pounds": self.total_cost_pounds,
            "cost_per_m3": self.cost_per_m3,
            "per_day": [{"day": p.label, "volume_m3": p.volume_m3,
                         "energy_kwh": p.energy_kwh, "cost_pounds": p.cost_pounds,
                         "cost_per_m3": p.cost_per_m3} for p in self.per_day],
            "avg_efficiency": dict(self.avg_efficiency),
            "switch_count": self.switch_count,
            "initial_depth_m": self.initial_depth_m,
            "final_depth_m": self.final_depth_m,
            "min_depth_m": self.min_depth_m,
            "max_depth_m": self.max_depth_m,
            "total_demand_m3": self.total_demand_m3,
            "violations": [{"time_s": t, "depth_m": x} for t, x in self.violations],
            "failed": self.failed,
            "failure": self.failure,
            "failure_hour": self.failure_hour,
        }


@dataclass(frozen=True)
class RunResult:
    trace: SimulationTrace
    metrics: RunMetrics

    def __iter__(self):
        return iter((self.trace, self.metrics))


def capacity_shortfall_hour(model: NetworkModel, max_hours: int = 10 ** 6) -> Optional[int]:
    """Hour at which the tank drops below its minimum under permanent maximum pumping.

    Returns None when the mean demand is within the admissible pumping
    capacity (the periodic cycle can be sustained).
    """
    cap = model.group.max_admissible_flow()
    if model.demand.mean_m3s <= cap:
        return None
    x = model.tank.depth_init_m
    day_loss = sum(model.demand.base_demand_m3s * m - cap for m in model.demand.multipliers)
    day_loss *= 3600.0 / model.tank.area_m2
    # skip whole days that certainly stay above the minimum
    lowest_in_day = 0.0
    run = 0.0
    for m in model.demand.multipliers:
        run -= (model.demand.base_demand_m3s * m - cap) * 3600.0 / model.tank.area_m2
        lowest_in_day = min(lowest_in_day, run)
    days = max(0, int((x + lowest_in_day - model.tank.depth_min_m) // day_loss) - 1)
    x -= days * day_loss
    for h in range(days * 24, max_hours):
        x += (cap - demand_at(model.demand, h)) * 3600.0 / model.tank.area_m2
        if x < model.tank.depth_min_m:
            return h
    return max_hours


def _efficiency_samples(rec, counts, acc):
    if rec.efficiencies is None:
        return
    n1, n2 = counts[0], counts[1] if len(counts) > 1 else 0
    e1, e2 = rec.efficiencies[0], rec.efficiencies[1] if len(rec.efficiencies) > 1 else None
    # a single PS1 pump is taken to be 2A
    if n1 >= 1 and e1 is not None:
        acc["2A"].append(e1)
    if n1 >= 2 and e1 is not None:
        acc["1A"].append(e1)
    if n2 >= 1 and e2 is not None:
        acc["3A"].append(e2)


def run_closed_loop(cfg: ScenarioConfig) -> RunResult:
    """Simulate ``cfg.sim_hours`` of closed-loop operation.

    EMPC infeasibility at some hour applies the maximum-flow admissible
    combination for that hour, then stops; the metrics carry the failure
    and the hour. A mean demand above pumping capacity is reported as a
    failure even if the tank happens to survive the simulated window.
    """
    model = cfg.model
    tank, group = model.tank, model.group
    n_sub = cfg.substeps_per_control
    dt = cfg.dt_plant_s
    dt_ctrl = cfg.empc_cfg.dt_control_s
    x = tank.depth_init_m
    u_prev = tuple(cfg.u_prev0) if cfg.u_prev0 is not None else (0,) * group.n_stations
    trig = TriggerState.with_on(cfg.trigger_initial_on, cfg.trigger_bands)
    trace = SimulationTrace(initial_depth_m=x, dt_plant_s=dt)
    eff = {p: [] for p in PUMP_IDS}
    violations = []
    failure = failure_hour = None
    u_applied = None
    switches = 0
    max_flow_u = max(group.admissible_controls(), key=lambda u: pump_flow(group, u))

    for k in range(cfg.n_control_steps):
        if cfg.controller == "empc":
            try:
                u_hour, plan = receding_horizon_step(
                    ControllerState(k, x, u_prev), model, cfg.empc_cfg)
                trace.plans.append((k, plan))
            except InfeasibleError as exc:
                u_hour = max_flow_u
                failure_hour = k
                failure = (f"EMPC infeasible at hour {k} (horizon step {exc.step}): {exc}; "
                           f"applied {u_hour} and stopped")
        for s in range(n_sub):
            t0 = k * dt_ctrl + s * dt
            hour = t0 / 3600.0
            if cfg.controller == "trigger":
                trig, u = trigger_step(trig, x, cfg.trigger_bands, group.n_stations,
                                       cfg.booster_interlock)
            else:
                u = u_hour
            rec = group.record(u)
            q_pump = rec.flow_m3s * cfg.plant_mismatch
            d = demand_at(model.demand, hour)
            # lumped topology: pump delivery = tank inflow, tank outflow = demand
            price = tariff_at(model.tariff, hour)
            energy = rec.power_kw * dt / 3600.0
            x = tank_update(x, q_pump, d, dt, tank.area_m2)
            if not (tank.depth_min_m - 1e-9 <= x <= tank.depth_max_m + 1e-9):
                violations.append((t0 + dt, x))
            if u_applied is not None and u != u_applied:
                switches += 1
            u_applied = u
            _efficiency_samples(rec, u, eff)
            trace.append(time_s=t0 + dt, depth_m=x, n1=u[0],
                         n2=u[1] if len(u) > 1 else 0, inflow_m3s=q_pump,
                         demand_m3s=d, power_kw=rec.power_kw,
                         price_p_per_kwh=price, energy_kwh=energy,
                         cost_pence=price * energy)
        u_prev = u_applied
        if failure is not None:
            break

    if failure is None and cfg.controller == "empc":
        h = capacity_shortfall_hour(model)
        if h is not None:
            failure_hour = h
            failure = (f"mean demand {model.demand.mean_m3s * 1e3:.2f} L/s exceeds "
                       f"pumping capacity {group.max_admissible_flow() * 1e3:.2f} L/s; "
                       f"tank empties at hour {h} even at full pumping")

    metrics = summarize(trace, cfg, eff, switches, violations, failure, failure_hour)
    return RunResult(trace, metrics)


def summarize(trace, cfg, eff=None, switches=0, violations=(), failure=None,
              failure_hour=None) -> RunMetrics:
    dt = trace.dt_plant_s
    inflow = trace.array("inflow_m3s")
    demand = trace.array("demand_m3s")
    energy = trace.array("energy_kwh")
    cost = trace.array("cost_pence")
    depth = trace.array("depth_m")
    start_s = trace.array("time_s") - dt
    per_day = []
    n_days = int(math.ceil(cfg.sim_hours / 24))
    for day in range(n_days):
        sel = (start_s >= day * 86400) & (start_s < (day + 1) * 86400)
        per_day.append(PeriodMetrics(f"D{day + 1}", math.fsum(inflow[sel] * dt),
                                     math.fsum(energy[sel]), math.fsum(cost[sel]) / 100.0))
    eff = eff or {}
    return RunMetrics(
        total_volume_m3=math.fsum(inflow * dt),
        total_energy_kwh=math.fsum(energy),
        total_cost_pence=math.fsum(cost),
        per_day=tuple(per_day),
        avg_efficiency={p: (float(np.mean(v)) if v else None) for p, v in eff.items()},
        switch_count=switches,
        initial_depth_m=trace.initial_depth_m,
        final_depth_m=float(depth[-1]) if len(depth) else trace.initial_depth_m,
        min_depth_m=float(depth.min()) if len(depth) else trace.initial_depth_m,
        max_depth_m=float(depth.max()) if len(depth) else trace.initial_depth_m,
        total_demand_m3=math.fsum(demand * dt),
        violations=tuple(violations),
        failed=failure is not None,
        failure=failure,
        failure_hour=failure_hour,
    )


def depth_at_hour(trace: SimulationTrace, hour: float) -> float:
    """Tank depth at the end of the substep finishing at ``hour``."""
    if hour == 0:
        return trace.initial_depth_m
    t = trace.array("time_s")
    i = int(np.argmin(np.abs(t - hour * 3600.0)))
    if abs(t[i] - hour * 3600.0) > 1e-6:
        raise ValueError(f"no trace record at hour {hour}")
    return float(trace.columns["depth_m"][i])


@dataclass(frozen=True)
class ComparisonReport:
    empc: RunMetrics
    trigger: RunMetrics
    cost_ratio: Optional[float]

    def day4(self):
        return self.empc.day(3), self.trigger.day(3)

    def to_dict(self) -> dict:
        e4, t4 = self.day4()
        row = lambda p: None if p is None else {
            "volume_m3": p.volume_m3, "energy_kwh": p.energy_kwh,
            "cost_pounds": p.cost_pounds, "cost_per_m3": p.cost_per_m3}
        return {
            "cost_ratio": None if self.cost_ratio is None else round(self.cost_ratio, 4),
            "cost_ratio_note": ("trigger cost per m3 / EMPC cost per m3"
                                if self.cost_ratio is not None
                                else "undefined: EMPC delivered no water"),
            "empc": {"total_volume_m3": self.empc.total_volume_m3,
                     "total_energy_kwh": self.empc.total_energy_kwh,
                     "total_cost_pounds": self.empc.total_cost_pounds,
                     "cost_per_m3": self.empc.cost_per_m3},
            "trigger": {"total_volume_m3": self.trigger.total_volume_m3,
                        "total_energy_kwh": self.trigger.total_energy_kwh,
                        "total_cost_pounds": self.trigger.total_cost_pounds,
                        "cost_per_m3": self.trigger.cost_per_m3},
            "day4": {"empc": row(e4), "trigger": row(t4)},
        }


def cost_ratio(empc_cost_per_m3, trigger_cost_per_m3) -> Optional[float]:
    if not empc_cost_per_m3:
        return None
    if trigger_cost_per_m3 is None:
        return None
    return trigger_cost_per_m3 / empc_cost_per_m3


def compare(empc_metrics: RunMetrics, trigger_metrics: RunMetrics) -> ComparisonReport:
    return ComparisonReport(empc_metrics, trigger_metrics,
                            cost_ratio(empc_metrics.cost_per_m3, trigger_metrics.cost_per_m3))
