"""Scenario documents: YAML text <-> validated schema <-> ScenarioConfig.

A scenario is validated in two passes. The schema pass (pydantic) checks
types, required fields and unknown keys; the invariant pass checks the
cross-field rules (depth ordering, multiplier mean, combination table
completeness, trigger bands). Every problem is reported with a dotted field
path and, when the document came from text, its line number.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .empc import EmpcConfig
from .errors import InvalidInputError, ScenarioValidationError
from .harness import ScenarioConfig
from .model import (LPS, CostWeights, DemandProfile, LinearConstraint, NetworkModel,
                    PumpComboRecord, PumpStationGroup, TankSpec, TariffSchedule,
                    diurnal_profile)
from .trigger import TriggerBand

SCHEMA_VERSION = 1
BUNDLED = "richmond_pruned.scn"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TankSection(_Strict):
    id: str
    area_m2: float = Field(gt=0)
    depth_min_m: float = Field(ge=0)
    depth_max_m: float
    depth_init_m: float


class ComboRow(_Strict):
    counts: List[int]
    flow_lps: float = Field(ge=0)
    power_kw: List[float]  # per station; the total is their sum
    head_m: Optional[List[Optional[float]]] = None
    efficiency: Optional[List[Optional[float]]] = None


class ConstraintRow(_Strict):
    coeffs: List[float]
    lo: Optional[float] = None
    hi: Optional[float] = None


class StationsSection(_Strict):
    names: List[str]
    max_counts: List[int]
    power_mode: Literal["table", "constant"] = "constant"
    p_kw: float = Field(default=40.21, ge=0)
    constraints: List[ConstraintRow] = []
    combos: List[ComboRow]


class TariffSection(_Strict):
    price_offpeak: float = Field(gt=0)
    price_peak: float = Field(gt=0)
    offpeak_window: List[float] = [0.0, 7.0]


class DemandSection(_Strict):
    base_lps: float = Field(ge=0)
    multipliers: Union[List[float], Literal["generated"]]


class EmpcSection(_Strict):
    horizon_steps: int = Field(default=24, ge=1)
    dt_control_s: float = Field(default=3600.0, gt=0)
    depth_grid_resolution_m: float = Field(default=0.005, gt=0)
    integer_prefix_steps: Optional[int] = None
    R: List[List[float]] = [[100.0, 0.0], [0.0, 50.0]]
    u_prev0: Optional[List[int]] = None


class BandRow(_Strict):
    pump: str
    station: int = Field(ge=1)  # 1-based, as pump stations are named
    on_below_m: float
    off_above_m: float


class TriggerSection(_Strict):
    bands: List[BandRow]
    initial_on: List[str] = []
    booster_interlock: bool = True


class ControllerSection(_Strict):
    kind: Literal["empc", "trigger"] = "empc"
    empc: EmpcSection = EmpcSection()
    trigger: TriggerSection


class SimulationSection(_Strict):
    hours: int = Field(default=96, ge=24)
    dt_plant_s: float = Field(default=300.0, gt=0)
    plant_mismatch: float = Field(default=1.0, gt=0)
    seed: Optional[int] = None


class ScenarioFile(_Strict):
    version: Literal[1]
    name: str = "scenario"
    tanks: List[TankSection]
    stations: StationsSection
    tariff: TariffSection
    demand: DemandSection
    controller: ControllerSection
    simulation: SimulationSection = SimulationSection()


# --- line lookup -----------------------------------------------------------------

def _line_index(text):
    """Map each YAML path (tuple of keys / list indices) to its 1-based line."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    index = {}

    def walk(node, path):
        index[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                index[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
                index[path + (k.value,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return index


def _line_for(index, loc):
    loc = tuple(loc)
    while loc:
        if loc in index:
            return index[loc]
        loc = loc[:-1]
    return None


def _dotted(loc):
    """``('tanks', 0, 'area_m2')`` -> ``'tanks.area_m2'`` (indices go in the message)."""
    name = ".".join(str(p) for p in loc if not isinstance(p, int))
    idx = [p for p in loc if isinstance(p, int)]
    return name or "<document>", idx


def _problem(index, loc, msg):
    name, idx = _dotted(loc)
    if idx:
        msg = f"[item {', '.join(map(str, idx))}] {msg}"
    return (name, _line_for(index, loc), msg)


# --- invariants --------------------------------------------------------------------

def _invariant_problems(doc: ScenarioFile):
    out = []
    if len(doc.tanks) != 1:
        out.append((("tanks",), "exactly one tank is supported"))
    for i, t in enumerate(doc.tanks):
        if not t.depth_min_m < t.depth_max_m:
            out.append((("tanks", i, "depth_max_m"), "must be > depth_min_m"))
        elif not t.depth_min_m <= t.depth_init_m <= t.depth_max_m:
            out.append((("tanks", i, "depth_init_m"), "must lie within [depth_min_m, depth_max_m]"))

    st = doc.stations
    n = len(st.max_counts)
    if len(st.names) != n:
        out.append((("stations", "names"), "one name per station required"))
    if any(m < 0 for m in st.max_counts):
        out.append((("stations", "max_counts"), "must be >= 0"))
    seen = set()
    for i, row in enumerate(st.combos):
        if len(row.counts) != n:
            out.append((("stations", "combos", i, "counts"), f"needs {n} entries"))
            continue
        if any(not 0 <= c <= m for c, m in zip(row.counts, st.max_counts)):
            out.append((("stations", "combos", i, "counts"), "outside [0, max_counts]"))
        if tuple(row.counts) in seen:
            out.append((("stations", "combos", i, "counts"), "duplicate combination"))
        seen.add(tuple(row.counts))
        if len(row.power_kw) != n or any(p < 0 for p in row.power_kw):
            out.append((("stations", "combos", i, "power_kw"),
                        f"needs {n} non-negative per-station values"))
        if not any(row.counts) and (row.flow_lps != 0 or any(row.power_kw)):
            out.append((("stations", "combos", i), "all-zero combination must have zero flow and power"))
        for key in ("head_m", "efficiency"):
            v = getattr(row, key)
            if v is not None and len(v) != n:
                out.append((("stations", "combos", i, key), f"needs {n} entries"))
    if (0,) * n not in seen:
        out.append((("stations", "combos"), "missing the all-zero combination row"))
    for i, c in enumerate(st.constraints):
        if len(c.coeffs) != n:
            out.append((("stations", "constraints", i, "coeffs"), f"needs {n} entries"))
    if not out:
        group_problem = _try(lambda: _group(doc))
        if group_problem:
            out.append((("stations", "combos"), group_problem))

    w = doc.tariff.offpeak_window
    if len(w) != 2 or any(not 0 <= h <= 24 for h in w):
        out.append((("tariff", "offpeak_window"), "must be [start_h, end_h] within [0, 24]"))

    m = doc.demand.multipliers
    if m != "generated":
        if len(m) != 24:
            out.append((("demand", "multipliers"), f"needs 24 hourly values, got {len(m)}"))
        elif any(v < 0 or not math.isfinite(v) for v in m):
            out.append((("demand", "multipliers"), "values must be finite and >= 0"))
        else:
            mean = math.fsum(m) / 24
            if abs(mean - 1.0) > 1e-9:
                out.append((("demand", "multipliers"), f"mean must be 1.0 (within 1e-9), got {mean:.6g}"))

    e = doc.controller.empc
    if e.integer_prefix_steps is not None and not 1 <= e.integer_prefix_steps <= e.horizon_steps:
        out.append((("controller", "empc", "integer_prefix_steps"), "must lie in [1, horizon_steps]"))
    if len(e.R) != n or any(len(r) != n for r in e.R):
        out.append((("controller", "empc", "R"), f"must be {n}x{n}"))
    else:
        p = _try(lambda: CostWeights(tuple(map(tuple, e.R)), st.p_kw))
        if p:
            out.append((("controller", "empc", "R"), p))
    if e.u_prev0 is not None and len(e.u_prev0) != n:
        out.append((("controller", "empc", "u_prev0"), f"needs {n} entries"))
    ratio = e.dt_control_s / doc.simulation.dt_plant_s
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        out.append((("simulation", "dt_plant_s"), "dt_control_s must be an integer multiple of it"))

    tr = doc.controller.trigger
    pumps = set()
    for i, b in enumerate(tr.bands):
        if not b.on_below_m < b.off_above_m:
            out.append((("controller", "trigger", "bands", i), "on_below_m must be < off_above_m"))
        if b.station > n:
            out.append((("controller", "trigger", "bands", i, "station"), f"no station {b.station}"))
        pumps.add(b.pump)
    for p in tr.initial_on:
        if p not in pumps:
            out.append((("controller", "trigger", "initial_on"), f"unknown pump {p!r}"))
    return out


def _try(fn):
    try:
        fn()
    except InvalidInputError as exc:
        return str(exc)
    return None


# --- public API ----------------------------------------------------------------------

def parse_scenario(text: str) -> ScenarioFile:
    """Parse and fully validate a scenario document.

    Raises ScenarioValidationError listing every problem found.
    """
    index = _line_index(text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioValidationError(
            [("<document>", mark.line + 1 if mark else None, f"not valid YAML: {exc}")]) from None
    if not isinstance(raw, dict):
        raise ScenarioValidationError([("<document>", 1, "expected a mapping at top level")])
    try:
        doc = ScenarioFile.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioValidationError(
            [_problem(index, e["loc"], e["msg"]) for e in exc.errors()]) from None
    problems = _invariant_problems(doc)
    if problems:
        raise ScenarioValidationError([_problem(index, loc, msg) for loc, msg in problems])
    return doc


def load_scenario(path) -> ScenarioFile:
    return parse_scenario(Path(path).read_text())


def dump_scenario(doc: ScenarioFile) -> str:
    return yaml.safe_dump(doc.model_dump(mode="json"), sort_keys=False,
                          default_flow_style=None, width=100)


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("empc_wds") / "data" / BUNDLED))


def bundled_scenario() -> ScenarioFile:
    return load_scenario(bundled_scenario_path())


def _group(doc: ScenarioFile) -> PumpStationGroup:
    st = doc.stations
    combos = []
    for row in st.combos:
        combos.append(PumpComboRecord(
            tuple(row.counts), row.flow_lps * LPS, math.fsum(row.power_kw),
            tuple(row.head_m) if row.head_m is not None else None,
            tuple(row.efficiency) if row.efficiency is not None else None,
            tuple(row.power_kw)))
    constraints = [LinearConstraint(tuple(c.coeffs),
                                    -math.inf if c.lo is None else c.lo,
                                    math.inf if c.hi is None else c.hi)
                   for c in st.constraints]
    return PumpStationGroup(tuple(st.max_counts), tuple(combos), st.power_mode,
                            tuple(constraints), tuple(st.names))


def multipliers_of(doc: ScenarioFile, seed=None) -> tuple:
    m = doc.demand.multipliers
    if m == "generated":
        return diurnal_profile(seed if seed is not None else doc.simulation.seed)
    return tuple(m)


def to_config(doc: ScenarioFile, controller: Optional[str] = None,
              base_demand_lps: Optional[float] = None,
              seed: Optional[int] = None) -> ScenarioConfig:
    """Build the runtime configuration, applying command-line overrides."""
    t = doc.tanks[0]
    seed = seed if seed is not None else doc.simulation.seed
    base = doc.demand.base_lps if base_demand_lps is None else base_demand_lps
    model = NetworkModel(
        tank=TankSpec(t.id, t.area_m2, t.depth_min_m, t.depth_max_m, t.depth_init_m),
        group=_group(doc),
        tariff=TariffSchedule(doc.tariff.price_offpeak, doc.tariff.price_peak,
                              *doc.tariff.offpeak_window),
        demand=DemandProfile(base * LPS, multipliers_of(doc, seed)),
    )
    e = doc.controller.empc
    empc_cfg = EmpcConfig(
        horizon_steps=e.horizon_steps, dt_control_s=e.dt_control_s,
        depth_grid_resolution_m=e.depth_grid_resolution_m,
        integer_prefix_steps=e.integer_prefix_steps,
        weights=CostWeights(tuple(map(tuple, e.R)), doc.stations.p_kw))
    tr = doc.controller.trigger
    bands = tuple(TriggerBand(b.pump, b.station - 1, b.on_below_m, b.off_above_m)
                  for b in tr.bands)
    return ScenarioConfig(
        model=model, controller=controller or doc.controller.kind, empc_cfg=empc_cfg,
        trigger_bands=bands, trigger_initial_on=tuple(tr.initial_on),
        booster_interlock=tr.booster_interlock, sim_hours=doc.simulation.hours,
        dt_plant_s=doc.simulation.dt_plant_s, plant_mismatch=doc.simulation.plant_mismatch,
        u_prev0=tuple(e.u_prev0) if e.u_prev0 is not None else None, seed=seed)
