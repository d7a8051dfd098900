"""Economic MPC and trigger-level pump scheduling for a tank-fed water network."""

from .empc import (ControllerState, EmpcConfig, Plan, SolveContext, brute_force_oracle,
                   count_switches, first_action, receding_horizon_step, solve)
from .errors import (EmpcWdsError, InadmissibleControlError, InfeasibleError,
                     InvalidInputError, ScenarioValidationError)
from .harness import (ScenarioConfig, SimulationTrace, RunMetrics, compare, cost_ratio,
                      run_closed_loop)
from .model import (CostWeights, DemandProfile, NetworkModel, PumpStationGroup, TankSpec,
                    TariffSchedule, demand_at, is_admissible, pump_flow, pump_power,
                    richmond_pruned, stage_cost_economic, stage_cost_switching, tank_update,
                    tariff_at)
from .trigger import DEFAULT_BANDS, TriggerBand, TriggerState, trigger_step

__version__ = "0.1.0"
