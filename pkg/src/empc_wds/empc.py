"""Receding-horizon economic MPC solved by dynamic programming on a depth grid.

The finite-horizon problem has a scalar state (tank depth) and a handful of
admissible pump combinations, so it is solved exactly up to depth
quantization: a backward pass builds the cost-to-go on a
``(step, depth bin, previous control)`` grid, and a forward pass propagates
the *exact* depth from the measured value, picking at each step the control
that minimizes stage cost plus the cost-to-go at the nearest bin. If the
greedy forward pass dead-ends (quantization can make a bin look feasible
when the exact depth is not), it backtracks.

``brute_force_oracle`` enumerates every admissible sequence with exact depth
propagation and serves as ground truth for short horizons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InfeasibleError, InvalidInputError
from .model import (CostWeights, NetworkModel, demand_at, pump_flow, pump_power,
                    tariff_at)

ORACLE_MAX_STEPS = 10
_BOUND_TOL = 1e-9
_TIE_TOL = 1e-9


@dataclass(frozen=True)
class EmpcConfig:
    horizon_steps: int = 24
    dt_control_s: float = 3600.0
    depth_grid_resolution_m: float = 0.005
    integer_prefix_steps: Optional[int] = None  # None means the whole horizon
    weights: CostWeights = field(default_factory=lambda: CostWeights.diag(100.0, 50.0))
    search_budget: int = 200_000
    improve_budget: int = 2_000

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise InvalidInputError("horizon_steps must be >= 1")
        if not self.depth_grid_resolution_m > 0:
            raise InvalidInputError("depth_grid_resolution_m must be > 0")
        if not self.dt_control_s > 0:
            raise InvalidInputError("dt_control_s must be > 0")
        p = self.prefix
        if not 1 <= p <= self.horizon_steps:
            raise InvalidInputError("integer_prefix_steps must lie in [1, horizon_steps]")

    @property
    def prefix(self) -> int:
        if self.integer_prefix_steps is None:
            return self.horizon_steps
        return self.integer_prefix_steps

    @property
    def dt_hours(self) -> float:
        return self.dt_control_s / 3600.0


@dataclass(frozen=True)
class SolveContext:
    x_measured: float
    u_prev: tuple
    demand_forecast: tuple
    tariff_forecast: tuple

    def __post_init__(self):
        object.__setattr__(self, "u_prev", tuple(self.u_prev))
        object.__setattr__(self, "demand_forecast", tuple(float(d) for d in self.demand_forecast))
        object.__setattr__(self, "tariff_forecast", tuple(float(p) for p in self.tariff_forecast))
        if len(self.demand_forecast) != len(self.tariff_forecast):
            raise InvalidInputError("demand and tariff forecasts differ in length")
        if not self.demand_forecast:
            raise InvalidInputError("forecasts must be non-empty")
        if not math.isfinite(self.x_measured):
            raise InvalidInputError("x_measured must be finite")

    @property
    def horizon(self) -> int:
        return len(self.demand_forecast)


@dataclass(frozen=True)
class Plan:
    controls: tuple
    predicted_depths: tuple
    total_cost: float
    economic_cost: float
    switching_cost: float

    @property
    def switch_count(self) -> int:
        """Changes between consecutive planned controls (excludes the change from u_prev)."""
        return count_switches(self.controls)


def count_switches(controls, u_prev=None) -> int:
    """Number of control changes along ``controls``, counting the first against ``u_prev``."""
    seq = list(controls) if u_prev is None else [tuple(u_prev)] + list(controls)
    return sum(1 for a, b in zip(seq, seq[1:]) if tuple(a) != tuple(b))


def first_action(plan: Plan) -> tuple:
    if not plan.controls:
        raise ValueError("plan has no controls")
    return plan.controls[0]


# --- candidate controls --------------------------------------------------------

@dataclass(frozen=True)
class _Candidate:
    counts: tuple
    flow: float
    power: float
    relaxed: bool = False


_RELAX_FRACTIONS = (0.25, 0.5, 0.75)


def _candidates(model: NetworkModel, weights: CostWeights, relaxed: bool):
    group = model.group
    ints = [_Candidate(u, pump_flow(group, u), pump_power(group, u, weights))
            for u in group.admissible_controls()]
    if not relaxed:
        return ints
    # Relaxed steps may also time-share between flow-adjacent combinations;
    # flow, power and counts are interpolated linearly.
    chain = sorted(ints, key=lambda c: c.flow)
    extra = []
    for a, b in zip(chain, chain[1:]):
        for lam in _RELAX_FRACTIONS:
            extra.append(_Candidate(
                tuple((1 - lam) * na + lam * nb for na, nb in zip(a.counts, b.counts)),
                (1 - lam) * a.flow + lam * b.flow,
                (1 - lam) * a.power + lam * b.power,
                relaxed=True))
    return ints + extra


def _switch(R, u, v) -> float:
    du = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    return float(du @ R @ du)


def cost_lipschitz(model: NetworkModel, tariff_forecast: Sequence[float],
                   weights: CostWeights) -> float:
    """Upper bound on pence per metre of stored depth.

    The most expensive way to put water in the tank is the highest
    power-to-flow combination at the highest price in the horizon.
    """
    group = model.group
    ratios = [pump_power(group, u, weights) / pump_flow(group, u)
              for u in group.admissible_controls() if pump_flow(group, u) > 0]
    return max(tariff_forecast) * max(ratios) * model.tank.area_m2 / 3600.0


# --- the DP solver ---------------------------------------------------------------

class _Problem:
    """Precomputed per-step arrays shared by the backward and forward passes."""

    def __init__(self, ctx: SolveContext, model: NetworkModel, cfg: EmpcConfig):
        self.N = ctx.horizon
        prefix = min(cfg.prefix, self.N)
        self.cands = _candidates(model, cfg.weights, relaxed=prefix < self.N)
        self.n_int = sum(1 for c in self.cands if not c.relaxed)
        nc = len(self.cands)
        self.allowed = [list(range(self.n_int if t < prefix else nc)) for t in range(self.N)]
        R = cfg.weights.matrix
        if R.shape[0] != model.group.n_stations or len(ctx.u_prev) != R.shape[0]:
            raise InvalidInputError("u_prev, R and station count disagree")
        self.R = R
        tank = model.tank
        self.lo, self.hi = tank.depth_min_m, tank.depth_max_m
        flows = np.array([c.flow for c in self.cands])
        power = np.array([c.power for c in self.cands])
        d = np.array(ctx.demand_forecast)
        p = np.array(ctx.tariff_forecast)
        # depth increment and energy cost of candidate j at step t
        self.inc = (cfg.dt_control_s / tank.area_m2) * (flows[None, :] - d[:, None])
        self.econ = p[:, None] * power[None, :] * cfg.dt_hours
        self.sw = np.array([[_switch(R, a.counts, b.counts) for b in self.cands]
                            for a in self.cands])
        self.sw0 = np.array([_switch(R, c.counts, ctx.u_prev) for c in self.cands])
        self.delta = cfg.depth_grid_resolution_m
        self.nb = int(math.floor((self.hi - self.lo) / self.delta + 1e-9)) + 1
        self.centers = self.lo + self.delta * np.arange(self.nb)
        # highest / lowest reachable depth offsets, for pruning the forward search
        self.inc_max = self.inc.max(axis=1)
        self.inc_min = self.inc.min(axis=1)
        # a branch must promise more than half a bin's worth of cost to be reopened
        self.slack = 0.5 * self.delta * cost_lipschitz(model, ctx.tariff_forecast, cfg.weights)
        # lowest point of the all-out path and highest point of the no-flow
        # path, relative to the depth at step t
        self._worst_rise = [float(np.cumsum(self.inc_max[t:]).min()) for t in range(self.N)]
        self._worst_fall = [float(np.cumsum(self.inc_min[t:]).max()) for t in range(self.N)]
        self._inc = self.inc.tolist()
        self._econ = self.econ.tolist()
        self._sw = self.sw.tolist()
        self._sw0 = self.sw0.tolist()

    def in_bounds(self, x):
        return (x >= self.lo - _BOUND_TOL) & (x <= self.hi + _BOUND_TOL)

    def bin_of(self, x):
        idx = np.rint((np.asarray(x) - self.lo) / self.delta).astype(int)
        return np.clip(idx, 0, self.nb - 1)

    def backward(self) -> np.ndarray:
        """Cost-to-go on the bin grid.

        Rounding each successor to its nearest bin shifts a path by up to half
        a bin per step, so the bound check at step ``s`` is relaxed by
        ``(s + 1) * delta / 2``. The table may then call a marginal path
        feasible; the forward pass re-checks every step on exact depths.
        """
        nc = len(self.cands)
        V = np.full((self.N + 1, self.nb, nc), np.inf)
        V[self.N] = 0.0
        for t in range(self.N - 1, -1, -1):
            margin = (t + 1) * self.delta / 2
            best = np.full((self.nb, nc), np.inf)
            for j in self.allowed[t]:
                xn = self.centers + self.inc[t, j]
                ok = (xn >= self.lo - margin) & (xn <= self.hi + margin)
                cont = np.where(ok, V[t + 1][self.bin_of(xn), j], np.inf)
                q = (self.econ[t, j] + cont)[:, None] + self.sw[None, :, j]
                # strict improvement keeps the earlier (tie-break preferred) candidate
                best = np.where(q < best - _TIE_TOL, q, best)
            V[t] = best
        return V

    def forward_labels(self, x0):
        """Forward DP on exact depths, one label per (depth bin, previous control).

        Each label carries the exact depth of its path, so every path it
        returns is feasible on the true dynamics; merging paths that share a
        bin is the only approximation. Among equal-cost labels the deeper
        one is kept. Returns ``(cost, indices, depths)`` or None.
        """
        N, nc, nb = self.N, len(self.cands), self.nb
        lo, hi = self.lo - _BOUND_TOL, self.hi + _BOUND_TOL
        cost = np.array([0.0])
        xs = np.array([float(x0)])
        prev = np.array([-1])
        parents = []
        for t in range(N):
            allowed = np.array(self.allowed[t])
            n = cost.size
            par = np.repeat(np.arange(n), allowed.size)
            j = np.tile(allowed, n)
            xn = xs[par] + self.inc[t, j]
            sw = self.sw0[j] if t == 0 else self.sw[prev[par], j]
            cn = cost[par] + self.econ[t, j] + sw
            ok = (xn >= lo) & (xn <= hi)
            if t + 1 < N:
                ok &= (xn + self._worst_rise[t + 1] >= lo) & (xn + self._worst_fall[t + 1] <= hi)
            if not ok.any():
                return None
            par, j, xn, cn = par[ok], j[ok], xn[ok], cn[ok]
            key = self.bin_of(xn) * nc + j
            order = np.lexsort((-xn, np.round(cn, 9), key))
            first = order[np.r_[True, key[order][1:] != key[order][:-1]]]
            parents.append((par[first], j[first]))
            cost, xs, prev = cn[first], xn[first], j[first]
        end = int(np.lexsort((-xs, np.round(cost, 9)))[0])
        total = float(cost[end])
        idx = []
        for par, js in reversed(parents):
            idx.append(int(js[end]))
            end = int(par[end])
        idx.reverse()
        depths = [float(x0)]
        for t, j in enumerate(idx):
            depths.append(depths[-1] + self._inc[t][j])
        return total, idx, depths

    def may_stay_feasible(self, t, x) -> bool:
        # necessary condition: the all-out pumping path must stay above the
        # lower bound, and the no-flow path must not be forced above the upper
        return (x + self._worst_rise[t] >= self.lo - _BOUND_TOL
                and x + self._worst_fall[t] <= self.hi + _BOUND_TOL)

    def children(self, V, t, x, prev):
        out = []
        lo, hi = self.lo - _BOUND_TOL, self.hi + _BOUND_TOL
        inc, econ = self._inc[t], self._econ[t]
        sw = self._sw0 if prev is None else self._sw[prev]
        Vn = V[t + 1]
        for j in self.allowed[t]:
            xn = x + inc[j]
            if not lo <= xn <= hi:
                continue
            if t + 1 < self.N and not self.may_stay_feasible(t + 1, xn):
                continue
            g = econ[j] + sw[j]
            b = min(max(int(round((xn - self.lo) / self.delta)), 0), self.nb - 1)
            h = float(Vn[b, j])
            out.append((g + h, g, j, xn))
        # cheapest estimate first; ties go to the preferred control
        out.sort(key=lambda c: (round(c[0], 9), c[2]))
        return out

    def forward(self, x0, V, budget, improve_budget, incumbent=None):
        """Branch-and-bound over exact depths, ordered and pruned by ``V``.

        The first leaf reached is the greedy DP path. The search then keeps
        going while some open branch promises a cheaper total, so
        quantization slips in ``V`` are repaired on the exact dynamics.
        ``budget`` caps the nodes expanded before the first leaf,
        ``improve_budget`` those expanded after it. An ``incumbent``
        ``(cost, indices, depths)`` starts the search with a known feasible
        plan, so only branches that beat it are opened. Returns
        ``(indices, depths)``.
        """
        N = self.N
        best_cost, best = math.inf, None
        if incumbent is not None:
            best_cost, best = incumbent[0], (list(incumbent[1]), list(incumbent[2]))
        path, depths, costs = [], [x0], [0.0]
        deepest = 0
        expanded = 0
        stack = [iter(self.children(V, 0, x0, None))]
        while stack:
            try:
                f, g, j, xn = next(stack[-1])
            except StopIteration:
                stack.pop()
                if path:
                    path.pop()
                    depths.pop()
                    costs.pop()
                continue
            acc = costs[-1]
            # children are sorted, so once one cannot improve none can
            # (an infinite estimate is only explored before any leaf exists)
            if best is not None and (acc + f >= best_cost - self.slack or not math.isfinite(f)):
                stack[-1] = iter(())
                continue
            expanded += 1
            if best is not None and expanded > improve_budget:
                break
            if best is None and expanded > budget:
                raise InfeasibleError(
                    f"search budget of {budget} nodes exhausted at step {deepest}",
                    step=deepest)
            path.append(j)
            depths.append(xn)
            costs.append(acc + g)
            deepest = max(deepest, len(path))
            if len(path) == N:
                if costs[-1] < best_cost - _TIE_TOL:
                    if best is None:
                        expanded = 0
                    best_cost, best = costs[-1], (list(path), list(depths))
                path.pop()
                depths.pop()
                costs.pop()
                continue
            stack.append(iter(self.children(V, len(path), xn, j)))
        if best is None:
            step = max(deepest, self.all_out_failure_step(x0))
            raise InfeasibleError(
                f"no control sequence keeps depth within [{self.lo}, {self.hi}]; "
                f"first failing horizon step {step}", step=step)
        return best

    def all_out_failure_step(self, x0) -> int:
        """First step whose successor is below the minimum even at maximum flow."""
        path = x0 + np.cumsum(self.inc_max)
        below = np.flatnonzero(path < self.lo - _BOUND_TOL)
        return int(below[0]) if below.size else 0

    def plan_from(self, idx, depths) -> Plan:
        econ = sum(self.econ[t, j] for t, j in enumerate(idx))
        sw = self.sw0[idx[0]] + sum(self.sw[a, b] for a, b in zip(idx, idx[1:]))
        return Plan(controls=tuple(self.cands[j].counts for j in idx),
                    predicted_depths=tuple(depths),
                    total_cost=float(econ + sw), economic_cost=float(econ),
                    switching_cost=float(sw))


def solve(ctx: SolveContext, model: NetworkModel, cfg: EmpcConfig) -> Plan:
    """Minimize energy cost plus switching penalty over the horizon.

    Raises InfeasibleError (with ``step``) when no admissible sequence keeps
    the predicted depth within the tank bounds.
    """
    prob = _Problem(ctx, model, cfg)
    V = prob.backward()
    x0 = float(ctx.x_measured)
    idx, depths = prob.forward(x0, V, cfg.search_budget, cfg.improve_budget,
                               prob.forward_labels(x0))
    return prob.plan_from(idx, depths)


def _enumerate(ctx: SolveContext, model: NetworkModel, cfg: EmpcConfig):
    """All feasible admissible sequences with their exact costs."""
    N = ctx.horizon
    if N > ORACLE_MAX_STEPS:
        raise ValueError(f"brute_force_oracle is limited to N <= {ORACLE_MAX_STEPS} (got {N})")
    group, weights, tank = model.group, cfg.weights, model.tank
    R = weights.matrix
    ctrls = group.admissible_controls()
    k = len(ctrls)
    flows = np.array([pump_flow(group, u) for u in ctrls])
    power = np.array([pump_power(group, u, weights) for u in ctrls])
    sw = np.array([[_switch(R, a, b) for b in ctrls] for a in ctrls])
    sw0 = np.array([_switch(R, u, ctx.u_prev) for u in ctrls])
    scale = cfg.dt_control_s / tank.area_m2

    x = np.array([float(ctx.x_measured)])
    cost = np.zeros(1)
    seqs = np.zeros((1, 0), dtype=np.int64)
    for t in range(N):
        d, p = ctx.demand_forecast[t], ctx.tariff_forecast[t]
        n = x.size
        child = np.tile(np.arange(k), n)
        parent = np.repeat(np.arange(n), k)
        xn = x[parent] + scale * (flows[child] - d)
        step_cost = p * power[child] * cfg.dt_hours
        if t == 0:
            step_cost = step_cost + sw0[child]
        else:
            step_cost = step_cost + sw[seqs[parent, -1], child]
        keep = (xn >= tank.depth_min_m - _BOUND_TOL) & (xn <= tank.depth_max_m + _BOUND_TOL)
        if not keep.any():
            raise InfeasibleError(
                f"no control sequence keeps depth within bounds; first failing horizon step {t}",
                step=t)
        x = xn[keep]
        cost = cost[parent[keep]] + step_cost[keep]
        seqs = np.concatenate([seqs[parent[keep]], child[keep, None]], axis=1)
    return cost, seqs, ctrls, flows, power, sw, sw0, scale


def brute_force_oracle(ctx: SolveContext, model: NetworkModel,
                       cfg: Optional[EmpcConfig] = None) -> Plan:
    """Exact optimum by enumerating every admissible integer sequence.

    Depths are propagated without quantization. Ties are broken
    lexicographically in the same control order the DP uses.
    """
    cfg = cfg or EmpcConfig()
    cost, seqs, ctrls, flows, power, sw, sw0, scale = _enumerate(ctx, model, cfg)
    best = int(np.flatnonzero(cost <= cost.min() + _TIE_TOL)[0])
    seq = seqs[best]
    depths = [float(ctx.x_measured)]
    for t, j in enumerate(seq):
        depths.append(depths[-1] + scale * (flows[j] - ctx.demand_forecast[t]))
    econ = sum(ctx.tariff_forecast[t] * power[j] * cfg.dt_hours for t, j in enumerate(seq))
    swc = sw0[seq[0]] + sum(sw[a, b] for a, b in zip(seq, seq[1:]))
    return Plan(controls=tuple(ctrls[j] for j in seq), predicted_depths=tuple(depths),
                total_cost=float(econ + swc), economic_cost=float(econ),
                switching_cost=float(swc))


def oracle_margin(ctx: SolveContext, model: NetworkModel,
                  cfg: Optional[EmpcConfig] = None) -> float:
    """Cost gap between the best and second-best feasible sequences (inf if only one)."""
    cost = _enumerate(ctx, model, cfg or EmpcConfig())[0]
    if cost.size < 2:
        return math.inf
    two = np.partition(cost, 1)[:2]
    return float(two[1] - two[0])


# --- receding horizon --------------------------------------------------------------

Forecaster = Callable[[int, int], tuple]


def periodic_forecast(model: NetworkModel, k: int, N: int, dt_hours: float = 1.0):
    """Perfect forecast of demand and price for control steps k .. k+N-1."""
    hours = [(k + t) * dt_hours for t in range(N)]
    return (tuple(demand_at(model.demand, h) for h in hours),
            tuple(tariff_at(model.tariff, h) for h in hours))


@dataclass(frozen=True)
class ControllerState:
    """What the controller knows at control step ``k``."""

    k: int
    x: float
    u_prev: tuple


def receding_horizon_step(state: ControllerState, model: NetworkModel, cfg: EmpcConfig,
                          forecaster: Optional[Forecaster] = None):
    """Solve the horizon problem from the measured depth; return (action, plan).

    ``forecaster(k, N)`` may supply ``(demands, prices)`` for mismatch
    experiments; by default the periodic profile and tariff are used.
    """
    N = cfg.horizon_steps
    if forecaster is None:
        demands, prices = periodic_forecast(model, state.k, N, cfg.dt_hours)
    else:
        demands, prices = forecaster(state.k, N)
    ctx = SolveContext(state.x, state.u_prev, demands, prices)
    plan = solve(ctx, model, cfg)
    return first_action(plan), plan
