"""
Reference policies

STAO  optimal static policy: one split and one allocation for the whole
      episode, sized for the peak so no demand is ever declined.
DYNO  optimal fully dynamic oracle: at every stage it reconfigures to the
      split and allocation with the lowest stage cost, paying the
      instantiation and reconfiguration charges that come with it.

Both search a discretized allocation grid exhaustively and assume perfect
(noise-free) knowledge of the utilization model.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

import numpy as np

from .cost_model import (
    SPLITS,
    CostBreakdown,
    CostCoefficients,
    StageOutcome,
    declined_terms,
    instantiation_terms,
    overprovisioning_terms,
    reconfiguration_terms,
    sum_breakdowns,
    total_cost_and_reward,
    xhaul_load,
)
from .environment import (
    DEFAULT_XHAUL_CAPACITY_MBPS,
    Action,
    NetworkState,
    StageRecord,
    TrafficTrace,
    UtilizationModel,
    VranEnvironment,
    check_constraints,
)
from .errors import ConfigError, InfeasibleAllocationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiscretizationGrid:
    step: float = 0.5

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("grid step must be positive", key="grid_step")

    def values(self, cap: float) -> np.ndarray:
        """0, step, 2*step, ... up to and including cap"""
        count = int(np.floor(cap / self.step + 1e-9))
        values = self.step * np.arange(count + 1, dtype=np.float64)
        if values[-1] < cap:
            values = np.append(values, cap)
        return values


class Policy(Protocol):
    name: str

    def initial_configuration(self) -> Optional[Action]:
        """Configuration in force before stage 1 (None: S1 at full capacity)"""

    def decide(self, state: NetworkState) -> Action:
        """Action for the current stage"""


# STAO ---------------------------------------------------------------------

@dataclass(frozen=True)
class StaoSolution:
    split: int
    vdu_alloc: float
    vcu_alloc: float
    episode_cost: CostBreakdown


def solve_stao(model: UtilizationModel, trace: TrafficTrace, grid: DiscretizationGrid,
               coeff: CostCoefficients, xhaul_capacity: float = DEFAULT_XHAUL_CAPACITY_MBPS) -> StaoSolution:
    """
    Cheapest static (split, x, x_hat) whose allocations cover the peak
    utilization of every stage. Its episode cost is overprovisioning plus
    xHaul only; the one-off instantiation is not charged.
    """
    # same per-stage reduction the environment uses
    demands = [trace.stage_mean(n) for n in range(1, trace.num_stages + 1)]
    vdu_grid = grid.values(model.vdu_capacity)
    vcu_grid = grid.values(model.vcu_capacity)
    best: Optional[StaoSolution] = None
    best_total = np.inf

    for split in SPLITS:
        loads = np.array([xhaul_load(split, d) for d in demands])
        if np.any(loads > xhaul_capacity):
            logger.debug("STAO: split %d exceeds xHaul capacity", split)
            continue
        usage = np.array([model.utilization(split, d) for d in demands])
        vdu_used, vcu_used = usage[:, 0], usage[:, 1]
        xs = vdu_grid[vdu_grid >= vdu_used.max()]
        xhs = vcu_grid[vcu_grid >= vcu_used.max()]
        if len(xs) == 0 or len(xhs) == 0:
            continue

        over = overprovisioning_terms(xs[:, None, None], xhs[None, :, None],
                                      vdu_used[None, None, :], vcu_used[None, None, :],
                                      coeff.overprovisioning).sum(axis=2)
        xhaul = float(np.sum(coeff.xhaul * loads))
        totals = over + xhaul
        k = np.unravel_index(np.argmin(totals), totals.shape)
        if totals[k] < best_total:
            best_total = totals[k]
            best = StaoSolution(split, float(xs[k[0]]), float(xhs[k[1]]),
                                CostBreakdown(overprovisioning=float(over[k]), xhaul=xhaul))

    if best is None:
        raise InfeasibleAllocationError("no grid allocation covers the peak utilization of any split")
    logger.debug("STAO: split %d x=%.2f x_hat=%.2f cost=%.4f", best.split, best.vdu_alloc,
                 best.vcu_alloc, best.episode_cost.total)
    return best


class StaticPolicy:
    """Holds the STAO configuration for the whole episode"""
    name = "STAO"

    def __init__(self, solution: StaoSolution):
        self.solution = solution

    def initial_configuration(self) -> Optional[Action]:
        s = self.solution
        return Action(s.split, s.split, s.vdu_alloc, s.vcu_alloc)

    def decide(self, state: NetworkState) -> Action:
        return Action.keep(state)


# DYNO ---------------------------------------------------------------------

@dataclass(frozen=True)
class DynoDecision:
    action: Action
    breakdown: CostBreakdown


def solve_dyno_stage(model: UtilizationModel, demand: float, prev: Tuple[int, float, float],
                     grid: DiscretizationGrid, coeff: CostCoefficients,
                     xhaul_capacity: float = DEFAULT_XHAUL_CAPACITY_MBPS) -> DynoDecision:
    """
    Minimum stage cost over every (split, x, x_hat) on the grid with o = split.

    ``prev`` is the (split, vDU, vCU) configuration in force before the stage.
    Ties go to the lowest split, then the smallest vDU, then vCU allocation.
    """
    _, prev_vdu, prev_vcu = prev
    xs = grid.values(model.vdu_capacity)
    xhs = grid.values(model.vcu_capacity)
    X = xs[:, None]
    XH = xhs[None, :]
    costs = np.empty((len(SPLITS), len(xs), len(xhs)))

    for s, split in enumerate(SPLITS):
        vdu_used, vcu_used = model.utilization(split, demand)
        violated = (X > model.vdu_capacity) | (XH > model.vcu_capacity) | (xhaul_load(split, demand) > xhaul_capacity)
        over = overprovisioning_terms(X, XH, vdu_used, vcu_used, coeff.overprovisioning)
        declined = declined_terms(X, XH, vdu_used, vcu_used, violated, coeff.declined)
        inst = instantiation_terms(X, XH, prev_vdu, prev_vcu, coeff.instantiation)
        reconf = reconfiguration_terms(X, XH, prev_vdu, prev_vcu, True, coeff.reconfiguration)
        xhaul = coeff.xhaul * xhaul_load(split, demand)
        costs[s] = over + declined + inst + reconf + xhaul

    s, i, j = np.unravel_index(np.argmin(costs), costs.shape)
    split = SPLITS[s]
    action = Action(split, split, float(xs[i]), float(xhs[j]))
    vdu_used, vcu_used = model.utilization(split, demand)
    outcome = StageOutcome(
        vdu_alloc=action.vdu_alloc,
        vcu_alloc=action.vcu_alloc,
        vdu_used=vdu_used,
        vcu_used=vcu_used,
        prev_vdu_alloc=prev_vdu,
        prev_vcu_alloc=prev_vcu,
        config=split,
        split=split,
        xhaul_load=xhaul_load(split, demand),
        violations=tuple(check_constraints(action, demand, model, xhaul_capacity)),
    )
    return DynoDecision(action, total_cost_and_reward(outcome, coeff))


class DynamicOraclePolicy:
    """Re-solves DYNO at every stage from the configuration in force"""
    name = "DYNO"

    def __init__(self, model: UtilizationModel, grid: DiscretizationGrid, coeff: CostCoefficients,
                 xhaul_capacity: float = DEFAULT_XHAUL_CAPACITY_MBPS):
        self.model = model.noiseless()
        self.grid = grid
        self.coeff = coeff
        self.xhaul_capacity = xhaul_capacity

    def initial_configuration(self) -> Optional[Action]:
        return None

    def decide(self, state: NetworkState) -> Action:
        prev = (state.prev_split, state.prev_vdu, state.prev_vcu)
        return solve_dyno_stage(self.model, state.demand, prev, self.grid, self.coeff, self.xhaul_capacity).action


# Episodes -----------------------------------------------------------------

@dataclass
class EpisodeRun:
    policy: str
    records: List[StageRecord] = field(default_factory=list)

    @property
    def breakdowns(self) -> List[CostBreakdown]:
        return [r.breakdown for r in self.records]

    @property
    def total(self) -> CostBreakdown:
        return sum_breakdowns(self.breakdowns)

    @property
    def reconfigurations(self) -> int:
        return sum(1 for r in self.records if r.action.config != 0)


def run_policy_episode(policy: Policy, env: VranEnvironment) -> EpisodeRun:
    """Replay the environment's trace under a policy"""
    state = env.reset(policy.initial_configuration())
    run = EpisodeRun(policy.name)
    while not env.done:
        result = env.step(policy.decide(state))
        run.records.append(result.record)
        state = result.next_state
    return run


def run_baseline_episode(policy: Policy, env: VranEnvironment) -> EpisodeRun:
    if env.rng is not None:
        logger.warning("%s is an oracle; running it on a noisy environment", policy.name)
    return run_policy_episode(policy, env)


def normalized_cost(cost: float, reference: float) -> float:
    """Cost relative to a reference policy (e.g. STAO)"""
    if reference == 0:
        return float("nan") if cost != 0 else 1.0
    return cost / reference
