"""
Management cost model

Per-stage cost of running a virtualized base station:

    J = overprovisioning + declined demand + instantiation
        + reconfiguration + xHaul

and the reward r = -J. Resources are in reference cores (RC), demand and
xHaul load in Mbps, costs in an abstract currency unit.

The ``*_terms`` helpers are written with numpy ufuncs so the baselines can
evaluate whole allocation grids with exactly the same arithmetic as the
scalar API below.
"""

from dataclasses import dataclass, field, fields
from typing import Iterable, Tuple

import numpy as np

from .errors import ConfigError, ContractViolation, UnknownSplitError

SPLITS = (1, 2, 3, 4)
CONFIGURATIONS = (0, 1, 2, 3, 4)

# S4 ships a fixed fronthaul stream regardless of demand
S4_XHAUL_MBPS = 2500.0


@dataclass(frozen=True)
class CostCoefficients:
    """Unit prices for each cost component"""
    overprovisioning: float = 1.0     # per RC left unused
    declined: float = 2.0             # per stage with any SLA violation
    instantiation: float = 0.5        # per RC added
    reconfiguration: float = 0.5      # per RC moved while reconfiguring
    xhaul: float = 0.0005             # per Mbps of reserved xHaul bandwidth

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"must be a finite non-negative number, got {value!r}", key=f"costs.{f.name}")

    def scaled(self, factor: float) -> "CostCoefficients":
        return CostCoefficients(**{f.name: getattr(self, f.name) * factor for f in fields(self)})


@dataclass(frozen=True)
class StageOutcome:
    """What happened in one stage: allocations, true utilization and choices"""
    vdu_alloc: float
    vcu_alloc: float
    vdu_used: float
    vcu_used: float
    prev_vdu_alloc: float
    prev_vcu_alloc: float
    config: int
    split: int
    xhaul_load: float = 0.0
    violations: Tuple[bool, ...] = field(default_factory=tuple)

    def __post_init__(self):
        quantities = (self.vdu_alloc, self.vcu_alloc, self.vdu_used, self.vcu_used,
                      self.prev_vdu_alloc, self.prev_vcu_alloc, self.xhaul_load)
        if any(not np.isfinite(q) or q < 0 for q in quantities):
            raise ContractViolation(f"resource quantities must be finite and non-negative: {quantities}")
        if self.config not in CONFIGURATIONS:
            raise ContractViolation(f"configuration {self.config!r} not in {CONFIGURATIONS}")
        if self.split not in SPLITS:
            raise UnknownSplitError(self.split)
        if self.config == 0 and (self.vdu_alloc != self.prev_vdu_alloc or self.vcu_alloc != self.prev_vcu_alloc):
            raise ContractViolation("configuration 0 keeps the previous allocation")

    @property
    def vdu_delta(self) -> float:
        return abs(self.vdu_alloc - self.prev_vdu_alloc)

    @property
    def vcu_delta(self) -> float:
        return abs(self.vcu_alloc - self.prev_vcu_alloc)


@dataclass(frozen=True)
class CostBreakdown:
    """Itemized stage (or episode) cost"""
    overprovisioning: float = 0.0
    declined: float = 0.0
    instantiation: float = 0.0
    reconfiguration: float = 0.0
    xhaul: float = 0.0

    COMPONENTS = ("overprovisioning", "declined", "instantiation", "reconfiguration", "xhaul")

    @property
    def total(self) -> float:
        return self.overprovisioning + self.declined + self.instantiation + self.reconfiguration + self.xhaul

    @property
    def reward(self) -> float:
        return -self.total

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(*(getattr(self, c) + getattr(other, c) for c in self.COMPONENTS))

    def as_dict(self) -> dict:
        values = {c: getattr(self, c) for c in self.COMPONENTS}
        values["total"] = self.total
        return values


def sum_breakdowns(breakdowns: Iterable[CostBreakdown]) -> CostBreakdown:
    total = CostBreakdown()
    for breakdown in breakdowns:
        total = total + breakdown
    return total


# Vectorizable terms -----------------------------------------------------

def overprovisioning_terms(vdu_alloc, vcu_alloc, vdu_used, vcu_used, kappa):
    return kappa * (np.maximum(0.0, vdu_alloc - vdu_used) + np.maximum(0.0, vcu_alloc - vcu_used))


def declined_terms(vdu_alloc, vcu_alloc, vdu_used, vcu_used, violated, kappa):
    fired = (vdu_alloc < vdu_used) | (vcu_alloc < vcu_used) | violated
    return np.where(fired, kappa, 0.0)


def instantiation_terms(vdu_alloc, vcu_alloc, prev_vdu, prev_vcu, kappa):
    # |x - x_prev| counted only where the allocation grew
    return kappa * (np.maximum(0.0, vdu_alloc - prev_vdu) + np.maximum(0.0, vcu_alloc - prev_vcu))


def reconfiguration_terms(vdu_alloc, vcu_alloc, prev_vdu, prev_vcu, reconfigured, kappa):
    moved = np.abs(vdu_alloc - prev_vdu) + np.abs(vcu_alloc - prev_vcu)
    return np.where(reconfigured, kappa * moved, 0.0)


# Scalar API -------------------------------------------------------------

def overprovisioning_cost(outcome: StageOutcome, coeff: CostCoefficients) -> float:
    return float(overprovisioning_terms(outcome.vdu_alloc, outcome.vcu_alloc, outcome.vdu_used,
                                        outcome.vcu_used, coeff.overprovisioning))


def declined_demand_cost(outcome: StageOutcome, coeff: CostCoefficients) -> float:
    """Flat penalty if either node is underprovisioned or any constraint is violated"""
    return float(declined_terms(outcome.vdu_alloc, outcome.vcu_alloc, outcome.vdu_used, outcome.vcu_used,
                                any(outcome.violations), coeff.declined))


def instantiation_cost(outcome: StageOutcome, coeff: CostCoefficients) -> float:
    return float(instantiation_terms(outcome.vdu_alloc, outcome.vcu_alloc, outcome.prev_vdu_alloc,
                                     outcome.prev_vcu_alloc, coeff.instantiation))


def reconfiguration_cost(outcome: StageOutcome, coeff: CostCoefficients) -> float:
    return float(reconfiguration_terms(outcome.vdu_alloc, outcome.vcu_alloc, outcome.prev_vdu_alloc,
                                       outcome.prev_vcu_alloc, outcome.config != 0, coeff.reconfiguration))


def instantiation_reconfiguration_cost(outcome: StageOutcome, coeff: CostCoefficients) -> float:
    return instantiation_cost(outcome, coeff) + reconfiguration_cost(outcome, coeff)


def xhaul_load(split: int, demand: float) -> float:
    """Transport load (Mbps) generated by a split at a given demand"""
    if demand < 0:
        raise ContractViolation(f"demand must be non-negative, got {demand}")
    if split in (1, 2):
        return float(demand)
    if split == 3:
        return 1.02 * demand + 1.5
    if split == 4:
        return S4_XHAUL_MBPS
    raise UnknownSplitError(split)


def xhaul_cost(split: int, demand: float, coeff: CostCoefficients) -> float:
    return coeff.xhaul * xhaul_load(split, demand)


def total_cost_and_reward(outcome: StageOutcome, coeff: CostCoefficients) -> CostBreakdown:
    """Evaluate every component; the breakdown's total is J and its reward is -J"""
    return CostBreakdown(
        overprovisioning=overprovisioning_cost(outcome, coeff),
        declined=declined_demand_cost(outcome, coeff),
        instantiation=instantiation_cost(outcome, coeff),
        reconfiguration=reconfiguration_cost(outcome, coeff),
        xhaul=coeff.xhaul * outcome.xhaul_load,
    )
