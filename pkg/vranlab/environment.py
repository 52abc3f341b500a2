"""
vRAN environment

Discrete-time model of one virtualized base station. Each episode is N
stages of T seconds; per-second demand comes from a Poisson traffic trace.
At every stage the orchestrator picks a configuration o (0 keeps everything,
1..4 deploys split S1..S4 and reallocates) plus vDU/vCU allocations; the
environment looks up the true utilization of the deployed split, checks the
deployment constraints and charges the management cost.

State vector (6 entries):
    demand            mean per-second demand of the current stage (Mbps)
    mean_demand       mean of the previous stage's per-second demand (Mbps)
    demand_variance   variance of the previous stage's per-second demand (Mbps^2)
    prev_vdu          vDU allocation in force before this stage (RC)
    prev_vcu          vCU allocation in force before this stage (RC)
    prev_split        split in force before this stage (1..4)

File formats:
    traffic trace CSV       stage,second,demand_mbps
    utilization sample CSV  split,demand_mbps,vdu_rc,vcu_rc
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .cost_model import (
    CONFIGURATIONS,
    SPLITS,
    CostBreakdown,
    CostCoefficients,
    StageOutcome,
    total_cost_and_reward,
    xhaul_load,
)
from .errors import ConfigError, ContractViolation, EpisodeExhaustedError, UnknownSplitError

logger = logging.getLogger(__name__)

TRAFFIC_CSV_HEADER = ("stage", "second", "demand_mbps")
SAMPLES_CSV_HEADER = ("split", "demand_mbps", "vdu_rc", "vcu_rc")

PEAK_DEMAND_MBPS = 35.0
DEFAULT_XHAUL_CAPACITY_MBPS = 3000.0


# Traffic ------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficProfile:
    """
    Shape of the per-stage mean demand.

    kind:
        constant  every stage at ``rate_mbps`` (defaults to the peak)
        diurnal   one day-like cycle per episode between trough and peak,
                  random phase per trace
        ramp      linear from trough to peak
        custom    ``stage_means`` given explicitly
    """
    kind: str = "diurnal"
    num_stages: int = 120
    seconds_per_stage: int = 60
    peak_mbps: float = PEAK_DEMAND_MBPS
    trough_mbps: float = 5.0
    rate_mbps: Optional[float] = None
    stage_jitter: float = 0.1
    packet_size_bytes: int = 1500
    stage_means: Optional[Tuple[float, ...]] = None

    KINDS = ("constant", "diurnal", "ramp", "custom")

    def validate(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown traffic kind {self.kind!r}", key="environment.traffic.kind")
        if self.num_stages < 1 or self.seconds_per_stage < 1:
            raise ConfigError("stage count and duration must be positive", key="environment.traffic")
        rates = [self.peak_mbps, self.trough_mbps]
        if self.rate_mbps is not None:
            rates.append(self.rate_mbps)
        if self.stage_means is not None:
            rates.extend(self.stage_means)
        if any(r < 0 or not np.isfinite(r) for r in rates):
            raise ConfigError("traffic rates must be finite and non-negative", key="environment.traffic")
        if self.trough_mbps > self.peak_mbps:
            raise ConfigError("trough exceeds peak", key="environment.traffic.trough_mbps")
        if not 0.0 <= self.stage_jitter < 1.0:
            raise ConfigError("stage_jitter must be in [0, 1)", key="environment.traffic.stage_jitter")
        if self.packet_size_bytes <= 0:
            raise ConfigError("packet size must be positive", key="environment.traffic.packet_size_bytes")
        if self.kind == "custom" and (self.stage_means is None or len(self.stage_means) != self.num_stages):
            raise ConfigError("custom profile needs one mean per stage", key="environment.traffic.stage_means")

    def means(self, rng: np.random.Generator) -> np.ndarray:
        """Per-stage mean demand in Mbps"""
        n = self.num_stages
        if self.kind == "constant":
            rate = self.peak_mbps if self.rate_mbps is None else self.rate_mbps
            return np.full(n, float(rate))
        if self.kind == "custom":
            return np.asarray(self.stage_means, dtype=np.float64)
        if self.kind == "ramp":
            shape = np.linspace(0.0, 1.0, n)
        else:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            shape = 0.5 * (1.0 + np.sin(2.0 * np.pi * np.arange(n) / n + phase))
        means = self.trough_mbps + (self.peak_mbps - self.trough_mbps) * shape
        if self.stage_jitter > 0:
            means = means * (1.0 + rng.uniform(-self.stage_jitter, self.stage_jitter, size=n))
        return np.clip(means, 0.0, self.peak_mbps)


@dataclass
class TrafficTrace:
    """Per-second demand (Mbps) laid out as stages x seconds"""
    demands: np.ndarray

    def __post_init__(self):
        self.demands = np.asarray(self.demands, dtype=np.float64)
        if self.demands.ndim != 2 or self.demands.size == 0:
            raise ContractViolation("trace must be a non-empty stages x seconds array")
        if np.any(self.demands < 0) or not np.all(np.isfinite(self.demands)):
            raise ContractViolation("trace demands must be finite and non-negative")

    @property
    def num_stages(self) -> int:
        return self.demands.shape[0]

    @property
    def seconds_per_stage(self) -> int:
        return self.demands.shape[1]

    def stage(self, n: int) -> np.ndarray:
        """Per-second demands of stage n (1-based)"""
        if not 1 <= n <= self.num_stages:
            raise ContractViolation(f"stage {n} outside 1..{self.num_stages}")
        return self.demands[n - 1]

    def stage_mean(self, n: int) -> float:
        return float(self.stage(n).mean())

    def stage_means(self) -> np.ndarray:
        return self.demands.mean(axis=1)

    def truncated(self, num_stages: int) -> "TrafficTrace":
        return TrafficTrace(self.demands[:num_stages].copy())

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(TRAFFIC_CSV_HEADER)
            for n in range(self.num_stages):
                for t in range(self.seconds_per_stage):
                    writer.writerow([n + 1, t + 1, repr(float(self.demands[n, t]))])
        return path

    @classmethod
    def from_csv(cls, path) -> "TrafficTrace":
        rows: Dict[Tuple[int, int], float] = {}
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != TRAFFIC_CSV_HEADER:
                raise ContractViolation(f"{path}: expected header {','.join(TRAFFIC_CSV_HEADER)}")
            for line, row in enumerate(reader, start=2):
                try:
                    key = (int(row["stage"]), int(row["second"]))
                    value = float(row["demand_mbps"])
                except (TypeError, ValueError):
                    raise ContractViolation(f"{path}:{line}: malformed row {row}") from None
                if key[0] < 1 or key[1] < 1:
                    raise ContractViolation(f"{path}:{line}: stage and second are numbered from 1, got {key}")
                if key in rows:
                    raise ContractViolation(f"{path}:{line}: duplicate entry for stage {key[0]} second {key[1]}")
                rows[key] = value
        if not rows:
            raise ContractViolation(f"{path}: empty trace")
        stages = max(k[0] for k in rows)
        seconds = max(k[1] for k in rows)
        if len(rows) != stages * seconds:
            raise ContractViolation(f"{path}: trace is not a full {stages} x {seconds} grid")
        demands = np.zeros((stages, seconds))
        for (n, t), value in rows.items():
            demands[n - 1, t - 1] = value
        return cls(demands)


def generate_traffic(seed, profile: TrafficProfile) -> TrafficTrace:
    """
    Poisson-generated per-second demand.

    Each second carries Poisson(rate) packets of ``packet_size_bytes`` where
    rate matches the stage's mean demand, so the expected demand equals the
    profile mean exactly.
    """
    profile.validate()
    rng = np.random.default_rng(seed)
    means = profile.means(rng)
    bits_per_packet = 8.0 * profile.packet_size_bytes
    packets_per_second = means * 1e6 / bits_per_packet
    counts = rng.poisson(lam=np.repeat(packets_per_second[:, np.newaxis], profile.seconds_per_stage, axis=1))
    return TrafficTrace(counts * bits_per_packet / 1e6)


# Utilization --------------------------------------------------------------

@dataclass
class UtilizationSamples:
    """Measured (demand -> vDU/vCU utilization) points per split"""
    points: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]

    def lookup(self, split: int, demand: float) -> Tuple[float, float]:
        if split not in self.points:
            raise UnknownSplitError(split)
        demands, vdu, vcu = self.points[split]
        return float(np.interp(demand, demands, vdu)), float(np.interp(demand, demands, vcu))

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[int, float, float, float]]) -> "UtilizationSamples":
        grouped: Dict[int, List[Tuple[float, float, float]]] = {}
        for split, demand, vdu, vcu in rows:
            split = int(split)
            if split not in SPLITS:
                raise UnknownSplitError(split)
            if min(demand, vdu, vcu) < 0:
                raise ContractViolation("utilization samples must be non-negative")
            grouped.setdefault(split, []).append((float(demand), float(vdu), float(vcu)))
        missing = set(SPLITS) - set(grouped)
        if missing:
            raise ContractViolation(f"no samples for split(s) {sorted(missing)}")
        points = {}
        for split, samples in grouped.items():
            samples.sort()
            arr = np.asarray(samples)
            points[split] = (arr[:, 0], arr[:, 1], arr[:, 2])
        return cls(points)

    def rows(self) -> List[Tuple[int, float, float, float]]:
        out = []
        for split in sorted(self.points):
            demands, vdu, vcu = self.points[split]
            out.extend((split, float(d), float(a), float(b)) for d, a, b in zip(demands, vdu, vcu))
        return out

    @classmethod
    def from_csv(cls, path) -> "UtilizationSamples":
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != SAMPLES_CSV_HEADER:
                raise ContractViolation(f"{path}: expected header {','.join(SAMPLES_CSV_HEADER)}")
            rows = [(int(r["split"]), float(r["demand_mbps"]), float(r["vdu_rc"]), float(r["vcu_rc"]))
                    for r in reader]
        return cls.from_rows(rows)


def write_samples_csv(path, rows: Sequence[Tuple[int, float, float, float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SAMPLES_CSV_HEADER)
        for split, demand, vdu, vcu in rows:
            writer.writerow([split, repr(float(demand)), repr(float(vdu)), repr(float(vcu))])
    return path


@dataclass
class UtilizationModel:
    """
    Ground-truth compute utilization of the deployed split.

    The synthetic base curve g(demand) = base + slope * demand
    + ripple * sin(2 pi demand / period) is non-linear and non-monotonic on
    [0, 35] Mbps; split i scales it by rho_du[i] at the vDU and rho_cu[i] at
    the vCU. Measured samples, when given, replace the synthetic curve.
    """
    rho_du: Tuple[float, ...] = (1.0, 0.8, 0.65, 0.0)
    rho_cu: Tuple[float, ...] = (0.0, 0.1, 0.175, 0.5)
    vdu_capacity: float = 50.0
    vcu_capacity: float = 50.0
    noise: float = 0.02
    base_rc: float = 4.0
    slope_rc_per_mbps: float = 0.45
    ripple_rc: float = 3.0
    ripple_period_mbps: float = 14.0
    samples: Optional[UtilizationSamples] = None

    def __post_init__(self):
        self.rho_du = tuple(float(r) for r in self.rho_du)
        self.rho_cu = tuple(float(r) for r in self.rho_cu)
        if len(self.rho_du) != len(SPLITS) or len(self.rho_cu) != len(SPLITS):
            raise ConfigError("one scale per split required", key="environment.rho_du/rho_cu")
        for d, c in zip(self.rho_du, self.rho_cu):
            if d < 0 or c < 0 or d + c > 1.0 + 1e-12:
                raise ConfigError("scales must be non-negative with rho_du + rho_cu <= 1",
                                  key="environment.rho_du/rho_cu")
        if self.vdu_capacity <= 0 or self.vcu_capacity <= 0:
            raise ConfigError("capacities must be positive", key="environment.vdu_capacity/vcu_capacity")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError("noise amplitude must be in [0, 1)", key="environment.noise")
        if self.ripple_period_mbps <= 0:
            raise ConfigError("ripple period must be positive", key="environment.ripple_period_mbps")
        if self.base_rc - abs(self.ripple_rc) < 0:
            raise ConfigError("base curve would go negative", key="environment.base_rc")

    def rho(self, split: int) -> Tuple[float, float]:
        if split not in SPLITS:
            raise UnknownSplitError(split)
        return self.rho_du[split - 1], self.rho_cu[split - 1]

    def base_curve(self, demand):
        demand = np.asarray(demand, dtype=np.float64)
        return (self.base_rc + self.slope_rc_per_mbps * demand
                + self.ripple_rc * np.sin(2.0 * np.pi * demand / self.ripple_period_mbps))

    def noiseless(self) -> "UtilizationModel":
        return UtilizationModel(
            rho_du=self.rho_du, rho_cu=self.rho_cu, vdu_capacity=self.vdu_capacity,
            vcu_capacity=self.vcu_capacity, noise=0.0, base_rc=self.base_rc,
            slope_rc_per_mbps=self.slope_rc_per_mbps, ripple_rc=self.ripple_rc,
            ripple_period_mbps=self.ripple_period_mbps, samples=self.samples,
        )

    def utilization(self, split: int, demand: float, rng: Optional[np.random.Generator] = None) -> Tuple[float, float]:
        """(vDU, vCU) utilization in RC; noise is applied only when rng is given"""
        if demand < 0:
            raise ContractViolation(f"demand must be non-negative, got {demand}")
        if self.samples is not None:
            vdu, vcu = self.samples.lookup(split, demand)
        else:
            rho_d, rho_c = self.rho(split)
            base = float(self.base_curve(demand))
            vdu, vcu = rho_d * base, rho_c * base
        if rng is not None and self.noise > 0:
            vdu *= 1.0 + rng.uniform(-self.noise, self.noise)
            vcu *= 1.0 + rng.uniform(-self.noise, self.noise)
        return (min(max(vdu, 0.0), self.vdu_capacity),
                min(max(vcu, 0.0), self.vcu_capacity))

    def sample_table(self, demands: Sequence[float]) -> List[Tuple[int, float, float, float]]:
        """Noise-free utilization rows for every split over a demand grid"""
        rows = []
        for split in SPLITS:
            for demand in demands:
                vdu, vcu = self.utilization(split, float(demand))
                rows.append((split, float(demand), vdu, vcu))
        return rows


# MDP types ----------------------------------------------------------------

@dataclass(frozen=True)
class NetworkState:
    demand: float
    mean_demand: float
    demand_variance: float
    prev_vdu: float
    prev_vcu: float
    prev_split: int

    def __post_init__(self):
        if self.prev_split not in SPLITS:
            raise UnknownSplitError(self.prev_split)
        if self.demand_variance < 0:
            raise ContractViolation("demand variance must be non-negative")

    def as_vector(self) -> np.ndarray:
        return np.array([self.demand, self.mean_demand, self.demand_variance,
                         self.prev_vdu, self.prev_vcu, float(self.prev_split)])


@dataclass(frozen=True)
class Action:
    config: int
    split: int
    vdu_alloc: float
    vcu_alloc: float

    def __post_init__(self):
        if self.config not in CONFIGURATIONS:
            raise ContractViolation(f"configuration {self.config!r} not in {CONFIGURATIONS}")
        if self.split not in SPLITS:
            raise UnknownSplitError(self.split)
        if self.config != 0 and self.split != self.config:
            raise ContractViolation(f"configuration {self.config} deploys split {self.config}, not {self.split}")
        if min(self.vdu_alloc, self.vcu_alloc) < 0 or not np.isfinite([self.vdu_alloc, self.vcu_alloc]).all():
            raise ContractViolation("allocations must be finite and non-negative")

    @classmethod
    def keep(cls, state: NetworkState) -> "Action":
        """o = 0: leave split and allocations as they are"""
        return cls(0, state.prev_split, state.prev_vdu, state.prev_vcu)


class Violations(NamedTuple):
    vdu_over_capacity: bool
    vcu_over_capacity: bool
    xhaul_over_capacity: bool


def check_constraints(action: Action, demand: float, model: UtilizationModel,
                      xhaul_capacity: float = DEFAULT_XHAUL_CAPACITY_MBPS) -> Violations:
    return Violations(
        vdu_over_capacity=action.vdu_alloc > model.vdu_capacity,
        vcu_over_capacity=action.vcu_alloc > model.vcu_capacity,
        xhaul_over_capacity=xhaul_load(action.split, demand) > xhaul_capacity,
    )


def window_stats(trace: TrafficTrace, n: int) -> Tuple[float, float]:
    """Mean and (population) variance of stage n's per-second demand"""
    seconds = trace.stage(n)
    mean = float(seconds.mean())
    return mean, float(np.mean((seconds - mean) ** 2))


def build_state(trace: TrafficTrace, n: int, prev_action: Optional[Action],
                model: UtilizationModel) -> NetworkState:
    """
    State observed at the start of stage n.

    Window statistics summarize the just-completed stage n-1; at n = 1 they
    are zero and the previous configuration is S1 with full capacity.
    """
    demand = trace.stage_mean(n)
    if n == 1:
        mean, variance = 0.0, 0.0
    else:
        mean, variance = window_stats(trace, n - 1)
    if prev_action is None:
        return NetworkState(demand, mean, variance, model.vdu_capacity, model.vcu_capacity, 1)
    return NetworkState(demand, mean, variance, prev_action.vdu_alloc, prev_action.vcu_alloc, prev_action.split)


def classify_reconfiguration(state: NetworkState, action: Action) -> str:
    if action.config == 0:
        return "keep"
    if action.split != state.prev_split:
        return "split_change"
    if action.vdu_alloc != state.prev_vdu or action.vcu_alloc != state.prev_vcu:
        return "resize"
    return "reconfigure_noop"


RECONFIGURATION_KINDS = ("keep", "split_change", "resize", "reconfigure_noop")


@dataclass(frozen=True)
class StageRecord:
    stage: int
    state: NetworkState
    action: Action
    outcome: StageOutcome
    breakdown: CostBreakdown
    kind: str


@dataclass
class StepResult:
    next_state: NetworkState
    breakdown: CostBreakdown
    done: bool
    record: StageRecord


class VranEnvironment:
    """One episode over a fixed traffic trace"""

    def __init__(self, trace: TrafficTrace, model: UtilizationModel, coefficients: CostCoefficients,
                 xhaul_capacity: float = DEFAULT_XHAUL_CAPACITY_MBPS,
                 rng: Optional[np.random.Generator] = None):
        self.trace = trace
        self.model = model
        self.coefficients = coefficients
        self.xhaul_capacity = xhaul_capacity
        # no rng means noise-free utilization
        self.rng = rng
        self.history: List[StageRecord] = []
        self._stage = 1
        self._prev_action: Optional[Action] = None
        self._state: Optional[NetworkState] = None

    @property
    def num_stages(self) -> int:
        return self.trace.num_stages

    @property
    def stage(self) -> int:
        return self._stage

    @property
    def state(self) -> NetworkState:
        if self._state is None:
            raise ContractViolation("environment not reset")
        return self._state

    @property
    def done(self) -> bool:
        return self._stage > self.num_stages

    def reset(self, initial: Optional[Action] = None) -> NetworkState:
        """
        Start a new episode. ``initial`` is the configuration in force before
        stage 1; by default S1 with full vDU/vCU capacity.
        """
        self.history = []
        self._stage = 1
        self._prev_action = initial
        self._state = build_state(self.trace, 1, initial, self.model)
        return self._state

    def _validate(self, action: Action):
        state = self.state
        if action.config == 0 and (action.split != state.prev_split
                                   or action.vdu_alloc != state.prev_vdu
                                   or action.vcu_alloc != state.prev_vcu):
            raise ContractViolation("configuration 0 must keep the previous split and allocations")

    def step(self, action: Action) -> StepResult:
        if self._state is None:
            self.reset()
        if self.done:
            raise EpisodeExhaustedError(f"episode finished after {self.num_stages} stages")
        self._validate(action)

        state = self._state
        n = self._stage
        demand = state.demand
        vdu_used, vcu_used = self.model.utilization(action.split, demand, self.rng)
        violations = check_constraints(action, demand, self.model, self.xhaul_capacity)
        outcome = StageOutcome(
            vdu_alloc=action.vdu_alloc,
            vcu_alloc=action.vcu_alloc,
            vdu_used=vdu_used,
            vcu_used=vcu_used,
            prev_vdu_alloc=state.prev_vdu,
            prev_vcu_alloc=state.prev_vcu,
            config=action.config,
            split=action.split,
            xhaul_load=xhaul_load(action.split, demand),
            violations=tuple(violations),
        )
        breakdown = total_cost_and_reward(outcome, self.coefficients)
        record = StageRecord(n, state, action, outcome, breakdown, classify_reconfiguration(state, action))
        self.history.append(record)
        logger.debug("stage %d o=%d split=%d x=%.2f/%.2f y=%.2f/%.2f J=%.4f", n, action.config,
                     action.split, action.vdu_alloc, action.vcu_alloc, vdu_used, vcu_used, breakdown.total)

        self._prev_action = action
        self._stage += 1
        if self.done:
            # terminal observation: last stage's demand with its own window statistics
            mean, variance = window_stats(self.trace, n)
            next_state = NetworkState(demand, mean, variance, action.vdu_alloc, action.vcu_alloc, action.split)
        else:
            next_state = build_state(self.trace, self._stage, action, self.model)
        self._state = next_state
        return StepResult(next_state, breakdown, self.done, record)

    def episode_cost(self) -> CostBreakdown:
        total = CostBreakdown()
        for record in self.history:
            total = total + record.breakdown
        return total
