"""
Experiment harness

Runs the LOFV learning loop and the experiments around it:

    pretrain_omega   fit the resource orchestrator on utilization samples
    run_training     DQN training with the pretrained regressor frozen
    run_evaluation   LOFV against STAO and DYNO on the same traces
    run_sweep        cost-coefficient or time-horizon sweeps
    export_results   metrics CSV, JSON summary, convergence series and plot

Every random stream is derived from the experiment seed with
numpy.random.SeedSequence, so a run is reproduced exactly by its config.
"""

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .baselines import (  # noqa: E402
    DynamicOraclePolicy,
    EpisodeRun,
    Policy,
    StaticPolicy,
    normalized_cost,
    run_baseline_episode,
    run_policy_episode,
    solve_stao,
)
from .config import ExperimentConfig, config_hash, with_overrides  # noqa: E402
from .cost_model import SPLITS, CostBreakdown, sum_breakdowns  # noqa: E402
from .environment import (  # noqa: E402
    RECONFIGURATION_KINDS,
    Action,
    NetworkState,
    StageRecord,
    TrafficTrace,
    VranEnvironment,
    generate_traffic,
    write_samples_csv,
)
from .errors import ConfigError, ExportError, MissingModelError  # noqa: E402
from .resource_orchestrator import (  # noqa: E402
    OmegaDataset,
    OmegaEvaluation,
    OmegaModel,
    evaluate_omega,
    predict,
    sample_dataset,
    train_omega,
)
from .split_orchestrator import DqnAgent, ReplayBuffer, StateNormalizer, Transition, determine_split  # noqa: E402

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
METRICS_CSV_HEADER = ("run", "episode", "metric", "value")
SWEEP_CSV_HEADER = ("parameter", "point", "policy", "metric", "value")
SMOOTHING_WINDOW = 100

# SeedSequence stream ids
_TRAIN_TRACES, _EVAL_TRACES, _OMEGA, _AGENT, _EVAL_POLICY, _BOOTSTRAP = range(6)


# Seeding ------------------------------------------------------------------

def _stream(config: ExperimentConfig, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([config.seed, stream, *extra])


def episode_trace(config: ExperimentConfig, episode: int, evaluation: bool = False,
                  num_stages: Optional[int] = None) -> TrafficTrace:
    """Traffic of one episode; training and evaluation draw from disjoint streams"""
    seed = _stream(config, _EVAL_TRACES if evaluation else _TRAIN_TRACES, episode)
    return generate_traffic(seed, config.environment.traffic_profile(num_stages))


def stages_for_hours(hours: float, seconds_per_stage: int) -> int:
    stages = int(round(hours * 3600 / seconds_per_stage))
    if stages < 1:
        raise ConfigError(f"horizon of {hours} h is shorter than one stage")
    return stages


# The LOFV policy ----------------------------------------------------------

def lofv_action(config: int, state: NetworkState, omega: OmegaModel) -> Action:
    """sigma's configuration choice turned into a full action by omega"""
    split = determine_split(config, state.prev_split)
    vdu, vcu = predict(omega, state.demand, config, (state.prev_vdu, state.prev_vcu))
    return Action(config, split, vdu, vcu)


class LofvPolicy:
    """Frozen DQN plus omega, epsilon-greedy at a fixed epsilon"""
    name = "LOFV"

    def __init__(self, agent: DqnAgent, omega: OmegaModel, epsilon: float = 0.0,
                 rng: Optional[np.random.Generator] = None, name: Optional[str] = None):
        self.agent = agent
        self.omega = omega
        self.epsilon = epsilon
        self.rng = rng or np.random.default_rng(0)
        if name:
            self.name = name

    def initial_configuration(self) -> Optional[Action]:
        return None

    def decide(self, state: NetworkState) -> Action:
        return lofv_action(self.agent.select_config(state, self.epsilon, self.rng), state, self.omega)


# Metrics ------------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    episode: int
    cost: CostBreakdown
    epsilon: float
    reconfigurations: int
    kinds: Dict[str, int]
    splits: Dict[int, int]
    loss: float = float("nan")

    @classmethod
    def from_records(cls, episode: int, records: Sequence[StageRecord], epsilon: float,
                     losses: Sequence[float] = ()) -> "EpisodeMetrics":
        kinds = {k: 0 for k in RECONFIGURATION_KINDS}
        splits = {s: 0 for s in SPLITS}
        for record in records:
            kinds[record.kind] += 1
            splits[record.action.split] += 1
        return cls(
            episode=episode,
            cost=sum_breakdowns(r.breakdown for r in records),
            epsilon=epsilon,
            reconfigurations=sum(1 for r in records if r.action.config != 0),
            kinds=kinds,
            splits=splits,
            loss=float(np.mean(losses)) if len(losses) else float("nan"),
        )

    @property
    def total(self) -> float:
        return self.cost.total

    def values(self) -> Dict[str, float]:
        """Flat metric -> value mapping in a fixed order"""
        values = {"total_cost": self.cost.total}
        values.update({f"cost_{c}": getattr(self.cost, c) for c in CostBreakdown.COMPONENTS})
        values["epsilon"] = self.epsilon
        values["reconfigurations"] = float(self.reconfigurations)
        values.update({f"kind_{k}": float(v) for k, v in self.kinds.items()})
        values.update({f"split_S{s}": float(v) for s, v in self.splits.items()})
        values["td_loss"] = self.loss
        return values


METRIC_NAMES = tuple(EpisodeMetrics(0, CostBreakdown(), 0.0, 0, {k: 0 for k in RECONFIGURATION_KINDS},
                                    {s: 0 for s in SPLITS}).values())


@dataclass
class MetricsRecord:
    """Per-episode metrics of one run; timestamps and wall time live in ``metadata``"""
    run: str
    config_hash: str
    seed: int
    episodes: List[EpisodeMetrics] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def totals(self) -> np.ndarray:
        return np.array([m.total for m in self.episodes])

    def metric(self, name: str) -> np.ndarray:
        return np.array([m.values()[name] for m in self.episodes])


def smoothed(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; the first entries average what is available"""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ConfigError("smoothing window must be positive")
    sums = np.concatenate([[0.0], np.cumsum(values)])
    k = np.arange(1, len(values) + 1)
    start = np.maximum(0, k - window)
    return (sums[k] - sums[start]) / (k - start)


def convergence_ratio(totals: Sequence[float], window: int) -> float:
    """Mean cost of the last window over the mean cost of the first window"""
    totals = np.asarray(totals, dtype=np.float64)
    if len(totals) == 0:
        return float("nan")
    window = min(window, len(totals))
    first = totals[:window].mean()
    return float(totals[-window:].mean() / first) if first != 0 else float("nan")


# Omega pretraining --------------------------------------------------------

@dataclass
class OmegaReport:
    model: OmegaModel
    loss_history: List[float]
    evaluation: OmegaEvaluation
    checkpoint: Optional[Path] = None


def pretrain_omega(config: ExperimentConfig, dataset: Optional[OmegaDataset] = None,
                   save: bool = True) -> OmegaReport:
    """
    Fit omega and score it on a held-out demand grid.

    Without an explicit dataset, ``omega.dataset_size`` samples are drawn
    uniformly over [0, peak] from the configured utilization model (measured
    samples when configured) with noise on.
    """
    rng = np.random.default_rng(_stream(config, _OMEGA))
    truth = config.environment.utilization_model()
    peak = config.environment.traffic.peak_mbps
    if dataset is None:
        dataset = sample_dataset(truth, config.omega.dataset_size, rng, peak=peak, noise=True)
    logger.info("Pretraining omega on %d samples for %d epochs", len(dataset), config.omega.epochs)

    model = OmegaModel.create(rng, config.omega.hidden, truth, config.omega.safety_margin, demand_scale=peak)
    result = train_omega(model, dataset, config.omega.loss_config(), config.omega.epochs,
                         config.omega.batch_size, config.omega.learning_rate, rng)
    evaluation = evaluate_omega(model, truth, np.linspace(0.0, peak, config.omega.holdout_points))
    logger.info("omega held-out MAE %.3f RC (%.1f%% of range), over %.0f%% / under %.0f%%",
                evaluation.mean_absolute_error, 100 * evaluation.relative_error,
                100 * evaluation.overprovision_rate, 100 * evaluation.underprovision_rate)

    path = None
    if save:
        path = model.save(config.omega_checkpoint(), {"config_hash": config_hash(config), "seed": config.seed})
        logger.info("Saved omega checkpoint to %s", path)
    return OmegaReport(model, result.loss_history, evaluation, path)


def load_omega(config: ExperimentConfig) -> OmegaModel:
    path = config.omega_checkpoint()
    if not path.is_file():
        raise MissingModelError(f"no omega checkpoint at {path}; run pretrain-omega first")
    return OmegaModel.load(path)


def load_agent(config: ExperimentConfig) -> DqnAgent:
    path = config.agent_checkpoint()
    if not path.is_file():
        raise MissingModelError(f"no agent checkpoint at {path}; run train first")
    return DqnAgent.load(path)


# Training -----------------------------------------------------------------

@dataclass
class TrainingResult:
    agent: DqnAgent
    omega: OmegaModel
    metrics: MetricsRecord


def build_agent(config: ExperimentConfig, rng: np.random.Generator) -> DqnAgent:
    env = config.environment
    normalizer = StateNormalizer.for_environment(env.traffic.peak_mbps, env.vdu_capacity, env.vcu_capacity)
    return DqnAgent(rng, hidden=config.dqn.hidden, gamma=config.dqn.gamma,
                    learning_rate=config.dqn.learning_rate, sync_period=config.dqn.sync_period,
                    normalizer=normalizer)


def run_training(config: ExperimentConfig, omega: Optional[OmegaModel] = None,
                 progress: Optional[Callable[[EpisodeMetrics], None]] = None) -> TrainingResult:
    """
    LOFV training loop.

    Each episode replays a fresh Poisson trace. At every stage the agent picks
    o epsilon-greedily, omega sizes the allocation, the environment charges
    the stage cost and the transition goes to replay memory; once the buffer
    holds ``warmup`` transitions every stage also takes one Adam step on the
    squared TD error. The target network is hard-synced every
    ``sync_period`` stages.
    """
    if omega is None:
        omega = load_omega(config)
    init_ss, explore_ss, noise_ss = _stream(config, _AGENT).spawn(3)
    explore_rng = np.random.default_rng(explore_ss)
    noise_rng = np.random.default_rng(noise_ss)

    agent = build_agent(config, np.random.default_rng(init_ss))
    buffer = ReplayBuffer(config.dqn.buffer_capacity)
    schedule = config.dqn.epsilon_schedule(config.episodes)
    model = config.environment.utilization_model()
    warmup = config.dqn.warmup_transitions
    batch_size = config.dqn.batch_size

    record = MetricsRecord(config.name, config_hash(config), config.seed)
    record.metadata["started_at"] = datetime.now(timezone.utc).isoformat()
    started = time.perf_counter()
    log_every = max(1, config.episodes // 20)
    logger.info("Training LOFV for %d episodes of %d stages", config.episodes,
                config.environment.stages_per_episode)

    for e in range(1, config.episodes + 1):
        epsilon = schedule.at(e)
        env = VranEnvironment(episode_trace(config, e), model, config.costs,
                              config.environment.xhaul_capacity, rng=noise_rng)
        state = env.reset()
        losses = []
        while not env.done:
            o = agent.select_config(state, epsilon, explore_rng)
            result = env.step(lofv_action(o, state, omega))
            buffer.add(Transition(state.as_vector(), o, result.breakdown.reward,
                                  result.next_state.as_vector(), result.done))
            if len(buffer) >= warmup:
                losses.append(agent.train_step(buffer, batch_size, explore_rng))
            agent.observe_stage()
            state = result.next_state
        agent.episodes_completed += 1

        metrics = EpisodeMetrics.from_records(e, env.history, epsilon, losses)
        record.episodes.append(metrics)
        if progress is not None:
            progress(metrics)
        if e % log_every == 0 or e == config.episodes:
            window = smoothed(record.totals(), SMOOTHING_WINDOW)[-1]
            logger.info("episode %d/%d  cost %.2f (smoothed %.2f)  eps %.3f  reconfigurations %d",
                        e, config.episodes, metrics.total, window, epsilon, metrics.reconfigurations)

    record.metadata["wall_time_s"] = time.perf_counter() - started
    record.metadata["finished_at"] = datetime.now(timezone.utc).isoformat()
    return TrainingResult(agent, omega, record)


def save_agent(config: ExperimentConfig, agent: DqnAgent) -> Path:
    path = agent.save(config.agent_checkpoint(), {"config_hash": config_hash(config), "seed": config.seed})
    logger.info("Saved agent checkpoint to %s", path)
    return path


# Evaluation ---------------------------------------------------------------

def bootstrap_ci(values: Sequence[float], rng: np.random.Generator, resamples: int = 2000,
                 level: float = 0.95) -> Tuple[float, float]:
    """Percentile bootstrap interval for the mean"""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return float("nan"), float("nan")
    if len(values) == 1:
        return float(values[0]), float(values[0])
    idx = rng.integers(0, len(values), size=(resamples, len(values)))
    means = values[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(means, [tail, 1.0 - tail])
    return float(low), float(high)


@dataclass
class PolicySummary:
    name: str
    totals: np.ndarray
    components: Dict[str, float]
    reconfigurations: float
    ci: Tuple[float, float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.totals))

    @classmethod
    def from_runs(cls, name: str, runs: Sequence[EpisodeRun], rng: np.random.Generator) -> "PolicySummary":
        totals = np.array([run.total.total for run in runs])
        components = {c: float(np.mean([getattr(run.total, c) for run in runs])) for c in CostBreakdown.COMPONENTS}
        return cls(name, totals, components, float(np.mean([run.reconfigurations for run in runs])),
                   bootstrap_ci(totals, rng))


@dataclass
class EvaluationReport:
    policies: Dict[str, PolicySummary]
    episodes: int
    num_stages: int

    def ratio(self, name: str, reference: str) -> float:
        return normalized_cost(self.policies[name].mean, self.policies[reference].mean)

    def rows(self) -> List[Dict[str, Any]]:
        rows = []
        for name, summary in self.policies.items():
            row = {
                "policy": name,
                "mean_cost": summary.mean,
                "ci_low": summary.ci[0],
                "ci_high": summary.ci[1],
                "normalized_to_stao": self.ratio(name, "STAO") if "STAO" in self.policies else float("nan"),
                "reconfigurations": summary.reconfigurations,
            }
            row.update({f"cost_{c}": v for c, v in summary.components.items()})
            rows.append(row)
        return rows


def _run_policy(make_policy: Callable[[TrafficTrace], Policy], traces: Sequence[TrafficTrace],
                config: ExperimentConfig, noise_rng: Optional[np.random.Generator] = None,
                oracle: bool = False) -> List[EpisodeRun]:
    model = config.environment.utilization_model()
    runs = []
    for trace in traces:
        env = VranEnvironment(trace, model, config.costs, config.environment.xhaul_capacity, rng=noise_rng)
        policy = make_policy(trace)
        runs.append(run_baseline_episode(policy, env) if oracle else run_policy_episode(policy, env))
    return runs


def evaluation_traces(config: ExperimentConfig, episodes: Optional[int] = None,
                      num_stages: Optional[int] = None) -> List[TrafficTrace]:
    episodes = episodes or config.eval_episodes
    return [episode_trace(config, k, evaluation=True, num_stages=num_stages) for k in range(1, episodes + 1)]


def run_evaluation(config: ExperimentConfig, agent: Optional[DqnAgent] = None, omega: Optional[OmegaModel] = None,
                   traces: Optional[Sequence[TrafficTrace]] = None, episodes: Optional[int] = None,
                   include_noisy: bool = True, num_stages: Optional[int] = None) -> EvaluationReport:
    """
    Score LOFV (epsilon = eps_min), STAO and DYNO on identical traces.

    LOFV and the oracles run noise-free; ``include_noisy`` adds a row for
    LOFV under utilization noise. Without an agent only the baselines run.
    """
    if traces is None:
        traces = evaluation_traces(config, episodes, num_stages)
    if not traces:
        raise ConfigError("evaluation needs at least one episode", key="eval_episodes")
    model = config.environment.utilization_model().noiseless()
    grid = config.grid()
    costs = config.costs
    xhaul_capacity = config.environment.xhaul_capacity
    bootstrap_rng = np.random.default_rng(_stream(config, _BOOTSTRAP))
    policy_ss, noise_ss = _stream(config, _EVAL_POLICY).spawn(2)
    summaries: Dict[str, PolicySummary] = {}

    if agent is not None:
        if omega is None:
            omega = load_omega(config)
        policy_rng = np.random.default_rng(policy_ss)
        epsilon = config.dqn.epsilon_min
        runs = _run_policy(lambda _: LofvPolicy(agent, omega, epsilon, policy_rng), traces, config)
        summaries["LOFV"] = PolicySummary.from_runs("LOFV", runs, bootstrap_rng)
        if include_noisy:
            runs = _run_policy(lambda _: LofvPolicy(agent, omega, epsilon, policy_rng, "LOFV (noisy)"), traces,
                               config, noise_rng=np.random.default_rng(noise_ss))
            summaries["LOFV (noisy)"] = PolicySummary.from_runs("LOFV (noisy)", runs, bootstrap_rng)

    stao = _run_policy(lambda t: StaticPolicy(solve_stao(model, t, grid, costs, xhaul_capacity)),
                       traces, config, oracle=True)
    summaries["STAO"] = PolicySummary.from_runs("STAO", stao, bootstrap_rng)
    dyno = _run_policy(lambda _: DynamicOraclePolicy(model, grid, costs, xhaul_capacity), traces, config, oracle=True)
    summaries["DYNO"] = PolicySummary.from_runs("DYNO", dyno, bootstrap_rng)

    report = EvaluationReport(summaries, len(traces), traces[0].num_stages)
    if "LOFV" in summaries:
        logger.info("LOFV/STAO %.3f  LOFV/DYNO %.3f over %d episodes",
                    report.ratio("LOFV", "STAO"), report.ratio("LOFV", "DYNO"), len(traces))
    return report


# Sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """
    Parameter points to evaluate.

    ``keys`` are dotted config keys set jointly to each value (for instance
    costs.instantiation and costs.reconfiguration together), or the single
    key ``horizon_hours`` for a time-horizon sweep.
    """
    keys: Tuple[str, ...]
    values: Tuple[float, ...]

    HORIZON = "horizon_hours"

    def __post_init__(self):
        if not self.keys or not self.values:
            raise ConfigError("sweep needs at least one key and one value", key="sweep")
        if self.HORIZON in self.keys and len(self.keys) > 1:
            raise ConfigError("horizon sweeps take no other keys", key="sweep")

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """'costs.instantiation+costs.reconfiguration=0.05,0.5,5' or 'horizon_hours=2,4,6'"""
        if "=" not in text:
            raise ConfigError(f"sweep {text!r} is not of the form key[+key]=v1,v2,...", key="sweep")
        keys, values = text.split("=", 1)
        try:
            parsed = tuple(float(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"sweep values must be numbers: {values!r}", key="sweep")
        return cls(tuple(k.strip() for k in keys.split("+") if k.strip()), parsed)

    @property
    def is_horizon(self) -> bool:
        return self.keys == (self.HORIZON,)

    @property
    def label(self) -> str:
        return "+".join(self.keys)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: List[Tuple[str, float, str, str, float]]
    reports: List[EvaluationReport]
    records: List[MetricsRecord] = field(default_factory=list)

    def column(self, policy: str, metric: str) -> List[float]:
        return [row[4] for row in self.rows if row[2] == policy and row[3] == metric]


def _sweep_rows(spec: SweepSpec, point: float, report: EvaluationReport):
    rows = []
    for row in report.rows():
        for metric in ("mean_cost", "ci_low", "ci_high", "normalized_to_stao", "reconfigurations"):
            rows.append((spec.label, point, row["policy"], metric, float(row[metric])))
    return rows


def run_sweep(config: ExperimentConfig, spec: SweepSpec, omega: Optional[OmegaModel] = None,
              agent: Optional[DqnAgent] = None) -> SweepResult:
    """
    Coefficient points retrain LOFV from scratch; horizon points reuse one
    agent (``agent``, or one trained on ``config``) and only re-evaluate.
    Points run on ``workers`` threads; rows keep sweep order.
    """
    if omega is None:
        omega = load_omega(config)

    if spec.is_horizon:
        if agent is None:
            agent = run_training(config, omega).agent

        def evaluate_point(hours: float):
            stages = stages_for_hours(hours, config.environment.seconds_per_stage)
            logger.info("sweep point %s=%g (%d stages)", spec.label, hours, stages)
            return run_evaluation(config, agent, omega, include_noisy=False, num_stages=stages), None
    else:
        def evaluate_point(value: float):
            point_config = with_overrides(config, *(f"{k}={value!r}" for k in spec.keys),
                                          f"name={config.name}-{spec.label}-{value:g}")
            logger.info("sweep point %s=%g", spec.label, value)
            trained = run_training(point_config, omega)
            return run_evaluation(point_config, trained.agent, omega, include_noisy=False), trained.metrics

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(evaluate_point, spec.values))

    rows, reports, records = [], [], []
    for value, (report, metrics) in zip(spec.values, outcomes):
        rows.extend(_sweep_rows(spec, value, report))
        reports.append(report)
        if metrics is not None:
            records.append(metrics)
    return SweepResult(spec, rows, reports, records)


# Measurement and traces ---------------------------------------------------

def measure_utilization(config: ExperimentConfig, path, points: int = 71) -> Path:
    """Noise-free utilization of every split over an even demand grid, as a samples CSV"""
    if points < 2:
        raise ConfigError("need at least two demand points", key="points")
    model = config.environment.utilization_model()
    demands = np.linspace(0.0, config.environment.traffic.peak_mbps, points)
    return write_samples_csv(path, model.sample_table(demands))


def write_trace(config: ExperimentConfig, path, episode: int = 1, evaluation: bool = True,
                num_stages: Optional[int] = None) -> Path:
    return episode_trace(config, episode, evaluation, num_stages).to_csv(path)


# Export -------------------------------------------------------------------

@dataclass
class ExportPaths:
    metrics_csv: Path
    summary_json: Path
    convergence_csv: Path
    convergence_png: Path
    evaluation_csv: Optional[Path] = None
    sweep_csv: Optional[Path] = None


def _json_number(value: float):
    return None if isinstance(value, float) and not math.isfinite(value) else value


def summarize_run(record: MetricsRecord, window: int = SMOOTHING_WINDOW) -> Dict[str, Any]:
    episode_totals = record.totals()
    components = {c: float(sum(getattr(m.cost, c) for m in record.episodes)) for c in CostBreakdown.COMPONENTS}
    return {
        "run": record.run,
        "config_hash": record.config_hash,
        "seed": record.seed,
        "episodes": len(record.episodes),
        "total_cost": float(episode_totals.sum()),
        "components": components,
        "mean_episode_cost": float(episode_totals.mean()),
        "final_smoothed_cost": float(smoothed(episode_totals, window)[-1]),
        "convergence_ratio": _json_number(convergence_ratio(episode_totals, window)),
        "metadata": record.metadata,
    }


def export_results(records: Sequence[MetricsRecord], out_dir, evaluation: Optional[EvaluationReport] = None,
                   sweep: Optional[SweepResult] = None, window: int = SMOOTHING_WINDOW) -> ExportPaths:
    """
    Write the long-format metrics CSV (run, episode, metric, value), a JSON
    summary, the smoothed cost-vs-episode series with its plot, and, when
    given, evaluation and sweep tables.
    """
    if not records or not any(r.episodes for r in records):
        raise ExportError("no metrics to export")
    out_dir = Path(out_dir)
    paths = ExportPaths(out_dir / "metrics.csv", out_dir / "summary.json",
                        out_dir / "convergence.csv", out_dir / "convergence.png")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(paths.metrics_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(METRICS_CSV_HEADER)
            for record in records:
                for m in record.episodes:
                    for metric, value in m.values().items():
                        writer.writerow([record.run, m.episode, metric, repr(float(value))])

        with open(paths.convergence_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(("run", "episode", "total_cost", "smoothed_cost"))
            for record in records:
                series = smoothed(record.totals(), window)
                for m, value in zip(record.episodes, series):
                    writer.writerow([record.run, m.episode, repr(m.total), repr(float(value))])

        summary = {
            "schema_version": METRICS_SCHEMA_VERSION,
            "smoothing_window": window,
            "runs": [summarize_run(r, window) for r in records if r.episodes],
        }
        if evaluation is not None:
            paths.evaluation_csv = out_dir / "evaluation.csv"
            write_table(paths.evaluation_csv, evaluation.rows())
            summary["evaluation"] = [{k: _json_number(v) for k, v in row.items()} for row in evaluation.rows()]
        if sweep is not None:
            paths.sweep_csv = write_sweep_csv(out_dir / "sweep.csv", sweep)
        with open(paths.summary_json, "w") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)

        plot_convergence(records, paths.convergence_png, window)
    except OSError as e:
        raise ExportError(f"cannot write results to {out_dir}: {e}")
    logger.info("Exported %d run(s) to %s", len(records), out_dir)
    return paths


def write_table(path, rows: List[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def write_sweep_csv(path, sweep: SweepResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SWEEP_CSV_HEADER)
        for label, point, policy, metric, value in sweep.rows:
            writer.writerow([label, repr(point), policy, metric, repr(value)])
    return path


def plot_convergence(records: Sequence[MetricsRecord], path, window: int = SMOOTHING_WINDOW) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for record in records:
        if not record.episodes:
            continue
        episodes = [m.episode for m in record.episodes]
        ax.plot(episodes, record.totals(), alpha=0.25, linewidth=0.8)
        ax.plot(episodes, smoothed(record.totals(), window), linewidth=1.8, label=record.run)
    ax.set_xlabel("episode")
    ax.set_ylabel("episode cost")
    ax.set_title(f"Training cost (window {window})")
    ax.legend(loc="upper right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def read_metrics_csv(path) -> List[MetricsRecord]:
    """Rebuild metric records from a metrics CSV; run metadata comes from run.json beside it"""
    path = Path(path)
    if not path.is_file():
        raise ExportError(f"no metrics file at {path}")
    per_run: Dict[str, Dict[int, Dict[str, float]]] = {}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != METRICS_CSV_HEADER:
            raise ExportError(f"{path}: expected header {','.join(METRICS_CSV_HEADER)}")
        for row in reader:
            per_run.setdefault(row["run"], {}).setdefault(int(row["episode"]), {})[row["metric"]] = float(row["value"])

    meta_path = path.parent / "run.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    records = []
    for run, episodes in per_run.items():
        record = MetricsRecord(run, meta.get("config_hash", ""), int(meta.get("seed", 0)),
                               metadata=meta.get("metadata", {}))
        for episode in sorted(episodes):
            values = episodes[episode]
            record.episodes.append(EpisodeMetrics(
                episode=episode,
                cost=CostBreakdown(*(values[f"cost_{c}"] for c in CostBreakdown.COMPONENTS)),
                epsilon=values["epsilon"],
                reconfigurations=int(values["reconfigurations"]),
                kinds={k: int(values[f"kind_{k}"]) for k in RECONFIGURATION_KINDS},
                splits={s: int(values[f"split_S{s}"]) for s in SPLITS},
                loss=values["td_loss"],
            ))
        records.append(record)
    return records


def write_run_metadata(record: MetricsRecord, out_dir) -> Path:
    path = Path(out_dir) / "run.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"config_hash": record.config_hash, "seed": record.seed,
                                "metadata": record.metadata}, indent=2, sort_keys=True))
    return path
