"""
vRAN orchestrator command line

Subcommands:
    pretrain-omega  fit the resource orchestrator and save its checkpoint
    train           train the split orchestrator (DQN) with omega frozen
    eval            compare the trained LOFV against STAO and DYNO
    baseline        run STAO and DYNO alone
    sweep           cost-coefficient or time-horizon sweep
    export          rebuild summary, convergence series and plot from a metrics CSV
    measure         tabulate per-split utilization into a samples CSV
    trace           write a generated traffic trace to CSV

Common options:
    --preset {full,desk}   built-in parameter set (default: full)
    --config FILE           YAML file layered over the preset
    --set KEY=VALUE         dotted override, repeatable (e.g. dqn.batch_size=64)
    --seed N                experiment seed
    --output-dir DIR        where checkpoints and results go (also VRAN_OUTPUT_DIR)
    -v, --verbose           debug logging and tracebacks

Exit codes: 0 success, 1 configuration error, 2 runtime failure.

Examples:
    vran-orchestrator.py pretrain-omega --preset desk
    vran-orchestrator.py train --preset desk --seed 7
    vran-orchestrator.py eval --preset desk --episodes 20
    vran-orchestrator.py sweep --preset desk --sweep costs.instantiation+costs.reconfiguration=0.05,0.5,5
    vran-orchestrator.py sweep --preset desk --sweep horizon_hours=2,4,6
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from tabulate import tabulate

from . import harness
from .config import OUTPUT_DIR_ENV, ExperimentConfig, config_hash, dump_config, load_config
from .environment import TrafficTrace
from .errors import ConfigError, VranLabError
from .log import console, failure, report, setup_logging, success, warning

logger = logging.getLogger(__name__)


def _common_options(parser: argparse.ArgumentParser):
    parser.add_argument("--preset", default="full", help="Built-in parameter set: full or desk")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a configuration value (repeatable)")
    parser.add_argument("--seed", type=int, help="Experiment seed")
    parser.add_argument("--output-dir", help=f"Output directory (overrides {OUTPUT_DIR_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vran-orchestrator",
        description="Learning-based vRAN functional split and resource orchestration",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-omega", help="Fit the resource orchestrator")
    p.add_argument("--samples", help="Utilization samples CSV (split,demand_mbps,vdu_rc,vcu_rc)")

    p = sub.add_parser("train", help="Train the split orchestrator")
    p.add_argument("--pretrain", action="store_true", help="Pretrain omega first if no checkpoint exists")

    p = sub.add_parser("eval", help="Evaluate LOFV against STAO and DYNO")
    p.add_argument("--episodes", type=int, help="Evaluation episodes (default: eval_episodes)")
    p.add_argument("--trace", action="append", default=[], help="Evaluate on a traffic CSV (repeatable)")
    p.add_argument("--no-noisy", action="store_true", help="Skip the LOFV row under utilization noise")

    p = sub.add_parser("baseline", help="Run STAO and DYNO only")
    p.add_argument("--episodes", type=int, help="Evaluation episodes (default: eval_episodes)")
    p.add_argument("--trace", action="append", default=[], help="Evaluate on a traffic CSV (repeatable)")

    p = sub.add_parser("sweep", help="Coefficient or horizon sweep")
    p.add_argument("--sweep", required=True, metavar="KEY[+KEY]=V1,V2,...",
                   help="Keys set jointly to each value, or horizon_hours=2,4,6")

    p = sub.add_parser("export", help="Summarize and plot an existing metrics CSV")
    p.add_argument("--metrics", help="metrics.csv to read (default: <run dir>/metrics.csv)")
    p.add_argument("--window", type=int, default=harness.SMOOTHING_WINDOW, help="Smoothing window")

    p = sub.add_parser("measure", help="Write per-split utilization samples")
    p.add_argument("--points", type=int, default=71, help="Demand grid points over [0, peak]")
    p.add_argument("--out", help="CSV path (default: <run dir>/utilization_samples.csv)")

    p = sub.add_parser("trace", help="Write a generated traffic trace")
    p.add_argument("--episode", type=int, default=1, help="Evaluation episode whose trace to write")
    p.add_argument("--stages", type=int, help="Stages (default: environment.stages_per_episode)")
    p.add_argument("--out", help="CSV path (default: <run dir>/trace-<episode>.csv)")

    for action in sub.choices.values():
        _common_options(action)
    return parser


def load_from_args(args) -> ExperimentConfig:
    environ = dict(os.environ)
    if args.output_dir:
        environ[OUTPUT_DIR_ENV] = args.output_dir
    overrides = list(args.overrides)
    if getattr(args, "samples", None):
        overrides.append(f"environment.utilization_samples={args.samples}")
    return load_config(args.preset, args.config, overrides, args.seed, environ)


def _print_table(rows, floatfmt=".3f"):
    console.print(tabulate(rows, headers="keys", floatfmt=floatfmt))


def _load_traces(paths: List[str]) -> Optional[List[TrafficTrace]]:
    return [TrafficTrace.from_csv(p) for p in paths] if paths else None


def _print_evaluation(evaluation: harness.EvaluationReport):
    report(f"Evaluation over {evaluation.episodes} episode(s) of {evaluation.num_stages} stages")
    rows = [{"policy": r["policy"], "mean cost": r["mean_cost"],
             "95% CI": f"[{r['ci_low']:.2f}, {r['ci_high']:.2f}]",
             "vs STAO": r["normalized_to_stao"], "reconf/ep": r["reconfigurations"],
             **{k[5:]: v for k, v in r.items() if k.startswith("cost_")}}
            for r in evaluation.rows()]
    _print_table(rows)
    if "LOFV" in evaluation.policies:
        console.print(f"\nLOFV/STAO = {evaluation.ratio('LOFV', 'STAO'):.3f}   "
                      f"LOFV/DYNO = {evaluation.ratio('LOFV', 'DYNO'):.3f}")


def cmd_pretrain_omega(config: ExperimentConfig, args) -> int:
    result = harness.pretrain_omega(config)
    ev = result.evaluation
    report("omega held-out report")
    _print_table([{
        "MAE (RC)": ev.mean_absolute_error,
        "relative error": ev.relative_error,
        "overprovisioned": ev.overprovision_rate,
        "underprovisioned": ev.underprovision_rate,
        "final loss": result.loss_history[-1],
    }])
    success(f"omega checkpoint written to {result.checkpoint}")
    return 0


def cmd_train(config: ExperimentConfig, args) -> int:
    omega = None
    if args.pretrain and not config.omega_checkpoint().is_file():
        omega = harness.pretrain_omega(config).model
    result = harness.run_training(config, omega)
    run_dir = config.run_dir()
    harness.save_agent(config, result.agent)
    dump_config(config, run_dir / "config.yaml")
    harness.write_run_metadata(result.metrics, run_dir)
    paths = harness.export_results([result.metrics], run_dir)
    totals = result.metrics.totals()
    window = min(harness.SMOOTHING_WINDOW, len(totals))
    report("Training summary")
    _print_table([{
        "episodes": len(totals),
        "first-window cost": totals[:window].mean(),
        "last-window cost": totals[-window:].mean(),
        "ratio": harness.convergence_ratio(totals, window),
        "wall time (s)": result.metrics.metadata["wall_time_s"],
    }])
    success(f"metrics written to {paths.metrics_csv}")
    return 0


def cmd_eval(config: ExperimentConfig, args) -> int:
    agent = harness.load_agent(config)
    omega = harness.load_omega(config)
    evaluation = harness.run_evaluation(config, agent, omega, traces=_load_traces(args.trace),
                                        episodes=args.episodes, include_noisy=not args.no_noisy)
    _print_evaluation(evaluation)
    path = harness.write_table(config.run_dir() / "evaluation.csv", evaluation.rows())
    success(f"evaluation written to {path}")
    return 0


def cmd_baseline(config: ExperimentConfig, args) -> int:
    evaluation = harness.run_evaluation(config, traces=_load_traces(args.trace), episodes=args.episodes)
    _print_evaluation(evaluation)
    path = harness.write_table(config.run_dir() / "baselines.csv", evaluation.rows())
    success(f"baseline results written to {path}")
    return 0


def cmd_sweep(config: ExperimentConfig, args) -> int:
    spec = harness.SweepSpec.parse(args.sweep)
    result = harness.run_sweep(config, spec)
    report(f"Sweep over {spec.label}")
    _print_table([dict(zip(harness.SWEEP_CSV_HEADER, row)) for row in result.rows
                  if row[3] in ("mean_cost", "normalized_to_stao", "reconfigurations")])
    out_dir = config.run_dir() / "sweep"
    if result.records:
        paths = harness.export_results(result.records, out_dir, sweep=result)
        success(f"sweep written to {paths.sweep_csv}")
    else:
        path = harness.write_sweep_csv(out_dir / "sweep.csv", result)
        success(f"sweep written to {path}")
    return 0


def cmd_export(config: ExperimentConfig, args) -> int:
    metrics = args.metrics or config.run_dir() / "metrics.csv"
    records = harness.read_metrics_csv(metrics)
    paths = harness.export_results(records, config.run_dir() / "export", window=args.window)
    success(f"summary written to {paths.summary_json}, plot to {paths.convergence_png}")
    return 0


def cmd_measure(config: ExperimentConfig, args) -> int:
    path = harness.measure_utilization(config, args.out or config.run_dir() / "utilization_samples.csv",
                                       args.points)
    success(f"utilization samples written to {path}")
    return 0


def cmd_trace(config: ExperimentConfig, args) -> int:
    out = args.out or config.run_dir() / f"trace-{args.episode}.csv"
    path = harness.write_trace(config, out, args.episode, num_stages=args.stages)
    success(f"trace written to {path}")
    return 0


COMMANDS = {
    "pretrain-omega": cmd_pretrain_omega,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "export": cmd_export,
    "measure": cmd_measure,
    "trace": cmd_trace,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        config = load_from_args(args)
        logger.debug("config %s (%s)", config.name, config_hash(config))
        if args.seed is None and args.command in ("train", "sweep"):
            warning(f"no --seed given, using seed {config.seed} from the configuration")
        return COMMANDS[args.command](config, args)
    except ConfigError as e:
        failure(f"Configuration error: {e}")
        return 1
    except KeyboardInterrupt:
        console.print("\n⏹️  Interrupted by user")
        return 2
    except VranLabError as e:
        failure(f"{args.command} failed: {e}")
        if args.verbose:
            console.print_exception()
        return 2
    except Exception as e:
        failure(f"{args.command} failed: {e}")
        if args.verbose:
            console.print_exception()
        return 2


if __name__ == "__main__":
    sys.exit(main())
