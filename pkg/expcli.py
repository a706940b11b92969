import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from commloop import CommPolicy, CycleOutcome, comm_rate, run_cycle, run_phase
from config import (Env, ExperimentConfig, PolicyConfig, apply_overrides, build_model, build_phases,
                    config_hash, dump_config, load_config, parse_config)
from control import PhaseSpec, phase_by_index, successor
from errors import ConfigurationError, TocError
from formatters import (format_comparison_csv, format_kernel_csv, format_te_csv, format_trajectory_csv,
                        kernel_summary, to_json, write_outputs)
from infotheory import TeResult, te_table
from plant import PlantState
from seeding import SeedStreams
from viability import (KernelEstimate, draw_prior_sets, estimate_capture_basin, estimate_kernel,
                       labels_by_phase)

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


@dataclass
class PhaseComparison:
    level: int
    rollout_phase: int
    fixed_rate: Optional[float]
    adaptive_rate: Optional[float]
    rate_reduction_pct: Optional[float]
    fixed_mean_updates: float
    adaptive_mean_updates: float
    update_reduction_pct: Optional[float]
    fixed_viable_fraction: float
    adaptive_viable_fraction: float
    fixed_width: float
    adaptive_width: float


@dataclass
class ComparisonReport:
    fixed_policy: str
    adaptive_policy: str
    rows: List[PhaseComparison] = field(default_factory=list)
    overall: Dict[str, Optional[float]] = field(default_factory=dict)


def reduction_pct(fixed: Optional[float], adaptive: Optional[float]) -> Optional[float]:
    if fixed is None or adaptive is None or not fixed > 0:
        return None
    return 100.0 * (fixed - adaptive) / fixed


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


class Experiment:
    """Domain objects and random streams derived from one configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.model = build_model(config)
        self.phases = build_phases(config)
        self.streams = SeedStreams(config.seed)
        self.h = config.plant.integration_step

    def fixed_policies(self) -> Dict[int, CommPolicy]:
        return {phase.index: CommPolicy.fixed(phase) for phase in self.phases}

    def adaptive_policies(self, baseline: Sequence[KernelEstimate], policy: PolicyConfig) -> Dict[int, CommPolicy]:
        labels = labels_by_phase(baseline, self.phases)
        return {
            phase.index: CommPolicy.adaptive(phase, labels[phase.index], policy.edge_radius, policy.base_period_scale)
            for phase in self.phases
        }

    def priors(self):
        return draw_prior_sets(self.phases, self.config.n_priors, self.streams)

    def kernel(self, policies, priors) -> List[KernelEstimate]:
        return estimate_kernel(self.phases, policies, self.model, self.config.n_priors, self.config.n_cycles,
                               self.streams, priors=priors, repeats=self.config.label_repeats,
                               workers=self.config.workers, h=self.h)

    def policies_for(self, policy: PolicyConfig, baseline: Optional[Sequence[KernelEstimate]] = None,
                     priors=None) -> Dict[int, CommPolicy]:
        if policy.kind == "fixed":
            return self.fixed_policies()
        if baseline is None:
            logger.info(f"Estimating fixed-policy labels for adaptive policy '{policy.name}'")
            baseline = self.kernel(self.fixed_policies(), priors if priors is not None else self.priors())
        return self.adaptive_policies(baseline, policy)


def _manifest(command: str, config: ExperimentConfig, files: Sequence[str]) -> str:
    return to_json({
        'command': command,
        'version': VERSION,
        'seed': config.seed,
        'config_hash': config_hash(config),
        'files': sorted(files),
    })


def _write(config: ExperimentConfig, command: str, files: List, out_dir=None):
    directory = Path(out_dir if out_dir is not None else config.output_dir) / command
    files = list(files) + [('config.json', dump_config(config, results_only=True))]
    files.append(('manifest.json', _manifest(command, config, [name for name, _ in files])))
    return write_outputs(directory, files)


def cmd_kernel(config: ExperimentConfig, out_dir=None, write: bool = True) -> Dict[str, List[KernelEstimate]]:
    """Labeled kernel maps of every configured policy over one shared prior set."""
    experiment = Experiment(config)
    priors = experiment.priors()
    baseline = experiment.kernel(experiment.fixed_policies(), priors)

    results: Dict[str, List[KernelEstimate]] = {}
    for policy in config.policies:
        if policy.kind == "fixed":
            results[policy.name] = baseline
        else:
            results[policy.name] = experiment.kernel(experiment.adaptive_policies(baseline, policy), priors)

    if write:
        files = []
        for name, estimates in results.items():
            files.append((f"{name}_kernel.csv", format_kernel_csv(estimates)))
            files.append((f"{name}_summary.json", to_json(kernel_summary(estimates))))
        _write(config, "kernel", files, out_dir)
    return results


def build_comparison(fixed_name: str, adaptive_name: str, fixed: Sequence[KernelEstimate],
                     adaptive: Sequence[KernelEstimate], phases: Sequence[PhaseSpec]) -> ComparisonReport:
    report = ComparisonReport(fixed_policy=fixed_name, adaptive_policy=adaptive_name)
    for f, a in zip(fixed, adaptive):
        level = phase_by_index(phases, f.phase_index)
        fixed_rate, adaptive_rate = f.rollout_rate(), a.rollout_rate()
        report.rows.append(PhaseComparison(
            level=f.phase_index,
            rollout_phase=successor(phases, level).index,
            fixed_rate=fixed_rate,
            adaptive_rate=adaptive_rate,
            rate_reduction_pct=reduction_pct(fixed_rate, adaptive_rate),
            fixed_mean_updates=f.mean_updates(),
            adaptive_mean_updates=a.mean_updates(),
            update_reduction_pct=reduction_pct(f.mean_updates(), a.mean_updates()),
            fixed_viable_fraction=f.viable_fraction,
            adaptive_viable_fraction=a.viable_fraction,
            fixed_width=f.width,
            adaptive_width=a.width,
        ))

    fixed_total = sum(e.rollout_time for e in fixed)
    adaptive_total = sum(e.rollout_time for e in adaptive)
    fixed_overall = sum(e.rollout_updates for e in fixed) / fixed_total if fixed_total > 0 else None
    adaptive_overall = sum(e.rollout_updates for e in adaptive) / adaptive_total if adaptive_total > 0 else None
    report.overall = {
        'fixed_rate': fixed_overall,
        'adaptive_rate': adaptive_overall,
        'rate_reduction_pct': reduction_pct(fixed_overall, adaptive_overall),
        'mean_rate_reduction_pct': _mean(r.rate_reduction_pct for r in report.rows),
        'fixed_mean_viable_fraction': _mean(r.fixed_viable_fraction for r in report.rows),
        'adaptive_mean_viable_fraction': _mean(r.adaptive_viable_fraction for r in report.rows),
    }
    return report


def cmd_compare(config: ExperimentConfig, out_dir=None, write: bool = True) -> ComparisonReport:
    """Fixed vs adaptive exchanges on the same priors and the same per-prior noise."""
    fixed_cfg = config.first_policy("fixed")
    adaptive_cfg = config.first_policy("adaptive")
    experiment = Experiment(config)
    priors = experiment.priors()

    fixed = experiment.kernel(experiment.fixed_policies(), priors)
    adaptive = experiment.kernel(experiment.adaptive_policies(fixed, adaptive_cfg), priors)
    report = build_comparison(fixed_cfg.name, adaptive_cfg.name, fixed, adaptive, experiment.phases)

    for row in report.rows:
        logger.info(f"Level {row.level} (phase {row.rollout_phase}): rate {row.fixed_rate} -> {row.adaptive_rate}, "
                    f"reduction {row.rate_reduction_pct}%, viable {row.fixed_viable_fraction} -> "
                    f"{row.adaptive_viable_fraction}")
    if write:
        _write(config, "compare", [
            ('report.json', to_json(report)),
            ('report.csv', format_comparison_csv(report)),
        ], out_dir)
    return report


def cmd_te(config: ExperimentConfig, out_dir=None, write: bool = True) -> List[TeResult]:
    """State -> control transfer entropy of one phase at each configured update period."""
    te = config.te
    experiment = Experiment(config)
    phase = phase_by_index(experiment.phases, te.phase_index)
    start_level = next(p for p in experiment.phases if successor(experiment.phases, p).index == phase.index)

    trajectories = {}
    for i, period in enumerate(te.update_periods):
        timed = replace(phase, base_update_period=period, fast_update_period=period)
        policy = CommPolicy.fixed(timed)
        trajectories[period] = [
            run_phase(start_level.target, timed, policy, experiment.model,
                      experiment.streams.generator("te", i, r), h=experiment.h)
            for r in range(te.repeats)
        ]

    table = te_table(trajectories, experiment.streams, n_bins=te.n_bins, quantiles=te.quantiles,
                     k=te.k, l=te.l, n_shuffles=te.n_shuffles)
    if write:
        _write(config, "te", [('te_table.csv', format_te_csv(table))], out_dir)
    return table


def cycle_summary(outcome: CycleOutcome) -> dict:
    summary = {
        'viable': outcome.viable,
        'n_cycles': outcome.n_cycles,
        'total_updates': outcome.total_updates,
        'total_time': outcome.total_time,
        'phases': [
            {
                'cycle': o.cycle + 1,
                'phase_index': o.phase_index,
                'reached': o.reached,
                'elapsed': o.elapsed,
                'updates_count': o.updates_count,
                'violation': o.violation.value,
            }
            for o in outcome.phases
        ],
        'rate': None,
        'per_phase_rate': {},
    }
    if outcome.total_time > 0:
        rates = comm_rate(outcome)
        summary['rate'] = rates.overall
        summary['per_phase_rate'] = {str(k): v for k, v in rates.per_phase.items()}
    return summary


def cmd_simulate(config: ExperimentConfig, start: Optional[PlantState] = None, n_cycles: Optional[int] = None,
                 policy_name: Optional[str] = None, out_dir=None, write: bool = True) -> CycleOutcome:
    experiment = Experiment(config)
    if start is None:
        start = phase_by_index(experiment.phases, 1).target
    n_cycles = n_cycles if n_cycles is not None else config.n_cycles
    policy = config.policy(policy_name) if policy_name else config.first_policy("fixed")

    outcome = run_cycle(start, experiment.phases, experiment.policies_for(policy), experiment.model,
                        experiment.streams.generator("simulate"), n_cycles, h=experiment.h)
    logger.info(f"Simulated {n_cycles} cycle(s) from {tuple(start)} with '{policy.name}': "
                f"viable={outcome.viable}, updates={outcome.total_updates}, time={outcome.total_time:.3f}")
    if write:
        _write(config, "sim", [
            ('trajectory.csv', format_trajectory_csv(outcome.trajectory)),
            ('summary.json', to_json(cycle_summary(outcome))),
        ], out_dir)
    return outcome


def cmd_basin(config: ExperimentConfig, level: int, window: float, out_dir=None,
              write: bool = True) -> KernelEstimate:
    """Priors of `level` from which the departing phase arrives within `window`."""
    experiment = Experiment(config)
    start_level = phase_by_index(experiment.phases, level)
    target_phase = successor(experiment.phases, start_level)
    priors = experiment.priors()[level]
    estimate = estimate_capture_basin(start_level, target_phase, window, CommPolicy.fixed(target_phase),
                                      experiment.model, config.n_priors, experiment.streams, priors=priors,
                                      workers=config.workers, h=experiment.h)
    if write:
        _write(config, "basin", [
            ('basin.csv', format_kernel_csv([estimate])),
            ('summary.json', to_json(kernel_summary([estimate]))),
        ], out_dir)
    return estimate


def resolve_config(path: Optional[str], seed: Optional[int] = None, out_dir: Optional[str] = None,
                   workers: Optional[int] = None) -> ExperimentConfig:
    path = path or Env.CONFIG_PATH
    config = load_config(path) if path else parse_config({})
    return apply_overrides(config, seed=seed, out_dir=out_dir, workers=workers)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment configuration (JSON); env: TOC_CONFIG")
    common.add_argument("--seed", type=int, help="Master seed, overrides the configuration; env: TOC_SEED")
    common.add_argument("--out-dir", help="Output root directory; env: TOC_OUT_DIR")
    common.add_argument("--workers", type=int, help="Worker threads for prior rollouts; env: TOC_WORKERS")
    common.add_argument("--log-level", default=None, help="Logging level; env: TOC_LOG_LEVEL")

    parser = argparse.ArgumentParser(description="Viability-driven update-rate experiments for a remotely controlled plant.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("kernel", parents=[common], help="Estimate labeled viability kernels per policy")
    sub.add_parser("compare", parents=[common], help="Compare fixed and adaptive update policies")
    sub.add_parser("te", parents=[common], help="State -> control transfer entropy table")

    simulate = sub.add_parser("simulate", parents=[common], help="Run the cycle and export the trajectory")
    simulate.add_argument("--start", type=float, nargs=2, metavar=("T", "P"), help="Start state (default: level-1 target)")
    simulate.add_argument("--n-cycles", type=int, help="Number of cycles (default: configuration)")
    simulate.add_argument("--policy", help="Policy name from the configuration (default: first fixed policy)")

    basin = sub.add_parser("basin", parents=[common], help="Estimate a capture basin within a time window")
    basin.add_argument("--level", type=int, required=True, choices=[1, 2, 3], help="Start level")
    basin.add_argument("--window", type=float, required=True, help="Time window")
    return parser


def run(args) -> None:
    config = resolve_config(args.config, seed=args.seed, out_dir=args.out_dir, workers=args.workers)
    logger.info(f"Running '{args.command}' v{VERSION} with seed {config.seed}")
    if args.command == "kernel":
        cmd_kernel(config)
    elif args.command == "compare":
        cmd_compare(config)
    elif args.command == "te":
        cmd_te(config)
    elif args.command == "simulate":
        start = PlantState(*args.start) if args.start else None
        cmd_simulate(config, start=start, n_cycles=args.n_cycles, policy_name=args.policy)
    elif args.command == "basin":
        cmd_basin(config, args.level, args.window)
    else:
        raise ConfigurationError(f"Unknown command {args.command}")


def configure_logging(name: str) -> None:
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ConfigurationError(f"Unknown log level {name!r}")
    logging.basicConfig(level=level, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level or Env.LOG_LEVEL)
        run(args)
    except TocError as e:
        logger.error(f"{args.command} failed: {e}")
        print(json.dumps({'error': type(e).__name__, 'message': str(e)}), file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(json.dumps({'error': type(e).__name__, 'message': str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
