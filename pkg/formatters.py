import csv
import io
import json
import logging
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Sequence

from errors import OutputError

logger = logging.getLogger(__name__)

KERNEL_COLUMNS = ['phase', 'prior_x', 'prior_y', 'label']
TRAJECTORY_COLUMNS = ['t', 'temperature', 'pressure', 'u1_applied', 'u2_applied', 'update_flag', 'phase_index']
TE_COLUMNS = ['direction', 'update_period', 'te_bits', 'effective_te_bits', 'n_samples', 'k', 'l', 'n_bins']
COMPARISON_COLUMNS = [
    'level', 'rollout_phase',
    'fixed_rate', 'adaptive_rate', 'rate_reduction_pct',
    'fixed_mean_updates', 'adaptive_mean_updates', 'update_reduction_pct',
    'fixed_viable_fraction', 'adaptive_viable_fraction',
    'fixed_width', 'adaptive_width',
]


def _writer(output):
    return csv.writer(output, lineterminator='\n')


def format_kernel_csv(estimates) -> str:
    output = io.StringIO()
    writer = _writer(output)
    writer.writerow(KERNEL_COLUMNS)
    for estimate in estimates:
        for prior in estimate.priors:
            writer.writerow([estimate.phase_index, prior.point.temperature, prior.point.pressure, prior.label.value])
    return output.getvalue()


def kernel_summary(estimates) -> dict:
    levels = {}
    for e in estimates:
        levels[str(e.phase_index)] = {
            'viable_fraction': e.viable_fraction,
            'width': e.width,
            'n_priors': e.n_priors,
            'labels': e.label_counts(),
            'cycle_viable_fraction': e.cycle_viable_fraction,
            'unmatched_arrivals': len(e.unmatched_arrivals),
            'rollout_updates': e.rollout_updates,
            'rollout_time': e.rollout_time,
            'settings': e.settings,
        }
    return {'levels': levels}


def format_trajectory_csv(points) -> str:
    """Zero-order-hold trajectory; one row per exchange instant and per integrator step."""
    output = io.StringIO()
    writer = _writer(output)
    writer.writerow(TRAJECTORY_COLUMNS)
    for p in points:
        writer.writerow([
            p.t,
            p.state.temperature,
            p.state.pressure,
            p.applied.heat_rate,
            p.applied.piston_rate,
            int(p.update),
            p.phase_index,
        ])
    return output.getvalue()


def format_te_csv(results) -> str:
    output = io.StringIO()
    writer = _writer(output)
    writer.writerow(TE_COLUMNS)
    for r in results:
        writer.writerow([r.direction, r.update_period, r.te_bits, r.effective_te_bits,
                         r.n_samples, r.k, r.l, r.n_bins])
    return output.getvalue()


def format_comparison_csv(report) -> str:
    output = io.StringIO()
    writer = _writer(output)
    writer.writerow(COMPARISON_COLUMNS)
    for row in report.rows:
        writer.writerow([getattr(row, column) for column in COMPARISON_COLUMNS])
    return output.getvalue()


def _default(obj: Any):
    if is_dataclass(obj):
        return asdict(obj)
    if hasattr(obj, 'value'):
        return obj.value
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_default) + "\n"


def write_outputs(directory, files: Sequence) -> list:
    """Writes (name, text) pairs under `directory`; returns the written paths."""
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(directory, e) from e
    for name, text in files:
        path = directory / name
        try:
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
        except OSError as e:
            raise OutputError(path, e) from e
        logger.info(f"Wrote {path}")
        written.append(path)
    return written
