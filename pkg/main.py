import os
import logging
from dataclasses import asdict
from flask import Flask, request
from config import Env
from errors import TocError
from expcli import (VERSION, cmd_compare, cmd_kernel, cmd_simulate, cmd_te, cycle_summary, resolve_config)
from formatters import (format_comparison_csv, format_kernel_csv, format_te_csv, format_trajectory_csv,
                        kernel_summary, to_json)

app = Flask(__name__)
EXPERIMENTS = ("kernel", "compare", "te", "simulate")

logging.basicConfig(level=Env.LOG_LEVEL.upper(), format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def _json(payload, status=200):
    return to_json(payload), status, {'Content-Type': 'application/json'}


def _error(e, status):
    return _json({'error': type(e).__name__, 'message': str(e)}, status)


def _run(experiment, config, output_format, n_cycles, policy_name):
    """Returns (json payload, csv body) for one in-memory run."""
    if experiment == "kernel":
        # unknown policy names fail before any rollout
        name = config.policy(policy_name).name if policy_name else config.policies[0].name
        results = cmd_kernel(config, write=False)
        payload = {policy: kernel_summary(estimates) for policy, estimates in results.items()}
        csv_body = format_kernel_csv(results[name]) if output_format == 'csv' else None
        return payload, csv_body
    if experiment == "compare":
        report = cmd_compare(config, write=False)
        return asdict(report), format_comparison_csv(report) if output_format == 'csv' else None
    if experiment == "te":
        table = cmd_te(config, write=False)
        return [asdict(r) for r in table], format_te_csv(table) if output_format == 'csv' else None
    outcome = cmd_simulate(config, n_cycles=n_cycles, policy_name=policy_name, write=False)
    return cycle_summary(outcome), format_trajectory_csv(outcome.trajectory) if output_format == 'csv' else None


@app.route("/", methods=["POST", "GET"])
def index():
    """
    Runs one experiment in memory and returns its summary.
    Nothing is written to disk.
    """
    try:
        experiment = request.args.get('experiment', 'kernel').lower()
        output_format = request.args.get('format', 'json').lower()
        seed = request.args.get('seed')
        n_cycles = request.args.get('n_cycles')
        policy_name = request.args.get('policy')

        if experiment not in EXPERIMENTS:
            return _json({'error': 'InvalidArgumentError',
                          'message': f"experiment must be one of {', '.join(EXPERIMENTS)}"}, 400)
        if output_format not in ('json', 'csv'):
            return _json({'error': 'InvalidArgumentError', 'message': "format must be json or csv"}, 400)
        try:
            seed = int(seed) if seed is not None else None
            n_cycles = int(n_cycles) if n_cycles is not None else None
        except ValueError as e:
            return _error(e, 400)

        config = resolve_config(None, seed=seed)
        logger.info(f"Starting '{experiment}' v{VERSION} with seed {config.seed}")
        payload, csv_body = _run(experiment, config, output_format, n_cycles, policy_name)

        if output_format == 'csv':
            return csv_body, 200, {'Content-Type': 'text/csv'}
        return _json(payload)

    except TocError as e:
        logger.error(f"Experiment failed: {e}")
        return _error(e, 400)
    except Exception as e:
        logger.exception("Error during experiment")
        return _error(e, 500)


@app.route("/healthz", methods=["GET"])
def healthz():
    return _json({'status': 'ok', 'version': VERSION})


if __name__ == "__main__":
    app.run(debug=True, host="0.0.0.0", port=int(os.environ.get("PORT", 8080)))
