import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import csv
import io
import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from config import build_phases, parse_config, save_config
from control import in_neighborhood
from expcli import cmd_basin, cmd_compare, cmd_kernel, cmd_simulate, cmd_te, main, reduction_pct
from formatters import COMPARISON_COLUMNS

SMALL = {
    'n_priors': 4,
    'n_cycles': 1,
    'te': {'n_shuffles': 5},
}


def small_config(**overrides):
    data = dict(SMALL)
    data.update(overrides)
    return parse_config(data)


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(Path(directory).rglob('*')) if p.is_file()}


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_kernel_files(self):
        results = cmd_kernel(small_config(), out_dir=self.out)
        self.assertEqual(sorted(results), ['adaptive', 'fixed'])
        directory = self.out / "kernel"
        with open(directory / "fixed_kernel.csv", newline='') as f:
            table = list(csv.reader(f))
        self.assertEqual(len(table), 1 + 3 * 4)
        manifest = json.loads((directory / "manifest.json").read_text())
        self.assertEqual(manifest['command'], "kernel")
        self.assertEqual(manifest['seed'], 0)
        self.assertIn('adaptive_summary.json', manifest['files'])

    def test_noise_free_kernel_is_all_green(self):
        config = small_config(plant={'actuation_noise_std': 0.0})
        results = cmd_kernel(config, write=False)
        self.assertTrue(all(e.viable_fraction == 1.0 for e in results['fixed']))

    def test_rerun_is_byte_identical(self):
        config = small_config(seed=3)
        cmd_kernel(config, out_dir=self.out / "a")
        cmd_kernel(config, out_dir=self.out / "b")
        self.assertEqual(snapshot(self.out / "a"), snapshot(self.out / "b"))

    def test_workers_do_not_change_outputs(self):
        cmd_compare(small_config(seed=5), out_dir=self.out / "serial")
        cmd_compare(small_config(seed=5, workers=3), out_dir=self.out / "pooled")
        self.assertEqual(snapshot(self.out / "serial"), snapshot(self.out / "pooled"))

    def test_compare_report(self):
        report = cmd_compare(small_config(), out_dir=self.out)
        self.assertEqual([row.level for row in report.rows], [1, 2, 3])
        self.assertEqual([row.rollout_phase for row in report.rows], [2, 3, 1])
        with open(self.out / "compare" / "report.csv", newline='') as f:
            self.assertEqual(next(csv.reader(f)), COMPARISON_COLUMNS)
        self.assertIn('rate_reduction_pct', report.overall)
        for row in report.rows:
            self.assertGreater(row.fixed_rate, 0.0)
            self.assertGreater(row.adaptive_rate, 0.0)

    def test_equal_periods_give_no_reduction(self):
        config = small_config(policies=[
            {'name': 'fixed', 'kind': 'fixed'},
            {'name': 'same', 'kind': 'adaptive', 'base_period_scale': 1.0},
        ])
        report = cmd_compare(config, write=False)
        self.assertEqual(report.adaptive_policy, 'same')
        for row in report.rows:
            self.assertEqual(row.rate_reduction_pct, 0.0)
            self.assertEqual(row.fixed_viable_fraction, row.adaptive_viable_fraction)

    def test_te_table(self):
        table = cmd_te(small_config(), out_dir=self.out)
        self.assertEqual(len(table), 6)
        for cell in table:
            self.assertGreaterEqual(cell.te_bits, 0.0)
            self.assertLessEqual(cell.te_bits, math.log2(3))
        with open(self.out / "te" / "te_table.csv", newline='') as f:
            self.assertEqual(len(list(csv.reader(f))), 7)

    def test_simulate_one_cycle(self):
        config = small_config()
        outcome = cmd_simulate(config, n_cycles=1, out_dir=self.out)
        self.assertEqual([o.phase_index for o in outcome.phases], [2, 3, 1])
        self.assertTrue(outcome.viable)
        self.assertTrue(in_neighborhood(outcome.phases[-1].final_state, build_phases(config)[0]))
        summary = json.loads((self.out / "sim" / "summary.json").read_text())
        self.assertTrue(summary['viable'])
        self.assertEqual(summary['total_updates'], outcome.total_updates)
        with open(self.out / "sim" / "trajectory.csv", newline='') as f:
            self.assertEqual(len(list(csv.reader(f))) - 1, len(outcome.trajectory))

    def test_simulate_adaptive(self):
        outcome = cmd_simulate(small_config(), n_cycles=1, policy_name="adaptive", write=False)
        self.assertEqual(outcome.phases[0].phase_index, 2)
        self.assertGreater(outcome.total_updates, 0)

    def test_basin(self):
        estimate = cmd_basin(small_config(plant={'actuation_noise_std': 0.0}), 1, 3.0, out_dir=self.out)
        self.assertEqual(estimate.viable_fraction, 1.0)
        self.assertTrue((self.out / "basin" / "basin.csv").exists())
        short = cmd_basin(small_config(plant={'actuation_noise_std': 0.0}), 1, 0.1, write=False)
        self.assertEqual(short.viable_fraction, 0.0)

    def test_reduction_pct(self):
        self.assertEqual(reduction_pct(20.0, 17.0), 15.0)
        self.assertIsNone(reduction_pct(0.0, 1.0))
        self.assertIsNone(reduction_pct(None, 1.0))

    def test_te_simulate_basin_reruns_are_byte_identical(self):
        config = small_config(seed=7, te={'n_shuffles': 5, 'repeats': 2})
        for name in ("a", "b"):
            cmd_te(config, out_dir=self.out / name)
            cmd_simulate(config, n_cycles=1, out_dir=self.out / name)
            cmd_basin(config, 2, 0.5, out_dir=self.out / name)
        first = snapshot(self.out / "a")
        self.assertEqual(sorted({path.split('/')[0] for path in first}), ["basin", "sim", "te"])
        self.assertEqual(first, snapshot(self.out / "b"))

    def test_te_falls_with_faster_updates(self):
        table = cmd_te(parse_config({'te': {'n_shuffles': 5}}), write=False)
        te = {(cell.update_period, cell.direction): cell.te_bits for cell in table}
        heat, piston = "temperature->heat_rate", "pressure->piston_rate"
        self.assertGreater(te[(0.1, heat)], te[(0.05, heat)])
        self.assertGreaterEqual(te[(0.1, piston)], te[(0.075, piston)])
        self.assertGreaterEqual(te[(0.075, piston)], te[(0.05, piston)])
        for bits in te.values():
            self.assertGreaterEqual(bits, 0.0)
            self.assertLessEqual(bits, math.log2(3))

    def test_adaptive_saves_exchanges_without_losing_viability(self):
        rows = {1: [], 2: [], 3: []}
        for seed in range(10):
            report = cmd_compare(parse_config({'seed': seed, 'n_cycles': 1}), write=False)
            for row in report.rows:
                rows[row.level].append(row)

        def mean(values):
            return sum(values) / len(values)

        reductions = []
        for level, level_rows in rows.items():
            fixed = mean([r.fixed_viable_fraction for r in level_rows])
            adaptive = mean([r.adaptive_viable_fraction for r in level_rows])
            self.assertLessEqual(fixed - adaptive, 0.02, f"level {level}")
            if level == 2:
                self.assertGreaterEqual(adaptive, fixed)
            reductions.append(mean([r.rate_reduction_pct for r in level_rows]))
        self.assertGreaterEqual(max(reductions), 5.0)


class TestMain(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_success(self):
        path = self.dir / "small.json"
        save_config(small_config(), path)
        code = main(["te", "--config", str(path), "--seed", "2", "--out-dir", str(self.dir / "out")])
        self.assertEqual(code, 0)
        manifest = json.loads((self.dir / "out" / "te" / "manifest.json").read_text())
        self.assertEqual(manifest['seed'], 2)

    def test_configuration_error_line(self):
        path = self.dir / "bad.json"
        path.write_text(json.dumps({'plant': {'alfa': 1.0}}))
        with patch('sys.stderr', new_callable=io.StringIO) as stderr:
            code = main(["kernel", "--config", str(path)])
        self.assertEqual(code, 2)
        line = json.loads(stderr.getvalue().strip().splitlines()[-1])
        self.assertEqual(line['error'], "ConfigurationError")
        self.assertIn("plant.alfa", line['message'])

    def test_unknown_policy(self):
        path = self.dir / "small.json"
        save_config(small_config(), path)
        with patch('sys.stderr', new_callable=io.StringIO):
            code = main(["simulate", "--config", str(path), "--policy", "nope", "--out-dir", str(self.dir)])
        self.assertEqual(code, 2)

    def test_bad_log_level_line(self):
        path = self.dir / "small.json"
        save_config(small_config(), path)
        with patch('sys.stderr', new_callable=io.StringIO) as stderr:
            code = main(["te", "--config", str(path), "--log-level", "bogus", "--out-dir", str(self.dir)])
        self.assertEqual(code, 2)
        line = json.loads(stderr.getvalue().strip().splitlines()[-1])
        self.assertEqual(line['error'], "ConfigurationError")
        self.assertIn("bogus", line['message'])
        self.assertFalse((self.dir / "te").exists())


if __name__ == '__main__':
    unittest.main()
