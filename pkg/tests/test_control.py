import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import unittest
from dataclasses import replace

from control import (DEFAULT_GAIN, PhaseSpec, distance, feedback_control, in_neighborhood, next_phase_index,
                     paper_phases, phase_by_index, steady_state_input, successor)
from errors import ConfigurationError, InvalidArgumentError, SingularTargetError
from plant import ControlInput, PlantModel, PlantState


class TestSteadyStateInput(unittest.TestCase):
    def test_level_two(self):
        result = steady_state_input(PlantState(2.5, 2.0), PlantModel())
        self.assertAlmostEqual(result.control.heat_rate, 2.5)
        self.assertAlmostEqual(result.control.piston_rate, 0.75 / 1.625)
        self.assertFalse(result.clamped)

    def test_level_three(self):
        result = steady_state_input(PlantState(1.0, 3.0), PlantModel())
        self.assertAlmostEqual(result.control.heat_rate, 1.0)
        self.assertAlmostEqual(result.control.piston_rate, 2.0)

    def test_singular_target(self):
        # 1 + 0.25 * (-4) == 0
        with self.assertRaises(SingularTargetError):
            steady_state_input(PlantState(-4.0, 0.0), PlantModel())

    def test_out_of_range_is_flagged(self):
        result = steady_state_input(PlantState(6.0, 0.0), PlantModel())
        self.assertEqual(result.control.heat_rate, 5.0)
        self.assertTrue(result.clamped)


class TestFeedbackControl(unittest.TestCase):
    def setUp(self):
        self.model = PlantModel()
        self.phase = phase_by_index(paper_phases(), 2)

    def test_at_target_gives_steady_state(self):
        u = feedback_control(PlantState(2.5, 2.0), self.phase, self.model)
        self.assertEqual(u, steady_state_input(PlantState(2.5, 2.0), self.model).control)

    def test_saturates(self):
        u = feedback_control(PlantState(0.0, 0.0), self.phase, self.model)
        self.assertEqual(u, ControlInput(5.0, 5.0))

    def test_low_gain_saturates_one_axis(self):
        low = replace(self.phase, gain=DEFAULT_GAIN)
        u = feedback_control(PlantState(0.0, 0.0), low, self.model)
        self.assertEqual(u.heat_rate, 5.0)
        self.assertAlmostEqual(u.piston_rate, 4.0 + 0.75 / 1.625)

    def test_unclamped(self):
        u = feedback_control(PlantState(0.0, 0.0), self.phase, self.model, clamp=False)
        self.assertAlmostEqual(u.heat_rate, 2.5 + 26.0 * 2.5)
        self.assertAlmostEqual(u.piston_rate, 0.75 / 1.625 + 16.0 * 2.0)

    def test_off_diagonal_gain(self):
        phase = PhaseSpec(index=1, target=(0.0, 0.0), gain=((0.0, 1.0), (1.0, 0.0)))
        u = feedback_control(PlantState(-1.0, -2.0), phase, self.model)
        self.assertEqual(u, ControlInput(2.0, 1.0))

    def test_non_finite_state(self):
        with self.assertRaises(InvalidArgumentError):
            feedback_control(PlantState(float('nan'), 0.0), self.phase, self.model)


class TestPhases(unittest.TestCase):
    def test_cycle_order(self):
        self.assertEqual([next_phase_index(i) for i in (1, 2, 3)], [2, 3, 1])
        phases = paper_phases()
        self.assertEqual(successor(phases, phases[2]).index, 1)

    def test_default_scenario(self):
        phases = paper_phases()
        self.assertEqual([tuple(p.target) for p in phases], [(0.0, 0.0), (2.5, 2.0), (1.0, 3.0)])
        self.assertEqual([p.base_update_period for p in phases], [0.1, 0.05, 0.05])
        self.assertTrue(all(p.neighborhood_radius == 0.1 for p in phases))
        self.assertTrue(all(p.time_budget == 1.5 for p in phases))
        self.assertEqual([p.gain[0][0] for p in phases], [17.0, 26.0, 34.0])
        self.assertEqual([p.gain[1][1] for p in phases], [17.0, 16.0, 27.0])

    def test_target_coerced(self):
        phase = PhaseSpec(index=3, target=[1, 3])
        self.assertIsInstance(phase.target, PlantState)

    def test_invalid_phase(self):
        with self.assertRaises(ConfigurationError):
            PhaseSpec(index=4, target=(0, 0))
        with self.assertRaises(ConfigurationError):
            PhaseSpec(index=1, target=(0, 0), base_update_period=0.05, fast_update_period=0.1)
        with self.assertRaises(ConfigurationError):
            PhaseSpec(index=1, target=(0, 0), neighborhood_radius=0.0)
        with self.assertRaises(ConfigurationError):
            PhaseSpec(index=1, target=(0, 0), gain=((1.0, 0.0),))

    def test_missing_phase(self):
        with self.assertRaises(ConfigurationError):
            phase_by_index(paper_phases()[:2], 3)


class TestNeighborhood(unittest.TestCase):
    def test_boundary_is_inside(self):
        phase = phase_by_index(paper_phases(), 1)
        self.assertTrue(in_neighborhood(PlantState(0.1, 0.0), phase))
        self.assertFalse(in_neighborhood(PlantState(0.11, 0.0), phase))

    def test_distance(self):
        self.assertAlmostEqual(distance(PlantState(0, 0), PlantState(3, 4)), 5.0)


if __name__ == '__main__':
    unittest.main()
