import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from control import (PhaseSpec, distance, feedback_control, in_neighborhood,
                     next_phase_index, phase_by_index)
from errors import ConfigurationError, InvalidArgumentError, UndefinedRateError
from plant import DEFAULT_STEP, ControlInput, PlantModel, PlantState, simulate_hold

logger = logging.getLogger(__name__)

DEFAULT_EDGE_RADIUS = 0.3
BUDGET_TOLERANCE = 1e-9


class PolicyKind(str, Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class Violation(str, Enum):
    NONE = "none"
    LEFT_CONSTRAINT_BOX = "left-constraint-box"
    BUDGET_EXHAUSTED = "budget-exhausted"


class TrajectoryPoint(NamedTuple):
    t: float
    state: PlantState
    applied: ControlInput
    update: bool
    phase_index: int
    # commanded (pre-noise) control; only set on exchange entries
    commanded: Optional[ControlInput] = None


@dataclass
class PhaseOutcome:
    phase_index: int
    start: PlantState
    final_state: PlantState
    reached: bool
    elapsed: float
    updates_count: int
    violation: Violation
    trajectory: List[TrajectoryPoint] = field(default_factory=list)
    cycle: int = 0

    def exchanges(self) -> List[TrajectoryPoint]:
        return [p for p in self.trajectory if p.update]


@dataclass
class CycleOutcome:
    phases: List[PhaseOutcome]
    viable: bool
    total_updates: int
    total_time: float
    n_cycles: int

    @property
    def trajectory(self) -> List[TrajectoryPoint]:
        return [p for outcome in self.phases for p in outcome.trajectory]


class RateReport(NamedTuple):
    overall: float
    per_phase: Dict[int, Optional[float]]
    per_phase_updates: Dict[int, int]
    per_phase_time: Dict[int, float]


class CommPolicy(ABC):
    """Decides the length of the next hold interval at each exchange instant."""

    kind: PolicyKind

    def __init__(self, phase_index: int, base_period: float, fast_period: float):
        if not 0 < fast_period <= base_period:
            raise ConfigurationError(
                f"Policy for phase {phase_index}: need 0 < fast period <= base period, "
                f"got {fast_period} and {base_period}")
        self.phase_index = phase_index
        self.base_period = base_period
        self.fast_period = fast_period

    @abstractmethod
    def next_period(self, state: PlantState) -> float:
        pass

    def check(self, phase: PhaseSpec):
        if phase.index != self.phase_index:
            raise ConfigurationError(
                f"{self.kind.value} policy built for phase {self.phase_index} used with phase {phase.index}")

    @staticmethod
    def fixed(phase: PhaseSpec) -> "FixedPolicy":
        return FixedPolicy(phase)

    @staticmethod
    def adaptive(phase: PhaseSpec, priors: Sequence, edge_radius: float = DEFAULT_EDGE_RADIUS,
                 base_period_scale: float = 1.0) -> "AdaptivePolicy":
        return AdaptivePolicy(phase, priors, edge_radius, base_period_scale)


class FixedPolicy(CommPolicy):
    kind = PolicyKind.FIXED

    def __init__(self, phase: PhaseSpec):
        super().__init__(phase.index, phase.base_update_period, phase.base_update_period)

    def next_period(self, state: PlantState) -> float:
        return self.base_period

    def __repr__(self):
        return f"FixedPolicy(phase={self.phase_index}, period={self.base_period})"


class AdaptivePolicy(CommPolicy):
    """
    Fast updates when the current state sits at the edge of the labeled
    kernel (or where no prior is close enough to tell), base updates otherwise.
    """
    kind = PolicyKind.ADAPTIVE

    def __init__(self, phase: PhaseSpec, priors: Sequence, edge_radius: float = DEFAULT_EDGE_RADIUS,
                 base_period_scale: float = 1.0):
        if base_period_scale < 1:
            raise ConfigurationError(f"base_period_scale must be >= 1, got {base_period_scale}")
        if not edge_radius > 0:
            raise ConfigurationError(f"edge_radius must be > 0, got {edge_radius}")
        if not priors:
            raise ConfigurationError(f"Adaptive policy for phase {phase.index} needs a non-empty labeled prior set")
        super().__init__(phase.index, phase.base_update_period * base_period_scale, phase.fast_update_period)
        # deferred: viability builds on this module
        from viability import is_edge_state
        self._is_edge_state = is_edge_state
        self.priors = tuple(priors)
        self.edge_radius = edge_radius

    def next_period(self, state: PlantState) -> float:
        if self._is_edge_state(state, self.priors, self.edge_radius):
            return self.fast_period
        return self.base_period

    def __repr__(self):
        return (f"AdaptivePolicy(phase={self.phase_index}, base={self.base_period}, "
                f"fast={self.fast_period}, rho={self.edge_radius}, priors={len(self.priors)})")


def run_phase(start: PlantState, phase: PhaseSpec, policy: CommPolicy, model: PlantModel,
              rng: Optional[np.random.Generator], h: float = DEFAULT_STEP,
              t0: float = 0.0, cycle: int = 0) -> PhaseOutcome:
    """
    Sampled-data loop for one phase.

    Arrival is checked at every exchange instant before transmitting, so
    reaching the neighborhood costs no extra update. Each exchange uploads
    the current state and downloads one control value, which is then held
    for the interval chosen by the policy.
    """
    if not start.is_finite():
        raise InvalidArgumentError(f"Non-finite start state {tuple(start)}")
    policy.check(phase)

    state = start
    elapsed = 0.0
    updates = 0
    trajectory: List[TrajectoryPoint] = []

    def outcome(reached, violation):
        return PhaseOutcome(phase.index, start, state, reached, elapsed, updates, violation, trajectory, cycle)

    while True:
        if in_neighborhood(state, phase):
            return outcome(True, Violation.NONE)

        period = policy.next_period(state)
        commanded = feedback_control(state, phase, model)
        hold = simulate_hold(state, commanded, period, h, model, rng)
        updates += 1

        trajectory.append(TrajectoryPoint(t0 + elapsed, state, hold.applied, True, phase.index, commanded))
        for offset, sample in hold.path:
            trajectory.append(TrajectoryPoint(t0 + elapsed + offset, sample, hold.applied, False, phase.index))

        state = hold.final
        if not hold.viable:
            elapsed += hold.path[-1][0] if hold.path else 0.0
            logger.debug(f"Phase {phase.index} left the constraint box after {elapsed:.3f}")
            return outcome(False, Violation.LEFT_CONSTRAINT_BOX)

        elapsed += period
        if elapsed > phase.time_budget + BUDGET_TOLERANCE:
            return outcome(False, Violation.BUDGET_EXHAUSTED)


def starting_level(start: PlantState, phases: Sequence[PhaseSpec]) -> int:
    """Level containing `start` (nearest target on ties), else the level with the nearest target."""
    inside = [p for p in phases if in_neighborhood(start, p)]
    candidates = inside or list(phases)
    return min(candidates, key=lambda p: (distance(start, p.target), p.index)).index


def run_cycle(start: PlantState, phases: Sequence[PhaseSpec], policies: Mapping[int, CommPolicy],
              model: PlantModel, rng: Optional[np.random.Generator], n_cycles: int = 3,
              h: float = DEFAULT_STEP) -> CycleOutcome:
    if n_cycles < 1:
        raise InvalidArgumentError(f"n_cycles must be >= 1, got {n_cycles}")
    if not start.is_finite():
        raise InvalidArgumentError(f"Non-finite start state {tuple(start)}")

    index = next_phase_index(starting_level(start, phases))
    state = start
    t = 0.0
    outcomes: List[PhaseOutcome] = []

    for cycle in range(n_cycles):
        for _ in range(len(phases)):
            phase = phase_by_index(phases, index)
            if phase.index not in policies:
                raise ConfigurationError(f"No policy configured for phase {phase.index}")
            result = run_phase(state, phase, policies[phase.index], model, rng, h=h, t0=t, cycle=cycle)
            outcomes.append(result)
            t += result.elapsed
            state = result.final_state
            if not result.reached:
                logger.info(f"Cycle {cycle + 1} aborted in phase {phase.index}: {result.violation.value}")
                return _cycle_outcome(outcomes, False, n_cycles)
            index = next_phase_index(index)

    return _cycle_outcome(outcomes, True, n_cycles)


def _cycle_outcome(outcomes, viable, n_cycles):
    return CycleOutcome(
        phases=outcomes,
        viable=viable,
        total_updates=sum(o.updates_count for o in outcomes),
        total_time=sum(o.elapsed for o in outcomes),
        n_cycles=n_cycles,
    )


def comm_rate(outcome: CycleOutcome) -> RateReport:
    """Exchanges per unit time, overall and per phase index."""
    if not outcome.total_time > 0:
        raise UndefinedRateError("Communication rate is undefined over zero elapsed time")

    updates: Dict[int, int] = {}
    times: Dict[int, float] = {}
    for o in outcome.phases:
        updates[o.phase_index] = updates.get(o.phase_index, 0) + o.updates_count
        times[o.phase_index] = times.get(o.phase_index, 0.0) + o.elapsed

    per_phase = {i: (updates[i] / times[i] if times[i] > 0 else None) for i in sorted(updates)}
    return RateReport(outcome.total_updates / outcome.total_time, per_phase, updates, times)
