import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Sequence, Tuple

from errors import ConfigurationError, InvalidArgumentError, SingularTargetError
from plant import ControlInput, PlantModel, PlantState

PHASE_COUNT = 3

Gain = Tuple[Tuple[float, float], Tuple[float, float]]

DEFAULT_GAIN: Gain = ((2.0, 0.0), (0.0, 2.0))
DEFAULT_RADIUS = 0.1
DEFAULT_TIME_BUDGET = 1.5

# Operating points and update periods of the three-level cycle
PAPER_TARGETS = {1: (0.0, 0.0), 2: (2.5, 2.0), 3: (1.0, 3.0)}
PAPER_PERIODS = {1: 0.1, 2: 0.05, 3: 0.05}

# Gain x period is 1.3 to 1.7 on each axis, the pressure gain divided by
# 1 + eta*T at the target. The sampled loop settles at these periods and
# keeps oscillating once they are doubled.
PAPER_GAINS: Dict[int, Gain] = {
    1: ((17.0, 0.0), (0.0, 17.0)),
    2: ((26.0, 0.0), (0.0, 16.0)),
    3: ((34.0, 0.0), (0.0, 27.0)),
}


@dataclass(frozen=True)
class PhaseSpec:
    """
    One leg of the cycle: drive the plant into the closed disc of
    `neighborhood_radius` around `target` within `time_budget`.

    `base_update_period` is the exchange period of the fixed policy;
    `fast_update_period` is what the adaptive policy uses near the kernel edge.
    """
    index: int
    target: PlantState
    neighborhood_radius: float = DEFAULT_RADIUS
    base_update_period: float = 0.05
    fast_update_period: float = 0.05
    time_budget: float = DEFAULT_TIME_BUDGET
    gain: Gain = DEFAULT_GAIN

    def __post_init__(self):
        if self.index not in range(1, PHASE_COUNT + 1):
            raise ConfigurationError(f"Phase index must be 1, 2 or 3, got {self.index}")
        if not isinstance(self.target, PlantState):
            object.__setattr__(self, 'target', PlantState(*self.target))
        if not self.neighborhood_radius > 0:
            raise ConfigurationError(f"Phase {self.index}: neighborhood_radius must be > 0")
        if not 0 < self.fast_update_period <= self.base_update_period:
            raise ConfigurationError(
                f"Phase {self.index}: need 0 < fast_update_period <= base_update_period, "
                f"got {self.fast_update_period} and {self.base_update_period}")
        if self.time_budget < 0:
            raise ConfigurationError(f"Phase {self.index}: time_budget must be >= 0")
        if len(self.gain) != 2 or any(len(row) != 2 for row in self.gain):
            raise ConfigurationError(f"Phase {self.index}: gain must be a 2x2 matrix")
        object.__setattr__(self, 'gain', tuple(tuple(float(v) for v in row) for row in self.gain))


class SteadyStateInput(NamedTuple):
    control: ControlInput
    clamped: bool


def next_phase_index(index: int) -> int:
    """Cycle order 1 -> 2 -> 3 -> 1."""
    return index % PHASE_COUNT + 1


def successor(phases: Sequence[PhaseSpec], phase: PhaseSpec) -> PhaseSpec:
    return phase_by_index(phases, next_phase_index(phase.index))


def phase_by_index(phases: Sequence[PhaseSpec], index: int) -> PhaseSpec:
    for phase in phases:
        if phase.index == index:
            return phase
    raise ConfigurationError(f"No phase with index {index}")


def paper_phases(time_budget: float = DEFAULT_TIME_BUDGET) -> Tuple[PhaseSpec, ...]:
    return tuple(
        PhaseSpec(
            index=n,
            target=PlantState(*PAPER_TARGETS[n]),
            base_update_period=PAPER_PERIODS[n],
            fast_update_period=PAPER_PERIODS[n],
            time_budget=time_budget,
            gain=PAPER_GAINS[n],
        )
        for n in range(1, PHASE_COUNT + 1)
    )


def steady_state_input(target: PlantState, model: PlantModel) -> SteadyStateInput:
    denominator = 1.0 + model.eta * target.temperature
    if denominator == 0:
        raise SingularTargetError(f"1 + eta*T vanishes at target {tuple(target)}")
    raw = ControlInput(
        model.alpha * target.temperature,
        (model.gamma * target.pressure - model.beta * target.temperature) / denominator,
    )
    control = model.clamp(raw)
    return SteadyStateInput(control, control != raw)


def feedback_control(state: PlantState, phase: PhaseSpec, model: PlantModel,
                     clamp: bool = True) -> ControlInput:
    """u = u_ss(target) + K (target - state), saturated unless `clamp` is off."""
    if not state.is_finite():
        raise InvalidArgumentError(f"Non-finite state {tuple(state)}")
    u_ss = steady_state_input(phase.target, model).control
    e_t = phase.target.temperature - state.temperature
    e_p = phase.target.pressure - state.pressure
    (k11, k12), (k21, k22) = phase.gain
    control = ControlInput(u_ss.heat_rate + k11 * e_t + k12 * e_p,
                           u_ss.piston_rate + k21 * e_t + k22 * e_p)
    return model.clamp(control) if clamp else control


def distance(a: PlantState, b: PlantState) -> float:
    return math.hypot(a.temperature - b.temperature, a.pressure - b.pressure)


def in_neighborhood(state: PlantState, phase: PhaseSpec) -> bool:
    return distance(state, phase.target) <= phase.neighborhood_radius
