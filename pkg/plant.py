import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from errors import InvalidArgumentError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.005


class PlantState(NamedTuple):
    """Normalized temperature and pressure; (0, 0) is ambient."""
    temperature: float
    pressure: float

    def is_finite(self) -> bool:
        return math.isfinite(self.temperature) and math.isfinite(self.pressure)


class ControlInput(NamedTuple):
    heat_rate: float
    piston_rate: float

    def is_finite(self) -> bool:
        return math.isfinite(self.heat_rate) and math.isfinite(self.piston_rate)


@dataclass(frozen=True)
class PlantModel:
    """
    Surrogate heated, piston-driven plant:

        dT/dt = -alpha*T + u1
        dP/dt = beta*T - gamma*P + eta*T*u2 + u2

    The origin is an equilibrium under zero input. Leaving the box
    [-B, B]^2 makes a trajectory non-viable.
    """
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0
    eta: float = 0.25
    actuation_noise_std: float = 0.05
    control_bounds: Tuple[float, float] = (-5.0, 5.0)
    constraint_box_half_width: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be > 0, got {self.alpha}")
        if not self.gamma > 0:
            raise InvalidArgumentError(f"gamma must be > 0, got {self.gamma}")
        if self.beta < 0 or self.eta < 0:
            raise InvalidArgumentError(f"beta and eta must be >= 0, got beta={self.beta}, eta={self.eta}")
        if not self.constraint_box_half_width > 0:
            raise InvalidArgumentError(f"constraint_box_half_width must be > 0, got {self.constraint_box_half_width}")
        if self.actuation_noise_std < 0:
            raise InvalidArgumentError(f"actuation_noise_std must be >= 0, got {self.actuation_noise_std}")
        u_min, u_max = self.control_bounds
        if not u_min < u_max:
            raise InvalidArgumentError(f"control_bounds must satisfy u_min < u_max, got {self.control_bounds}")

    def clamp(self, control: ControlInput) -> ControlInput:
        u_min, u_max = self.control_bounds
        return ControlInput(
            min(max(control.heat_rate, u_min), u_max),
            min(max(control.piston_rate, u_min), u_max),
        )

    def in_box(self, state: PlantState) -> bool:
        b = self.constraint_box_half_width
        return abs(state.temperature) <= b and abs(state.pressure) <= b


class HoldResult(NamedTuple):
    final: PlantState
    applied: ControlInput
    # (time offset within the hold, state after the integrator step)
    path: List[Tuple[float, PlantState]]
    viable: bool


def derivative(state: PlantState, control: ControlInput, model: PlantModel) -> Tuple[float, float]:
    if not (state.is_finite() and control.is_finite()):
        raise InvalidArgumentError(f"Non-finite state {tuple(state)} or input {tuple(control)}")
    t, p = state
    u1, u2 = control
    return (-model.alpha * t + u1,
            model.beta * t - model.gamma * p + model.eta * t * u2 + u2)


def _rates(t, p, u1, u2, model):
    return (-model.alpha * t + u1,
            model.beta * t - model.gamma * p + model.eta * t * u2 + u2)


def step_rk4(state: PlantState, control: ControlInput, h: float, model: PlantModel) -> PlantState:
    """Classical RK4 step with the control held constant."""
    if h < 0:
        raise InvalidArgumentError(f"Step must be non-negative, got {h}")
    # validates finiteness once; the stages below use the raw arithmetic
    k1t, k1p = derivative(state, control, model)
    if h == 0:
        return state
    t, p = state
    u1, u2 = control
    k2t, k2p = _rates(t + 0.5 * h * k1t, p + 0.5 * h * k1p, u1, u2, model)
    k3t, k3p = _rates(t + 0.5 * h * k2t, p + 0.5 * h * k2p, u1, u2, model)
    k4t, k4p = _rates(t + h * k3t, p + h * k3p, u1, u2, model)
    return PlantState(
        t + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
        p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )


def apply_actuation_noise(commanded: ControlInput, model: PlantModel,
                          rng: Optional[np.random.Generator]) -> ControlInput:
    """Perturbs each commanded component once per hold interval and clamps to the bounds."""
    if model.actuation_noise_std > 0:
        if rng is None:
            raise InvalidArgumentError("A random stream is required when actuation noise is enabled")
        noise = rng.normal(0.0, model.actuation_noise_std, size=2)
        commanded = ControlInput(commanded.heat_rate + float(noise[0]),
                                 commanded.piston_rate + float(noise[1]))
    return model.clamp(commanded)


def simulate_hold(state: PlantState, commanded: ControlInput, duration: float, h: float,
                  model: PlantModel, rng: Optional[np.random.Generator]) -> HoldResult:
    """
    Zero-order hold of one control value for `duration`.

    Integrates with fixed RK4 steps of size h; the last step is truncated so
    the hold ends exactly at `duration`. Integration stops early if the state
    leaves the constraint box, and the result is flagged non-viable.
    """
    if duration < 0:
        raise InvalidArgumentError(f"Hold duration must be non-negative, got {duration}")
    if not h > 0:
        raise InvalidArgumentError(f"Integrator step must be positive, got {h}")
    if not state.is_finite():
        raise InvalidArgumentError(f"Non-finite state {tuple(state)}")

    applied = apply_actuation_noise(commanded, model, rng)
    path: List[Tuple[float, PlantState]] = []
    if duration == 0:
        return HoldResult(state, applied, path, model.in_box(state))

    n_steps = max(1, math.ceil(duration / h - 1e-9))
    current = state
    for i in range(n_steps):
        dt = h if i < n_steps - 1 else duration - (n_steps - 1) * h
        current = step_rk4(current, applied, dt, model)
        offset = duration if i == n_steps - 1 else (i + 1) * h
        path.append((offset, current))
        if not (current.is_finite() and model.in_box(current)):
            logger.debug(f"State left the constraint box at {tuple(current)}")
            return HoldResult(current, applied, path, False)

    return HoldResult(current, applied, path, True)
