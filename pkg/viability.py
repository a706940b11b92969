import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from commloop import CommPolicy, Violation, run_cycle, run_phase
from control import PhaseSpec, distance, next_phase_index, phase_by_index, successor
from errors import ConfigurationError, InvalidArgumentError
from plant import DEFAULT_STEP, PlantModel, PlantState
from seeding import SeedStreams

logger = logging.getLogger(__name__)

BLUE_MATCH_FRACTION = 0.2


class Label(str, Enum):
    GREEN = "green"
    RED = "red"
    BLUE = "blue"
    YELLOW = "yellow"


class LabeledPrior(NamedTuple):
    point: PlantState
    label: Label
    cycle_viable: bool = False

    @property
    def start_viable(self) -> bool:
        return self.label in (Label.GREEN, Label.YELLOW)


@dataclass
class KernelEstimate:
    """
    Monte-Carlo picture of the viable region of one level.

    Priors are labeled green (a rollout of the next phase from here arrives),
    blue (an arrival of the previous phase landed on this prior), yellow
    (both) or red (neither).
    """
    phase_index: int
    level_radius: float
    priors: List[LabeledPrior]
    viable_fraction: float
    width: float
    rollout_updates: int = 0
    rollout_time: float = 0.0
    cycle_viable_fraction: Optional[float] = None
    unmatched_arrivals: List[PlantState] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_priors(self) -> int:
        return len(self.priors)

    def label_counts(self) -> Dict[str, int]:
        counts = {label.value: 0 for label in Label}
        for prior in self.priors:
            counts[prior.label.value] += 1
        return counts

    def green_points(self) -> List[PlantState]:
        return [p.point for p in self.priors if p.start_viable]

    def rollout_rate(self) -> Optional[float]:
        return self.rollout_updates / self.rollout_time if self.rollout_time > 0 else None

    def mean_updates(self) -> float:
        return self.rollout_updates / self.n_priors if self.priors else 0.0


class _Rollout(NamedTuple):
    label: Label
    arrival: Optional[PlantState]
    updates: int
    elapsed: float


def sample_priors(center: PlantState, radius: float, n: int, rng: np.random.Generator) -> List[PlantState]:
    """Uniform samples from the closed disc (area-correct radial density)."""
    if not radius > 0:
        raise InvalidArgumentError(f"Prior radius must be > 0, got {radius}")
    if n < 1:
        raise InvalidArgumentError(f"Need at least one prior, got {n}")
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    xs = center.temperature + r * np.cos(theta)
    ys = center.pressure + r * np.sin(theta)
    return [PlantState(float(x), float(y)) for x, y in zip(xs, ys)]


def _classify(prior, phase, policy, model, rngs, h) -> _Rollout:
    outcomes = [run_phase(prior, phase, policy, model, rng, h=h) for rng in rngs]
    wins = [o for o in outcomes if o.reached and o.violation == Violation.NONE]
    label = Label.GREEN if 2 * len(wins) > len(outcomes) else Label.RED
    arrival = wins[0].final_state if label == Label.GREEN else None
    return _Rollout(label, arrival,
                    sum(o.updates_count for o in outcomes),
                    sum(o.elapsed for o in outcomes))


def classify_start(prior: PlantState, phase: PhaseSpec, policy: CommPolicy, model: PlantModel,
                   rng: Optional[np.random.Generator], repeats: int = 1, h: float = DEFAULT_STEP) -> Label:
    """
    Green iff running `phase` (the phase that departs from the prior's level)
    reaches its target without violation. With `repeats` > 1 the label is
    the majority over independent rollouts sharing `rng`.
    """
    if repeats < 1 or repeats % 2 == 0:
        raise InvalidArgumentError(f"repeats must be a positive odd number, got {repeats}")
    return _classify(prior, phase, policy, model, [rng] * repeats, h).label


def is_edge_state(state: PlantState, labeled: Sequence[LabeledPrior], rho: float) -> bool:
    """
    True if the closed disc of radius rho about `state` holds both viable and
    non-viable starting priors, or holds no prior at all.
    """
    if not rho > 0:
        raise InvalidArgumentError(f"Edge radius must be > 0, got {rho}")
    viable = non_viable = False
    found = False
    for prior in labeled:
        if distance(state, prior.point) <= rho:
            found = True
            if prior.start_viable:
                viable = True
            else:
                non_viable = True
            if viable and non_viable:
                return True
    return not found


def kernel_width(estimate: KernelEstimate) -> float:
    return estimate.viable_fraction * math.pi * estimate.level_radius ** 2


def _run_all(tasks, workers):
    """Runs keyed callables, returning results by key independent of completion order."""
    if workers <= 1:
        return {key: fn() for key, fn in tasks}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {key: executor.submit(fn) for key, fn in tasks}
        return {key: future.result() for key, future in futures.items()}


def draw_prior_sets(phases: Sequence[PhaseSpec], n_priors: int, streams: SeedStreams) -> Dict[int, List[PlantState]]:
    """One seeded prior set per level, shared by every policy that is compared on it."""
    return {
        phase.index: sample_priors(phase.target, phase.neighborhood_radius, n_priors,
                                   streams.generator("priors", phase.index))
        for phase in phases
    }


def _finalize(level: PhaseSpec, priors: List[PlantState], rollouts: List[_Rollout],
              arrivals: List[PlantState], settings: Dict[str, Any]) -> KernelEstimate:
    blue = [False] * len(priors)
    unmatched: List[PlantState] = []
    match_radius = level.neighborhood_radius * BLUE_MATCH_FRACTION
    for arrival in arrivals:
        nearest = min(range(len(priors)), key=lambda i: distance(arrival, priors[i]))
        if distance(arrival, priors[nearest]) <= match_radius:
            blue[nearest] = True
        else:
            unmatched.append(arrival)

    labeled = []
    for point, rollout, is_blue in zip(priors, rollouts, blue):
        green = rollout.label == Label.GREEN
        if green and is_blue:
            label = Label.YELLOW
        elif green:
            label = Label.GREEN
        elif is_blue:
            label = Label.BLUE
        else:
            label = Label.RED
        labeled.append(LabeledPrior(point, label))

    n_green = sum(1 for p in labeled if p.start_viable)
    estimate = KernelEstimate(
        phase_index=level.index,
        level_radius=level.neighborhood_radius,
        priors=labeled,
        viable_fraction=n_green / len(labeled),
        width=0.0,
        rollout_updates=sum(r.updates for r in rollouts),
        rollout_time=sum(r.elapsed for r in rollouts),
        unmatched_arrivals=unmatched,
        settings=settings,
    )
    estimate.width = kernel_width(estimate)
    return estimate


def estimate_kernel(phases: Sequence[PhaseSpec], policies: Mapping[int, CommPolicy], model: PlantModel,
                    n_priors: int, n_cycles: int, streams: SeedStreams,
                    priors: Optional[Mapping[int, List[PlantState]]] = None,
                    repeats: int = 1, workers: int = 1, h: float = DEFAULT_STEP) -> List[KernelEstimate]:
    """
    Estimates the kernel of every level by rolling out, from each prior of
    level n, the phase that departs from it (toward level n+1).

    `policies` maps a phase index to the policy that runs that phase. Every
    rollout draws its noise from the stream ("rollout", level, prior, repeat),
    so two policies compared on the same `priors` see identical noise.
    Green priors are also run through `n_cycles` full cycles to flag
    cycle viability; `n_cycles=0` skips that pass.
    """
    if n_priors < 1:
        raise InvalidArgumentError(f"n_priors must be >= 1, got {n_priors}")
    if repeats < 1 or repeats % 2 == 0:
        raise InvalidArgumentError(f"repeats must be a positive odd number, got {repeats}")
    if priors is None:
        priors = draw_prior_sets(phases, n_priors, streams)

    tasks = []
    for level in phases:
        departing = successor(phases, level)
        if departing.index not in policies:
            raise ConfigurationError(f"No policy configured for phase {departing.index}")
        policy = policies[departing.index]
        for i, prior in enumerate(priors[level.index]):
            rngs = [streams.generator("rollout", level.index, i, r) for r in range(repeats)]
            tasks.append(((level.index, i),
                          lambda p=prior, ph=departing, pol=policy, g=rngs: _classify(p, ph, pol, model, g, h)))

    logger.info(f"Classifying {len(tasks)} priors over {len(phases)} levels with {workers} worker(s)")
    results = _run_all(tasks, workers)

    estimates = []
    for level in phases:
        level_priors = priors[level.index]
        rollouts = [results[(level.index, i)] for i in range(len(level_priors))]
        # arrivals into this level come from green rollouts that departed the previous level
        previous = phase_by_index(phases, _previous_index(level.index))
        arrivals = [results[(previous.index, i)].arrival for i in range(len(priors[previous.index]))
                    if results[(previous.index, i)].label == Label.GREEN]
        settings = {
            "policy": repr(policies[successor(phases, level).index]),
            "actuation_noise_std": model.actuation_noise_std,
            "seed": streams.master_seed,
            "n_cycles": n_cycles,
            "repeats": repeats,
        }
        estimate = _finalize(level, level_priors, rollouts, arrivals, settings)
        logger.info(f"Level {level.index}: viable fraction {estimate.viable_fraction:.3f}, "
                    f"width {estimate.width:.4f}, labels {estimate.label_counts()}")
        estimates.append(estimate)

    if n_cycles > 0:
        _mark_cycle_viability(estimates, phases, policies, model, n_cycles, streams, workers, h)
    return estimates


def _previous_index(index: int) -> int:
    return next_phase_index(next_phase_index(index))


def _mark_cycle_viability(estimates, phases, policies, model, n_cycles, streams, workers, h):
    """Flags green priors from which the whole cycle keeps running for n_cycles."""
    tasks = []
    for estimate in estimates:
        for i, prior in enumerate(estimate.priors):
            if prior.start_viable:
                rng = streams.generator("cycle", estimate.phase_index, i)
                tasks.append(((estimate.phase_index, i),
                              lambda p=prior.point, g=rng: run_cycle(p, phases, policies, model, g, n_cycles, h=h).viable))
    results = _run_all(tasks, workers)

    for estimate in estimates:
        flagged = []
        for i, prior in enumerate(estimate.priors):
            flagged.append(prior._replace(cycle_viable=results.get((estimate.phase_index, i), False)))
        estimate.priors = flagged
        estimate.cycle_viable_fraction = sum(1 for p in flagged if p.cycle_viable) / len(flagged)


def estimate_capture_basin(start_level: PhaseSpec, target_phase: PhaseSpec, time_window: float,
                           policy: CommPolicy, model: PlantModel, n_priors: int, streams: SeedStreams,
                           priors: Optional[List[PlantState]] = None, workers: int = 1,
                           h: float = DEFAULT_STEP) -> KernelEstimate:
    """
    Priors of `start_level` from which `target_phase` reaches its target
    within `time_window`, with no cycling requirement.
    """
    if not time_window > 0:
        raise InvalidArgumentError(f"time_window must be > 0, got {time_window}")
    if priors is None:
        priors = sample_priors(start_level.target, start_level.neighborhood_radius, n_priors,
                               streams.generator("priors", start_level.index))
    windowed = replace(target_phase, time_budget=time_window)

    tasks = [((start_level.index, i),
              lambda p=prior, g=streams.generator("basin", start_level.index, i):
              _classify(p, windowed, policy, model, [g], h))
             for i, prior in enumerate(priors)]
    results = _run_all(tasks, workers)
    rollouts = [results[(start_level.index, i)] for i in range(len(priors))]

    settings = {
        "policy": repr(policy),
        "target_phase": target_phase.index,
        "time_window": time_window,
        "actuation_noise_std": model.actuation_noise_std,
        "seed": streams.master_seed,
    }
    estimate = _finalize(start_level, priors, rollouts, [], settings)
    logger.info(f"Capture basin of phase {target_phase.index} from level {start_level.index} "
                f"within {time_window}: fraction {estimate.viable_fraction:.3f}")
    return estimate


def labels_by_phase(estimates: Sequence[KernelEstimate], phases: Sequence[PhaseSpec]) -> Dict[int, List[LabeledPrior]]:
    """Labeled priors keyed by the phase that departs from their level (the phase they were classified with)."""
    by_level = {e.phase_index: e.priors for e in estimates}
    return {successor(phases, phase_by_index(phases, level)).index: labeled
            for level, labeled in by_level.items()}


def green_indices(estimate: KernelEstimate) -> Tuple[int, ...]:
    return tuple(i for i, p in enumerate(estimate.priors) if p.start_viable)


