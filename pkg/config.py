import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from control import (DEFAULT_GAIN, DEFAULT_RADIUS, DEFAULT_TIME_BUDGET, PAPER_GAINS, PAPER_PERIODS, PAPER_TARGETS,
                     PhaseSpec, steady_state_input)
from errors import ConfigurationError, InvalidArgumentError, SingularTargetError
from plant import DEFAULT_STEP, PlantModel

load_dotenv()

logger = logging.getLogger(__name__)


class Env:
    """Environment overrides; CLI flags take precedence over these."""
    CONFIG_PATH = os.getenv("TOC_CONFIG", "")
    SEED = os.getenv("TOC_SEED")
    OUT_DIR = os.getenv("TOC_OUT_DIR")
    WORKERS = os.getenv("TOC_WORKERS")
    LOG_LEVEL = os.getenv("TOC_LOG_LEVEL", "INFO")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantConfig(_Strict):
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0
    eta: float = 0.25
    actuation_noise_std: float = 0.05
    control_bounds: Tuple[float, float] = (-5.0, 5.0)
    constraint_box_half_width: float = 10.0
    integration_step: float = DEFAULT_STEP

    @field_validator("integration_step")
    @classmethod
    def _positive_step(cls, v):
        if not v > 0:
            raise ValueError("must be > 0")
        return v


class PhaseConfig(_Strict):
    index: int
    target: Tuple[float, float]
    neighborhood_radius: float = DEFAULT_RADIUS
    base_update_period: float
    # defaults to base_update_period
    fast_update_period: Optional[float] = None
    time_budget: float = DEFAULT_TIME_BUDGET
    gain: Tuple[Tuple[float, float], Tuple[float, float]] = DEFAULT_GAIN

    @model_validator(mode="after")
    def _periods(self):
        if self.fast_update_period is None:
            self.fast_update_period = self.base_update_period
        if not self.neighborhood_radius > 0:
            raise ValueError(f"phase {self.index}: neighborhood_radius must be > 0")
        if not 0 < self.fast_update_period <= self.base_update_period:
            raise ValueError(f"phase {self.index}: fast_update_period must satisfy "
                             f"0 < fast_update_period <= base_update_period")
        if self.base_update_period > self.time_budget:
            raise ValueError(f"phase {self.index}: base_update_period must not exceed time_budget")
        return self


def _paper_phases() -> List[PhaseConfig]:
    return [PhaseConfig(index=n, target=PAPER_TARGETS[n], base_update_period=PAPER_PERIODS[n], gain=PAPER_GAINS[n])
            for n in (1, 2, 3)]


class PolicyConfig(_Strict):
    name: str
    kind: Literal["fixed", "adaptive"]
    edge_radius: float = 0.3
    # interior (non-edge) period = scale x phase base period
    base_period_scale: float = 1.0

    @model_validator(mode="after")
    def _adaptive_fields(self):
        if not self.edge_radius > 0:
            raise ValueError(f"policy {self.name}: edge_radius must be > 0")
        if self.base_period_scale < 1:
            raise ValueError(f"policy {self.name}: base_period_scale must be >= 1")
        return self


def _default_policies() -> List[PolicyConfig]:
    return [
        PolicyConfig(name="fixed", kind="fixed"),
        PolicyConfig(name="adaptive", kind="adaptive", edge_radius=0.3, base_period_scale=2.0),
    ]


class TeConfig(_Strict):
    update_periods: List[float] = Field(default_factory=lambda: [0.1, 0.075, 0.05])
    phase_index: int = 2
    n_bins: int = 3
    quantiles: List[float] = Field(default_factory=lambda: [5.0, 95.0])
    k: int = 1
    l: int = 1
    n_shuffles: int = 100
    repeats: int = 10

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.quantiles) != self.n_bins - 1:
            raise ValueError(f"te: {self.n_bins} bins need {self.n_bins - 1} quantiles")
        if self.k < 1 or self.l < 1 or self.n_shuffles < 1 or self.repeats < 1:
            raise ValueError("te: k, l, n_shuffles and repeats must be >= 1")
        if not all(p > 0 for p in self.update_periods):
            raise ValueError("te: update_periods must be positive")
        return self


class ExperimentConfig(_Strict):
    plant: PlantConfig = Field(default_factory=PlantConfig)
    phases: List[PhaseConfig] = Field(default_factory=_paper_phases)
    policies: List[PolicyConfig] = Field(default_factory=_default_policies)
    n_priors: int = 50
    n_cycles: int = 3
    label_repeats: int = 1
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    te: TeConfig = Field(default_factory=TeConfig)

    @model_validator(mode="after")
    def _cross_checks(self):
        if [p.index for p in self.phases] != [1, 2, 3]:
            raise ValueError("phases must list indices 1, 2, 3 in order")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ValueError(f"policies: duplicate names in {names}")
        if self.n_priors < 1 or self.n_cycles < 1 or self.workers < 1:
            raise ValueError("n_priors, n_cycles and workers must be >= 1")
        if self.label_repeats < 1 or self.label_repeats % 2 == 0:
            raise ValueError("label_repeats must be a positive odd number")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.te.phase_index not in (1, 2, 3):
            raise ValueError("te: phase_index must be 1, 2 or 3")
        return self

    def policy(self, name: str) -> PolicyConfig:
        for p in self.policies:
            if p.name == name:
                return p
        raise ConfigurationError(f"No policy named '{name}' (have {[p.name for p in self.policies]})")

    def first_policy(self, kind: str) -> PolicyConfig:
        for p in self.policies:
            if p.kind == kind:
                return p
        raise ConfigurationError(f"Configuration has no {kind} policy")


def _describe(error: ValidationError) -> str:
    unknown = []
    problems = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"])
        if item["type"] == "extra_forbidden":
            unknown.append(where)
        else:
            problems.append(f"{where or 'config'}: {item['msg']}")
    parts = []
    if unknown:
        parts.append(f"unknown keys: {', '.join(unknown)}")
    parts.extend(problems)
    return "; ".join(parts)


def parse_config(data: Dict) -> ExperimentConfig:
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {_describe(e)}") from e
    # domain objects apply their own invariants
    model = build_model(config)
    for phase in build_phases(config):
        try:
            steady_state_input(phase.target, model)
        except SingularTargetError as e:
            raise ConfigurationError(f"phase {phase.index}: {e}") from e
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read configuration {path}: {e}") from e
    if not text.strip():
        logger.info(f"Configuration {path} is empty, using defaults")
        return parse_config({})
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Configuration {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Configuration {path} must hold a JSON object")
    return parse_config(data)


# fields that change where or how fast a run happens, never what it produces
RUN_ONLY_FIELDS = frozenset({"workers", "output_dir"})


def dump_config(config: ExperimentConfig, results_only: bool = False) -> str:
    data = config.model_dump(mode="json", exclude=set(RUN_ONLY_FIELDS) if results_only else None)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_config(config: ExperimentConfig, path):
    Path(path).write_text(dump_config(config), encoding="utf-8")


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(config, results_only=True).encode("utf-8")).hexdigest()


def apply_overrides(config: ExperimentConfig, seed: Optional[int] = None, out_dir: Optional[str] = None,
                    workers: Optional[int] = None) -> ExperimentConfig:
    """CLI values win over TOC_* environment values, which win over the file."""
    data = config.model_dump(mode="json")
    seed = seed if seed is not None else (Env.SEED or None)
    out_dir = out_dir if out_dir is not None else (Env.OUT_DIR or None)
    workers = workers if workers is not None else (Env.WORKERS or None)
    if seed is not None:
        data["seed"] = int(seed)
    if out_dir:
        data["output_dir"] = str(out_dir)
    if workers is not None:
        data["workers"] = int(workers)
    return parse_config(data)


def build_model(config: ExperimentConfig) -> PlantModel:
    p = config.plant
    try:
        return PlantModel(
            alpha=p.alpha, beta=p.beta, gamma=p.gamma, eta=p.eta,
            actuation_noise_std=p.actuation_noise_std,
            control_bounds=tuple(p.control_bounds),
            constraint_box_half_width=p.constraint_box_half_width,
        )
    except InvalidArgumentError as e:
        raise ConfigurationError(f"plant: {e}") from e


def build_phases(config: ExperimentConfig) -> Tuple[PhaseSpec, ...]:
    return tuple(
        PhaseSpec(
            index=p.index,
            target=p.target,
            neighborhood_radius=p.neighborhood_radius,
            base_update_period=p.base_update_period,
            fast_update_period=p.fast_update_period,
            time_budget=p.time_budget,
            gain=p.gain,
        )
        for p in config.phases
    )
