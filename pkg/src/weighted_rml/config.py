"""Experiment configuration files (YAML) and shipped presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import yaml

from .solve import SolverConfig
from .weights import METHODS

PROBLEMS = ("quadratic", "banana", "darcy_case1", "darcy_case2", "darcy_case3", "linear_gaussian")
ALGORITHMS = ("all_critical_points", "single_critical_point", "laplace_baseline", "unweighted_rml")
ENUMERABLE = ("quadratic", "linear_gaussian")
DARCY_PROBES = ((0.1, 0.5), (0.5, 0.1), (0.9, 0.9))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    algorithm: str = "single_critical_point"
    n_samples: int = 1000
    seed: int = 0
    weight_method: str = "exact"
    rank: int | None = None
    oversample: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: tuple[int, int] = (20, 20)
    cd_inflation: float = 1.0
    # multiply all-critical-point weights by the per-draw root count
    root_count_factor: bool = False
    probes: tuple = ()
    problem_seed: int = 2021
    # Darcy prior and forward settings
    gamma: float = 1.12
    alpha: float = 0.12
    prior_boundary: str = "robin"
    flux_v: float | None = None
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm == "all_critical_points" and self.problem not in ENUMERABLE:
            raise ConfigError(f"all_critical_points needs an enumerable problem {ENUMERABLE}, got {self.problem!r}")
        if self.weight_method not in METHODS:
            raise ConfigError(f"unknown weight_method {self.weight_method!r}")
        if self.weight_method == "exact" and self.is_darcy:
            raise ConfigError("exact weights need second derivatives; Darcy problems support Gauss-Newton weights only")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.cd_inflation <= 0:
            raise ConfigError("cd_inflation must be positive")
        if self.rank is not None and self.rank < 1:
            raise ConfigError("rank must be >= 1")

    @property
    def is_darcy(self) -> bool:
        return self.problem.startswith("darcy")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["probes"] = [list(p) for p in self.probes]
        return d


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "problem" not in data:
        raise ConfigError("config needs a 'problem' entry")
    try:
        solver = data.pop("solver", None) or {}
        if not isinstance(solver, dict):
            raise ConfigError("'solver' must be a mapping")
        data["solver"] = SolverConfig(**solver)
        if "grid" in data:
            data["grid"] = tuple(int(v) for v in data["grid"])
        if "probes" in data:
            data["probes"] = tuple(tuple(float(c) for c in p) for p in data["probes"])
        if data.get("problem", "").startswith("darcy") and not data.get("probes"):
            data["probes"] = DARCY_PROBES
        return ExperimentConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("weighted_rml.presets").iterdir() if p.name.endswith(".yaml"))


def load_config(source: str | Path, **overrides) -> ExperimentConfig:
    """Load a YAML config file, or a shipped preset by name."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    elif str(source) in preset_names():
        text = resources.files("weighted_rml.presets").joinpath(f"{source}.yaml").read_text()
    else:
        raise ConfigError(f"no config file or preset named {str(source)!r}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    solver = changes.pop("solver", None)
    if isinstance(solver, dict):
        changes["solver"] = replace(config.solver, **solver)
    elif solver is not None:
        changes["solver"] = solver
    return replace(config, **changes)
