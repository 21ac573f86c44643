from __future__ import annotations

import dataclasses
import json
import logging
import sys
from configparser import ConfigParser
from os import PathLike
from pathlib import Path
from typing import Any, Sequence

from tandist.exceptions import ConfigurationError
from tandist.raster import QuadratureSpec
from tandist.register import SCHEDULE_KINDS
from tandist.transforms import SAMPLING_RANGE, TransformKind, TransformModel
from tandist.util import stable_hash

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

DEFAULT_OUT = Path("tandist-out")
RUN_ONLY_FIELDS = ("out", "threads")


@dataclasses.dataclass
class ModelConfig:
    kind: str = TransformKind.TRANSLATION_2D.value
    rotation_gain: float | None = None
    scale_gain: float | None = None
    domain: list[list[float]] | None = None
    calibrate: bool = False


@dataclasses.dataclass
class PatternConfig:
    """Reference pattern source: a JSON atom file, or a random pattern drawn from `seed`."""

    seed: int | None = None
    file: str | None = None


@dataclasses.dataclass
class ScheduleConfig:
    kind: str = "geometric"
    rho1: float | None = None
    alpha: float | None = None
    floor: float = 0.0
    levels: int = 6
    rhos: list[float] = dataclasses.field(default_factory=list)
    final_iterations: int = 1
    inner_iterations: int = 1
    rho_max: float = 16.0
    oracle_lambda: list[float] | None = None
    bruteforce: bool = False


@dataclasses.dataclass
class QuadratureConfig:
    half_width: float = 12.0
    step: float = 0.05
    boundary_tolerance: float = 1e-6
    max_points: int = 801


@dataclasses.dataclass
class ClassifyConfig:
    repetitions: int = 400
    queries: int = 1
    shared_atoms: int = 16
    specific_atoms: int = 4
    oracle_reference: bool = False
    report: str | None = None


@dataclasses.dataclass
class ExperimentConfig:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    pattern: PatternConfig = dataclasses.field(default_factory=PatternConfig)
    noise_levels: list[float] = dataclasses.field(default_factory=lambda: [0.0])
    rhos: list[float] = dataclasses.field(default_factory=lambda: [0.0])
    trials: int = 20
    schedule: ScheduleConfig = dataclasses.field(default_factory=ScheduleConfig)
    quadrature: QuadratureConfig = dataclasses.field(default_factory=QuadratureConfig)
    grid_points: int = 9
    transform_range: dict[str, list[float]] = dataclasses.field(default_factory=dict)
    target: list[float] | None = None
    classify: ClassifyConfig = dataclasses.field(default_factory=ClassifyConfig)
    out: str = str(DEFAULT_OUT)
    seed: int = 0
    threads: int = 1

    @classmethod
    def load(
        cls,
        path: str | PathLike | None = None,
        seed: int | None = None,
        out: str | PathLike | None = None,
        threads: int | None = None,
        sets: Sequence[str] = (),
    ) -> ExperimentConfig:
        """Read a JSON, TOML or INI file, then apply command-line overrides."""
        data = _read_file(Path(path)) if path is not None else {}
        for assignment in sets:
            key, value = _parse_assignment(assignment)
            _assign(data, key, value)
        if seed is not None:
            data["seed"] = seed
        if out is not None:
            data["out"] = str(out)
        if threads is not None:
            data["threads"] = threads

        config = _build(cls, data, "")
        config.validate()
        return config

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of the fields that determine the results; the output directory and thread count are left out."""
        data = self.to_dict()
        for key in RUN_ONLY_FIELDS:
            data.pop(key, None)
        return stable_hash(data)

    def preamble(self) -> dict[str, Any]:
        return {"config_hash": self.config_hash(), "seed": self.seed}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def validate(self) -> None:
        _require(self.model.kind in {kind.value for kind in TransformKind}, "model.kind", self.model.kind)
        try:
            model = self.build_model()
        except (ValueError, TypeError) as error:
            raise ConfigurationError(f"model: {error}") from error
        _require(bool(self.noise_levels), "noise_levels", "must not be empty")
        _require(all(nu >= 0.0 for nu in self.noise_levels), "noise_levels", self.noise_levels)
        _require(bool(self.rhos), "rhos", "must not be empty")
        _require(all(rho >= 0.0 for rho in self.rhos), "rhos", self.rhos)
        _require(self.trials >= 1, "trials", self.trials)
        _require(self.grid_points >= 2, "grid_points", self.grid_points)
        _require(self.threads >= 1, "threads", self.threads)
        _require(self.seed >= 0, "seed", self.seed)
        _require(self.pattern.seed is None or self.pattern.seed >= 0, "pattern.seed", self.pattern.seed)
        if self.target is not None:
            _require(len(self.target) == model.dim, "target", self.target)

        for axis, interval in self.transform_range.items():
            _require(axis in model.axes, f"transform_range.{axis}", "unknown axis")
            valid = isinstance(interval, list) and len(interval) == 2 and all(_is_number(value) for value in interval)
            _require(valid and interval[0] <= interval[1], f"transform_range.{axis}", interval)

        schedule = self.schedule
        _require(schedule.kind in SCHEDULE_KINDS, "schedule.kind", schedule.kind)
        _require(schedule.rho1 is None or schedule.rho1 > 0.0, "schedule.rho1", schedule.rho1)
        _require(schedule.alpha is None or 0.0 < schedule.alpha < 1.0, "schedule.alpha", schedule.alpha)
        _require(schedule.floor >= 0.0, "schedule.floor", schedule.floor)
        _require(schedule.levels >= 0, "schedule.levels", schedule.levels)
        _require(all(rho >= 0.0 for rho in schedule.rhos), "schedule.rhos", schedule.rhos)
        _require(schedule.final_iterations >= 0, "schedule.final_iterations", schedule.final_iterations)
        _require(schedule.inner_iterations >= 1, "schedule.inner_iterations", schedule.inner_iterations)
        _require(schedule.rho_max >= 0.0, "schedule.rho_max", schedule.rho_max)
        if schedule.kind == "fixed":
            _require(bool(schedule.rhos), "schedule.rhos", "a fixed schedule needs at least one radius")
        if schedule.oracle_lambda is not None:
            _require(len(schedule.oracle_lambda) == model.dim, "schedule.oracle_lambda", schedule.oracle_lambda)

        try:
            self.build_quadrature()
        except ValueError as error:
            raise ConfigurationError(f"quadrature: {error}") from error

        classify = self.classify
        _require(classify.repetitions >= 1, "classify.repetitions", classify.repetitions)
        _require(classify.queries >= 1, "classify.queries", classify.queries)
        _require(classify.shared_atoms >= 0, "classify.shared_atoms", classify.shared_atoms)
        _require(classify.specific_atoms >= 1, "classify.specific_atoms", classify.specific_atoms)

    def build_model(self) -> TransformModel:
        kwargs: dict[str, Any] = {"kind": TransformKind(self.model.kind)}
        if self.model.rotation_gain is not None:
            kwargs["rotation_gain"] = self.model.rotation_gain
        if self.model.scale_gain is not None:
            kwargs["scale_gain"] = self.model.scale_gain
        if self.model.domain is not None:
            kwargs["domain"] = tuple(tuple(interval) for interval in self.model.domain)
        return TransformModel(**kwargs)

    def build_quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(
            half_width=self.quadrature.half_width,
            step=self.quadrature.step,
            boundary_tolerance=self.quadrature.boundary_tolerance,
            max_points=self.quadrature.max_points,
        )

    def sampling_range(self) -> dict[str, tuple[float, float]]:
        ranges = {axis: (float(low), float(high)) for axis, (low, high) in self.transform_range.items()}
        return {**SAMPLING_RANGE, **ranges}


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "pattern": PatternConfig,
    "schedule": ScheduleConfig,
    "quadrature": QuadratureConfig,
    "classify": ClassifyConfig,
}


def _require(condition: bool, field: str, value: Any) -> None:
    if not condition:
        raise ConfigurationError(f"Invalid value for {field}: {value}")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_assignment(assignment: str) -> tuple[str, Any]:
    key, separator, value = assignment.partition("=")
    if not separator or not key.strip():
        raise ConfigurationError(f"Invalid override '{assignment}', expected key=value")
    return key.strip(), _parse_value(value.strip())


def _assign(data: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    node = data
    for parent in parents:
        child = node.setdefault(parent, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"Cannot override {key}: {parent} is not a section")
        node = child
    node[leaf] = value


def _read_file(path: Path) -> dict[str, Any]:
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".json":
            with path.open("r") as fp:
                data = json.load(fp)
        elif suffix == ".toml":
            with path.open("rb") as fp:
                data = tomllib.load(fp)
        elif suffix == ".ini":
            data = _read_ini(path)
        else:
            raise ConfigurationError(f"Unsupported config format '{suffix}': {path}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as error:
        raise ConfigurationError(f"Malformed config file {path}: {error}") from error
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping at the top level")
    logger.debug("Loaded config from %s", path)
    return data


def _read_ini(path: Path) -> dict[str, Any]:
    parser = ConfigParser()
    parser.read(path)
    data: dict[str, Any] = {}
    for section in parser.sections():
        values = {key: _parse_value(value) for key, value in parser[section].items()}
        if section == "experiment":
            data.update(values)
        else:
            data[section] = values
    return data


def _build(cls: type, data: dict[str, Any], prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigurationError(f"Invalid value for {prefix.rstrip('.') or 'config'}: expected a section")
    names = {field.name for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"Unknown config field: {prefix}{unknown[0]}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        section = _SECTIONS.get(key) if cls is ExperimentConfig else None
        kwargs[key] = _build(section, value, f"{prefix}{key}.") if section else value
    config = cls(**kwargs)
    _check_types(config, prefix)
    return config


_OPTIONAL_NUMBERS = {"rotation_gain", "scale_gain", "rho1", "alpha", "seed"}
_NUMERIC_LISTS = {"noise_levels", "rhos", "target", "oracle_lambda"}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_types(config: Any, prefix: str) -> None:
    defaults = type(config)()
    for field in dataclasses.fields(config):
        value = getattr(config, field.name)
        default = getattr(defaults, field.name)
        name = f"{prefix}{field.name}"
        if value is None or dataclasses.is_dataclass(default):
            continue
        if field.name in _NUMERIC_LISTS:
            _require(isinstance(value, list) and all(_is_number(item) for item in value), name, value)
            setattr(config, field.name, [float(item) for item in value])
            continue
        if default is None:
            if field.name in _OPTIONAL_NUMBERS:
                _require(_is_number(value), name, value)
            continue
        if isinstance(default, bool):
            _require(isinstance(value, bool), name, value)
        elif isinstance(default, int):
            _require(isinstance(value, int) and not isinstance(value, bool), name, value)
        elif isinstance(default, float):
            _require(isinstance(value, (int, float)) and not isinstance(value, bool), name, value)
            setattr(config, field.name, float(value))
        elif isinstance(default, str):
            _require(isinstance(value, str), name, value)
        elif isinstance(default, list):
            _require(isinstance(value, list), name, value)
        elif isinstance(default, dict):
            _require(isinstance(value, dict), name, value)
