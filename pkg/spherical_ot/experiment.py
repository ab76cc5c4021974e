"""Experiment configuration: one JSON document per run, validated with pydantic."""

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .reflector import IntensityName, intensity_values
from .solver import Backend
from .sphere import DirectionSet, DiscreteMeasure, GridKind, QuadratureGrid, make_grid, named_directions


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SourceConfig(_Section):
    grid: GridKind = "fibonacci"
    n: int = Field(default=2000, ge=4)
    seed: int = 0
    intensity: IntensityName = "uniform"
    atoms_file: Optional[Path] = None
    points: Optional[List[List[float]]] = None
    weights: Optional[List[float]] = None


class TargetConfig(_Section):
    generator: DirectionSet = "antipodal"
    count: int = Field(default=0, ge=0)
    seed: int = 0
    offset_deg: float = 0.0
    atoms_file: Optional[Path] = None
    points: Optional[List[List[float]]] = None
    weights: Optional[List[float]] = None


class SolveOptions(_Section):
    backend: Backend = "auto"
    monotonicity_max_n: int = Field(default=3, ge=1, le=5)


class ReflectorOptions(_Section):
    tol: float = Field(default=1e-3, gt=0)
    max_iter: int = Field(default=2000, gt=0)
    rays: int = Field(default=1000, ge=0)


class RecoverOptions(_Section):
    grid_n: int = Field(default=0, ge=0, description="Extra evaluation grid for the map dump")


class VerifyOptions(_Section):
    suites: List[str] = Field(default_factory=lambda: ["inverse_map", "double_transform", "monotonicity",
                                                       "snell", "duality_bridge"])
    pairs: int = Field(default=10_000, ge=1)
    gradient_points: int = Field(default=1000, ge=1)
    instances: int = Field(default=5, ge=1)
    atoms: int = Field(default=6, ge=2, le=8)
    max_n: int = Field(default=4, ge=2, le=5)
    grid_n: int = Field(default=1000, ge=4)
    rays: int = Field(default=1000, ge=1)
    bridge_atoms: int = Field(default=10_000, ge=4)
    bridge_tol: float = Field(default=5e-3, gt=0)
    plan_file: Optional[Path] = None


class ExperimentConfig(_Section):
    kernel: str = "log"
    dimension: Literal[1, 2] = 2
    seed: int = 0
    output_dir: Path = Path("out")
    reflector_file: Optional[Path] = None
    source: SourceConfig = Field(default_factory=SourceConfig)
    target: TargetConfig = Field(default_factory=TargetConfig)
    solve: SolveOptions = Field(default_factory=SolveOptions)
    reflector: ReflectorOptions = Field(default_factory=ReflectorOptions)
    recover: RecoverOptions = Field(default_factory=RecoverOptions)
    verify: VerifyOptions = Field(default_factory=VerifyOptions)

    @model_validator(mode="after")
    def _files_exist(self) -> "ExperimentConfig":
        for path in (self.source.atoms_file, self.target.atoms_file, self.verify.plan_file, self.reflector_file):
            if path is not None and not path.is_file():
                raise ValueError(f"referenced file does not exist: {path}")
        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump, output location excluded."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` assignments; values parse as JSON when they can."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError("Override must look like dotted.key=value", override=item)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError("Override path crosses a scalar field", override=item)
            node = child
        node[parts[-1]] = _parse_value(raw)
    return data


def load_config(path: Optional[Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError("Config file not found", path=str(path)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("Config file is not valid JSON", path=str(path), error=str(exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError("Config must be a JSON object", path=str(path))
    data = apply_overrides(data, overrides)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("Invalid experiment config", errors=exc.error_count(), detail=str(exc)) from exc


def _inline_measure(points, weights, atoms_file, dim: int) -> Optional[DiscreteMeasure]:
    if atoms_file is not None:
        data = json.loads(Path(atoms_file).read_text(encoding="utf-8"))
        if int(data.get("dim", -1)) != dim:
            raise ConfigError("Atom file dimension does not match the config", path=str(atoms_file))
        return DiscreteMeasure.from_dict(data, probability=False)
    if points is None:
        return None
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != dim + 1:
        raise ConfigError("Inline points do not match the dimension", dim=dim)
    w = np.full(len(pts), 1.0 / len(pts)) if weights is None else np.asarray(weights, dtype=float)
    return DiscreteMeasure(pts, w, probability=False)


def build_grid(config: ExperimentConfig) -> QuadratureGrid:
    src = config.source
    return make_grid(src.grid, src.n, seed=src.seed, dim=config.dimension)


def build_source(config: ExperimentConfig) -> DiscreteMeasure:
    """Explicit atoms when given, otherwise the intensity-weighted grid."""
    src = config.source
    explicit = _inline_measure(src.points, src.weights, src.atoms_file, config.dimension)
    if explicit is not None:
        return explicit
    grid = build_grid(config)
    return grid.to_measure(intensity_values(src.intensity, grid))


def build_targets(config: ExperimentConfig) -> DiscreteMeasure:
    tgt = config.target
    explicit = _inline_measure(tgt.points, tgt.weights, tgt.atoms_file, config.dimension)
    if explicit is not None:
        return explicit
    directions = named_directions(tgt.generator, count=tgt.count, seed=tgt.seed, dim=config.dimension,
                                  offset=math.radians(tgt.offset_deg))
    if tgt.weights is None:
        return DiscreteMeasure.uniform(directions)
    return DiscreteMeasure(directions, np.asarray(tgt.weights, dtype=float), probability=False)
