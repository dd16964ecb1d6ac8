"""
Experiment configuration: one JSON document fully specifies a run.

Every validation error names the dotted path of the offending field.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from cdp_lab.environments import DEFAULT_LIMITS, Limits, get_available_generators
from cdp_lab.errors import ArgumentError, ConfigError
from cdp_lab.olive.parameters import OliveConfig

logger = logging.getLogger("cdp_lab")

EXPERIMENT_KINDS = ("olive", "oliver", "guessm", "rank", "geometry", "lowerbound-demo")
CLASS_KINDS = ("realizable", "random", "tree", "file")


@dataclass
class EnvironmentSpec:
    generator: Optional[str] = None
    params: dict = field(default_factory=dict)
    file: Optional[str] = None
    sampling_only: bool = False


@dataclass
class ClassSpec:
    kind: str = "realizable"
    size: int = 16
    perturbation_scale: float = 0.3
    file: Optional[str] = None


@dataclass
class GeometrySpec:
    dimensions: list[int] = field(default_factory=lambda: list(range(2, 65)))
    betas: list[float] = field(default_factory=list)
    relative: list[float] = field(default_factory=lambda: [1 / 3, 1 / 2, 1.0])


@dataclass
class LowerBoundSpec:
    tree: dict = field(
        default_factory=lambda: {"actions": 2, "horizon": 3, "gap": 0.25}
    )
    chain: dict = field(
        default_factory=lambda: {
            "states_per_level": 4,
            "horizon": 2,
            "actions": 2,
            "gap": 0.25,
        }
    )
    epsilon: float = 0.1
    delta: float = 0.1
    baseline_initial_budget: int = 64
    baseline_max_budget: int = 2**20


@dataclass
class ExperimentConfig:
    kind: str
    seeds: list[int]
    output: str = "results"
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    function_class: ClassSpec = field(default_factory=ClassSpec)
    algorithm: Optional[OliveConfig] = None
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    lowerbound: LowerBoundSpec = field(default_factory=LowerBoundSpec)
    limits: Limits = DEFAULT_LIMITS
    n_jobs: int = 1
    trace_audit: bool = False

    def echo(self) -> dict:
        """Plain-data copy of every field that affects results"""
        document = asdict(self)
        for key in ("output", "n_jobs"):
            document.pop(key)
        return document


def _require(document: dict, key: str, path: str) -> Any:
    if key not in document:
        raise ConfigError(f"{path}.{key}" if path else key, "is required")
    return document[key]


def _expect_type(value: Any, kind: Union[type, tuple], path: str) -> Any:
    if isinstance(value, bool) and kind in (int, float, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not isinstance(value, kind):
        expected = kind.__name__ if isinstance(kind, type) else " or ".join(k.__name__ for k in kind)
        raise ConfigError(path, f"expected {expected}, got {type(value).__name__}")
    return value


def _build(cls: type, document: Any, path: str):
    """Instantiate a flat dataclass from a dict, rejecting unknown keys"""
    _expect_type(document, dict, path)
    names = {f.name for f in fields(cls)}
    for key in document:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        return cls(**document)
    except ArgumentError as e:
        raise ConfigError(path, str(e))
    except TypeError as e:
        raise ConfigError(path, str(e))


def _resolve_file(value: Optional[str], path: str, base_dir: Path) -> Optional[str]:
    if value is None:
        return None
    _expect_type(value, str, path)
    resolved = (base_dir / value).resolve()
    if not resolved.exists():
        raise ConfigError(path, f"file {resolved} does not exist")
    return str(resolved)


def _parse_algorithm(document: Any, path: str) -> OliveConfig:
    _expect_type(document, dict, path)
    for key in ("epsilon", "delta"):
        _require(document, key, path)
    document = dict(document)
    document.setdefault("rank", 1)
    document.setdefault("zeta", 2.0)
    for key in ("epsilon", "delta", "zeta", "theta", "theta_m", "phi"):
        if document.get(key) is not None:
            _expect_type(document[key], (int, float), f"{path}.{key}")
    for key in ("rank", "n_est", "n_eval", "n", "max_iterations", "max_episodes", "batch_size"):
        if document.get(key) is not None:
            _expect_type(document[key], int, f"{path}.{key}")

    for key in document:
        if key not in OliveConfig.field_names():
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        return OliveConfig(**document)
    except ArgumentError as e:
        message = str(e)
        field_name = message.split(" ", 1)[0]
        where = f"{path}.{field_name}" if field_name in OliveConfig.field_names() else path
        raise ConfigError(where, message)


def parse_config(document: dict, base_dir: Union[str, Path] = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    _expect_type(document, dict, "config")

    kind = _require(document, "kind", "")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError("kind", f"must be one of {EXPERIMENT_KINDS}, got {kind!r}")

    seeds = _expect_type(_require(document, "seeds", ""), list, "seeds")
    if not seeds:
        raise ConfigError("seeds", "must list at least one seed")
    for i, seed in enumerate(seeds):
        _expect_type(seed, int, f"seeds[{i}]")

    known = {f.name for f in fields(ExperimentConfig)}
    for key in document:
        if key not in known:
            raise ConfigError(key, "unknown field")

    environment = _build(EnvironmentSpec, document.get("environment", {}), "environment")
    environment.file = _resolve_file(environment.file, "environment.file", base_dir)
    _expect_type(environment.sampling_only, bool, "environment.sampling_only")
    _expect_type(environment.params, dict, "environment.params")
    generators = get_available_generators()
    if environment.generator is not None and environment.generator not in generators:
        raise ConfigError(
            "environment.generator",
            f"unknown generator {environment.generator!r}; choose from {sorted(generators)}",
        )
    if kind in ("olive", "oliver", "guessm", "rank") and not (
        environment.generator or environment.file
    ):
        raise ConfigError("environment", "needs a generator or a file")

    function_class = _build(ClassSpec, document.get("function_class", {}), "function_class")
    if function_class.kind not in CLASS_KINDS:
        raise ConfigError(
            "function_class.kind", f"must be one of {CLASS_KINDS}, got {function_class.kind!r}"
        )
    if function_class.kind == "file":
        if function_class.file is None:
            raise ConfigError("function_class.file", "is required for kind 'file'")
        function_class.file = _resolve_file(function_class.file, "function_class.file", base_dir)
    if function_class.size < 1:
        raise ConfigError("function_class.size", "must be at least 1")

    algorithm = None
    if kind in ("olive", "oliver", "guessm"):
        algorithm = _parse_algorithm(_require(document, "algorithm", ""), "algorithm")
    elif "algorithm" in document:
        algorithm = _parse_algorithm(document["algorithm"], "algorithm")

    limits = _build(Limits, document.get("limits", {}), "limits")
    for f in fields(Limits):
        _expect_type(getattr(limits, f.name), int, f"limits.{f.name}")

    n_jobs = _expect_type(document.get("n_jobs", 1), int, "n_jobs")
    if n_jobs == 0:
        raise ConfigError("n_jobs", "must be nonzero")
    trace_audit = _expect_type(document.get("trace_audit", False), bool, "trace_audit")
    if trace_audit and kind not in ("olive", "oliver"):
        raise ConfigError("trace_audit", f"applies to olive and oliver runs, not {kind}")
    output = _expect_type(document.get("output", "results"), str, "output")

    config = ExperimentConfig(
        kind=kind,
        seeds=list(seeds),
        output=output,
        environment=environment,
        function_class=function_class,
        algorithm=algorithm,
        geometry=_build(GeometrySpec, document.get("geometry", {}), "geometry"),
        lowerbound=_build(LowerBoundSpec, document.get("lowerbound", {}), "lowerbound"),
        limits=limits,
        n_jobs=n_jobs,
        trace_audit=trace_audit,
    )
    logger.debug(f"Parsed {kind} config with {len(seeds)} seeds")
    return config


def load_config(
    path: Optional[Union[str, Path]],
    kind: Optional[str] = None,
    algorithm: Optional[dict[str, Any]] = None,
    environment_file: Optional[Union[str, Path]] = None,
    class_file: Optional[Union[str, Path]] = None,
    **overrides,
) -> ExperimentConfig:
    """
    Read and validate a config file. `kind` replaces the document's kind (the
    CLI subcommand decides what runs); `algorithm` entries replace fields of
    the algorithm block, the two files replace the environment and class
    sources, and `overrides` replace top-level fields. None values are
    ignored. Without a path the document is built from the overrides alone.
    """
    if path is None:
        document: dict = {}
        base_dir = Path.cwd()
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file {path} does not exist")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON: {e}")
        if not isinstance(document, dict):
            raise ConfigError("config", "must be a JSON object")
        base_dir = path.parent

    if kind is not None:
        if document.get("kind") not in (None, kind):
            logger.info(f"Running the config as {kind} instead of {document['kind']}")
        document["kind"] = kind
    document.update({k: v for k, v in overrides.items() if v is not None})

    algorithm = {k: v for k, v in (algorithm or {}).items() if v is not None}
    if algorithm:
        block = document.get("algorithm", {})
        _expect_type(block, dict, "algorithm")
        document["algorithm"] = {**block, **algorithm}
    if environment_file is not None:
        block = document.get("environment", {})
        _expect_type(block, dict, "environment")
        document["environment"] = {
            **block,
            "generator": None,
            "params": {},
            "file": str(Path(environment_file).resolve()),
        }
    if class_file is not None:
        block = document.get("function_class", {})
        _expect_type(block, dict, "function_class")
        document["function_class"] = {
            **block,
            "kind": "file",
            "file": str(Path(class_file).resolve()),
        }
    return parse_config(document, base_dir=base_dir)
