"""
Versioned JSON documents for environments, function classes and
factorizations. Floats are written with full precision, so a round trip
reproduces every table bit for bit.
"""

import hashlib
import json
import logging
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

from cdp_lab.core import TabularCDP
from cdp_lab.environments.lower_bounds import BanditChainMDP, TreeLowerBoundMDP
from cdp_lab.environments.mdp import LowRankMDP, TabularMDP
from cdp_lab.environments.pomdp import ReactivePOMDP
from cdp_lab.errors import ArgumentError
from cdp_lab.function_class import FunctionClass
from cdp_lab.oracle import BellmanFactorization

logger = logging.getLogger("cdp_lab")

SCHEMA_VERSION = 1

ENVIRONMENT_KINDS: dict[str, type[TabularCDP]] = {
    cls.kind: cls
    for cls in (
        TabularCDP,
        TabularMDP,
        LowRankMDP,
        ReactivePOMDP,
        TreeLowerBoundMDP,
        BanditChainMDP,
    )
}

# How each dataclass field is stored
_ARRAY_FIELDS = {"init", "best_actions"}
_ARRAY_TUPLE_FIELDS = {
    "transitions",
    "reward_mean",
    "emissions",
    "left_factors",
    "right_factors",
}


def _to_json(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (tuple, list)):
        return [_to_json(item) for item in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def environment_to_dict(env: TabularCDP) -> dict:
    document = {
        "schema": "cdp_lab.environment",
        "version": SCHEMA_VERSION,
        "kind": env.kind,
    }
    for f in fields(env):
        document[f.name] = _to_json(getattr(env, f.name))
    return document


def environment_from_dict(document: dict) -> TabularCDP:
    _check_header(document, "cdp_lab.environment")
    kind = document.get("kind")
    if kind not in ENVIRONMENT_KINDS:
        raise ArgumentError(f"Unknown environment kind: {kind}")
    cls = ENVIRONMENT_KINDS[kind]

    values = {}
    for f in fields(cls):
        if f.name not in document:
            continue
        raw = document[f.name]
        if raw is None:
            values[f.name] = None
        elif f.name in _ARRAY_FIELDS:
            values[f.name] = np.asarray(raw)
        elif f.name in _ARRAY_TUPLE_FIELDS:
            values[f.name] = tuple(np.asarray(table, dtype=float) for table in raw)
        elif f.name == "reward_scale":
            values[f.name] = tuple(float(x) for x in raw)
        else:
            values[f.name] = raw

    if "init" in values:
        values["init"] = values["init"].astype(float)
    return cls(**values)


def class_to_dict(fclass: FunctionClass) -> dict:
    document = {
        "schema": "cdp_lab.function_class",
        "version": SCHEMA_VERSION,
        "action_count": fclass.action_count,
        "qstar_index": fclass.qstar_index,
        "log_size": fclass.log_size,
    }
    if fclass.qvalues is not None:
        document["qvalues"] = _to_json(fclass.qvalues)
    else:
        document["policies"] = _to_json(fclass.policies)
        document["vvalues"] = _to_json(fclass.vvalues)
    return document


def class_from_dict(document: dict) -> FunctionClass:
    _check_header(document, "cdp_lab.function_class")
    if "qvalues" in document:
        qvalues = tuple(np.asarray(table, dtype=float) for table in document["qvalues"])
        return FunctionClass.from_tables(qvalues, qstar_index=document.get("qstar_index"))

    return FunctionClass(
        policies=tuple(np.asarray(table, dtype=np.int64) for table in document["policies"]),
        vvalues=tuple(np.asarray(table, dtype=float) for table in document["vvalues"]),
        action_count=int(document["action_count"]),
        qstar_index=document.get("qstar_index"),
        log_size=document.get("log_size"),
    )


def factorization_to_dict(fact: BellmanFactorization) -> dict:
    return {
        "schema": "cdp_lab.factorization",
        "version": SCHEMA_VERSION,
        "level": fact.level,
        "nu": fact.nu.tolist(),
        "xi": fact.xi.tolist(),
        "zeta": fact.zeta,
        "approximation": fact.approximation,
    }


def factorization_from_dict(document: dict) -> BellmanFactorization:
    _check_header(document, "cdp_lab.factorization")
    return BellmanFactorization(
        level=int(document["level"]),
        nu=np.asarray(document["nu"], dtype=float),
        xi=np.asarray(document["xi"], dtype=float),
        zeta=float(document["zeta"]),
        approximation=float(document.get("approximation", 0.0)),
    )


def _check_header(document: dict, schema: str) -> None:
    if document.get("schema") != schema:
        raise ArgumentError(f"Expected a {schema} document, got {document.get('schema')}")
    if document.get("version") != SCHEMA_VERSION:
        raise ArgumentError(
            f"Unsupported {schema} version {document.get('version')}; "
            f"this build reads version {SCHEMA_VERSION}"
        )


def canonical_json(document: Any) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"))


def fingerprint(env: TabularCDP) -> str:
    """sha256 of the canonical serialized environment"""
    return hashlib.sha256(canonical_json(environment_to_dict(env)).encode()).hexdigest()


def write_json(path: Union[str, Path], document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    if not path.exists():
        raise ArgumentError(f"File not found: {path}")
    return json.loads(path.read_text())


def save_environment(env: TabularCDP, path: Union[str, Path]) -> Path:
    return write_json(path, environment_to_dict(env))


def load_environment(path: Union[str, Path]) -> TabularCDP:
    return environment_from_dict(read_json(path))


def save_class(fclass: FunctionClass, path: Union[str, Path]) -> Path:
    return write_json(path, class_to_dict(fclass))


def load_class(path: Union[str, Path]) -> FunctionClass:
    return class_from_dict(read_json(path))


def save_factorizations(
    factorizations: Mapping[int, BellmanFactorization],
    path: Union[str, Path],
    env_fingerprint: Optional[str] = None,
) -> Path:
    """One document holding the factorization of every listed level"""
    return write_json(
        path,
        {
            "schema": "cdp_lab.factorizations",
            "version": SCHEMA_VERSION,
            "fingerprint": env_fingerprint,
            "levels": [factorization_to_dict(fact) for _, fact in sorted(factorizations.items())],
        },
    )


def load_factorizations(
    path: Union[str, Path], env_fingerprint: Optional[str] = None
) -> dict[int, BellmanFactorization]:
    """
    Read a factorization set, or a single factorization document, keyed by
    level. With `env_fingerprint` given, a file saved for another environment is
    rejected.
    """
    document = read_json(path)
    if document.get("schema") == "cdp_lab.factorization":
        fact = factorization_from_dict(document)
        return {fact.level: fact}

    _check_header(document, "cdp_lab.factorizations")
    saved_for = document.get("fingerprint")
    if env_fingerprint is not None and saved_for is not None and saved_for != env_fingerprint:
        raise ArgumentError(
            f"{path} was saved for environment {saved_for[:12]}, not {env_fingerprint[:12]}"
        )
    factorizations = {}
    for entry in document["levels"]:
        fact = factorization_from_dict(entry)
        if fact.level in factorizations:
            raise ArgumentError(f"{path} lists level {fact.level} twice")
        factorizations[fact.level] = fact
    return factorizations
