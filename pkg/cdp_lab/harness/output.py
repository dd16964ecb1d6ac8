"""
Result types of an experiment and the flat files they are written to.

Layout of an output directory:

    summary.json                   RunSummary
    summary.md                     human-readable report
    seeds/seed_<seed>.json         one SeedOutcome
    seeds/seed_<seed>_iterations.csv
    seeds/seed_<seed>_factorizations.json   rank runs, see export_rank_files
    seeds/seed_<seed>_errors_h<level>.csv   rank runs with matrix export

Nothing written here carries a timestamp, so identical runs produce identical
files.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from cdp_lab import __version__
from cdp_lab.errors import ArgumentError
from cdp_lab.olive.loop import IterationRecord
from cdp_lab.serialization import read_json, write_json

logger = logging.getLogger("cdp_lab")

ITERATION_COLUMNS = (
    "t",
    "f_t",
    "Vhat",
    "sum_self_err",
    "h_t",
    "survivors_before",
    "survivors_after",
    "episodes_cum",
)

PLOT_COLUMNS = ("x", "y", "series", "seed")

GEOMETRY_COLUMNS = ("seed", "dimension", "beta", "relative", "volume_ratio", "log_volume_ratio")

# Axis names emit_plot_data understands
PLOT_AXES = (
    "seed",
    "value",
    "optimal_value",
    "suboptimality",
    "episodes",
    "iterations",
    "guessed_rank",
    "env_rank",
    "rank",
    "class_size",
    "log_class_size",
    "dimension",
    "beta",
    "relative",
    "volume_ratio",
    "log_volume_ratio",
    "tree_class_size",
    "tree_olive_iterations",
    "tree_baseline_episodes",
    "chain_olive_iterations",
    "chain_baseline_episodes",
)


@dataclass
class SeedOutcome:
    """
    Everything one seed's pipeline produced.

    `value_source` is "exact" when values come from the oracle and
    "monte-carlo" when they were estimated from episodes; suboptimality is
    only filled in for exact values.
    """

    seed: int
    success: bool
    failure: Optional[str] = None
    fingerprint: Optional[str] = None
    value_source: Optional[str] = None
    metrics: dict[str, float] = field(default_factory=dict)
    records: list[IterationRecord] = field(default_factory=list)
    rows: list[dict[str, float]] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def failed(cls, seed: int, reason: str) -> "SeedOutcome":
        return cls(seed=seed, success=False, failure=reason)

    @classmethod
    def from_dict(cls, document: dict) -> "SeedOutcome":
        document = dict(document)
        document["records"] = [IterationRecord(**r) for r in document.get("records", [])]
        return cls(**document)


@dataclass
class RunSummary:
    kind: str
    outcomes: list[SeedOutcome]
    aggregates: dict[str, dict[str, float]]
    config: dict
    version: str = __version__

    @property
    def successes(self) -> int:
        return sum(outcome.success for outcome in self.outcomes)

    @property
    def all_succeeded(self) -> bool:
        return self.successes == len(self.outcomes)

    @property
    def fingerprints(self) -> dict[int, Optional[str]]:
        return {outcome.seed: outcome.fingerprint for outcome in self.outcomes}

    @property
    def max_rank(self) -> Optional[int]:
        if "rank" not in self.aggregates:
            return None
        return int(self.aggregates["rank"]["max"])

    @classmethod
    def from_dict(cls, document: dict) -> "RunSummary":
        return cls(
            kind=document["kind"],
            outcomes=[SeedOutcome.from_dict(o) for o in document["outcomes"]],
            aggregates=document["aggregates"],
            config=document["config"],
            version=document.get("version", __version__),
        )


def aggregate(outcomes: Sequence[SeedOutcome]) -> dict[str, dict[str, float]]:
    """Mean, min and max of every metric, over the seeds that report it"""
    names = sorted({name for outcome in outcomes for name in outcome.metrics})
    aggregates = {}
    for name in names:
        values = [
            float(outcome.metrics[name])
            for outcome in outcomes
            if outcome.metrics.get(name) is not None
            and math.isfinite(float(outcome.metrics[name]))
        ]
        if not values:
            continue
        aggregates[name] = {
            "mean": sum(values) / len(values),
            "min": min(values),
            "max": max(values),
            "count": len(values),
        }
    return aggregates


def summarize(kind: str, config: dict, outcomes: Sequence[SeedOutcome]) -> RunSummary:
    return RunSummary(
        kind=kind,
        outcomes=list(outcomes),
        aggregates=aggregate(outcomes),
        config=config,
    )


def _write_csv(path: Path, fieldnames: Sequence[str], rows: list[dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logger.debug(f"Wrote {path}")
    return path


def iteration_rows(records: Sequence[IterationRecord]) -> list[dict[str, Any]]:
    return [
        {
            "t": record.t,
            "f_t": record.chosen,
            "Vhat": repr(record.predicted_value),
            "sum_self_err": repr(record.sum_self_errors),
            "h_t": "" if record.level is None else record.level,
            "survivors_before": record.survivors_before,
            "survivors_after": record.survivors_after,
            "episodes_cum": record.episodes_total,
        }
        for record in records
    ]


def write_seed_outcome(out_dir: Union[str, Path], outcome: SeedOutcome) -> Path:
    seeds_dir = Path(out_dir) / "seeds"
    path = write_json(seeds_dir / f"seed_{outcome.seed}.json", asdict(outcome))
    if outcome.records:
        _write_csv(
            seeds_dir / f"seed_{outcome.seed}_iterations.csv",
            ITERATION_COLUMNS,
            iteration_rows(outcome.records),
        )
    return path


def write_summary(out_dir: Union[str, Path], summary: RunSummary) -> Path:
    from cdp_lab.harness.templates import render_summary

    out_dir = Path(out_dir)
    for outcome in summary.outcomes:
        write_seed_outcome(out_dir, outcome)

    path = write_json(out_dir / "summary.json", asdict(summary))
    (out_dir / "summary.md").write_text(render_summary(summary), encoding="utf-8")
    logger.info(f"Results written to {out_dir}")
    return path


def load_summary(path: Union[str, Path]) -> RunSummary:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    return RunSummary.from_dict(read_json(path))


def emit_plot_data(
    summaries: Sequence[RunSummary],
    x: str,
    y: str,
    series: Optional[str] = None,
) -> list[dict[str, Any]]:
    """
    Long-format (x, y, series, seed) rows for external plotting.

    Grid rows (geometry) contribute one row each; otherwise each seed that
    reports both axes contributes one row. The series label defaults to the
    experiment kind, suffixed with the position of the summary when several
    are given.
    """
    if not summaries:
        raise ArgumentError("Plot data needs at least one summary")
    for axis in (x, y):
        if axis not in PLOT_AXES:
            raise ArgumentError(f"Unknown axis '{axis}'; choose from {', '.join(PLOT_AXES)}")

    rows = []
    for position, summary in enumerate(summaries):
        label = series or (
            summary.kind if len(summaries) == 1 else f"{summary.kind}[{position}]"
        )
        for outcome in summary.outcomes:
            sources = outcome.rows or [outcome.metrics]
            for source in sources:
                values = {"seed": outcome.seed, **source}
                if values.get(x) is None or values.get(y) is None:
                    continue
                rows.append(
                    {"x": values[x], "y": values[y], "series": label, "seed": outcome.seed}
                )

    logger.debug(f"Emitting {len(rows)} plot rows for {y} against {x}")
    return rows


def write_plot_data(path: Union[str, Path], rows: list[dict[str, Any]]) -> Path:
    return _write_csv(Path(path), PLOT_COLUMNS, rows)


def write_geometry_rows(path: Union[str, Path], outcomes: Sequence[SeedOutcome]) -> Path:
    rows = [{"seed": outcome.seed, **row} for outcome in outcomes for row in outcome.rows]
    return _write_csv(Path(path), GEOMETRY_COLUMNS, rows)


def write_matrix_csv(path: Union[str, Path], matrix: np.ndarray) -> Path:
    """A matrix with a leading row-index column and one column per member"""
    columns = ["roll_in", *(f"f{j}" for j in range(matrix.shape[1]))]
    rows = [
        {"roll_in": i, **{f"f{j}": repr(float(x)) for j, x in enumerate(row)}}
        for i, row in enumerate(matrix)
    ]
    return _write_csv(Path(path), columns, rows)
