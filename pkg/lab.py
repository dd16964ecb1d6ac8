#!/usr/bin/env python3

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)
from rich.table import Table

from cdp_lab.core import substream, validate_environment
from cdp_lab.environments import get_available_generators, get_generator
from cdp_lab.environments.classes import realizable_class
from cdp_lab.errors import CdpLabError
from cdp_lab.harness import get_available_experiments
from cdp_lab.harness.config import ExperimentConfig, GeometrySpec, load_config
from cdp_lab.harness.experiments import (
    audit_saved_trace,
    export_rank_files,
    run_experiment,
    tracker_details,
)
from cdp_lab.harness.output import (
    RunSummary,
    emit_plot_data,
    load_summary,
    write_geometry_rows,
    write_plot_data,
)
from cdp_lab.logs import setup_logging
from cdp_lab.olive.parameters import MODES
from cdp_lab.serialization import fingerprint, save_class, save_environment, write_json

console = Console()
logger = logging.getLogger("cdp_lab")

EXIT_OK = 0
EXIT_SEED_FAILED = 1
EXIT_USAGE = 2

ALGORITHM_FLAGS = (
    "epsilon",
    "delta",
    "rank",
    "zeta",
    "theta",
    "theta_m",
    "mode",
    "phi",
    "n_est",
    "n_eval",
    "n",
    "max_iterations",
    "max_episodes",
    "batch_size",
)


def create_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(bar_width=None),
        TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
        TextColumn("•"),
        TimeElapsedColumn(),
        console=console,
    )


def _parse_param(text: str) -> tuple[str, object]:
    """KEY=VALUE, with VALUE read as JSON when it parses and as a string otherwise"""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def print_config(config: ExperimentConfig) -> None:
    lines = [
        f"[cyan]Experiment:[/] [yellow]{config.kind}[/]",
        f"[cyan]Seeds:[/] [yellow]{', '.join(str(s) for s in config.seeds)}[/]",
        f"[cyan]Output:[/] [yellow]{config.output}[/]",
    ]
    if config.environment.generator or config.environment.file:
        source = config.environment.file or config.environment.generator
        lines.append(f"[cyan]Environment:[/] [yellow]{source}[/] {config.environment.params or ''}")
    if config.algorithm is not None:
        a = config.algorithm
        lines.append(
            f"[cyan]Algorithm:[/] [yellow]eps={a.epsilon} delta={a.delta} M={a.rank} "
            f"zeta={a.zeta} mode={a.mode}[/]"
        )
    console.print(Panel.fit("\n".join(lines), title="Configuration", border_style="blue"))


def print_summary(summary: RunSummary) -> None:
    table = Table(title=f"{summary.kind} results", border_style="blue")
    table.add_column("Seed", style="green")
    table.add_column("Success")
    table.add_column("Episodes", style="yellow")
    table.add_column("Iterations", style="yellow")
    table.add_column("Suboptimality", style="cyan")
    table.add_column("Note")

    for outcome in summary.outcomes:
        metrics = outcome.metrics
        suboptimality = metrics.get("suboptimality")
        table.add_row(
            str(outcome.seed),
            "[green]yes[/]" if outcome.success else "[red]no[/]",
            f"{metrics['episodes']:.0f}" if "episodes" in metrics else "-",
            f"{metrics['iterations']:.0f}" if "iterations" in metrics else "-",
            f"{suboptimality:.4g}" if suboptimality is not None else "-",
            outcome.failure or outcome.value_source or "",
        )

    console.print(table)


def run_configured(args: argparse.Namespace, kind: Optional[str]) -> int:
    overrides = {"output": args.out, "n_jobs": args.jobs}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    env_file = getattr(args, "env_file", None)
    sources = {
        "algorithm": {name: getattr(args, name, None) for name in ALGORITHM_FLAGS},
        "environment_file": env_file,
        "class_file": getattr(args, "class_file", None),
    }

    if kind == "geometry" and args.config is None:
        config = ExperimentConfig(
            kind="geometry",
            seeds=[args.seed if args.seed is not None else 0],
            output=args.out or "results",
            geometry=GeometrySpec(),
        )
    elif args.config is None and env_file is None:
        console.print(f"[red]{args.command} needs --config or --env-file[/]")
        return EXIT_USAGE
    else:
        if args.config is None:
            overrides.setdefault("seeds", [0])
        if kind == "trace-audit":
            audited = None if args.config is not None else "olive"
            config = load_config(
                args.config, kind=audited, trace_audit=True, **sources, **overrides
            )
        else:
            config = load_config(args.config, kind=kind, **sources, **overrides)

    print_config(config)
    with create_progress() as progress:
        summary = run_experiment(config, progress=progress)

    print_summary(summary)
    if summary.max_rank is not None:
        console.print(f"[cyan]Max Bellman rank:[/] [yellow]{summary.max_rank}[/]")
    if kind == "rank":
        written = export_rank_files(config, config.output, matrices_csv=args.matrices_csv)
        console.print(f"[cyan]Wrote {len(written)} factorization and matrix files[/]")
    if kind == "geometry" and args.csv:
        out = write_geometry_rows(args.csv, summary.outcomes)
        console.print(f"[cyan]Wrote the volume ratio grid to[/] [yellow]{out}[/]")
    return EXIT_OK if summary.all_succeeded else EXIT_SEED_FAILED


def run_saved_audit(args: argparse.Namespace) -> int:
    if not args.factorizations:
        console.print("[red]trace-audit --trace needs --factorizations[/]")
        return EXIT_USAGE

    report = audit_saved_trace(args.trace, args.factorizations)
    out = write_json(
        args.audit_out or Path(args.trace).with_name("trace_audit.json"), tracker_details(report)
    )

    table = Table(title="Trace audit", border_style="blue")
    table.add_column("Level", style="green")
    table.add_column("Dimension")
    table.add_column("Cuts", style="yellow")
    table.add_column("Limit", style="yellow")
    table.add_column("Flagged")
    for level, audit in sorted(report.levels.items()):
        table.add_row(
            str(level),
            str(audit.dimension),
            str(audit.cut_count),
            f"{audit.cut_limit:.4g}",
            "[red]yes[/]" if audit.flagged else "[green]no[/]",
        )
    console.print(table)
    console.print(f"[cyan]Audit written to[/] [yellow]{out}[/]")
    return EXIT_OK if report.passed else EXIT_SEED_FAILED


def run_gen(args: argparse.Namespace) -> int:
    params = dict(args.param or [])
    generator_name = args.generator
    limits = None
    if args.config is not None:
        config = load_config(args.config)
        generator_name = generator_name or config.environment.generator
        params = {**config.environment.params, **params}
        limits = config.limits
    if generator_name is None:
        console.print(
            f"[red]gen needs --generator or --config; generators: "
            f"{', '.join(sorted(get_available_generators()))}[/]"
        )
        return EXIT_USAGE

    seed = args.seed if args.seed is not None else 0
    generator = get_generator(generator_name)
    env = generator(seed, **params) if limits is None else generator(seed, limits, **params)
    report = validate_environment(env)

    out = Path(args.out or f"{generator_name}_{seed}.json")
    save_environment(env, out)

    table = Table(title="Generated environment", border_style="blue")
    table.add_column("Field", style="green")
    table.add_column("Value", style="yellow")
    table.add_row("Kind", env.kind)
    table.add_row("Horizon", str(env.horizon))
    table.add_row("Actions", str(env.action_count))
    table.add_row("Latent states", str(env.latent_counts))
    table.add_row("Contexts", str(env.context_counts))
    table.add_row("Fingerprint", fingerprint(env))
    table.add_row("Valid", "[green]yes[/]" if report.ok else f"[red]{len(report.violations)} violations[/]")
    table.add_row("Written to", str(out))

    if args.class_size is not None:
        fclass = realizable_class(
            env, args.class_size, args.perturbation_scale, substream(seed, "function_class")
        )
        class_out = out.with_name(f"{out.stem}_class.json")
        save_class(fclass, class_out)
        table.add_row("Class", f"{len(fclass)} members in {class_out}")

    console.print(table)
    for violation in report.violations:
        logger.warning(violation)
    return EXIT_OK if report.ok else EXIT_SEED_FAILED


def run_plot_data(args: argparse.Namespace) -> int:
    summaries = [load_summary(path) for path in args.summary]
    rows = emit_plot_data(summaries, args.x, args.y, args.series)
    out = write_plot_data(args.out or "plot_data.csv", rows)
    console.print(f"[cyan]Wrote {len(rows)} rows to[/] [yellow]{out}[/]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Contextual decision processes, Bellman rank and OLIVE experiments"
    )
    parser.add_argument("--verbose", action="store_true", help="Log every iteration")
    commands = parser.add_subparsers(dest="command", required=True)

    def experiment_command(name: str, help_text: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", help="Experiment config (JSON)")
        command.add_argument("--seed", type=int, help="Run this seed instead of the config's")
        command.add_argument("--out", help="Output directory")
        command.add_argument("--jobs", type=int, help="Parallel seed workers (-1 for all cores)")
        return command

    def source_flags(command: argparse.ArgumentParser) -> None:
        command.add_argument("--env-file", help="Environment file, replacing the config's")
        command.add_argument("--class-file", help="Function class file, replacing the config's")

    def algorithm_flags(command: argparse.ArgumentParser) -> None:
        group = command.add_argument_group("algorithm", "Replace fields of the config's algorithm")
        group.add_argument("--epsilon", type=float, help="Target accuracy")
        group.add_argument("--delta", type=float, help="Failure probability")
        group.add_argument("--rank", type=int, help="Bellman rank M")
        group.add_argument("--zeta", type=float, help="Bound on the factorization norms")
        group.add_argument("--theta", type=float, help="Validity slack")
        group.add_argument("--theta-m", type=float, help="Factorization slack")
        group.add_argument("--mode", choices=MODES, help="Estimates from episodes or exact")
        group.add_argument("--phi", type=float, help="Elimination threshold")
        group.add_argument("--n-est", type=int, help="Episodes per value estimate")
        group.add_argument("--n-eval", type=int, help="Episodes per level-picking estimate")
        group.add_argument("--n", type=int, help="Episodes per elimination batch")
        group.add_argument("--max-iterations", type=int, help="Iteration budget")
        group.add_argument("--max-episodes", type=int, help="Episode budget")
        group.add_argument("--batch-size", type=int, help="Episodes per vectorized batch")

    gen = commands.add_parser("gen", help="Generate and save an environment")
    gen.add_argument("--generator", help="Generator name")
    gen.add_argument(
        "--param", action="append", type=_parse_param, metavar="KEY=VALUE", help="Generator parameter"
    )
    gen.add_argument("--config", help="Take the environment block of this config")
    gen.add_argument("--seed", type=int, help="Generator seed")
    gen.add_argument("--out", help="Environment file to write")
    gen.add_argument("--class-size", type=int, help="Also write a realizable class of this size")
    gen.add_argument("--perturbation-scale", type=float, default=0.3)

    rank = experiment_command("rank", "Numerical Bellman rank and factorization checks")
    source_flags(rank)
    rank.add_argument(
        "--matrices-csv",
        action="store_true",
        help="Also write every level's Bellman error matrix as CSV",
    )

    for name, help_text in (
        ("olive", "Run OLIVE"),
        ("oliver", "Run the robust variant"),
        ("guessm", "Run OLIVE with a doubling guess of the Bellman rank"),
    ):
        command = experiment_command(name, help_text)
        source_flags(command)
        algorithm_flags(command)

    geometry = experiment_command("geometry", "Volume ratios of ellipsoid slab cuts")
    geometry.add_argument("--csv", help="Also write the (dimension, beta) grid to this CSV")

    audit = experiment_command(
        "trace-audit", "Audit the level picks of a saved trace, or of a fresh OLIVE/OLIVER run"
    )
    source_flags(audit)
    algorithm_flags(audit)
    audit.add_argument("--trace", help="seeds/seed_<seed>.json of an olive or oliver run")
    audit.add_argument(
        "--factorizations", nargs="+", help="Factorization files written by the rank subcommand"
    )
    audit.add_argument("--audit-out", help="Audit JSON to write (default: next to the trace)")

    experiment_command("lowerbound-demo", "OLIVE against uniform exploration on hard instances")

    plot = commands.add_parser("plot-data", help="Long-format CSV from run summaries")
    plot.add_argument("--summary", nargs="+", required=True, help="summary.json files or run dirs")
    plot.add_argument("--x", required=True, help="x axis")
    plot.add_argument("--y", required=True, help="y axis")
    plot.add_argument("--series", help="Series label")
    plot.add_argument("--out", help="CSV file to write")

    return parser


def main():
    args = build_parser().parse_args()
    setup_logging(console, verbose=args.verbose)

    try:
        if args.command == "gen":
            code = run_gen(args)
        elif args.command == "plot-data":
            code = run_plot_data(args)
        elif args.command == "trace-audit":
            code = run_saved_audit(args) if args.trace else run_configured(args, "trace-audit")
        elif args.command in get_available_experiments():
            code = run_configured(args, args.command)
        else:
            console.print(f"[red]Unknown command {args.command}[/]")
            code = EXIT_USAGE
    except CdpLabError as e:
        console.print(Panel.fit(f"[red]{e}[/]", title="Error", border_style="red"))
        code = EXIT_USAGE

    sys.exit(code)


if __name__ == "__main__":
    main()
