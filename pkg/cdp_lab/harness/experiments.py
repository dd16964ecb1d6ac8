"""
Per-seed pipelines behind every experiment kind, and the driver that runs them
over a config's seeds.

A seed draws its environment, its function class and its episodes from
separate substreams, so seeds are independent of each other and of the order
they run in.
"""

import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from rich.progress import Progress, TaskID

from cdp_lab.core import (
    EpisodicEnvironment,
    Policy,
    TabularCDP,
    policy_value_mc,
    require_oracle,
    substream,
    validate_environment,
)
from cdp_lab.environments import get_generator
from cdp_lab.environments.classes import qstar, random_class, realizable_class
from cdp_lab.environments.lower_bounds import (
    TreeLowerBoundMDP,
    bandit_chain_optimal_value,
    tree_qstar_class,
)
from cdp_lab.environments.mdp import LowRankMDP
from cdp_lab.errors import ArgumentError, CdpLabError, ConfigError, UnsupportedModelError
from cdp_lab.function_class import FunctionClass, greedy_policy
from cdp_lab.geometry import (
    TrackerReport,
    log_volume_ratio,
    mvee_slab_cut_unit,
    version_space_tracker,
    volume_ratio,
)
from cdp_lab.harness import Experiment, get_experiment, register_experiment
from cdp_lab.harness.config import ExperimentConfig
from cdp_lab.harness.output import (
    RunSummary,
    SeedOutcome,
    summarize,
    write_matrix_csv,
    write_summary,
)
from cdp_lab.logs import HEADER  # noqa: F401  installs Logger.header
from cdp_lab.olive.loop import (
    IterationRecord,
    OliveResult,
    OliveRunner,
    run_guess_m,
    run_olive,
    run_oliver,
)
from cdp_lab.olive.parameters import DEFAULT_BATCH_SIZE, OliveConfig, level_iteration_bound
from cdp_lab.oracle import (
    BellmanFactorization,
    BellmanOracle,
    exact_value_of_policy,
    lowrank_factorization,
    mdp_factorization,
    numerical_bellman_rank,
    pomdp_factorization,
    singular_values,
    verify_factorization,
)
from cdp_lab.serialization import (
    fingerprint,
    load_class,
    load_environment,
    load_factorizations,
    read_json,
    save_factorizations,
)

logger = logging.getLogger("cdp_lab")

MC_EVALUATION_EPISODES = 20_000
CONTAINMENT_SAMPLES = 2_000
CONTAINMENT_SLACK = 1e-12
VOLUME_TOLERANCE = 1e-12


def _derived_seed(seed: int, purpose: str) -> int:
    return int(substream(seed, purpose).integers(2**63))


def build_environment(config: ExperimentConfig, seed: int) -> TabularCDP:
    spec = config.environment
    if spec.file is not None:
        env = load_environment(spec.file)
    else:
        if spec.generator is None:
            raise ConfigError("environment", "needs a generator or a file")
        generator = get_generator(spec.generator)
        env = generator(
            _derived_seed(seed, "environment"), limits=config.limits, **spec.params
        )

    report = validate_environment(env)
    if not report.ok:
        for violation in report.violations[:5]:
            logger.warning(f"Environment check: {violation}")
        raise ArgumentError(
            f"Environment failed validation with {len(report.violations)} violations"
        )
    return env


def build_class(config: ExperimentConfig, env: TabularCDP, seed: int) -> FunctionClass:
    spec = config.function_class
    if spec.kind == "file":
        fclass = load_class(spec.file)
    elif spec.kind == "tree":
        if not isinstance(env, TreeLowerBoundMDP):
            raise ConfigError("function_class.kind", "'tree' needs a tree environment")
        fclass = tree_qstar_class(
            env.action_count, env.horizon, env.gap, env.leaf_index, config.limits
        )
    elif spec.kind == "random":
        fclass = random_class(env, spec.size, substream(seed, "function_class"), config.limits)
    else:
        fclass = realizable_class(
            env,
            spec.size,
            spec.perturbation_scale,
            substream(seed, "function_class"),
            config.limits,
        )

    if fclass.context_counts != env.context_counts:
        raise ArgumentError(
            f"Class context space {fclass.context_counts} does not match "
            f"environment {env.context_counts}"
        )
    return fclass


def factorize(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanFactorization:
    """The exact factorization construction that fits the environment's kind"""
    if isinstance(env, LowRankMDP):
        return lowrank_factorization(env, fclass, h)
    if env.observes_latent:
        return mdp_factorization(env, fclass, h)
    return pomdp_factorization(env, fclass, h)


def optimal_value(env: TabularCDP) -> Optional[float]:
    """V* from backward induction; None when the reactive Q* is undefined"""
    try:
        return exact_value_of_policy(env, greedy_policy(qstar(env)))
    except UnsupportedModelError as e:
        logger.warning(f"No optimal value: {e}")
        return None


def evaluate_policy(
    env: EpisodicEnvironment, policy: Policy, seed: int
) -> tuple[float, Optional[float], str]:
    """(value, optimal value, source); values are estimated when dynamics are hidden"""
    if env.oracle_capable:
        env = require_oracle(env)
        return exact_value_of_policy(env, policy), optimal_value(env), "exact"

    value = policy_value_mc(
        env, policy, MC_EVALUATION_EPISODES, substream(seed, "evaluation")
    )
    return value, None, "monte-carlo"


def picked_levels(records: Sequence[IterationRecord]) -> list[int]:
    return sorted({r.level for r in records if not r.terminated and r.level is not None})


def audit_trace(
    env: TabularCDP, fclass: FunctionClass, result: OliveResult, config: OliveConfig
) -> TrackerReport:
    """Replay the level picks of a run against exact factorizations"""
    env = require_oracle(env)
    factorizations = {h: factorize(env, fclass, h) for h in picked_levels(result.records)}
    return version_space_tracker(
        factorizations,
        result.records,
        result.parameters.phi,
        config.rank,
        theta=config.theta,
        theta_m=config.theta_m,
    )


def audit_saved_trace(
    trace_path: Union[str, Path], factorization_paths: Sequence[Union[str, Path]]
) -> TrackerReport:
    """
    The trace audit of a finished olive or oliver run, read back from its
    seed file and from factorization files written by the rank subcommand.
    """
    trace = SeedOutcome.from_dict(read_json(trace_path))
    details = trace.details
    if details.get("algorithm") not in ("olive", "oliver"):
        raise ArgumentError(
            f"{trace_path} is not an olive or oliver trace (algorithm {details.get('algorithm')!r})"
        )
    if not trace.records:
        raise ArgumentError(f"{trace_path} records no iterations")

    factorizations: dict[int, BellmanFactorization] = {}
    for path in factorization_paths:
        for level, fact in load_factorizations(path, trace.fingerprint).items():
            if level in factorizations:
                raise ArgumentError(f"Level {level} is factorized in more than one file")
            factorizations[level] = fact

    levels = picked_levels(trace.records)
    missing = [h for h in levels if h not in factorizations]
    if missing:
        raise ArgumentError(f"No factorization for picked levels {missing}")

    return version_space_tracker(
        {h: factorizations[h] for h in levels},
        trace.records,
        float(details["parameters"]["phi"]),
        int(details.get("rank", max(r.rank for r in trace.records))),
        theta=float(details.get("theta", 0.0)),
        theta_m=float(details.get("theta_m", 0.0)),
    )


def tracker_details(report: TrackerReport) -> dict:
    return {
        "passed": report.passed,
        "phi": report.phi,
        "half_width": report.half_width,
        "levels": {
            str(level): {
                "dimension": audit.dimension,
                "cut_count": audit.cut_count,
                "cut_limit": audit.cut_limit,
                "within_limit": audit.within_limit,
                "flagged": audit.flagged,
                "log_bound_product": audit.log_bound_product,
                "log_volume": audit.cuts[-1].log_volume if audit.cuts else 0.0,
                "log_volume_floor": audit.log_volume_floor,
            }
            for level, audit in report.levels.items()
        },
    }


class AlgorithmExperiment(Experiment):
    """Shared pipeline of the olive, oliver and guessm kinds"""

    def run_algorithm(
        self,
        env: EpisodicEnvironment,
        fclass: FunctionClass,
        config: OliveConfig,
        rng: np.random.Generator,
        progress: Optional[Progress],
        task: Optional[TaskID],
    ) -> OliveResult:
        raise NotImplementedError

    def run_seed(
        self,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ) -> SeedOutcome:
        algorithm = config.algorithm
        if algorithm is None:
            raise ConfigError("algorithm", "is required")

        env = build_environment(config, seed)
        fclass = build_class(config, env, seed)
        runnable = env.sampling_only() if config.environment.sampling_only else env

        result = self.run_algorithm(
            runnable, fclass, algorithm, substream(seed, "episodes"), progress, task
        )

        outcome = SeedOutcome(
            seed=seed,
            success=result.success,
            failure=result.failure,
            fingerprint=fingerprint(env),
            records=result.records,
        )
        outcome.metrics = {
            "episodes": float(result.total_episodes),
            "iterations": float(result.iterations),
            "class_size": float(len(fclass)),
            "log_class_size": fclass.log_size,
            "guessed_rank": float(max((r.rank for r in result.records), default=algorithm.rank)),
        }
        if isinstance(env, LowRankMDP):
            outcome.metrics["env_rank"] = float(env.rank)

        if result.policy is not None:
            value, optimal, source = evaluate_policy(runnable, result.policy, seed)
            outcome.value_source = source
            outcome.metrics["value"] = value
            if optimal is not None:
                outcome.metrics["optimal_value"] = optimal
                outcome.metrics["suboptimality"] = optimal - value

        level_counts = Counter(r.level for r in result.records if not r.terminated)
        outcome.details = {
            "algorithm": result.algorithm,
            "mode": result.mode,
            "parameters": asdict(result.parameters),
            "rank": algorithm.rank,
            "theta": algorithm.theta,
            "theta_m": algorithm.theta_m,
            "epsilon_effective": result.epsilon_effective,
            "chosen": result.chosen,
            "exhausted": result.exhausted,
            "level_counts": {str(h): n for h, n in sorted(level_counts.items())},
        }
        if result.algorithm != "guessm":
            outcome.details["level_limit"] = level_iteration_bound(
                algorithm.rank, algorithm.zeta, result.parameters.phi
            )

        if config.trace_audit:
            report = audit_trace(env, fclass, result, algorithm)
            outcome.details["trace_audit"] = tracker_details(report)
            outcome.success = outcome.success and report.passed
            if not report.passed:
                outcome.failure = outcome.failure or "trace audit found a violated cut bound"

        return outcome


@register_experiment
class OliveExperiment(AlgorithmExperiment):
    kind = "olive"

    def run_algorithm(self, env, fclass, config, rng, progress, task) -> OliveResult:
        return run_olive(env, fclass, config, rng, progress=progress, task=task)


@register_experiment
class OliverExperiment(AlgorithmExperiment):
    kind = "oliver"

    def run_algorithm(self, env, fclass, config, rng, progress, task) -> OliveResult:
        return run_oliver(env, fclass, config, rng, progress=progress, task=task)


@register_experiment
class GuessMExperiment(AlgorithmExperiment):
    kind = "guessm"

    def run_algorithm(self, env, fclass, config, rng, progress, task) -> OliveResult:
        return run_guess_m(env, fclass, config, rng, progress=progress, task=task)


@register_experiment
class RankExperiment(Experiment):
    """Numerical Bellman rank of the exact error matrices, with factorization checks"""

    kind = "rank"

    def run_seed(
        self,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ) -> SeedOutcome:
        env = require_oracle(build_environment(config, seed))
        fclass = build_class(config, env, seed)
        oracle = BellmanOracle(env, fclass)

        level_ranks = []
        spectra = []
        reports = []
        dimension = 0
        for h in range(1, env.horizon + 1):
            matrix = oracle.error_matrix(h)
            level_ranks.append(numerical_bellman_rank([matrix]))
            spectra.append([float(s) for s in singular_values(matrix)])

            fact = factorize(env, fclass, h)
            dimension = max(dimension, fact.dimension)
            reports.append(verify_factorization(env, fclass, fact))

        rank = max(level_ranks)
        passed = all(report.passed for report in reports)
        logger.info(
            f"Seed {seed}: Bellman rank {rank} (per level {level_ranks}), "
            f"factorization dimension {dimension}"
        )

        outcome = SeedOutcome(
            seed=seed,
            success=passed,
            failure=None if passed else "a factorization failed verification",
            fingerprint=fingerprint(env),
            value_source="exact",
        )
        outcome.metrics = {
            "rank": float(rank),
            "class_size": float(len(fclass)),
            "log_class_size": fclass.log_size,
            "factorization_dimension": float(dimension),
            "max_residual": max(report.max_residual for report in reports),
            "max_norm_product": max(report.norm_product for report in reports),
        }
        if isinstance(env, LowRankMDP):
            outcome.metrics["env_rank"] = float(env.rank)
        outcome.details = {
            "level_ranks": level_ranks,
            "singular_values": spectra,
            "factorizations": [asdict(report) for report in reports],
        }
        return outcome


def export_rank_files(
    config: ExperimentConfig, out_dir: Union[str, Path], matrices_csv: bool = False
) -> list[Path]:
    """
    Write seeds/seed_<seed>_factorizations.json for every seed, and with
    `matrices_csv` one seed_<seed>_errors_h<level>.csv per level holding the
    exact Bellman error matrix (rows: roll-in member, columns: evaluated
    member). Seeds whose environment cannot be built are skipped.
    """
    seeds_dir = Path(out_dir) / "seeds"
    written = []
    for seed in config.seeds:
        try:
            env = require_oracle(build_environment(config, seed))
            fclass = build_class(config, env, seed)
        except CdpLabError as e:
            logger.warning(f"Seed {seed}: no rank files written: {e}")
            continue

        factorizations = {h: factorize(env, fclass, h) for h in range(1, env.horizon + 1)}
        written.append(
            save_factorizations(
                factorizations, seeds_dir / f"seed_{seed}_factorizations.json", fingerprint(env)
            )
        )
        if matrices_csv:
            oracle = BellmanOracle(env, fclass)
            for h in range(1, env.horizon + 1):
                written.append(
                    write_matrix_csv(
                        seeds_dir / f"seed_{seed}_errors_h{h}.csv", oracle.error_matrix(h).matrix
                    )
                )
    logger.info(f"Wrote {len(written)} rank files to {seeds_dir}")
    return written


def containment_violations(
    dimension: int, beta: float, rng: np.random.Generator, samples: int = CONTAINMENT_SAMPLES
) -> tuple[int, int]:
    """
    (violations, points checked) for the closed-form ellipsoid of the slab cut.

    Points are uniform in the unit ball, kept when inside the slab, plus the
    extreme points of the cut where the ellipsoid is tight.
    """
    points = rng.standard_normal((samples, dimension))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    points *= rng.random((samples, 1)) ** (1 / dimension)
    points = points[np.abs(points[:, 0]) <= beta]

    if dimension > 1:
        corners = np.zeros((2 * (dimension - 1), dimension))
        for i in range(1, dimension):
            for sign_index, sign in enumerate((1.0, -1.0)):
                row = 2 * (i - 1) + sign_index
                corners[row, 0] = sign * beta
                corners[row, i] = math.sqrt(1 - beta**2)
        points = np.vstack([points, corners])

    ellipsoid = mvee_slab_cut_unit(beta, dimension)
    inside = ellipsoid.contains(points, CONTAINMENT_SLACK)
    return int((~inside).sum()), int(points.shape[0])


@register_experiment
class GeometryExperiment(Experiment):
    """Volume ratios of slab cuts over a (dimension, beta) grid"""

    kind = "geometry"

    def run_seed(
        self,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ) -> SeedOutcome:
        spec = config.geometry
        rng = substream(seed, "geometry")
        rows = []
        failed = []
        violations = checked = 0

        for d in spec.dimensions:
            if d < 1:
                raise ArgumentError(f"Dimension must be at least 1, got {d}")
            limit = 1 / math.sqrt(d)
            betas = [(r * limit, r) for r in spec.relative]
            for beta in spec.betas:
                if 0 < beta <= limit:
                    betas.append((beta, beta / limit))
                else:
                    logger.debug(f"Skipping beta={beta} at d={d}: outside (0, {limit:.4g}]")

            for beta, relative in betas:
                ratio = volume_ratio(beta, d)
                rows.append(
                    {
                        "dimension": d,
                        "beta": beta,
                        "relative": relative,
                        "volume_ratio": ratio,
                        "log_volume_ratio": log_volume_ratio(beta, d),
                    }
                )
                if math.isclose(relative, 1.0) and abs(ratio - 1) > VOLUME_TOLERANCE:
                    failed.append(f"d={d}: ratio {ratio!r} at beta = 1/sqrt(d)")
                if math.isclose(relative, 1 / 3) and ratio >= 0.6:
                    failed.append(f"d={d}: ratio {ratio:.6g} >= 0.6 at beta = 1/(3 sqrt(d))")

            bad, points = containment_violations(d, limit / 3, rng)
            violations += bad
            checked += points

        for message in failed:
            logger.warning(message)
        if violations:
            logger.warning(f"{violations} of {checked} points escaped their enclosing ellipsoid")

        thirds = [row["volume_ratio"] for row in rows if math.isclose(row["relative"], 1 / 3)]
        outcome = SeedOutcome(
            seed=seed,
            success=not failed and violations == 0,
            failure=None if not failed and violations == 0 else "geometry checks failed",
            rows=rows,
        )
        outcome.metrics = {
            "containment_violations": float(violations),
            "containment_points": float(checked),
            "grid_points": float(len(rows)),
        }
        if thirds:
            outcome.metrics["max_third_ratio"] = max(thirds)
        outcome.details = {"failed_checks": failed}
        return outcome


@dataclass
class BaselineResult:
    episodes: int = 0
    success: bool = False
    chosen: Optional[int] = None
    value: Optional[float] = None
    budgets: list[int] = field(default_factory=list)


def uniform_exploration_baseline(
    env: TabularCDP,
    fclass: FunctionClass,
    epsilon: float,
    target: float,
    rng: np.random.Generator,
    initial_budget: int = 64,
    max_budget: int = 2**20,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> BaselineResult:
    """
    Pick the member whose policy scores best on uniformly random episodes.

    A policy's score is the mean of K^H 1[every action agrees with it] times
    the episode's return. The budget doubles, reusing earlier episodes, until
    the pick is epsilon-close to `target` or the budget passes `max_budget`.
    """
    if initial_budget < 1 or max_budget < initial_budget:
        raise ArgumentError(
            f"Baseline budgets must satisfy 1 <= initial <= max, got {initial_budget}, {max_budget}"
        )

    weight = float(env.action_count) ** env.horizon
    arbitrary = Policy.constant(env.context_counts)
    totals = np.zeros(len(fclass))
    result = BaselineResult()

    budget = initial_budget
    while budget <= max_budget:
        while result.episodes < budget:
            size = min(budget - result.episodes, batch_size)
            batch = env.sample_batch(arbitrary, size, rng, explore=True)
            agree = np.ones((len(fclass), size), dtype=bool)
            for j in range(env.horizon):
                agree &= fclass.policies[j][:, batch.contexts[:, j]] == batch.actions[:, j]
            totals += weight * (agree * batch.returns).sum(axis=1)
            result.episodes += size

        result.chosen = int(np.argmax(totals / result.episodes))
        result.value = exact_value_of_policy(env, fclass.policy(result.chosen))
        result.budgets.append(budget)
        logger.debug(
            f"Baseline at {result.episodes} episodes picks member {result.chosen} "
            f"worth {result.value:.4f}"
        )
        if result.value >= target - epsilon:
            result.success = True
            break
        budget *= 2

    return result


@register_experiment
class LowerBoundExperiment(Experiment):
    """OLIVE against uniform exploration on the tree and bandit-chain families"""

    kind = "lowerbound-demo"

    def _compare(
        self,
        name: str,
        env: TabularCDP,
        fclass: FunctionClass,
        epsilon: float,
        delta: float,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress],
        task: Optional[TaskID],
    ) -> dict:
        rank = max(env.latent_counts)
        olive_config = OliveConfig(
            epsilon=epsilon,
            delta=delta,
            rank=rank,
            zeta=2 * math.sqrt(rank),
            mode="population",
        )
        result = OliveRunner(
            env, fclass, olive_config, substream(seed, "episodes"), progress=progress, task=task
        ).run()

        optimal = optimal_value(env)
        if optimal is None:
            raise UnsupportedModelError(f"The {name} instance has no optimal value")
        value = None if result.policy is None else exact_value_of_policy(env, result.policy)

        spec = config.lowerbound
        baseline = uniform_exploration_baseline(
            env,
            fclass,
            epsilon,
            optimal,
            substream(seed, "baseline"),
            spec.baseline_initial_budget,
            spec.baseline_max_budget,
        )

        logger.info(
            f"{name}: |F|={len(fclass)}, OLIVE {result.iterations} iterations, "
            f"baseline {baseline.episodes} episodes "
            f"({'succeeded' if baseline.success else 'gave up'})"
        )
        return {
            "class_size": len(fclass),
            "rank": rank,
            "optimal_value": optimal,
            "olive_success": value is not None and value >= optimal - epsilon,
            "olive_value": value,
            "olive_iterations": result.iterations,
            "olive_failure": result.failure,
            "baseline_success": baseline.success,
            "baseline_episodes": baseline.episodes,
            "baseline_chosen": baseline.chosen,
            "baseline_budgets": baseline.budgets,
        }

    def run_seed(
        self,
        config: ExperimentConfig,
        seed: int,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ) -> SeedOutcome:
        spec = config.lowerbound
        if config.algorithm is not None:
            epsilon, delta = config.algorithm.epsilon, config.algorithm.delta
        else:
            epsilon, delta = spec.epsilon, spec.delta
        env_seed = _derived_seed(seed, "environment")

        tree = get_generator("tree")(env_seed, limits=config.limits, **spec.tree)
        tree_class = tree_qstar_class(
            tree.action_count, tree.horizon, tree.gap, tree.leaf_index, config.limits
        )
        logger.info(
            f"Tree K={tree.action_count} H={tree.horizon}: class size {len(tree_class)}"
        )
        tree_report = self._compare(
            "tree", tree, tree_class, epsilon, delta, config, seed, progress, task
        )

        chain = get_generator("chain")(env_seed, limits=config.limits, **spec.chain)
        chain_class = realizable_class(
            chain,
            config.function_class.size,
            config.function_class.perturbation_scale,
            substream(seed, "function_class"),
            config.limits,
        )
        chain_report = self._compare(
            "chain", chain, chain_class, epsilon, delta, config, seed, progress, task
        )
        closed_form = bandit_chain_optimal_value(
            chain.latent_counts[0], chain.horizon, chain.gap
        )
        chain_report["closed_form_value"] = closed_form
        logger.info(
            f"Bandit chain M={chain.latent_counts[0]} H={chain.horizon}: "
            f"V* = {chain_report['optimal_value']:.10f} by DP, {closed_form:.10f} in closed form"
        )

        success = tree_report["olive_success"] and chain_report["olive_success"]
        outcome = SeedOutcome(
            seed=seed,
            success=success,
            failure=None if success else "OLIVE missed the epsilon target",
            fingerprint=fingerprint(tree),
            value_source="exact",
        )
        outcome.metrics = {
            "tree_class_size": float(tree_report["class_size"]),
            "tree_olive_iterations": float(tree_report["olive_iterations"]),
            "tree_baseline_episodes": float(tree_report["baseline_episodes"]),
            "chain_olive_iterations": float(chain_report["olive_iterations"]),
            "chain_baseline_episodes": float(chain_report["baseline_episodes"]),
            "chain_optimal_value": chain_report["optimal_value"],
            "chain_closed_form_value": closed_form,
        }
        outcome.details = {
            "tree": tree_report,
            "chain": chain_report,
            "chain_fingerprint": fingerprint(chain),
        }
        return outcome


def _run_guarded(
    experiment: Experiment,
    config: ExperimentConfig,
    seed: int,
    progress: Optional[Progress] = None,
    task: Optional[TaskID] = None,
) -> SeedOutcome:
    """Run one seed; a CdpLabError fails the seed, not the batch"""
    logger.header(f"{'=' * 30}")
    logger.header(f"SEED {seed} ({config.kind})")
    logger.header(f"{'-' * 30}")

    start_time = time.time()
    try:
        outcome = experiment.run_seed(config, seed, progress, task)
    except CdpLabError as e:
        logger.error(f"❌ Seed {seed} failed: {e}")
        return SeedOutcome.failed(seed, str(e))

    execution_time = time.time() - start_time
    if outcome.success:
        logger.info(f"✅ Seed {seed} completed in {execution_time:.2f}s")
    else:
        logger.error(f"❌ Seed {seed} failed after {execution_time:.2f}s: {outcome.failure}")
    return outcome


def _log_summary(summary: RunSummary) -> None:
    logger.header("")
    logger.header(f"{'#' * 50}")
    logger.header(f"{summary.kind.upper()} SUMMARY")
    logger.header(f"{'-' * 50}")

    if summary.all_succeeded:
        logger.header(f"✨ Status: all {len(summary.outcomes)} seeds succeeded")
    else:
        logger.header(
            f"[red]Status: {summary.successes}/{len(summary.outcomes)} seeds succeeded[/]"
        )

    for name, stats in sorted(summary.aggregates.items()):
        logger.header(
            f"  • {name}: mean {stats['mean']:.6g}, min {stats['min']:.6g}, max {stats['max']:.6g}"
        )
    logger.header(f"{'#' * 50}")


def run_experiment(
    config: ExperimentConfig,
    progress: Optional[Progress] = None,
    write: bool = True,
) -> RunSummary:
    """
    Run the config's experiment over all of its seeds and write the results.

    With n_jobs != 1 the seeds run in joblib workers; outcomes are reduced in
    the config's seed order either way.
    """
    experiment = get_experiment(config.kind)
    logger.info(f"Running {config.kind} over {len(config.seeds)} seeds with {experiment!r}")

    if config.n_jobs == 1:
        seeds_task = iteration_task = None
        if progress is not None:
            seeds_task = progress.add_task("[green]seeds", total=len(config.seeds))
            iteration_task = progress.add_task("[cyan]iterations", total=None)
        outcomes = []
        for seed in config.seeds:
            outcomes.append(_run_guarded(experiment, config, seed, progress, iteration_task))
            if progress is not None and seeds_task is not None:
                progress.update(seeds_task, advance=1, description=f"[green]seed {seed} done")
    else:
        outcomes = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_guarded)(experiment, config, seed) for seed in config.seeds
        )

    summary = summarize(config.kind, config.echo(), outcomes)
    _log_summary(summary)
    if write:
        write_summary(config.output, summary)
    return summary


def lowerbound_demo(
    config: ExperimentConfig, progress: Optional[Progress] = None, write: bool = True
) -> RunSummary:
    return run_experiment(replace(config, kind="lowerbound-demo"), progress, write)
