import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from rich.progress import Progress, TaskID

from cdp_lab.core import EpisodicEnvironment, Policy
from cdp_lab.errors import AlgorithmFailure, BudgetExhausted
from cdp_lab.function_class import FunctionClass, SurvivingSet
from cdp_lab.olive.estimators import Estimator, make_estimator
from cdp_lab.olive.parameters import (
    OliveConfig,
    OliveParameters,
    default_max_iterations,
    epsilon_prime,
    guess_m_iteration_stop,
    resolve_parameters,
)

logger = logging.getLogger("cdp_lab")


@dataclass
class IterationRecord:
    t: int
    chosen: int
    predicted_value: float
    self_errors: list[float]
    level: Optional[int]
    terminated: bool
    survivors_before: int
    survivors_after: int
    eliminated: list[int] = field(default_factory=list)
    episodes: int = 0
    episodes_total: int = 0
    rank: int = 1

    @property
    def sum_self_errors(self) -> float:
        return float(sum(self.self_errors))

    def same_decisions(self, other: "IterationRecord") -> bool:
        return (
            self.chosen == other.chosen
            and self.level == other.level
            and self.terminated == other.terminated
            and self.eliminated == other.eliminated
        )


@dataclass
class OliveResult:
    algorithm: str
    mode: str
    parameters: OliveParameters
    epsilon_effective: float
    records: list[IterationRecord] = field(default_factory=list)
    policy: Optional[Policy] = None
    chosen: Optional[int] = None
    total_episodes: int = 0
    failure: Optional[str] = None
    exhausted: Optional[str] = None
    elapsed: float = 0.0

    @property
    def success(self) -> bool:
        return self.failure is None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def same_trace(self, other: "OliveResult") -> bool:
        return len(self.records) == len(other.records) and all(
            mine.same_decisions(theirs) for mine, theirs in zip(self.records, other.records)
        )


def choose_optimistic(surviving: SurvivingSet, values: np.ndarray) -> int:
    """Surviving member with the largest predicted value, ties to the lowest index"""
    indices = surviving.indices
    if indices.size == 0:
        raise AlgorithmFailure(
            "every candidate was eliminated; phi or theta is set too tight"
        )
    return int(indices[np.argmax(values[indices])])


def check_termination(
    self_errors: np.ndarray, epsilon_effective: float
) -> tuple[bool, Optional[int]]:
    """(True, None) to stop, else (False, smallest level whose error reaches 5 eps / (8H))"""
    horizon = self_errors.shape[0]
    if self_errors.sum() <= 5 * epsilon_effective / 8:
        return True, None

    levels = np.flatnonzero(self_errors >= 5 * epsilon_effective / (8 * horizon))
    if levels.size == 0:
        raise AssertionError(
            f"Self-errors sum to {self_errors.sum():.6g} but no level reaches the per-level bound"
        )
    return False, int(levels[0]) + 1


def eliminate(
    surviving: SurvivingSet,
    indices: np.ndarray,
    estimates: np.ndarray,
    threshold: float,
) -> SurvivingSet:
    """Keep the members of `indices` whose estimated error is within `threshold`"""
    shrunk = surviving.keep(indices, np.abs(estimates) <= threshold)
    if not len(shrunk):
        raise AlgorithmFailure(
            "every candidate was eliminated; phi or theta is set too tight"
        )
    return shrunk


class OliveRunner:
    """
    One execution of the optimistic elimination loop.

    OLIVE and OLIVER share this loop; OLIVER widens the termination target to
    eps' and the elimination threshold to phi + theta.
    """

    def __init__(
        self,
        env: EpisodicEnvironment,
        fclass: FunctionClass,
        config: OliveConfig,
        rng: np.random.Generator,
        robust: bool = False,
        episodes_before: int = 0,
        progress: Optional[Progress] = None,
        task: Optional[TaskID] = None,
    ):
        self.env = env
        self.fclass = fclass
        self.config = config
        self.rng = rng
        self.algorithm = "oliver" if robust else "olive"
        self.episodes_total = episodes_before
        self.progress = progress
        self.task = task

        self.parameters = resolve_parameters(
            config, env.horizon, env.action_count, len(fclass)
        )
        if robust:
            self.epsilon_effective = epsilon_prime(
                config.epsilon, env.horizon, config.rank, config.theta, config.theta_m
            )
            self.threshold = self.parameters.phi + config.theta
        else:
            self.epsilon_effective = config.epsilon
            self.threshold = self.parameters.phi

        if config.max_iterations is not None:
            self.max_iterations = config.max_iterations
        else:
            self.max_iterations = default_max_iterations(
                env.horizon, config.rank, config.zeta, self.parameters.phi
            )

        self.estimator: Estimator = make_estimator(env, fclass, config.mode, config.batch_size)

    def _charge(self, n_episodes: int) -> None:
        """Reserve episodes against the budget before drawing them"""
        if self.config.mode == "population":
            return
        if self.episodes_total + n_episodes > self.config.max_episodes:
            raise BudgetExhausted(
                f"episode budget of {self.config.max_episodes} exhausted "
                f"({self.episodes_total} used, {n_episodes} more requested)",
                budget="episodes",
            )

    def _step(
        self, t: int, surviving: SurvivingSet, values: np.ndarray
    ) -> tuple[IterationRecord, SurvivingSet]:
        params = self.parameters
        chosen = choose_optimistic(surviving, values)
        before = len(surviving)
        used = 0

        self._charge(params.n_eval)
        self_errors, spent = self.estimator.self_errors(chosen, params.n_eval, self.rng)
        used += spent
        self.episodes_total += spent

        terminated, level = check_termination(self_errors, self.epsilon_effective)
        eliminated: list[int] = []
        if not terminated:
            indices = surviving.indices
            self._charge(params.n)
            estimates, spent = self.estimator.all_errors(
                chosen, level, indices, params.n, self.rng
            )
            used += spent
            self.episodes_total += spent
            shrunk = eliminate(surviving, indices, estimates, self.threshold)
            eliminated = [int(i) for i in indices if i not in shrunk]
            surviving = shrunk

        record = IterationRecord(
            t=t,
            chosen=chosen,
            predicted_value=float(values[chosen]),
            self_errors=[float(e) for e in self_errors],
            level=level,
            terminated=terminated,
            survivors_before=before,
            survivors_after=len(surviving),
            eliminated=eliminated,
            episodes=used,
            episodes_total=self.episodes_total,
            rank=self.config.rank,
        )
        return record, surviving

    def run(self) -> OliveResult:
        start_time = time.time()
        result = OliveResult(
            algorithm=self.algorithm,
            mode=self.config.mode,
            parameters=self.parameters,
            epsilon_effective=self.epsilon_effective,
        )

        logger.info(
            f"Starting {self.algorithm.upper()} ({self.config.mode}) on {len(self.fclass)} "
            f"candidates: phi={self.parameters.phi:.4g}, eps_eff={self.epsilon_effective:.4g}, "
            f"max {self.max_iterations} iterations"
        )

        try:
            self._charge(self.parameters.n_est)
            values, spent = self.estimator.initial_values(self.parameters.n_est, self.rng)
            self.episodes_total += spent
            surviving = SurvivingSet.full(len(self.fclass))

            t = 0
            while True:
                t += 1
                if t > self.max_iterations:
                    raise BudgetExhausted(
                        f"iteration budget of {self.max_iterations} exhausted"
                    )

                record, surviving = self._step(t, surviving, values)
                result.records.append(record)

                logger.debug(
                    f"t={t} f_t={record.chosen} V={record.predicted_value:.4f} "
                    f"sum_err={record.sum_self_errors:.4f} h_t={record.level} "
                    f"survivors {record.survivors_before}->{record.survivors_after}"
                )
                if self.progress is not None and self.task is not None:
                    self.progress.update(
                        self.task,
                        advance=1,
                        description=f"[cyan]{self.algorithm} t={t} |F|={len(surviving)}",
                    )

                if record.terminated:
                    result.chosen = record.chosen
                    result.policy = self.fclass.policy(record.chosen)
                    break

        except BudgetExhausted as e:
            result.failure = e.reason
            result.exhausted = e.budget
            logger.warning(f"{self.algorithm.upper()} stopped: {e.reason}")
        except AlgorithmFailure as e:
            result.failure = e.reason
            logger.warning(f"{self.algorithm.upper()} stopped: {e.reason}")

        result.total_episodes = self.episodes_total
        result.elapsed = time.time() - start_time

        if result.success:
            logger.info(
                f"✅ {self.algorithm.upper()} returned member {result.chosen} after "
                f"{result.iterations} iterations and {result.total_episodes} episodes"
            )
        return result


def run_olive(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    config: OliveConfig,
    rng: np.random.Generator,
    progress: Optional[Progress] = None,
    task: Optional[TaskID] = None,
) -> OliveResult:
    return OliveRunner(env, fclass, config, rng, progress=progress, task=task).run()


def run_oliver(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    config: OliveConfig,
    rng: np.random.Generator,
    progress: Optional[Progress] = None,
    task: Optional[TaskID] = None,
) -> OliveResult:
    return OliveRunner(
        env, fclass, config, rng, robust=True, progress=progress, task=task
    ).run()


def default_zeta_rule(rank: int) -> float:
    return 2 * math.sqrt(rank)


def run_guess_m(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    config: OliveConfig,
    rng: np.random.Generator,
    zeta_rule: Callable[[int], float] = default_zeta_rule,
    max_rounds: int = 10,
    progress: Optional[Progress] = None,
    task: Optional[TaskID] = None,
) -> OliveResult:
    """
    Run OLIVE with M' = 2, 4, 8, ... until a round returns a policy.

    Round i gets failure probability delta / (i (i + 1)) and stops after
    H M' ln(6 H sqrt(M') zeta' / eps) / ln(5/3) iterations. `config.rank`,
    `config.zeta` and `config.max_iterations` are ignored; episodes count
    against one budget across rounds.
    """
    records: list[IterationRecord] = []
    episodes = 0
    last: Optional[OliveResult] = None

    for i in range(1, max_rounds + 1):
        rank = 2**i
        zeta = zeta_rule(rank)
        round_config = config.with_updates(
            rank=rank,
            zeta=zeta,
            delta=config.delta / (i * (i + 1)),
            max_iterations=guess_m_iteration_stop(env.horizon, rank, zeta, config.epsilon),
        )
        logger.info(f"GuessM round {i}: M'={rank}, zeta'={zeta:.4g}")

        last = OliveRunner(
            env,
            fclass,
            round_config,
            rng,
            episodes_before=episodes,
            progress=progress,
            task=task,
        ).run()
        records.extend(last.records)
        episodes = last.total_episodes

        if last.success:
            break
        if last.exhausted == "episodes":
            break

    assert last is not None
    return OliveResult(
        algorithm="guessm",
        mode=config.mode,
        parameters=last.parameters,
        epsilon_effective=last.epsilon_effective,
        records=records,
        policy=last.policy,
        chosen=last.chosen,
        total_episodes=episodes,
        failure=last.failure,
        exhausted=last.exhausted,
    )
