"""
Estimates consumed by the elimination loop.

SampledEstimator draws fresh episodes for every call; PopulationEstimator
returns the exact expectations the sampled estimates converge to. Both return
(estimates, episodes consumed).
"""

import logging
from typing import Iterator, Optional, Protocol

import numpy as np

from cdp_lab.core import EpisodeBatch, EpisodicEnvironment, Policy, require_oracle
from cdp_lab.errors import ArgumentError
from cdp_lab.function_class import FunctionClass
from cdp_lab.olive.parameters import DEFAULT_BATCH_SIZE, MODES
from cdp_lab.oracle import BellmanOracle

logger = logging.getLogger("cdp_lab")


class Estimator(Protocol):
    def initial_values(
        self, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]: ...

    def self_errors(
        self, member: int, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]: ...

    def all_errors(
        self,
        roll_in: int,
        level: int,
        survivors: np.ndarray,
        n_episodes: int,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, int]: ...


def self_error_terms(fclass: FunctionClass, member: int, batch: EpisodeBatch) -> np.ndarray:
    """
    (n, H) on-policy terms f(x_h, a_h) - r_h - f(x_{h+1}, a_{h+1}), zero
    continuation at h = H. Each term lies in [-2, 1].
    """
    horizon = fclass.horizon
    terms = np.empty((len(batch), horizon))
    for j in range(horizon):
        current = fclass.vvalues[j][member][batch.contexts[:, j]]
        following = (
            fclass.vvalues[j + 1][member][batch.contexts[:, j + 1]]
            if j + 1 < horizon
            else 0.0
        )
        terms[:, j] = current - batch.rewards[:, j] - following
    return terms


def importance_weighted_terms(
    fclass: FunctionClass, survivors: np.ndarray, level: int, batch: EpisodeBatch
) -> np.ndarray:
    """
    (len(survivors), n) terms K 1[a_h = pi_f(x_h)] (f(x_h, a_h) - r_h - f(x_{h+1}, pi_f(x_{h+1})))
    from episodes whose level-`level` action was uniform. Each term lies in [-2K, K].
    """
    j = level - 1
    cores = batch.contexts[:, j]
    matched = fclass.policies[j][survivors][:, cores] == batch.actions[None, :, j]
    current = fclass.vvalues[j][survivors][:, cores]
    if level < fclass.horizon:
        following = fclass.vvalues[level][survivors][:, batch.contexts[:, level]]
    else:
        following = 0.0
    residual = current - batch.rewards[None, :, j] - following
    return fclass.action_count * matched * residual


class SampledEstimator:
    """Monte-Carlo estimates from fresh episodes, drawn in batches of `batch_size`"""

    def __init__(
        self, env: EpisodicEnvironment, fclass: FunctionClass, batch_size: int
    ):
        if fclass.context_counts != env.context_counts:
            raise ArgumentError(
                f"Class context space {fclass.context_counts} does not match "
                f"environment {env.context_counts}"
            )
        self.env = env
        self.fclass = fclass
        self.batch_size = batch_size

    def _batches(
        self,
        policy: Policy,
        n_episodes: int,
        rng: np.random.Generator,
        deviate_level: Optional[int] = None,
    ) -> Iterator[EpisodeBatch]:
        remaining = n_episodes
        while remaining > 0:
            size = min(remaining, self.batch_size)
            yield self.env.sample_batch(policy, size, rng, deviate_level)
            remaining -= size

    def initial_values(
        self, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]:
        """Mean predicted value over initial contexts of uniformly random episodes"""
        counts = np.zeros(self.env.context_counts[0])
        arbitrary = Policy.constant(self.env.context_counts)
        for batch in self._batches(arbitrary, n_episodes, rng, deviate_level=1):
            counts += np.bincount(batch.contexts[:, 0], minlength=counts.shape[0])
        return self.fclass.vvalues[0] @ (counts / n_episodes), n_episodes

    def self_errors(
        self, member: int, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]:
        total = np.zeros(self.fclass.horizon)
        for batch in self._batches(self.fclass.policy(member), n_episodes, rng):
            total += self_error_terms(self.fclass, member, batch).sum(axis=0)
        return total / n_episodes, n_episodes

    def all_errors(
        self,
        roll_in: int,
        level: int,
        survivors: np.ndarray,
        n_episodes: int,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, int]:
        """Every survivor is estimated from the same episodes"""
        total = np.zeros(survivors.shape[0])
        policy = self.fclass.policy(roll_in)
        for batch in self._batches(policy, n_episodes, rng, deviate_level=level):
            total += importance_weighted_terms(self.fclass, survivors, level, batch).sum(
                axis=1
            )
        return total / n_episodes, n_episodes


class PopulationEstimator:
    """Exact expectations from the Bellman oracle; consumes no episodes and no randomness"""

    def __init__(self, oracle: BellmanOracle):
        self.oracle = oracle

    def initial_values(
        self, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]:
        return self.oracle.initial_values(), 0

    def self_errors(
        self, member: int, n_episodes: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, int]:
        occupancy = self.oracle.roll_in_occupancies
        errors = np.array(
            [
                occupancy[h - 1][member] @ self.oracle.xi(h)[member]
                for h in range(1, self.oracle.env.horizon + 1)
            ]
        )
        return errors, 0

    def all_errors(
        self,
        roll_in: int,
        level: int,
        survivors: np.ndarray,
        n_episodes: int,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, int]:
        occupancy = self.oracle.roll_in_occupancies[level - 1][roll_in]
        return self.oracle.xi(level)[survivors] @ occupancy, 0


def make_estimator(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    mode: str = "sampled",
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> Estimator:
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode}")
    if mode == "population":
        return PopulationEstimator(BellmanOracle(require_oracle(env), fclass))
    return SampledEstimator(env, fclass, batch_size)


def estimate_initial_values(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    n_est: int,
    rng: Optional[np.random.Generator],
    mode: str = "sampled",
) -> np.ndarray:
    """Predicted value of every member, averaged over initial contexts"""
    if n_est < 1:
        raise ArgumentError(f"n_est must be at least 1, got {n_est}")
    values, _ = make_estimator(env, fclass, mode).initial_values(n_est, rng)
    return values


def estimate_self_errors(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    member: int,
    n_eval: int,
    rng: Optional[np.random.Generator],
    mode: str = "sampled",
) -> np.ndarray:
    errors, _ = make_estimator(env, fclass, mode).self_errors(member, n_eval, rng)
    return errors


def estimate_all_errors(
    env: EpisodicEnvironment,
    fclass: FunctionClass,
    roll_in: int,
    level: int,
    survivors: np.ndarray,
    n: int,
    rng: Optional[np.random.Generator],
    mode: str = "sampled",
) -> np.ndarray:
    """
    Average Bellman error of every survivor at `level` under the roll-in
    member's policy. All survivors share the same n episodes.
    """
    if n < 1:
        raise ArgumentError(f"n must be at least 1, got {n}")
    if not 1 <= level <= fclass.horizon:
        raise ArgumentError(f"Level must lie in [1, {fclass.horizon}], got {level}")
    survivors = np.asarray(survivors, dtype=np.int64)
    errors, _ = make_estimator(env, fclass, mode).all_errors(roll_in, level, survivors, n, rng)
    return errors
