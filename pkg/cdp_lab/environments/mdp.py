import logging
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from cdp_lab.core import TabularCDP
from cdp_lab.environments import (
    DEFAULT_LIMITS,
    EnvironmentGenerator,
    Limits,
    register_generator,
)
from cdp_lab.errors import ArgumentError

logger = logging.getLogger("cdp_lab")


@dataclass(frozen=True, eq=False, kw_only=True)
class TabularMDP(TabularCDP):
    """Layered MDP: the context at level h is the state itself"""

    kind: ClassVar[str] = "mdp"

    def __post_init__(self):
        if self.emissions is not None:
            raise ArgumentError("An MDP observes its states directly")
        super().__post_init__()


@dataclass(frozen=True, eq=False, kw_only=True)
class LowRankMDP(TabularMDP):
    """
    MDP whose transition at level h is left_factors[h-1] @ right_factors[h-1],
    with left (S*K, M) and right (M, S) both row-stochastic.
    """

    kind: ClassVar[str] = "lowrank"

    left_factors: tuple[np.ndarray, ...]
    right_factors: tuple[np.ndarray, ...]

    @property
    def rank(self) -> int:
        return int(self.right_factors[0].shape[0]) if self.right_factors else 1


def _check_sizes(states: int, actions: int, horizon: int) -> None:
    for name, value in (("S", states), ("K", actions), ("H", horizon)):
        if value < 1:
            raise ArgumentError(f"{name} must be at least 1, got {value}")


def _uniform_rewards(
    rng: np.random.Generator, shape: tuple[int, ...], horizon: int
) -> np.ndarray:
    return rng.uniform(0.0, 1.0 / horizon, size=shape)


def make_random_mdp(
    states: int,
    actions: int,
    horizon: int,
    seed: int,
    reward_noise: str = "none",
    limits: Limits = DEFAULT_LIMITS,
) -> TabularMDP:
    """Flat-Dirichlet transitions and Uniform[0, 1/H] reward means"""
    _check_sizes(states, actions, horizon)
    limits.check("S", states, limits.max_states)
    rng = np.random.default_rng(seed)

    init = rng.dirichlet(np.ones(states))
    transitions = tuple(
        rng.dirichlet(np.ones(states), size=(states, actions)) for _ in range(horizon - 1)
    )
    rewards = tuple(
        _uniform_rewards(rng, (states, actions), horizon) for _ in range(horizon)
    )

    logger.debug(f"Generated random MDP S={states} K={actions} H={horizon} seed={seed}")

    return TabularMDP(
        horizon=horizon,
        action_count=actions,
        init=init,
        transitions=transitions,
        reward_mean=rewards,
        reward_noise=reward_noise,
        reward_scale=(1.0 / horizon,) * horizon,
    )


def low_rank_from_factors(
    init: np.ndarray,
    left_factors: tuple[np.ndarray, ...],
    right_factors: tuple[np.ndarray, ...],
    reward_mean: tuple[np.ndarray, ...],
    actions: int,
    reward_noise: str = "none",
) -> LowRankMDP:
    """Assemble a low-rank MDP whose transitions are the given factor products"""
    horizon = len(reward_mean)
    states = init.shape[0]
    if len(left_factors) != horizon - 1 or len(right_factors) != horizon - 1:
        raise ArgumentError(f"Need {horizon - 1} factor pairs")

    transitions = []
    for left, right in zip(left_factors, right_factors):
        if left.shape[0] != states * actions or left.shape[1] != right.shape[0]:
            raise ArgumentError(
                f"Factor shapes {left.shape} and {right.shape} do not chain"
            )
        transitions.append((left @ right).reshape(states, actions, right.shape[1]))

    return LowRankMDP(
        horizon=horizon,
        action_count=actions,
        init=init,
        transitions=tuple(transitions),
        reward_mean=reward_mean,
        reward_noise=reward_noise,
        reward_scale=(1.0 / horizon,) * horizon,
        left_factors=tuple(left_factors),
        right_factors=tuple(right_factors),
    )


def make_low_rank_mdp(
    states: int,
    actions: int,
    horizon: int,
    rank: int,
    seed: int,
    reward_noise: str = "none",
    limits: Limits = DEFAULT_LIMITS,
) -> LowRankMDP:
    """Both factors drawn row-wise from flat Dirichlet distributions"""
    _check_sizes(states, actions, horizon)
    limits.check("S", states, limits.max_states)
    if not 1 <= rank <= states:
        raise ArgumentError(f"Rank M must lie in 1..S={states}, got {rank}")

    rng = np.random.default_rng(seed)
    init = rng.dirichlet(np.ones(states))
    left = tuple(
        rng.dirichlet(np.ones(rank), size=states * actions) for _ in range(horizon - 1)
    )
    right = tuple(rng.dirichlet(np.ones(states), size=rank) for _ in range(horizon - 1))
    rewards = tuple(
        _uniform_rewards(rng, (states, actions), horizon) for _ in range(horizon)
    )

    logger.debug(
        f"Generated low-rank MDP S={states} K={actions} H={horizon} M={rank} seed={seed}"
    )

    return low_rank_from_factors(init, left, right, rewards, actions, reward_noise)


@register_generator
class RandomMDPGenerator(EnvironmentGenerator):
    """Random tabular MDP"""

    name = "mdp"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        return make_random_mdp(
            states=int(params.get("states", 3)),
            actions=int(params.get("actions", 2)),
            horizon=int(params.get("horizon", 3)),
            seed=seed,
            reward_noise=params.get("reward_noise", "none"),
            limits=limits,
        )


@register_generator
class LowRankMDPGenerator(EnvironmentGenerator):
    """MDP with rank-M factored transitions"""

    name = "lowrank"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        return make_low_rank_mdp(
            states=int(params.get("states", 6)),
            actions=int(params.get("actions", 2)),
            horizon=int(params.get("horizon", 3)),
            rank=int(params.get("rank", 2)),
            seed=seed,
            reward_noise=params.get("reward_noise", "none"),
            limits=limits,
        )


def make_contextual_bandit(
    contexts: int,
    actions: int,
    seed: int,
    reward_noise: str = "bernoulli",
    limits: Limits = DEFAULT_LIMITS,
) -> TabularMDP:
    """H = 1: a Dirichlet context distribution and Uniform[0, 1] arm means"""
    _check_sizes(contexts, actions, 1)
    limits.check("S", contexts, limits.max_states)
    rng = np.random.default_rng(seed)

    return TabularMDP(
        horizon=1,
        action_count=actions,
        init=rng.dirichlet(np.ones(contexts)),
        transitions=(),
        reward_mean=(rng.uniform(0.0, 1.0, size=(contexts, actions)),),
        reward_noise=reward_noise,
        reward_scale=(1.0,),
    )


@register_generator
class ContextualBanditGenerator(EnvironmentGenerator):
    """Contextual bandit (horizon one)"""

    name = "bandit"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        return make_contextual_bandit(
            contexts=int(params.get("contexts", 4)),
            actions=int(params.get("actions", 3)),
            seed=seed,
            reward_noise=params.get("reward_noise", "bernoulli"),
            limits=limits,
        )
