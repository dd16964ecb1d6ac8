"""
Hard instances: a complete K-ary tree hiding one good leaf, and a chain of
independent best-arm problems behind a waiting state.
"""

import logging
import math
from dataclasses import dataclass
from typing import ClassVar, Optional

import numpy as np

from cdp_lab.core import TabularCDP
from cdp_lab.environments import (
    DEFAULT_LIMITS,
    EnvironmentGenerator,
    Limits,
    register_generator,
)
from cdp_lab.environments.mdp import TabularMDP
from cdp_lab.errors import ArgumentError
from cdp_lab.function_class import FunctionClass

logger = logging.getLogger("cdp_lab")

# Bandit-chain state layout within each level
WAITING, GOOD, BAD, FIRST_BANDIT = 0, 1, 2, 3


@dataclass(frozen=True, eq=False, kw_only=True)
class TreeLowerBoundMDP(TabularMDP):
    """Node n at level h moves to node n * K + a; the action at level H picks a leaf"""

    kind: ClassVar[str] = "tree"

    gap: float
    leaf_index: int

    @property
    def leaf_count(self) -> int:
        return self.action_count**self.horizon


@dataclass(frozen=True, eq=False, kw_only=True)
class BanditChainMDP(TabularMDP):
    """
    Per level: waiting, good and bad states followed by M - 3 bandit states.
    best_actions[h - 1, i] is the hidden best action of bandit state i at
    level h < H.
    """

    kind: ClassVar[str] = "chain"

    gap: float
    best_actions: np.ndarray

    @property
    def bandit_count(self) -> int:
        return self.latent_counts[0] - FIRST_BANDIT


def _check_tree(actions: int, horizon: int, limits: Limits) -> int:
    if actions < 2:
        raise ArgumentError(f"The tree needs K >= 2, got {actions}")
    if horizon < 1:
        raise ArgumentError(f"H must be at least 1, got {horizon}")
    leaves = actions**horizon
    limits.check("K^H", leaves, limits.max_tree_leaves)
    return leaves


def make_tree_lower_bound(
    actions: int,
    horizon: int,
    gap: float,
    leaf_index: int,
    limits: Limits = DEFAULT_LIMITS,
) -> TreeLowerBoundMDP:
    """Deterministic complete tree; every leaf pays Ber(1/2) except `leaf_index`, Ber(1/2 + gap)"""
    leaves = _check_tree(actions, horizon, limits)
    if not 0.0 <= gap <= 0.5:
        raise ArgumentError(f"Gap must lie in [0, 1/2], got {gap}")
    if not 0 <= leaf_index < leaves:
        raise ArgumentError(f"Leaf index {leaf_index} outside 0..{leaves - 1}")

    k = actions
    transitions = []
    for h in range(1, horizon):
        nodes = k ** (h - 1)
        table = np.zeros((nodes, k, nodes * k))
        children = np.arange(nodes)[:, None] * k + np.arange(k)[None, :]
        table[np.arange(nodes)[:, None], np.arange(k)[None, :], children] = 1.0
        transitions.append(table)

    rewards = [np.zeros((k ** (h - 1), k)) for h in range(1, horizon)]
    last = np.full(k ** (horizon - 1) * k, 0.5)
    last[leaf_index] += gap
    rewards.append(last.reshape(k ** (horizon - 1), k))

    init = np.zeros(1)
    init[0] = 1.0

    logger.debug(f"Generated tree K={k} H={horizon} with {leaves} leaves, good leaf {leaf_index}")

    return TreeLowerBoundMDP(
        horizon=horizon,
        action_count=k,
        init=init,
        transitions=tuple(transitions),
        reward_mean=tuple(rewards),
        reward_noise="bernoulli",
        reward_scale=(1.0,) * horizon,
        gap=gap,
        leaf_index=leaf_index,
    )


def tree_qstar_class(
    actions: int,
    horizon: int,
    gap: float,
    leaf_index: Optional[int] = None,
    limits: Limits = DEFAULT_LIMITS,
) -> FunctionClass:
    """
    Member l is Q* of the tree whose good leaf is l: 1/2 + gap on the path
    to leaf l, 1/2 elsewhere. `leaf_index` only marks which member is Q*.
    """
    leaves = _check_tree(actions, horizon, limits)
    k = actions
    members = np.arange(leaves)

    qvalues = []
    for h in range(1, horizon + 1):
        nodes = k ** (h - 1)
        children = np.arange(nodes)[:, None] * k + np.arange(k)[None, :]
        ancestors = members // k ** (horizon - h)
        on_path = children[None, :, :] == ancestors[:, None, None]
        qvalues.append(0.5 + gap * on_path)

    return FunctionClass.from_tables(tuple(qvalues), qstar_index=leaf_index)


def make_bandit_chain(
    states_per_level: int,
    horizon: int,
    actions: int,
    gap: float,
    best_actions: Optional[np.ndarray] = None,
    seed: int = 0,
) -> BanditChainMDP:
    """
    M = `states_per_level` states per level, waiting, good and bad included.
    The level-H good state pays 1 for every action; nothing else pays.
    """
    m = states_per_level
    if m < 4:
        raise ArgumentError(f"The chain needs M >= 4, got {m}")
    if actions < 2:
        raise ArgumentError(f"The chain needs K >= 2, got {actions}")
    if horizon < 2:
        raise ArgumentError(f"The chain needs H >= 2, got {horizon}")
    if not 0.0 < gap <= math.sqrt(1.0 / 8.0):
        raise ArgumentError(f"Gap tau must lie in (0, sqrt(1/8)], got {gap}")

    bandits = m - FIRST_BANDIT
    if best_actions is None:
        best_actions = np.random.default_rng(seed).integers(actions, size=(horizon - 1, bandits))
    best_actions = np.asarray(best_actions, dtype=np.int64)
    if best_actions.shape != (horizon - 1, bandits):
        raise ArgumentError(
            f"best_actions must have shape {(horizon - 1, bandits)}, got {best_actions.shape}"
        )
    if best_actions.min() < 0 or best_actions.max() >= actions:
        raise ArgumentError("best_actions fall outside the action space")

    spread = 1.0 / (horizon * bandits)

    init = np.zeros(m)
    init[WAITING] = 1.0 - 1.0 / horizon
    init[FIRST_BANDIT:] = spread

    transitions = []
    for h in range(1, horizon):
        table = np.zeros((m, actions, m))
        table[WAITING, :, WAITING] = 1.0 - 1.0 / horizon
        table[WAITING, :, FIRST_BANDIT:] = spread
        table[GOOD, :, GOOD] = 1.0
        table[BAD, :, BAD] = 1.0
        table[FIRST_BANDIT:, :, GOOD] = 0.5
        table[FIRST_BANDIT:, :, BAD] = 0.5
        rows = np.arange(bandits) + FIRST_BANDIT
        best = best_actions[h - 1]
        table[rows, best, GOOD] = 0.5 + gap
        table[rows, best, BAD] = 0.5 - gap
        transitions.append(table)

    rewards = [np.zeros((m, actions)) for _ in range(horizon)]
    rewards[-1][GOOD, :] = 1.0

    logger.debug(f"Generated bandit chain M={m} H={horizon} K={actions} tau={gap}")

    return BanditChainMDP(
        horizon=horizon,
        action_count=actions,
        init=init,
        transitions=tuple(transitions),
        reward_mean=tuple(rewards),
        reward_scale=(1.0,) * horizon,
        gap=gap,
        best_actions=best_actions,
    )


def bandit_chain_visit_probability(states_per_level: int, horizon: int, h: int) -> float:
    """Probability of sitting in one particular bandit state at level h, under any policy"""
    return (1.0 - 1.0 / horizon) ** (h - 1) / (horizon * (states_per_level - FIRST_BANDIT))


def bandit_chain_optimal_value(states_per_level: int, horizon: int, gap: float) -> float:
    """Reaching a bandit state before level H and playing its best action"""
    return (0.5 + gap) * (1.0 - (1.0 - 1.0 / horizon) ** (horizon - 1))


def bandit_chain_gap(states_per_level: int, horizon: int, gap: float) -> float:
    """V* minus the value of a policy that misses the best action at every bandit state"""
    bandits = states_per_level - FIRST_BANDIT
    return sum(
        bandits * bandit_chain_visit_probability(states_per_level, horizon, h) * gap
        for h in range(1, horizon)
    )


@register_generator
class TreeGenerator(EnvironmentGenerator):
    """Complete-tree lower-bound instance; the good leaf is drawn from the seed unless given"""

    name = "tree"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        actions = int(params.get("actions", 2))
        horizon = int(params.get("horizon", 3))
        leaf = params.get("leaf_index")
        if leaf is None:
            leaf = int(np.random.default_rng(seed).integers(actions**horizon))
        return make_tree_lower_bound(
            actions=actions,
            horizon=horizon,
            gap=float(params.get("gap", 0.25)),
            leaf_index=int(leaf),
            limits=limits,
        )


@register_generator
class BanditChainGenerator(EnvironmentGenerator):
    """Bandit-chain lower-bound instance"""

    name = "chain"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        m = int(params.get("states_per_level", 5))
        limits.check("S", m, limits.max_states)
        best = params.get("best_actions")
        return make_bandit_chain(
            states_per_level=m,
            horizon=int(params.get("horizon", 3)),
            actions=int(params.get("actions", 2)),
            gap=float(params.get("gap", 0.25)),
            best_actions=None if best is None else np.asarray(best),
            seed=seed,
        )
