"""
Reactive POMDPs: a hidden state emits the observed context core, and both the
transition and the reward may depend on the emitted observation.
"""

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
from cdp_lab.environments.mdp import TabularMDP
from cdp_lab.errors import ArgumentError

logger = logging.getLogger("cdp_lab")

# Grid moves as (row, column) offsets: up, down, left, right
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True, eq=False, kw_only=True)
class ReactivePOMDP(TabularCDP):
    kind: ClassVar[str] = "pomdp"

    def __post_init__(self):
        if self.emissions is None:
            raise ArgumentError("A reactive POMDP needs emission tables")
        super().__post_init__()


def make_reactive_pomdp(
    states: int,
    observations: int,
    actions: int,
    horizon: int,
    seed: int,
    reward_noise: str = "none",
    limits: Limits = DEFAULT_LIMITS,
) -> ReactivePOMDP:
    """Dirichlet emissions and transitions, Uniform[0, 1/H] reward means"""
    for name, value in (("S", states), ("O", observations), ("K", actions), ("H", horizon)):
        if value < 1:
            raise ArgumentError(f"{name} must be at least 1, got {value}")
    limits.check("S", states, limits.max_states)
    limits.check("O", observations, limits.max_observations)

    rng = np.random.default_rng(seed)
    init = rng.dirichlet(np.ones(states))
    emissions = tuple(
        rng.dirichlet(np.ones(observations), size=states) for _ in range(horizon)
    )
    transitions = tuple(
        rng.dirichlet(np.ones(states), size=(states, observations, actions))
        for _ in range(horizon - 1)
    )
    rewards = tuple(
        rng.uniform(0.0, 1.0 / horizon, size=(states, observations, actions))
        for _ in range(horizon)
    )

    logger.debug(
        f"Generated reactive POMDP S={states} O={observations} K={actions} "
        f"H={horizon} seed={seed}"
    )

    return ReactivePOMDP(
        horizon=horizon,
        action_count=actions,
        init=init,
        transitions=transitions,
        reward_mean=rewards,
        emissions=emissions,
        reward_noise=reward_noise,
        reward_scale=(1.0 / horizon,) * horizon,
    )


def make_gridworld_pomdp(
    width: int,
    height: int,
    observations_per_cell: int,
    horizon: int,
    seed: int,
    slip: float = 0.1,
    limits: Limits = DEFAULT_LIMITS,
) -> ReactivePOMDP:
    """
    A few hidden grid cells, many observations.

    Cell c emits one of its own `observations_per_cell` codes (block
    c * observations_per_cell onwards) with Dirichlet weights, so the
    observation always reveals the cell. The four moves succeed with
    probability 1 - slip and otherwise leave the agent in place; moves into a
    wall also stay. Start at the top-left cell; the bottom-right cell pays 1/H
    per step.
    """
    if width < 1 or height < 1 or observations_per_cell < 1 or horizon < 1:
        raise ArgumentError("Grid sizes, observations per cell and H must be positive")
    if not 0.0 <= slip <= 1.0:
        raise ArgumentError(f"Slip probability must lie in [0, 1], got {slip}")

    states = width * height
    observations = states * observations_per_cell
    limits.check("S", states, limits.max_states)
    limits.check("O", observations, limits.max_observations)

    rng = np.random.default_rng(seed)
    actions = len(GRID_MOVES)
    goal = states - 1

    moves = np.zeros((states, actions, states))
    for cell in range(states):
        row, column = divmod(cell, width)
        for a, (dr, dc) in enumerate(GRID_MOVES):
            r, c = row + dr, column + dc
            target = r * width + c if 0 <= r < height and 0 <= c < width else cell
            moves[cell, a, target] += 1.0 - slip
            moves[cell, a, cell] += slip

    emissions = []
    for _ in range(horizon):
        table = np.zeros((states, observations))
        for cell in range(states):
            block = slice(cell * observations_per_cell, (cell + 1) * observations_per_cell)
            table[cell, block] = rng.dirichlet(np.ones(observations_per_cell))
        emissions.append(table)

    transition = np.broadcast_to(
        moves[:, None, :, :], (states, observations, actions, states)
    ).copy()
    reward = np.zeros((states, observations, actions))
    reward[goal] = 1.0 / horizon

    init = np.zeros(states)
    init[0] = 1.0

    return ReactivePOMDP(
        horizon=horizon,
        action_count=actions,
        init=init,
        transitions=(transition,) * (horizon - 1),
        reward_mean=(reward,) * horizon,
        emissions=tuple(emissions),
        reward_scale=(1.0 / horizon,) * horizon,
        metadata={"width": width, "height": height, "goal": goal, "slip": slip},
    )


def embed_mdp(mdp: TabularMDP) -> ReactivePOMDP:
    """The MDP seen as a reactive POMDP with identity emissions"""
    emissions = tuple(np.eye(count) for count in mdp.latent_counts)
    transitions = tuple(
        np.broadcast_to(
            table[:, None, :, :],
            (table.shape[0], table.shape[0], table.shape[1], table.shape[2]),
        ).copy()
        for table in mdp.transitions
    )
    rewards = tuple(
        np.broadcast_to(
            table[:, None, :], (table.shape[0], table.shape[0], table.shape[1])
        ).copy()
        for table in mdp.reward_mean
    )
    return ReactivePOMDP(
        horizon=mdp.horizon,
        action_count=mdp.action_count,
        init=mdp.init,
        transitions=transitions,
        reward_mean=rewards,
        emissions=emissions,
        reward_noise=mdp.reward_noise,
        reward_scale=mdp.reward_scale,
    )


@register_generator
class ReactivePOMDPGenerator(EnvironmentGenerator):
    """Random reactive POMDP"""

    name = "pomdp"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        return make_reactive_pomdp(
            states=int(params.get("states", 3)),
            observations=int(params.get("observations", 6)),
            actions=int(params.get("actions", 2)),
            horizon=int(params.get("horizon", 3)),
            seed=seed,
            reward_noise=params.get("reward_noise", "none"),
            limits=limits,
        )


@register_generator
class GridworldGenerator(EnvironmentGenerator):
    """Grid-world preset: small hidden grid, large observation space"""

    name = "gridworld"

    def __call__(self, seed: int, limits: Limits = DEFAULT_LIMITS, **params) -> TabularCDP:
        return make_gridworld_pomdp(
            width=int(params.get("width", 3)),
            height=int(params.get("height", 3)),
            observations_per_cell=int(params.get("observations_per_cell", 4)),
            horizon=int(params.get("horizon", 4)),
            seed=seed,
            slip=float(params.get("slip", 0.1)),
            limits=limits,
        )
