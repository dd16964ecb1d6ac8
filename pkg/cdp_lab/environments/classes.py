import logging
from typing import Union

import numpy as np

from cdp_lab.core import TabularCDP, require_oracle
from cdp_lab.environments import DEFAULT_LIMITS, Limits
from cdp_lab.errors import ArgumentError, UnsupportedModelError
from cdp_lab.function_class import FunctionClass, QFunction

logger = logging.getLogger("cdp_lab")


def _markov_owners(env: TabularCDP) -> list[np.ndarray]:
    """Hidden state behind each observation; -1 for observations nothing emits"""
    owners = []
    for h, table in enumerate(env.emissions, start=1):
        positive = table > 0
        if positive.sum(axis=0).max() > 1:
            raise UnsupportedModelError(
                f"Observations at level {h} do not identify the hidden state; "
                "the reactive Q* is undefined"
            )
        owner = np.argmax(positive, axis=0)
        owner[~positive.any(axis=0)] = -1
        owners.append(owner)
    return owners


def qstar(env: TabularCDP) -> QFunction:
    """Optimal action values by backward dynamic programming"""
    env = require_oracle(env)
    tables: list[np.ndarray] = [np.empty(0)] * env.horizon

    if env.observes_latent:
        next_value = None
        for h in range(env.horizon, 0, -1):
            q = env.reward_mean[h - 1].astype(float)
            if next_value is not None:
                q = q + env.transitions[h - 1] @ next_value
            tables[h - 1] = q
            next_value = q.max(axis=1)
    else:
        owners = _markov_owners(env)
        next_value = None
        for h in range(env.horizon, 0, -1):
            j = h - 1
            # (S, O, K) values of every (hidden state, observation, action)
            full = env.reward_mean[j].astype(float)
            if next_value is not None:
                full = full + env.transitions[j] @ next_value
            q = np.zeros((env.context_counts[j], env.action_count))
            emitted = owners[j] >= 0
            q[emitted] = full[owners[j][emitted], np.flatnonzero(emitted)]
            tables[j] = q
            next_value = env.emissions[j] @ q.max(axis=1)

    return QFunction(tuple(np.clip(table, 0.0, 1.0) for table in tables))


def realizable_class(
    env: TabularCDP,
    size: int,
    perturbation_scale: float,
    seed: Union[int, np.random.Generator],
    limits: Limits = DEFAULT_LIMITS,
) -> FunctionClass:
    """
    Member 0 is Q*. The rest alternate between uniformly random tables (odd
    indices) and Q* plus uniform noise of half-width `perturbation_scale`
    (even indices), all clipped to [0, 1].
    """
    if size < 1:
        raise ArgumentError(f"Class size must be at least 1, got {size}")
    limits.check("N", size, limits.max_class_size)

    rng = np.random.default_rng(seed)
    optimal = qstar(env)

    members = [optimal]
    for i in range(1, size):
        if i % 2:
            values = tuple(rng.uniform(0.0, 1.0, size=table.shape) for table in optimal.values)
        else:
            values = tuple(
                np.clip(
                    table
                    + rng.uniform(-perturbation_scale, perturbation_scale, size=table.shape),
                    0.0,
                    1.0,
                )
                for table in optimal.values
            )
        members.append(QFunction(values))

    logger.debug(f"Built realizable class of {size} members for {env.kind}")
    return FunctionClass.from_qfunctions(members, qstar_index=0)


def random_class(
    env: TabularCDP,
    size: int,
    seed: Union[int, np.random.Generator],
    limits: Limits = DEFAULT_LIMITS,
) -> FunctionClass:
    """Uniformly random Q-tables over the environment's contexts; no member is Q*"""
    if size < 1:
        raise ArgumentError(f"Class size must be at least 1, got {size}")
    limits.check("N", size, limits.max_class_size)

    rng = np.random.default_rng(seed)
    qvalues = tuple(
        rng.uniform(0.0, 1.0, size=(size, count, env.action_count))
        for count in env.context_counts
    )
    return FunctionClass.from_tables(qvalues)
