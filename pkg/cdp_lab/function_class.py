"""
Finite hypothesis classes of action-value functions.

The elimination algorithms only ever touch a member through its greedy
policy and the value that member predicts for its own action, so a
FunctionClass stores exactly those two views per level, stacked over members.
Classes built from Q-functions keep the full tables as well.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from cdp_lab.core import Context, Policy
from cdp_lab.errors import ArgumentError, ContractViolation

logger = logging.getLogger("cdp_lab")

VALUE_TOLERANCE = 1e-12

VValueTable = tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class QFunction:
    """values[h - 1] is an (O_h, K) table of action values in [0, 1]"""

    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for level, table in enumerate(self.values, start=1):
            if table.ndim != 2:
                raise ArgumentError(f"Q-table at level {level} must be 2-dimensional")
            if table.min() < -VALUE_TOLERANCE or table.max() > 1 + VALUE_TOLERANCE:
                raise ArgumentError(f"Q-values at level {level} leave [0, 1]")

    @property
    def horizon(self) -> int:
        return len(self.values)

    @property
    def action_count(self) -> int:
        return int(self.values[0].shape[1])

    @property
    def context_counts(self) -> tuple[int, ...]:
        return tuple(int(table.shape[0]) for table in self.values)

    def __call__(self, context: Context, action: int) -> float:
        if context.is_terminal(self.horizon):
            return 0.0
        if not 1 <= context.level <= self.horizon:
            raise ContractViolation(f"Q-function has no level {context.level}")
        return float(self.values[context.level - 1][context.core_id, action])


@dataclass(frozen=True, eq=False)
class PolicyValuePair:
    """A greedy policy together with the value it is predicted to earn from each context"""

    policy: Policy
    vvalue: VValueTable

    def __post_init__(self):
        if len(self.vvalue) != self.policy.horizon:
            raise ArgumentError("Policy and value table cover different horizons")
        for level, (actions, values) in enumerate(
            zip(self.policy.actions, self.vvalue), start=1
        ):
            if actions.shape != values.shape:
                raise ArgumentError(f"Policy and value table disagree at level {level}")
            if values.min() < -VALUE_TOLERANCE or values.max() > 1 + VALUE_TOLERANCE:
                raise ArgumentError(f"Values at level {level} leave [0, 1]")

    def value_at(self, context: Context) -> float:
        if context.is_terminal(self.policy.horizon):
            return 0.0
        return float(self.vvalue[context.level - 1][context.core_id])


def greedy_policy(f: QFunction) -> Policy:
    """argmax over actions, ties to the lowest action index"""
    return Policy(tuple(np.argmax(table, axis=1) for table in f.values))


def predicted_value(f: QFunction, x1: Context) -> float:
    if x1.level != 1:
        raise ArgumentError(f"Predicted values are read at level 1, got {x1}")
    return float(f.values[0][x1.core_id].max())


def to_pair(f: QFunction) -> PolicyValuePair:
    policy = greedy_policy(f)
    vvalue = tuple(
        table[np.arange(table.shape[0]), actions]
        for table, actions in zip(f.values, policy.actions)
    )
    return PolicyValuePair(policy=policy, vvalue=vvalue)


class FunctionClass:
    """
    An ordered, finite class of N candidate functions sharing one context space.

    policies[h - 1]: (N, O_h) greedy actions
    vvalues[h - 1]: (N, O_h) predicted values of those actions
    qvalues[h - 1]: (N, O_h, K) full tables, only for classes of Q-functions

    `qstar_index` marks which member is Q*. Only tests read it.
    """

    def __init__(
        self,
        policies: tuple[np.ndarray, ...],
        vvalues: tuple[np.ndarray, ...],
        action_count: int,
        qvalues: Optional[tuple[np.ndarray, ...]] = None,
        qstar_index: Optional[int] = None,
        log_size: Optional[float] = None,
    ):
        if not policies or policies[0].shape[0] < 1:
            raise ArgumentError("A function class needs at least one member")

        self.policies = policies
        self.vvalues = vvalues
        self.qvalues = qvalues
        self.action_count = action_count
        self.qstar_index = qstar_index
        self.log_size = math.log(len(self)) if log_size is None else log_size

    @classmethod
    def from_qfunctions(
        cls, members: Sequence[QFunction], qstar_index: Optional[int] = None
    ) -> "FunctionClass":
        if not members:
            raise ArgumentError("A function class needs at least one member")

        shape = members[0].context_counts
        k = members[0].action_count
        for i, member in enumerate(members):
            if member.context_counts != shape or member.action_count != k:
                raise ArgumentError(f"Member {i} has a different context space")

        qvalues = tuple(
            np.stack([member.values[j] for member in members])
            for j in range(len(shape))
        )
        return cls.from_tables(qvalues, qstar_index=qstar_index)

    @classmethod
    def from_tables(
        cls, qvalues: tuple[np.ndarray, ...], qstar_index: Optional[int] = None
    ) -> "FunctionClass":
        """Build from stacked (N, O_h, K) Q-tables"""
        for level, table in enumerate(qvalues, start=1):
            if table.min() < -VALUE_TOLERANCE or table.max() > 1 + VALUE_TOLERANCE:
                raise ArgumentError(f"Q-values at level {level} leave [0, 1]")

        k = int(qvalues[0].shape[2])
        policies = tuple(np.argmax(table, axis=2) for table in qvalues)
        vvalues = tuple(
            np.take_along_axis(table, actions[:, :, None], axis=2)[:, :, 0]
            for table, actions in zip(qvalues, policies)
        )
        return cls(policies, vvalues, k, qvalues=qvalues, qstar_index=qstar_index)

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[PolicyValuePair],
        action_count: int,
        log_size: Optional[float] = None,
    ) -> "FunctionClass":
        if not pairs:
            raise ArgumentError("A function class needs at least one member")

        horizon = pairs[0].policy.horizon
        policies = tuple(
            np.stack([pair.policy.actions[j] for pair in pairs]) for j in range(horizon)
        )
        vvalues = tuple(
            np.stack([pair.vvalue[j] for pair in pairs]).astype(float)
            for j in range(horizon)
        )
        if any(table.max() >= action_count or table.min() < 0 for table in policies):
            raise ArgumentError("Policy actions fall outside the action space")
        return cls(policies, vvalues, action_count, log_size=log_size)

    def __len__(self) -> int:
        return int(self.policies[0].shape[0])

    @property
    def horizon(self) -> int:
        return len(self.policies)

    @property
    def context_counts(self) -> tuple[int, ...]:
        return tuple(int(table.shape[1]) for table in self.policies)

    @property
    def is_q_class(self) -> bool:
        return self.qvalues is not None

    def __getitem__(self, index: int) -> Union[QFunction, PolicyValuePair]:
        if self.qvalues is not None:
            return QFunction(tuple(table[index] for table in self.qvalues))
        return self.pair(index)

    def policy(self, index: int) -> Policy:
        return Policy(tuple(table[index] for table in self.policies))

    def pair(self, index: int) -> PolicyValuePair:
        return PolicyValuePair(
            policy=self.policy(index),
            vvalue=tuple(table[index] for table in self.vvalues),
        )

    def as_pairs(self) -> "FunctionClass":
        """The same class seen purely as (policy, value) pairs"""
        return FunctionClass(
            self.policies, self.vvalues, self.action_count, log_size=self.log_size
        )


def product_class(
    policies: Sequence[Policy], vvalues: Sequence[VValueTable], action_count: int
) -> FunctionClass:
    """All (policy, value) pairs, policy-major: (p0, g0), (p0, g1), ..., (p1, g0), ..."""
    if not policies or not vvalues:
        raise ArgumentError("Both the policy list and the value list must be nonempty")

    shape = tuple(table.shape for table in policies[0].actions)
    for i, policy in enumerate(policies):
        if tuple(table.shape for table in policy.actions) != shape:
            raise ArgumentError(f"Policy {i} has a different context space")
    for i, table in enumerate(vvalues):
        if tuple(level.shape for level in table) != shape:
            raise ArgumentError(f"Value table {i} has a different context space")

    pairs = [
        PolicyValuePair(policy=policy, vvalue=table)
        for policy in policies
        for table in vvalues
    ]
    log_size = math.log(len(policies)) + math.log(len(vvalues))
    logger.debug(
        f"Product class with {len(pairs)} pairs, log|Pi| + log|G| = {log_size:.3f}"
    )
    return FunctionClass.from_pairs(pairs, action_count, log_size=log_size)


@dataclass(frozen=True, eq=False)
class SurvivingSet:
    """Boolean mask over the members of a FunctionClass"""

    mask: np.ndarray

    @classmethod
    def full(cls, size: int) -> "SurvivingSet":
        return cls(np.ones(size, dtype=bool))

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __contains__(self, index: int) -> bool:
        return bool(self.mask[index])

    def keep(self, indices: np.ndarray, keep: np.ndarray) -> "SurvivingSet":
        """Drop the members in `indices` whose `keep` flag is False"""
        mask = self.mask.copy()
        mask[indices[~keep]] = False
        return SurvivingSet(mask)
