"""
Exact dynamic-programming oracles over environments with explicit dynamics.

Average Bellman errors factor through the latent occupancy at level h:

    E(f, pi, h) = < d_h^pi , xi_h(f) >

with d_h^pi the level-h latent distribution under roll-in pi and
xi_h(f)(s) the expected one-step error of f's greedy play from latent s.
Everything here is built on that identity.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from cdp_lab.core import Policy, TabularCDP, require_oracle
from cdp_lab.errors import ArgumentError, CapabilityError
from cdp_lab.function_class import (
    FunctionClass,
    PolicyValuePair,
    QFunction,
    SurvivingSet,
    to_pair,
)

logger = logging.getLogger("cdp_lab")

RANK_TOLERANCE = 1e-8
VALIDITY_TOLERANCE = 1e-10

Evaluated = Union[QFunction, PolicyValuePair]


@dataclass(frozen=True, eq=False)
class OccupancyDistribution:
    level: int
    probabilities: np.ndarray


@dataclass(frozen=True, eq=False)
class BellmanErrorMatrix:
    """Entry (i, j) is E(member j, greedy policy of member i, level)"""

    level: int
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class BellmanFactorization:
    """
    Row i of `nu` embeds member i as a roll-in, row j of `xi` embeds member j as
    the evaluated function; nu @ xi.T reproduces the error matrix up to
    `approximation`.
    """

    level: int
    nu: np.ndarray
    xi: np.ndarray
    zeta: float
    approximation: float = 0.0

    @property
    def dimension(self) -> int:
        return int(self.nu.shape[1])

    def inner_products(self) -> np.ndarray:
        return self.nu @ self.xi.T


@dataclass
class FactorizationReport:
    level: int
    max_residual: float
    norm_product: float
    zeta: float
    passed: bool
    witnesses: list[tuple[int, int, float]] = field(default_factory=list)


def _as_pair(f: Evaluated) -> PolicyValuePair:
    return to_pair(f) if isinstance(f, QFunction) else f


def _check_level(env: TabularCDP, h: int) -> None:
    if not 1 <= h <= env.horizon:
        raise ArgumentError(f"Level {h} outside 1..{env.horizon}")


def occupancies(env: TabularCDP, policy: Policy) -> list[np.ndarray]:
    """Latent-state distributions at levels 1..H under `policy`"""
    env = require_oracle(env)
    dists = [env.init.astype(float)]
    for h in range(1, env.horizon):
        dists.append(dists[-1] @ env.kernel(h, policy.actions[h - 1]))
    return dists


def occupancy(env: TabularCDP, policy: Policy, h: int) -> OccupancyDistribution:
    env = require_oracle(env)
    _check_level(env, h)
    return OccupancyDistribution(level=h, probabilities=occupancies(env, policy)[h - 1])


def context_occupancy(env: TabularCDP, policy: Policy, h: int) -> np.ndarray:
    """Distribution over level-h context cores under `policy`"""
    latent = occupancy(env, policy, h).probabilities
    if env.emissions is None:
        return latent
    return latent @ env.emissions[h - 1]


def exact_value_of_policy(env: TabularCDP, policy: Policy) -> float:
    env = require_oracle(env)
    return float(
        sum(
            dist @ env.mean_reward(h, policy.actions[h - 1])
            for h, dist in enumerate(occupancies(env, policy), start=1)
        )
    )


def reachable_latent(env: TabularCDP) -> list[np.ndarray]:
    """Latent states reachable under some policy, per level"""
    env = require_oracle(env)
    masks = [env.init > 0]
    for h in range(1, env.horizon):
        table = env.transitions[h - 1] > 0
        if env.emissions is not None:
            table = table & (env.emissions[h - 1] > 0)[:, :, None, None]
            table = table.any(axis=1)
        masks.append(table[masks[-1]].any(axis=(0, 1)))
    return masks


def _one_step_error(
    env: TabularCDP,
    h: int,
    actions: np.ndarray,
    values: np.ndarray,
    next_values: Optional[np.ndarray],
) -> np.ndarray:
    """Expected f(x_h, a_h) - r_h - f(x_{h+1}, a_{h+1}) from each level-h latent state"""
    error = env.observe(h, values) - env.mean_reward(h, actions)
    if h < env.horizon and next_values is not None:
        error = error - env.kernel(h, actions) @ env.observe(h + 1, next_values)
    return error


def exact_bellman_error(env: TabularCDP, f: Evaluated, roll_in: Policy, h: int) -> float:
    env = require_oracle(env)
    _check_level(env, h)
    pair = _as_pair(f)
    j = h - 1
    next_values = pair.vvalue[h] if h < env.horizon else None
    xi = _one_step_error(env, h, pair.policy.actions[j], pair.vvalue[j], next_values)
    return float(occupancies(env, roll_in)[j] @ xi)


class BellmanOracle:
    """Exact Bellman errors for every member of a class, cached per level"""

    def __init__(self, env: TabularCDP, fclass: FunctionClass):
        self.env = require_oracle(env)
        self.fclass = fclass
        if fclass.context_counts != env.context_counts:
            raise ArgumentError(
                f"Class context space {fclass.context_counts} does not match "
                f"environment {env.context_counts}"
            )
        self._xi: dict[int, np.ndarray] = {}

    @cached_property
    def reachable(self) -> list[np.ndarray]:
        return reachable_latent(self.env)

    @cached_property
    def roll_in_occupancies(self) -> list[np.ndarray]:
        """(N, S_h) occupancy of each member's greedy policy, per level"""
        per_member = [
            occupancies(self.env, self.fclass.policy(i)) for i in range(len(self.fclass))
        ]
        return [
            np.stack([member[j] for member in per_member])
            for j in range(self.env.horizon)
        ]

    def xi(self, h: int) -> np.ndarray:
        """(N, S_h) expected one-step errors; unreachable states are set to 0"""
        _check_level(self.env, h)
        if h not in self._xi:
            j = h - 1
            rows = []
            for i in range(len(self.fclass)):
                next_values = (
                    self.fclass.vvalues[h][i] if h < self.env.horizon else None
                )
                rows.append(
                    _one_step_error(
                        self.env,
                        h,
                        self.fclass.policies[j][i],
                        self.fclass.vvalues[j][i],
                        next_values,
                    )
                )
            table = np.stack(rows)
            table[:, ~self.reachable[j]] = 0.0
            self._xi[h] = table
        return self._xi[h]

    def errors_under(self, roll_in: Policy, h: int) -> np.ndarray:
        """E(f, roll_in, h) for every member f"""
        return self.xi(h) @ occupancies(self.env, roll_in)[h - 1]

    def error_matrix(self, h: int) -> BellmanErrorMatrix:
        return BellmanErrorMatrix(
            level=h, matrix=self.roll_in_occupancies[h - 1] @ self.xi(h).T
        )

    def initial_values(self) -> np.ndarray:
        """Exact E[f(x_1, pi_f(x_1))] for every member"""
        observed = (
            self.fclass.vvalues[0]
            if self.env.emissions is None
            else self.fclass.vvalues[0] @ self.env.emissions[0].T
        )
        return observed @ self.env.init

    def policy_values(self) -> np.ndarray:
        return np.array(
            [
                exact_value_of_policy(self.env, self.fclass.policy(i))
                for i in range(len(self.fclass))
            ]
        )

    def max_abs_errors(self) -> np.ndarray:
        """max over roll-in members and levels of |E(f, pi_f', h)|, per member f"""
        worst = np.zeros(len(self.fclass))
        for h in range(1, self.env.horizon + 1):
            worst = np.maximum(worst, np.abs(self.error_matrix(h).matrix).max(axis=0))
        return worst


def bellman_error_matrix(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanErrorMatrix:
    return BellmanOracle(env, fclass).error_matrix(h)


def singular_values(matrix: BellmanErrorMatrix) -> np.ndarray:
    return np.linalg.svd(matrix.matrix, compute_uv=False)


def numerical_bellman_rank(
    matrices: Sequence[BellmanErrorMatrix], rel_tol: float = RANK_TOLERANCE
) -> int:
    """Largest count, over levels, of singular values above rel_tol * sigma_max"""
    if not matrices:
        raise ArgumentError("Need at least one Bellman error matrix")

    rank = 0
    for matrix in matrices:
        values = singular_values(matrix)
        if values.size == 0 or values[0] == 0:
            continue
        rank = max(rank, int((values > rel_tol * values[0]).sum()))
    return rank


def _latent_factorization(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanFactorization:
    oracle = BellmanOracle(env, fclass)
    dimension = env.latent_counts[h - 1]
    return BellmanFactorization(
        level=h,
        nu=oracle.roll_in_occupancies[h - 1],
        xi=oracle.xi(h),
        zeta=2 * math.sqrt(dimension),
    )


def mdp_factorization(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanFactorization:
    """nu is the state occupancy of the roll-in, xi the per-state expected error"""
    env = require_oracle(env)
    _check_level(env, h)
    if not env.observes_latent:
        raise CapabilityError("mdp_factorization needs contexts that are the states")
    return _latent_factorization(env, fclass, h)


def pomdp_factorization(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanFactorization:
    """nu is the hidden-state occupancy of the roll-in, xi the error averaged over emissions"""
    env = require_oracle(env)
    _check_level(env, h)
    return _latent_factorization(env, fclass, h)


def lowrank_factorization(env: TabularCDP, fclass: FunctionClass, h: int) -> BellmanFactorization:
    """
    Factorization through the M latent factors of a low-rank transition.

    For h >= 2, nu(f') is the (state, action) occupancy at h-1 pushed through
    the left factor and xi(f) is the per-state error averaged by the right
    factor. Level 1 has no preceding transition: nu = e_1 against the scalar
    error padded to M coordinates.
    """
    env = require_oracle(env)
    _check_level(env, h)
    left = getattr(env, "left_factors", None)
    right = getattr(env, "right_factors", None)
    if left is None or right is None:
        raise CapabilityError(f"{type(env).__name__} carries no low-rank factors")

    oracle = BellmanOracle(env, fclass)
    xi_states = oracle.xi(h)
    n = len(fclass)
    rank = int(right[0].shape[0]) if right else 1

    if h == 1:
        nu = np.zeros((n, rank))
        nu[:, 0] = 1.0
        xi = np.zeros((n, rank))
        xi[:, 0] = xi_states @ env.init
    else:
        j = h - 2
        states, k = env.latent_counts[j], env.action_count
        nu = np.zeros((n, rank))
        for i in range(n):
            dist = oracle.roll_in_occupancies[j][i]
            joint = np.zeros((states, k))
            joint[np.arange(states), fclass.policies[j][i]] = dist
            nu[i] = joint.reshape(-1) @ left[j]
        xi = xi_states @ right[j].T

    return BellmanFactorization(level=h, nu=nu, xi=xi, zeta=2 * math.sqrt(rank))


def verify_factorization(
    env: TabularCDP,
    fclass: FunctionClass,
    fact: BellmanFactorization,
    tol: float = 1e-8,
    max_witnesses: int = 10,
) -> FactorizationReport:
    """Compare <nu(f'), xi(f)> with exact errors and check the norm certificate"""
    exact = bellman_error_matrix(env, fclass, fact.level).matrix
    residual = np.abs(fact.inner_products() - exact)
    limit = tol + fact.approximation

    norm_product = float(
        np.linalg.norm(fact.nu, axis=1).max() * np.linalg.norm(fact.xi, axis=1).max()
    )
    norms_ok = norm_product <= fact.zeta * (1 + 1e-12)

    witnesses = []
    order = np.argsort(residual, axis=None)[::-1]
    for flat in order[:max_witnesses]:
        row, column = np.unravel_index(flat, residual.shape)
        if residual[row, column] <= limit:
            break
        witnesses.append((int(row), int(column), float(residual[row, column])))

    max_residual = float(residual.max())
    passed = max_residual <= limit and norms_ok
    if not passed:
        logger.warning(
            f"Factorization at level {fact.level} failed: residual {max_residual:.3g}, "
            f"norm product {norm_product:.3g} vs zeta {fact.zeta:.3g}"
        )

    return FactorizationReport(
        level=fact.level,
        max_residual=max_residual,
        norm_product=norm_product,
        zeta=fact.zeta,
        passed=passed,
        witnesses=witnesses,
    )


def policy_loss_residual(env: TabularCDP, f: Evaluated) -> float:
    """|V_f - V^{pi_f} - sum_h E(f, pi_f, h)|, zero up to rounding for every f"""
    env = require_oracle(env)
    pair = _as_pair(f)
    predicted = float(env.init @ env.observe(1, pair.vvalue[0]))
    actual = exact_value_of_policy(env, pair.policy)
    errors = sum(
        exact_bellman_error(env, pair, pair.policy, h) for h in range(1, env.horizon + 1)
    )
    return abs(predicted - actual - errors)


def theta_valid_set(
    env: TabularCDP, fclass: FunctionClass, theta: float, tol: float = VALIDITY_TOLERANCE
) -> SurvivingSet:
    """
    Members whose |E(f, pi_f', h)| stays within theta for every roll-in member
    and level. `tol` absorbs rounding, so Q* is 0-valid.
    """
    worst = BellmanOracle(env, fclass).max_abs_errors()
    return SurvivingSet(worst <= theta + tol)


def optimal_valid_value(
    env: TabularCDP, fclass: FunctionClass, theta: float
) -> Optional[tuple[int, float]]:
    """(index, value) of the best theta-valid member; None when no member is theta-valid"""
    valid = theta_valid_set(env, fclass, theta)
    if not len(valid):
        logger.warning(f"No member of the class is {theta}-valid")
        return None

    values = np.array(
        [exact_value_of_policy(env, fclass.policy(i)) for i in valid.indices]
    )
    best = int(np.argmax(values))
    return int(valid.indices[best]), float(values[best])
