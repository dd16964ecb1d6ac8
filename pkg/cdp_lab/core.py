"""
Contextual decision processes over enumerable context spaces.

Every environment is layered: level h has S_h latent states and O_h context
cores. A context is the pair (core_id, level). For MDPs the context core is
the latent state itself; reactive POMDPs emit the core from the latent state.
Level H+1 has a single terminal core (id 0) on which every function is zero.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, NamedTuple, Optional, Protocol, runtime_checkable

import numpy as np

from cdp_lab.errors import ArgumentError, CapabilityError, ContractViolation

logger = logging.getLogger("cdp_lab")

ROW_TOLERANCE = 1e-12

# Fixed purpose order for derived random streams
STREAM_PURPOSES = (
    "environment",
    "function_class",
    "episodes",
    "baseline",
    "evaluation",
    "geometry",
)

ActionIndex = int


def substream(seed: int, purpose: str) -> np.random.Generator:
    """Derive an independent random stream for one purpose from a master seed"""
    if purpose not in STREAM_PURPOSES:
        raise ArgumentError(f"Unknown stream purpose: {purpose}")

    sequence = np.random.SeedSequence(
        entropy=seed, spawn_key=(STREAM_PURPOSES.index(purpose),)
    )
    return np.random.default_rng(sequence)


class Context(NamedTuple):
    core_id: int
    level: int

    def is_terminal(self, horizon: int) -> bool:
        return self.level == horizon + 1


@dataclass(frozen=True, eq=False)
class Trajectory:
    contexts: list[Context]
    actions: list[ActionIndex]
    rewards: list[float]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def satisfies_reward_bound(self, tolerance: float = ROW_TOLERANCE) -> bool:
        """Rewards are nonnegative and sum to at most one"""
        return (
            all(r >= 0 for r in self.rewards)
            and self.total_reward <= 1 + tolerance
        )


@dataclass(frozen=True, eq=False)
class Policy:
    """
    Deterministic tabular policy.

    `actions[h - 1][core_id]` is the action at context (core_id, h). An entry of
    -1 marks the policy as undefined at that context.
    """

    actions: tuple[np.ndarray, ...]

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def __call__(self, context: Context) -> ActionIndex:
        if context.level < 1 or context.level > self.horizon:
            raise ContractViolation(f"Policy has no level {context.level}")

        table = self.actions[context.level - 1]
        if context.core_id < 0 or context.core_id >= table.shape[0]:
            raise ContractViolation(f"Policy undefined at {context}")

        action = int(table[context.core_id])
        if action < 0:
            raise ContractViolation(f"Policy undefined at {context}")

        return action

    def same_as(self, other: "Policy") -> bool:
        return self.horizon == other.horizon and all(
            np.array_equal(mine, theirs)
            for mine, theirs in zip(self.actions, other.actions)
        )

    @classmethod
    def constant(cls, context_counts: tuple[int, ...], action: int = 0) -> "Policy":
        return cls(
            tuple(np.full(count, action, dtype=np.int64) for count in context_counts)
        )

    @classmethod
    def from_mapping(
        cls, context_counts: tuple[int, ...], mapping: dict[Context, int]
    ) -> "Policy":
        """Build a (possibly partial) policy from explicit context assignments"""
        tables = [np.full(count, -1, dtype=np.int64) for count in context_counts]
        for context, action in mapping.items():
            tables[context.level - 1][context.core_id] = action
        return cls(tuple(tables))

    @classmethod
    def random(
        cls, context_counts: tuple[int, ...], action_count: int, rng: np.random.Generator
    ) -> "Policy":
        return cls(
            tuple(rng.integers(action_count, size=count) for count in context_counts)
        )


@dataclass(frozen=True, eq=False)
class EpisodeBatch:
    """
    A batch of episodes stored column-wise.

    contexts: (n, H+1) core ids, column h-1 holding level h
    actions: (n, H)
    rewards: (n, H)
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)

    def episode(self, index: int) -> Trajectory:
        horizon = self.actions.shape[1]
        return Trajectory(
            contexts=[
                Context(int(core), level + 1)
                for level, core in enumerate(self.contexts[index])
            ],
            actions=[int(a) for a in self.actions[index]],
            rewards=[float(r) for r in self.rewards[index, :horizon]],
        )


@runtime_checkable
class EpisodicEnvironment(Protocol):
    """What every environment exposes, whether or not its dynamics are visible"""

    horizon: int
    action_count: int

    @property
    def context_counts(self) -> tuple[int, ...]: ...

    @property
    def oracle_capable(self) -> bool: ...

    def sample_batch(
        self,
        policy: Policy,
        n_episodes: int,
        rng: np.random.Generator,
        deviate_level: Optional[int] = None,
        explore: bool = False,
    ) -> EpisodeBatch: ...


def _inverse_cdf(cumulative: np.ndarray, keys: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw one index per episode from the row `cumulative[key]` using uniforms `u`"""
    out = np.empty(keys.shape[0], dtype=np.int64)
    unique, inverse = np.unique(keys, return_inverse=True)
    for position, key in enumerate(unique):
        selected = inverse == position
        out[selected] = np.searchsorted(cumulative[key], u[selected], side="right")
    return np.minimum(out, cumulative.shape[1] - 1)


@dataclass(frozen=True, eq=False, kw_only=True)
class TabularCDP:
    """
    Layered decision process with explicit dynamics.

    init: (S_1,) distribution over level-1 latent states
    transitions[h-1], h = 1..H-1: (S_h, K, S_{h+1}) when contexts are the
        latent states, (S_h, O_h, K, S_{h+1}) when they are emitted
    reward_mean[h-1]: (S_h, K) or (S_h, O_h, K)
    emissions[h-1]: (S_h, O_h) or None for the whole model
    reward_noise: "none" pays the mean, "bernoulli" pays reward_scale[h-1]
        with probability mean / reward_scale[h-1]
    """

    kind: ClassVar[str] = "tabular"

    horizon: int
    action_count: int
    init: np.ndarray
    transitions: tuple[np.ndarray, ...]
    reward_mean: tuple[np.ndarray, ...]
    emissions: Optional[tuple[np.ndarray, ...]] = None
    reward_noise: str = "none"
    reward_scale: Optional[tuple[float, ...]] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon < 1:
            raise ArgumentError(f"Horizon must be at least 1, got {self.horizon}")
        if self.action_count < 1:
            raise ArgumentError(f"Need at least one action, got {self.action_count}")
        if len(self.transitions) != self.horizon - 1:
            raise ArgumentError(
                f"Expected {self.horizon - 1} transition tables, got {len(self.transitions)}"
            )
        if len(self.reward_mean) != self.horizon:
            raise ArgumentError(
                f"Expected {self.horizon} reward tables, got {len(self.reward_mean)}"
            )
        if self.emissions is not None and len(self.emissions) != self.horizon:
            raise ArgumentError(
                f"Expected {self.horizon} emission tables, got {len(self.emissions)}"
            )
        if self.reward_noise not in ("none", "bernoulli"):
            raise ArgumentError(f"Unknown reward noise: {self.reward_noise}")
        if self.reward_scale is None:
            object.__setattr__(self, "reward_scale", (1.0,) * self.horizon)

        latent, contexts, k = self.latent_counts, self.context_counts, self.action_count
        for h in range(1, self.horizon + 1):
            j = h - 1
            if self.emissions is None:
                expected_reward = (latent[j], k)
            else:
                if self.emissions[j].shape != (latent[j], contexts[j]):
                    raise ArgumentError(f"Emission table at level {h} has wrong shape")
                expected_reward = (latent[j], contexts[j], k)
            if self.reward_mean[j].shape != expected_reward:
                raise ArgumentError(
                    f"Reward table at level {h} has shape {self.reward_mean[j].shape}, "
                    f"expected {expected_reward}"
                )
            if h < self.horizon:
                expected = expected_reward + (latent[j + 1],)
                if self.transitions[j].shape != expected:
                    raise ArgumentError(
                        f"Transition table at level {h} has shape "
                        f"{self.transitions[j].shape}, expected {expected}"
                    )

    @property
    def oracle_capable(self) -> bool:
        return True

    @cached_property
    def latent_counts(self) -> tuple[int, ...]:
        counts = [int(self.init.shape[0])]
        for table in self.transitions:
            counts.append(int(table.shape[-1]))
        return tuple(counts)

    @property
    def context_counts(self) -> tuple[int, ...]:
        if self.emissions is None:
            return self.latent_counts
        return tuple(int(table.shape[1]) for table in self.emissions)

    @property
    def observes_latent(self) -> bool:
        """Whether contexts are the latent states themselves"""
        return self.emissions is None

    def sampling_only(self) -> "SamplingOnlyCDP":
        return SamplingOnlyCDP(self)

    # Exact one-step quantities, all indexed by level h in 1..H

    def kernel(self, h: int, actions: np.ndarray) -> np.ndarray:
        """(S_h, S_{h+1}) latent transition matrix when context cores take `actions`"""
        table = self.transitions[h - 1]
        if self.emissions is None:
            return table[np.arange(table.shape[0]), actions, :]

        cores = np.arange(table.shape[1])
        picked = table[:, cores, actions, :]
        return np.einsum("so,sot->st", self.emissions[h - 1], picked)

    def action_kernel(self, h: int, action: int) -> np.ndarray:
        return self.kernel(h, np.full(self.context_counts[h - 1], action))

    def mean_reward(self, h: int, actions: np.ndarray) -> np.ndarray:
        """(S_h,) expected reward when context cores take `actions`"""
        table = self.reward_mean[h - 1]
        if self.emissions is None:
            return table[np.arange(table.shape[0]), actions]

        cores = np.arange(table.shape[1])
        return np.einsum("so,so->s", self.emissions[h - 1], table[:, cores, actions])

    def observe(self, h: int, values: np.ndarray) -> np.ndarray:
        """Expected per-latent-state value of a function over level-h context cores"""
        if self.emissions is None:
            return values
        return self.emissions[h - 1] @ values

    def max_reward(self, h: int) -> np.ndarray:
        """Largest reward any single step can pay, same shape as reward_mean"""
        mean = self.reward_mean[h - 1]
        if self.reward_noise == "none":
            return mean
        return np.where(mean > 0, self.reward_scale[h - 1], 0.0)

    # Sampling

    @cached_property
    def _cumulative(self) -> dict:
        tables = {
            "init": np.cumsum(self.init)[None, :],
            "transitions": [
                np.cumsum(table, axis=-1).reshape(-1, table.shape[-1])
                for table in self.transitions
            ],
        }
        if self.emissions is not None:
            tables["emissions"] = [np.cumsum(table, axis=1) for table in self.emissions]
        return tables

    def sample_batch(
        self,
        policy: Policy,
        n_episodes: int,
        rng: np.random.Generator,
        deviate_level: Optional[int] = None,
        explore: bool = False,
    ) -> EpisodeBatch:
        """
        Roll out `n_episodes` episodes. Actions are uniform at `deviate_level`,
        or at every level when `explore` is set.
        """
        if n_episodes < 1:
            raise ArgumentError(f"Need at least one episode, got {n_episodes}")
        if deviate_level is not None and not 1 <= deviate_level <= self.horizon:
            raise ArgumentError(
                f"Deviation level {deviate_level} outside 1..{self.horizon}"
            )
        if policy.horizon != self.horizon:
            raise ContractViolation(
                f"Policy covers {policy.horizon} levels, environment has {self.horizon}"
            )

        n, k = n_episodes, self.action_count
        cumulative = self._cumulative
        contexts = np.zeros((n, self.horizon + 1), dtype=np.int64)
        actions = np.zeros((n, self.horizon), dtype=np.int64)
        rewards = np.zeros((n, self.horizon))

        latent = _inverse_cdf(cumulative["init"], np.zeros(n, dtype=np.int64), rng.random(n))

        for h in range(1, self.horizon + 1):
            j = h - 1
            if self.emissions is None:
                cores = latent
            else:
                cores = _inverse_cdf(cumulative["emissions"][j], latent, rng.random(n))
            contexts[:, j] = cores

            table = policy.actions[j]
            if cores.max() >= table.shape[0]:
                raise ContractViolation(f"Policy undefined at level {h}")
            if explore or deviate_level == h:
                chosen = rng.integers(k, size=n)
            else:
                chosen = table[cores]
                if chosen.min() < 0:
                    core = int(cores[np.argmin(chosen)])
                    raise ContractViolation(f"Policy undefined at {Context(core, h)}")
            actions[:, j] = chosen

            if self.emissions is None:
                mean = self.reward_mean[j][latent, chosen]
                key = latent * k + chosen
            else:
                mean = self.reward_mean[j][latent, cores, chosen]
                key = (latent * self.context_counts[j] + cores) * k + chosen

            if self.reward_noise == "bernoulli":
                scale = self.reward_scale[j]
                rewards[:, j] = np.where(rng.random(n) * scale < mean, scale, 0.0)
            else:
                rewards[:, j] = mean

            if h < self.horizon:
                latent = _inverse_cdf(cumulative["transitions"][j], key, rng.random(n))

        return EpisodeBatch(contexts=contexts, actions=actions, rewards=rewards)


@dataclass(frozen=True, eq=False)
class SamplingOnlyCDP:
    """Black-box view of an environment: episodes can be drawn, dynamics cannot be read"""

    _inner: TabularCDP

    @property
    def horizon(self) -> int:
        return self._inner.horizon

    @property
    def action_count(self) -> int:
        return self._inner.action_count

    @property
    def context_counts(self) -> tuple[int, ...]:
        return self._inner.context_counts

    @property
    def oracle_capable(self) -> bool:
        return False

    def sample_batch(
        self,
        policy: Policy,
        n_episodes: int,
        rng: np.random.Generator,
        deviate_level: Optional[int] = None,
        explore: bool = False,
    ) -> EpisodeBatch:
        return self._inner.sample_batch(policy, n_episodes, rng, deviate_level, explore)


def require_oracle(env) -> TabularCDP:
    """Return `env` if its dynamics are readable, raise CapabilityError otherwise"""
    if not isinstance(env, TabularCDP) or not env.oracle_capable:
        raise CapabilityError(
            f"{type(env).__name__} only supports sampling; exact queries need explicit dynamics"
        )
    return env


def sample_episode(
    env: EpisodicEnvironment, policy: Policy, rng: np.random.Generator
) -> Trajectory:
    """Draw one episode following `policy`"""
    return env.sample_batch(policy, 1, rng).episode(0)


def sample_episode_with_deviation(
    env: EpisodicEnvironment,
    base_policy: Policy,
    deviate_level: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Draw one full episode following `base_policy` except for a uniform action at `deviate_level`"""
    if not 1 <= deviate_level <= env.horizon:
        raise ArgumentError(f"Deviation level {deviate_level} outside 1..{env.horizon}")
    return env.sample_batch(base_policy, 1, rng, deviate_level).episode(0)


def policy_value_mc(
    env: EpisodicEnvironment, policy: Policy, n_episodes: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo estimate of the expected total reward of `policy`"""
    if n_episodes < 1:
        raise ArgumentError(f"Need at least one episode, got {n_episodes}")
    return float(env.sample_batch(policy, n_episodes, rng).returns.mean())


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_rows(
    report: ValidationReport, table: np.ndarray, label: str, index_names: tuple[str, ...]
) -> None:
    sums = table.sum(axis=-1)
    bad_sum = np.abs(sums - 1) > ROW_TOLERANCE
    negative = (table < 0).any(axis=-1)

    for index in zip(*np.nonzero(bad_sum | negative)):
        where = ", ".join(f"{name}={int(i)}" for name, i in zip(index_names, index))
        report.violations.append(
            f"{label} row ({where}) sums to {sums[index]:.15g}"
            + (" and has negative entries" if negative[index] else "")
        )


def validate_environment(env: TabularCDP) -> ValidationReport:
    """Audit stochasticity and the reward bound of an environment with explicit dynamics"""
    env = require_oracle(env)
    report = ValidationReport()
    emitted = env.emissions is not None

    _check_rows(report, env.init[None, :], "initial distribution", ("row",))

    for h in range(1, env.horizon + 1):
        j = h - 1
        names = ("s", "o", "a") if emitted else ("s", "a")
        if emitted:
            _check_rows(report, env.emissions[j], f"emission at h={h}", ("s",))
        if h < env.horizon:
            _check_rows(report, env.transitions[j], f"transition at h={h}", names)

        negative = np.argwhere(env.reward_mean[j] < 0)
        for index in negative:
            where = ", ".join(f"{n}={int(i)}" for n, i in zip(names, index))
            report.violations.append(f"negative reward at ({where}, h={h})")

        if env.reward_noise == "bernoulli" and (
            env.reward_mean[j] > env.reward_scale[j] + ROW_TOLERANCE
        ).any():
            report.violations.append(f"reward mean above reward scale at h={h}")

    # Worst-case reward collected along any path with positive probability
    worst_next = np.zeros(1)
    for h in range(env.horizon, 0, -1):
        j = h - 1
        step = env.max_reward(h)
        if h < env.horizon:
            reachable = env.transitions[j] > 0
            future = np.where(reachable, worst_next, -np.inf).max(axis=-1)
            step = step + future
        if emitted:
            step = np.where(env.emissions[j][:, :, None] > 0, step, -np.inf)
            worst_next = step.max(axis=(1, 2))
        else:
            worst_next = step.max(axis=1)

    worst = float(np.where(env.init > 0, worst_next, -np.inf).max())
    if worst > 1 + ROW_TOLERANCE:
        report.violations.append(
            f"worst-case reward path sums to {worst:.6g}, above 1"
        )

    if report.ok:
        logger.debug(f"Environment {env.kind} passed validation")
    else:
        logger.debug(f"Environment {env.kind} has {len(report.violations)} violations")

    return report
