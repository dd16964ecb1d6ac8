"""
Run configuration and the sample-size schedule of the elimination loop.

All logarithms are natural.
"""

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Optional

from cdp_lab.errors import ArgumentError

logger = logging.getLogger("cdp_lab")

MODES = ("sampled", "population")
DEFAULT_MAX_EPISODES = 10**7
DEFAULT_BATCH_SIZE = 8192


@dataclass(frozen=True)
class OliveParameters:
    phi: float
    n_est: int
    n_eval: int
    n: int


@dataclass(frozen=True)
class OliveConfig:
    """
    Knobs of one OLIVE/OLIVER run.

    `rank` is the Bellman-rank input M, `theta` and `theta_m` the validity and
    factorization slacks (both 0 for plain OLIVE). `phi`, `n_est`, `n_eval`
    and `n` override the derived schedule when set.
    """

    epsilon: float
    delta: float
    rank: int
    zeta: float
    theta: float = 0.0
    theta_m: float = 0.0
    mode: str = "sampled"
    phi: Optional[float] = None
    n_est: Optional[int] = None
    n_eval: Optional[int] = None
    n: Optional[int] = None
    max_iterations: Optional[int] = None
    max_episodes: int = DEFAULT_MAX_EPISODES
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ArgumentError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ArgumentError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rank < 1:
            raise ArgumentError(f"Bellman rank M must be at least 1, got {self.rank}")
        if self.zeta <= 0:
            raise ArgumentError(f"zeta must be positive, got {self.zeta}")
        for name in ("theta", "theta_m"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1], got {value}")
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}, got {self.mode}")
        if self.phi is not None and self.phi <= 0:
            raise ArgumentError(f"phi override must be positive, got {self.phi}")
        for name in ("n_est", "n_eval", "n", "max_iterations"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ArgumentError(f"{name} must be at least 1, got {value}")
        if self.max_episodes < 1 or self.batch_size < 1:
            raise ArgumentError("Episode budget and batch size must be positive")

    @property
    def overridden(self) -> bool:
        return any(
            getattr(self, name) is not None for name in ("phi", "n_est", "n_eval", "n")
        )

    def with_updates(self, **changes) -> "OliveConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def _log_of_log(horizon: int, rank: int, zeta: float, epsilon: float) -> float:
    inner = math.log(6 * horizon * math.sqrt(rank) * zeta / epsilon)
    if inner <= 0:
        raise ArgumentError(
            f"ln(6 H sqrt(M) zeta / epsilon) = {inner:.4g} is not positive; "
            "zeta is too small for this epsilon"
        )
    return inner


def compute_parameters(
    epsilon: float,
    delta: float,
    rank: int,
    zeta: float,
    horizon: int,
    actions: int,
    size: int,
) -> OliveParameters:
    """phi and the three sample sizes, each size rounded up"""
    if size < 1 or horizon < 1 or actions < 1:
        raise ArgumentError("Class size, horizon and action count must be positive")
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ArgumentError("epsilon and delta must lie in (0, 1)")

    h, m, k, n = horizon, rank, actions, size
    inner = _log_of_log(h, m, zeta, epsilon)

    phi = epsilon / (12 * h * math.sqrt(m))
    n_est = math.ceil(32 / epsilon**2 * math.log(6 * n / delta))
    n_eval = math.ceil(
        288 * h**2 / epsilon**2 * math.log(12 * h**2 * m * inner / delta)
    )
    n_all = math.ceil(
        4608 * h**2 * m * k / epsilon**2 * math.log(12 * n * h * m * inner / delta)
    )
    return OliveParameters(phi=phi, n_est=n_est, n_eval=n_eval, n=n_all)


def resolve_parameters(
    config: OliveConfig, horizon: int, actions: int, size: int
) -> OliveParameters:
    """Derived schedule with any overrides from `config` applied"""
    derived = compute_parameters(
        config.epsilon, config.delta, config.rank, config.zeta, horizon, actions, size
    )
    if config.overridden:
        logger.warning(
            "Parameter overrides are set; the iteration bound no longer applies"
        )
    return OliveParameters(
        phi=derived.phi if config.phi is None else config.phi,
        n_est=derived.n_est if config.n_est is None else config.n_est,
        n_eval=derived.n_eval if config.n_eval is None else config.n_eval,
        n=derived.n if config.n is None else config.n,
    )


def epsilon_prime(
    epsilon: float, horizon: int, rank: int, theta: float, theta_m: float
) -> float:
    """Effective accuracy of the robust loop: eps + 2H(3 sqrt(M)(theta + theta_M) + theta_M)"""
    return epsilon + 2 * horizon * (3 * math.sqrt(rank) * (theta + theta_m) + theta_m)


def level_iteration_bound(rank: int, zeta: float, phi: float) -> float:
    """M ln(zeta / (2 phi)) / ln(5/3): how often one level can be picked"""
    return rank * math.log(zeta / (2 * phi)) / math.log(5 / 3)


def iteration_bound(horizon: int, rank: int, zeta: float, phi: float) -> float:
    """H M ln(zeta / (2 phi)) / ln(5/3) iterations suffice with exact estimates"""
    return horizon * level_iteration_bound(rank, zeta, phi)


def default_max_iterations(horizon: int, rank: int, zeta: float, phi: float) -> int:
    return max(1, math.ceil(2 * iteration_bound(horizon, rank, zeta, phi)))


def guess_m_iteration_stop(
    horizon: int, rank: int, zeta: float, epsilon: float
) -> int:
    """Hard stop of one rank-doubling round: H M' ln(6 H sqrt(M') zeta' / eps) / ln(5/3)"""
    bound = (
        horizon
        * rank
        * _log_of_log(horizon, rank, zeta, epsilon)
        / math.log(5 / 3)
    )
    return max(1, math.floor(bound))
