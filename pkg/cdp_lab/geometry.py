"""
Minimum-volume enclosing ellipsoids of symmetric slab cuts, and a replay of
the volume argument that bounds how often the elimination loop can pick the
same level.

A centred ellipsoid with shape matrix B is {w : w^T B^-1 w <= 1}. Cutting the
unit ball with the slab |w_1| <= beta (0 < beta <= 1/sqrt(d)) is enclosed by
rho (I - sigma e_1 e_1^T) with

    sigma = (1 - d beta^2) / (1 - beta^2),    rho = d (1 - beta^2) / (d - 1)

Volumes are compared in log space throughout.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

from cdp_lab.errors import ArgumentError
from cdp_lab.olive.loop import IterationRecord
from cdp_lab.oracle import BellmanFactorization

logger = logging.getLogger("cdp_lab")

SYMMETRY_TOLERANCE = 1e-12
RANGE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class CenteredEllipsoid:
    shape: np.ndarray

    def __post_init__(self):
        if self.shape.ndim != 2 or self.shape.shape[0] != self.shape.shape[1]:
            raise ArgumentError(f"Shape matrix must be square, got {self.shape.shape}")
        scale = max(1.0, float(np.abs(self.shape).max()))
        if np.abs(self.shape - self.shape.T).max() > SYMMETRY_TOLERANCE * scale:
            raise ArgumentError("Shape matrix is not symmetric")
        try:
            np.linalg.cholesky(self.shape)
        except np.linalg.LinAlgError:
            raise ArgumentError("Shape matrix is not positive definite")

    @classmethod
    def ball(cls, dimension: int, radius: float = 1.0) -> "CenteredEllipsoid":
        return cls(radius**2 * np.eye(dimension))

    @property
    def dimension(self) -> int:
        return int(self.shape.shape[0])

    @cached_property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.shape)

    @cached_property
    def logdet(self) -> float:
        return float(2 * np.log(np.diag(self.cholesky)).sum())

    def log_volume_ratio(self, other: "CenteredEllipsoid") -> float:
        """ln(vol(self) / vol(other))"""
        return 0.5 * (self.logdet - other.logdet)

    def contains(self, points: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        """Membership of each row of `points`"""
        points = np.atleast_2d(points)
        solved = np.linalg.solve(self.cholesky, points.T)
        return (solved**2).sum(axis=0) <= 1 + slack


@dataclass(frozen=True, eq=False)
class SlabCut:
    """Slab {v : |p^T v| <= half_width} cutting a point with |p^T v| = witness"""

    direction: np.ndarray
    half_width: float
    witness: float

    def __post_init__(self):
        if not np.any(self.direction):
            raise ArgumentError("Slab direction must be nonzero")
        if self.half_width < 0:
            raise ArgumentError(f"Half-width must be nonnegative, got {self.half_width}")
        if self.witness <= 0:
            raise ArgumentError(f"Witness magnitude must be positive, got {self.witness}")

    @property
    def beta(self) -> float:
        return self.half_width / self.witness

    @property
    def shrinks(self) -> bool:
        """Whether beta <= 1/sqrt(d), the regime the volume bounds cover"""
        return self.beta <= 1 / math.sqrt(self.direction.shape[0]) + RANGE_TOLERANCE


def _check_beta(beta: float, dimension: int) -> None:
    if dimension < 1:
        raise ArgumentError(f"Dimension must be at least 1, got {dimension}")
    limit = 1 / math.sqrt(dimension)
    if not 0 < beta <= limit + RANGE_TOLERANCE:
        raise ArgumentError(f"beta = {beta:.6g} outside (0, 1/sqrt(d) = {limit:.6g}]")


def _cut_coefficients(beta: float, dimension: int) -> tuple[float, float]:
    d, b2 = dimension, beta**2
    sigma = max(0.0, (1 - d * b2) / (1 - b2))
    rho = d * (1 - b2) / (d - 1)
    return sigma, rho


def mvee_slab_cut_unit(beta: float, dimension: int) -> CenteredEllipsoid:
    """Smallest ellipsoid holding {w in unit ball : |w_1| <= beta}"""
    _check_beta(beta, dimension)
    if dimension == 1:
        return CenteredEllipsoid(np.array([[beta**2]]))

    sigma, rho = _cut_coefficients(beta, dimension)
    shape = rho * np.eye(dimension)
    shape[0, 0] *= 1 - sigma
    return CenteredEllipsoid(shape)


def log_volume_ratio(beta: float, dimension: int) -> float:
    _check_beta(beta, dimension)
    d = dimension
    if d == 1:
        return math.log(beta)
    return (
        0.5 * math.log(d)
        + math.log(beta)
        + 0.5 * (d - 1) * (math.log(d) - math.log(d - 1))
        + 0.5 * (d - 1) * math.log1p(-(beta**2))
    )


def volume_ratio(beta: float, dimension: int) -> float:
    """vol(mvee_slab_cut_unit(beta, d)) / vol(unit ball)"""
    return math.exp(log_volume_ratio(beta, dimension))


def slab_cut_ratio_bound(witness: float, half_width: float, dimension: int) -> float:
    """Volume shrink factor guaranteed by one cut of half-width tau against a witness kappa"""
    if witness <= 0:
        raise ArgumentError(f"Witness magnitude must be positive, got {witness}")
    if half_width < 0:
        raise ArgumentError(f"Half-width must be nonnegative, got {half_width}")
    if half_width == 0:
        return 0.0
    return volume_ratio(half_width / witness, dimension)


def slab_cut(
    ellipsoid: CenteredEllipsoid, direction: np.ndarray, half_width: float
) -> CenteredEllipsoid:
    """
    Smallest ellipsoid holding {w in ellipsoid : |p^T w| <= half_width}.

    The cut is the unit-ball result carried through B^(1/2): with
    beta = tau / sqrt(p^T B p), B+ = rho (B - sigma B p p^T B / (p^T B p)).
    A slab too wide to bind (beta >= 1/sqrt(d)) returns the ellipsoid unchanged.
    """
    if half_width <= 0:
        raise ArgumentError("A slab cut needs a positive half-width")
    b = ellipsoid.shape
    bp = b @ direction
    spread = float(direction @ bp)
    if spread <= 0:
        raise ArgumentError("Slab direction must be nonzero")

    d = ellipsoid.dimension
    beta = half_width / math.sqrt(spread)
    if beta >= 1 / math.sqrt(d):
        return ellipsoid
    if d == 1:
        return CenteredEllipsoid(b * beta**2)

    sigma, rho = _cut_coefficients(beta, d)
    shape = rho * (b - sigma * np.outer(bp, bp) / spread)
    return CenteredEllipsoid((shape + shape.T) / 2)


@dataclass
class CutRecord:
    t: int
    direction: list[float]
    witness: float
    required: float
    passed: bool
    half_width: float
    ratio_bound: float
    log_volume: float


@dataclass
class LevelAudit:
    level: int
    dimension: int
    cuts: list[CutRecord] = field(default_factory=list)
    cut_limit: float = 0.0
    log_bound_product: float = 0.0
    log_volume_floor: float = 0.0

    @property
    def cut_count(self) -> int:
        return len(self.cuts)

    @property
    def within_limit(self) -> bool:
        return self.cut_count <= self.cut_limit

    @property
    def flagged(self) -> list[int]:
        return [cut.t for cut in self.cuts if not cut.passed]


@dataclass
class TrackerReport:
    phi: float
    half_width: float
    levels: dict[int, LevelAudit] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(
            audit.within_limit and not audit.flagged for audit in self.levels.values()
        )


def version_space_tracker(
    factorizations: Mapping[int, BellmanFactorization],
    records: Sequence[IterationRecord],
    phi: float,
    rank: int,
    theta: float = 0.0,
    theta_m: float = 0.0,
    zeta: Optional[float] = None,
) -> TrackerReport:
    """
    Replay the level picks of a finished run against exact factorizations.

    Every iteration that picked level h cuts the level-h ellipsoid (starting at
    the ball of radius zeta) with {v : |nu(f_t)^T v| <= 2 phi + theta + theta_M}.
    Each cut is checked for a large witness |<nu(f_t), xi(f_t)>| >= 3 sqrt(M)
    (2 phi + theta + theta_M) + theta_M, and the number of cuts per level is
    compared with M ln(zeta / (2 phi)) / ln(5/3). Findings are reported, never
    raised.
    """
    half_width = 2 * phi + theta + theta_m
    required = 3 * math.sqrt(rank) * half_width + theta_m
    report = TrackerReport(phi=phi, half_width=half_width)

    for level, fact in sorted(factorizations.items()):
        radius = fact.zeta if zeta is None else zeta
        d = fact.dimension
        start = CenteredEllipsoid.ball(d, radius)
        current = start
        audit = LevelAudit(
            level=level,
            dimension=d,
            cut_limit=rank * math.log(radius / (2 * phi)) / math.log(5 / 3),
            log_volume_floor=d * math.log(2 * phi / radius),
        )

        for record in records:
            if record.terminated or record.level != level:
                continue
            direction = fact.nu[record.chosen]
            witness = abs(float(direction @ fact.xi[record.chosen]))
            passed = witness >= required * (1 - 1e-12)

            bound = 1.0
            if witness > 0 and np.any(direction):
                cut = SlabCut(direction, half_width, witness)
                if cut.shrinks:
                    bound = slab_cut_ratio_bound(cut.witness, cut.half_width, d)
            audit.log_bound_product += math.log(bound) if bound > 0 else -math.inf

            if np.any(direction) and half_width > 0:
                current = slab_cut(current, direction, half_width)

            audit.cuts.append(
                CutRecord(
                    t=record.t,
                    direction=[float(x) for x in direction],
                    witness=witness,
                    required=required,
                    passed=passed,
                    half_width=half_width,
                    ratio_bound=bound,
                    log_volume=current.log_volume_ratio(start),
                )
            )
            if not passed:
                logger.warning(
                    f"Level {level}, t={record.t}: witness {witness:.4g} below {required:.4g}"
                )

        report.levels[level] = audit

    return report
