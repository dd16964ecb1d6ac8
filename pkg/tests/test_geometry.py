import math

import numpy as np
import pytest

from cdp_lab.errors import ArgumentError
from cdp_lab.geometry import (
    CenteredEllipsoid,
    SlabCut,
    log_volume_ratio,
    mvee_slab_cut_unit,
    slab_cut,
    slab_cut_ratio_bound,
    version_space_tracker,
    volume_ratio,
)
from cdp_lab.olive.loop import IterationRecord
from cdp_lab.oracle import BellmanFactorization

D2_RATIO = math.sqrt(34 / 18) / 3


def slab_points(beta: float, dimension: int, rng: np.random.Generator, samples: int) -> np.ndarray:
    points = rng.standard_normal((samples, dimension))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    points *= rng.random((samples, 1)) ** (1 / dimension)
    return points[np.abs(points[:, 0]) <= beta]


class TestClosedForms:
    def test_identity_cut_is_the_ball(self):
        for d in (2, 5, 16):
            ellipsoid = mvee_slab_cut_unit(1 / math.sqrt(d), d)
            np.testing.assert_allclose(ellipsoid.shape, np.eye(d), atol=1e-12)

    def test_two_dimensional_coefficients(self):
        beta = 1 / (3 * math.sqrt(2))
        shape = mvee_slab_cut_unit(beta, 2).shape
        sigma, rho = 16 / 17, 17 / 9
        np.testing.assert_allclose(shape, np.diag([rho * (1 - sigma), rho]), atol=1e-12)

    @pytest.mark.parametrize("d", range(2, 65))
    def test_volume_ratio_at_the_edge(self, d):
        assert volume_ratio(1 / math.sqrt(d), d) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("d", range(2, 65))
    def test_third_cut_shrinks_below_sixty_percent(self, d):
        assert slab_cut_ratio_bound(3 * math.sqrt(d), 1.0, d) < 0.6
        assert slab_cut_ratio_bound(3 * math.sqrt(d) * 0.01, 0.01, d) == pytest.approx(
            slab_cut_ratio_bound(3 * math.sqrt(d), 1.0, d)
        )

    def test_two_dimensional_value(self):
        beta = 1 / (3 * math.sqrt(2))
        direct = math.sqrt(2) * beta * math.sqrt(2) * math.sqrt(1 - beta**2)
        assert volume_ratio(beta, 2) == pytest.approx(D2_RATIO, abs=1e-9)
        assert direct == pytest.approx(D2_RATIO, abs=1e-9)
        assert D2_RATIO == pytest.approx(0.458123, abs=1e-6)
        assert D2_RATIO < 0.52

    @pytest.mark.parametrize("d", [2, 3, 7, 20])
    def test_ratio_matches_determinant(self, d):
        beta = 0.4 / math.sqrt(d)
        ellipsoid = mvee_slab_cut_unit(beta, d)
        unit = CenteredEllipsoid.ball(d)
        assert ellipsoid.log_volume_ratio(unit) == pytest.approx(log_volume_ratio(beta, d), abs=1e-12)

    def test_monotone_in_beta(self):
        d = 6
        betas = np.linspace(0.01, 1 / math.sqrt(d), 40)
        ratios = [volume_ratio(float(b), d) for b in betas]
        assert all(a < b for a, b in zip(ratios, ratios[1:]))

    def test_large_dimension_stays_finite(self):
        assert math.isfinite(log_volume_ratio(1e-4, 4096))
        assert volume_ratio(1e-4, 4096) >= 0

    def test_one_dimension(self):
        assert volume_ratio(0.3, 1) == pytest.approx(0.3)
        np.testing.assert_allclose(mvee_slab_cut_unit(0.3, 1).shape, [[0.09]])

    def test_out_of_range(self):
        with pytest.raises(ArgumentError):
            mvee_slab_cut_unit(0.8, 2)
        with pytest.raises(ArgumentError):
            volume_ratio(0.0, 3)
        with pytest.raises(ArgumentError):
            slab_cut_ratio_bound(0.0, 0.1, 2)


class TestContainment:
    def test_sampled_slab_points_are_inside(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            d = int(rng.integers(1, 9))
            beta = float(rng.uniform(0.01, 1)) / math.sqrt(d)
            points = slab_points(beta, d, rng, 500)
            assert mvee_slab_cut_unit(beta, d).contains(points, 1e-12).all()

    def test_shrinking_breaks_containment(self):
        rng = np.random.default_rng(1)
        for d in (2, 3, 5):
            beta = 1 / (3 * math.sqrt(d))
            ellipsoid = mvee_slab_cut_unit(beta, d)
            smaller = CenteredEllipsoid(ellipsoid.shape * 0.999)
            corner = np.zeros(d)
            corner[0], corner[1] = beta, math.sqrt(1 - beta**2)
            points = np.vstack([slab_points(beta, d, rng, 20000), corner])
            assert ellipsoid.contains(points, 1e-12).all()
            assert not smaller.contains(points, 0.0).all()


class TestEllipsoids:
    def test_rejects_asymmetric_and_indefinite(self):
        with pytest.raises(ArgumentError):
            CenteredEllipsoid(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ArgumentError):
            CenteredEllipsoid(np.diag([1.0, -1.0]))

    def test_general_cut_agrees_with_unit_cut(self):
        d, beta = 4, 0.2
        direction = np.zeros(d)
        direction[0] = 1.0
        cut = slab_cut(CenteredEllipsoid.ball(d), direction, beta)
        np.testing.assert_allclose(cut.shape, mvee_slab_cut_unit(beta, d).shape, atol=1e-12)

    def test_wide_slab_changes_nothing(self):
        ball = CenteredEllipsoid.ball(3, 2.0)
        assert slab_cut(ball, np.array([0.0, 1.0, 0.0]), 5.0) is ball

    def test_slab_cut_beta(self):
        cut = SlabCut(np.array([1.0, 1.0]), half_width=0.1, witness=0.5)
        assert cut.beta == pytest.approx(0.2)
        assert cut.shrinks
        with pytest.raises(ArgumentError):
            SlabCut(np.zeros(2), 0.1, 0.5)


def record(t: int, chosen: int, level, terminated: bool = False) -> IterationRecord:
    return IterationRecord(
        t=t,
        chosen=chosen,
        predicted_value=0.5,
        self_errors=[0.0, 0.0],
        level=level,
        terminated=terminated,
        survivors_before=2,
        survivors_after=2,
    )


class TestTracker:
    def test_no_picks_means_empty_audit(self):
        fact = BellmanFactorization(level=1, nu=np.eye(2), xi=np.eye(2), zeta=2.0)
        report = version_space_tracker({1: fact}, [record(1, 0, None, terminated=True)], 0.01, 2)
        assert report.levels[1].cut_count == 0
        assert report.passed

    def test_large_witness_passes(self):
        nu = np.array([[1.0, 0.0], [0.0, 1.0]])
        xi = np.array([[0.5, 0.0], [0.0, 0.5]])
        fact = BellmanFactorization(level=2, nu=nu, xi=xi, zeta=2.0)
        report = version_space_tracker({2: fact}, [record(1, 0, 2), record(2, 1, 2)], 0.01, 2)
        audit = report.levels[2]
        assert audit.cut_count == 2
        assert not audit.flagged
        assert audit.cuts[1].log_volume < audit.cuts[0].log_volume < 0
        assert report.passed

    def test_small_witness_is_flagged(self):
        fact = BellmanFactorization(
            level=1, nu=np.array([[1.0, 0.0]]), xi=np.array([[0.01, 0.0]]), zeta=2.0
        )
        report = version_space_tracker({1: fact}, [record(1, 0, 1)], 0.01, 2)
        assert report.levels[1].flagged == [1]
        assert not report.passed
