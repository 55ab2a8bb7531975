import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from boxsplit.geometry import Box, unit_cube
from boxsplit.metrics import (
    EmdSizeMismatchError,
    UnreachableSampleCountError,
    alignment_metrics,
    boxset_points,
    chamfer,
    emd,
    gen_metrics,
    grid_axis,
    voxelize_boxes,
)
from helpers import chamfer_oracle, emd_oracle, gen_metrics_oracle, random_clouds

EYE = np.eye(3).reshape(9)


# -- chamfer ------------------------------------------------------------------


class TestChamfer:
    def test_identity_zero(self):
        rng = np.random.default_rng(0)
        P = rng.normal(size=(32, 3))
        assert chamfer(P, P.copy()) == 0.0

    def test_single_pair_squared(self):
        assert chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == pytest.approx(1.0)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            P = rng.normal(size=(64, 3))
            Q = rng.normal(size=(64, 3))
            assert chamfer(P, Q) == pytest.approx(chamfer_oracle(P, Q), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        P, Q = rng.normal(size=(20, 3)), rng.normal(size=(30, 3))
        assert chamfer(P, Q) == pytest.approx(chamfer(Q, P), abs=1e-12)

    def test_kdtree_path_matches_brute(self):
        rng = np.random.default_rng(3)
        P = rng.normal(size=(2100, 3))
        Q = rng.normal(size=(2100, 3))
        d2 = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2)
        brute = (d2.min(axis=1).mean() + d2.min(axis=0).mean()) / 2
        assert chamfer(P, Q) == pytest.approx(brute, rel=1e-9)


# -- emd ----------------------------------------------------------------------


class TestEmd:
    def test_identity_zero(self):
        rng = np.random.default_rng(4)
        P = rng.normal(size=(16, 3))
        perm = rng.permutation(16)
        assert emd(P, P[perm]) == pytest.approx(0.0, abs=1e-9)

    def test_two_point_crossing(self):
        P = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        Q = np.array([[1.1, 0, 0], [0.1, 0, 0]])
        # straight assignment crosses indices; cheaper matching costs 0.1 each
        assert emd(P, Q) == pytest.approx(0.1, rel=1e-4)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        for n in (2, 4, 6, 8):
            P = rng.uniform(size=(n, 3))
            Q = rng.uniform(size=(n, 3))
            assert emd(P, Q) == pytest.approx(emd_oracle(P, Q), rel=1e-4)

    def test_matches_hungarian_on_larger_clouds(self):
        rng = np.random.default_rng(6)
        for n in (32, 128):
            P = rng.uniform(size=(n, 3))
            Q = rng.uniform(size=(n, 3))
            cost = np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2))
            ri, ci = linear_sum_assignment(cost)
            assert emd(P, Q) == pytest.approx(cost[ri, ci].mean(), rel=1e-4)

    def test_symmetric(self):
        rng = np.random.default_rng(7)
        P, Q = rng.uniform(size=(24, 3)), rng.uniform(size=(24, 3))
        assert emd(P, Q) == pytest.approx(emd(Q, P), abs=1e-6)
        assert emd(P, Q) >= 0.0

    def test_size_mismatch(self):
        with pytest.raises(EmdSizeMismatchError):
            emd(np.zeros((3, 3)), np.zeros((4, 3)))


# -- gen metrics --------------------------------------------------------------


class TestGenMetrics:
    def test_identical_pools(self):
        rng = np.random.default_rng(8)
        ref = random_clouds(rng, 6, 12)
        gen = [c.copy() for c in ref]
        m = gen_metrics(gen, ref, "cd")
        assert m.cov_pct == pytest.approx(100.0)
        assert m.mmd == pytest.approx(0.0, abs=1e-12)
        assert m.nna_pct == pytest.approx(0.0)

    def test_one_far_duplicate(self):
        rng = np.random.default_rng(9)
        ref = random_clouds(rng, 4, 10)
        lone = rng.uniform(size=(10, 3)) + 50.0
        gen = [lone.copy() for _ in range(4)]
        m = gen_metrics(gen, ref, "cd")
        assert m.cov_pct == pytest.approx(100.0 / 4)

    def test_matches_bruteforce_oracle_cd(self):
        rng = np.random.default_rng(10)
        gen = random_clouds(rng, 7, 16)
        ref = random_clouds(rng, 5, 16)
        m = gen_metrics(gen, ref, "cd")
        cov, mmd, nna = gen_metrics_oracle(gen, ref, chamfer)
        assert m.cov_pct == pytest.approx(cov, abs=1e-9)
        assert m.mmd == pytest.approx(mmd, abs=1e-12)
        assert m.nna_pct == pytest.approx(nna, abs=1e-9)

    def test_matches_bruteforce_oracle_emd(self):
        rng = np.random.default_rng(11)
        gen = random_clouds(rng, 5, 8)
        ref = random_clouds(rng, 4, 8)
        m = gen_metrics(gen, ref, "emd")
        cov, mmd, nna = gen_metrics_oracle(gen, ref, emd)
        assert m.cov_pct == pytest.approx(cov, abs=1e-9)
        assert m.mmd == pytest.approx(mmd, rel=1e-6)
        assert m.nna_pct == pytest.approx(nna, abs=1e-9)

    def test_order_invariant(self):
        rng = np.random.default_rng(12)
        gen = random_clouds(rng, 5, 12)
        ref = random_clouds(rng, 4, 12)
        a = gen_metrics(gen, ref, "cd")
        b = gen_metrics(list(reversed(gen)), list(reversed(ref)), "cd")
        assert a.cov_pct == b.cov_pct
        assert a.mmd == pytest.approx(b.mmd, abs=1e-12)
        assert a.nna_pct == b.nna_pct


# -- boxset points ------------------------------------------------------------


class TestBoxsetPoints:
    def test_single_cube_all_on_surface(self):
        pts = boxset_points([unit_cube()], n=512, rng_seed=0)
        assert pts.shape == (512, 3)
        assert np.allclose(np.max(np.abs(pts), axis=1), 0.5, atol=1e-9)

    def test_two_disjoint_cubes_balanced(self):
        a = Box([-1.0, 0, 0], [1, 1, 1], EYE)
        b = Box([1.0, 0, 0], [1, 1, 1], EYE)
        pts = boxset_points([a, b], n=2000, rng_seed=1)
        left = (pts[:, 0] < 0).sum()
        sigma = np.sqrt(2000 * 0.25)
        assert abs(left - 1000) < 3 * sigma

    def test_interior_points_rejected(self):
        outer = unit_cube()
        inner = Box([0, 0, 0], [0.5, 0.5, 0.5], EYE)  # fully inside: contributes nothing
        pts = boxset_points([outer, inner], n=800, rng_seed=2)
        assert np.allclose(np.max(np.abs(pts), axis=1), 0.5, atol=1e-9)

    def test_fully_overlapping_identical_boxes(self):
        # union identity: same surface support and same per-face distribution
        pts = boxset_points([unit_cube(), unit_cube()], n=3000, rng_seed=3)
        assert np.allclose(np.max(np.abs(pts), axis=1), 0.5, atol=1e-9)
        for axis in range(3):
            frac = np.isclose(np.abs(pts[:, axis]), 0.5, atol=1e-9).mean()
            sigma = np.sqrt((1 / 3) * (2 / 3) / 3000)
            assert abs(frac - 1 / 3) < 4 * sigma

    def test_deterministic(self):
        a = boxset_points([unit_cube()], n=64, rng_seed=9)
        b = boxset_points([unit_cube()], n=64, rng_seed=9)
        assert np.array_equal(a, b)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            boxset_points([], n=10, rng_seed=0)


# -- alignment ----------------------------------------------------------------


def unit_cube_occupancy(resolution):
    # analytic: every cell center of the grid lies inside the unit cube
    return np.ones((resolution, resolution, resolution), dtype=bool)


class TestAlignment:
    def test_self_tiling_fixture(self):
        halves = [
            Box([-0.25, 0, 0], [0.5, 1, 1], EYE),
            Box([0.25, 0, 0], [0.5, 1, 1], EYE),
        ]
        occ = unit_cube_occupancy(128)
        pts = boxset_points([unit_cube()], n=512, rng_seed=0)
        m = alignment_metrics(halves, pts, occ, rng_seed=1)
        assert m.tov <= 0.05
        assert m.viou >= 0.95

    def test_boxes_double_volume(self):
        # shape = half cube; boxes = full cube: TOV ~ 1
        shape = Box([-0.25, 0, 0], [0.5, 1, 1], EYE)
        occ = voxelize_boxes([shape], 128)
        pts = boxset_points([shape], n=256, rng_seed=2)
        m = alignment_metrics([unit_cube()], pts, occ, rng_seed=3)
        assert m.tov == pytest.approx(1.0, abs=0.05)

    def test_empty_intersection(self):
        left = Box([-0.3, 0, 0], [0.35, 0.9, 0.9], EYE)
        right = Box([0.3, 0, 0], [0.35, 0.9, 0.9], EYE)
        occ = voxelize_boxes([right], 128)
        pts = boxset_points([right], n=256, rng_seed=4)
        m = alignment_metrics([left], pts, occ, rng_seed=5)
        assert m.viou == 0.0

    def test_grid_convergence(self):
        boxes = [
            Box([-0.2, -0.1, 0.0], [0.45, 0.7, 0.6], EYE),
            Box([0.22, 0.12, -0.05], [0.5, 0.62, 0.7], EYE),
        ]
        shape = Box([0.0, 0.0, 0.0], [0.8, 0.8, 0.8], EYE)
        pts = boxset_points([shape], n=128, rng_seed=6)
        res = {}
        for R in (128, 256):
            occ = voxelize_boxes([shape], R)
            m = alignment_metrics(boxes, pts, occ, resolution=R, rng_seed=7)
            res[R] = m
        assert abs(res[128].tov - res[256].tov) < 0.02
        assert abs(res[128].viou - res[256].viou) < 0.02

    def test_grid_axis_symmetric(self):
        axis = grid_axis(128)
        assert axis[0] == pytest.approx(-axis[-1])
        assert len(axis) == 128
