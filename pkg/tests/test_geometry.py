import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxsplit.geometry import (
    Box,
    DegenerateOrientationError,
    InvalidBoxError,
    box_corners,
    box_volume,
    contains_point,
    contains_points,
    fit_obb,
    orthonormalize,
    rotation_about,
    sample_box_surface,
    unit_cube,
)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_box(rng):
    return Box(
        rng.uniform(-0.3, 0.3, 3),
        rng.uniform(0.05, 0.8, 3),
        random_rotation(rng).reshape(9),
    )


class TestBoxCorners:
    def test_unit_cube_identity(self):
        corners = box_corners(unit_cube())
        expected = {tuple(s) for s in (np.array(np.meshgrid([-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5])).T.reshape(-1, 3))}
        assert {tuple(np.round(c, 12)) for c in corners} == expected

    def test_translation(self):
        b = Box([1.0, 0.0, 0.0], [2.0, 2.0, 2.0], np.eye(3).reshape(9))
        corners = box_corners(b)
        got = sorted(tuple(np.round(c, 12)) for c in corners)
        want = sorted((1.0 + sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1))
        assert got == want

    def test_rotated_cube_same_corner_set(self):
        # brute-force oracle: rotate the unrotated corners and compare as sets
        r = rotation_about([0, 0, 1], np.pi / 2)
        b = Box([0, 0, 0], [1, 1, 1], r.reshape(9))
        got = box_corners(b)
        oracle = (rotation_about([0, 0, 1], np.pi / 2) @ box_corners(unit_cube()).T).T
        got_set = sorted(map(tuple, np.round(got, 9)))
        oracle_set = sorted(map(tuple, np.round(oracle, 9)))
        assert got_set == oracle_set

    def test_invalid_boxes_rejected(self):
        with pytest.raises(InvalidBoxError):
            box_corners(Box([0, 0, 0], [1, -1, 1], np.eye(3).reshape(9)))
        with pytest.raises(InvalidBoxError):
            box_corners(Box([0, 0, 0], [1, 1, 1], (np.eye(3) * 2).reshape(9)))

    def test_rigid_transform_commutes(self):
        # box_corners(transform(b)) == transform(box_corners(b)) to 1e-9
        rng = np.random.default_rng(0)
        for _ in range(20):
            b = random_box(rng)
            r = random_rotation(rng)
            t = rng.uniform(-1, 1, 3)
            moved = Box(r @ b.center + t, b.sides, (r @ b.rotation).reshape(9))
            direct = box_corners(moved)
            via = (r @ box_corners(b).T).T + t
            assert np.max(np.abs(direct - via)) < 1e-9


class TestBoxVolume:
    def test_unit(self):
        assert box_volume(unit_cube()) == pytest.approx(1.0)

    def test_rectangular(self):
        assert box_volume(Box([0, 0, 0], [1, 2, 3], np.eye(3).reshape(9))) == pytest.approx(6.0)

    def test_rotation_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            r = random_rotation(rng)
            b = Box([0, 0, 0], [1, 2, 3], r.reshape(9))
            assert box_volume(b) == pytest.approx(6.0)


class TestContainsPoint:
    def test_center_inside(self):
        assert contains_point(unit_cube(), (0, 0, 0), 0.0)

    def test_outside(self):
        assert not contains_point(unit_cube(), (0.6, 0, 0), 0.0)

    def test_rotated_45_half_diagonal(self):
        # in the box frame (0.7, 0, 0) maps to ~(0.495, -0.495, 0): inside
        r = rotation_about([0, 0, 1], np.pi / 4)
        b = Box([0, 0, 0], [1, 1, 1], r.reshape(9))
        assert contains_point(b, (0.7, 0, 0), 0.0)
        assert not contains_point(b, (0.72, 0, 0), 0.0)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(2)
        b = random_box(rng)
        pts = rng.uniform(-1, 1, size=(128, 3))
        vec = contains_points(b, pts, 1e-3)
        for p, v in zip(pts, vec):
            assert contains_point(b, p, 1e-3) == bool(v)


class TestOrthonormalize:
    def test_identity_fixed_point(self):
        out = orthonormalize(np.eye(3).reshape(9))
        assert np.allclose(out.reshape(3, 3), np.eye(3), atol=1e-12)

    def test_noisy_input_projects_to_rotation(self):
        rng = np.random.default_rng(3)
        noisy = np.eye(3) + rng.uniform(-0.05, 0.05, size=(3, 3))
        r = orthonormalize(noisy.reshape(9)).reshape(3, 3)
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)

    def test_reflection_repaired(self):
        m = np.diag([1.0, 1.0, -1.0])  # det -1
        r = orthonormalize(m.reshape(9)).reshape(3, 3)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m = rng.normal(size=(3, 3))
            if abs(np.linalg.det(m)) < 1e-3:
                continue
            once = orthonormalize(m.reshape(9))
            twice = orthonormalize(once)
            assert np.max(np.abs(once - twice)) < 1e-9

    def test_degenerate_rejected(self):
        m = np.zeros((3, 3))
        m[0, 0] = 1.0
        with pytest.raises(DegenerateOrientationError):
            orthonormalize(m.reshape(9))

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_always_det_plus_one(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(3, 3))
        try:
            r = orthonormalize(m.reshape(9)).reshape(3, 3)
        except DegenerateOrientationError:
            return
        assert np.linalg.det(r) > 0
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9


class TestFitObb:
    def test_unit_cube_corners(self):
        b = fit_obb(box_corners(unit_cube()))
        assert box_volume(b) == pytest.approx(1.0, abs=1e-9)

    def test_rotated_box_volume_recovered(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            r = random_rotation(rng)
            src = Box(rng.uniform(-0.2, 0.2, 3), [1, 2, 3], r.reshape(9))
            fitted = fit_obb(box_corners(src))
            assert box_volume(fitted) == pytest.approx(6.0, abs=1e-6)

    def test_fit_contains_inputs(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform(-1, 1, size=(64, 3))
        b = fit_obb(pts)
        assert np.all(contains_points(b, pts, 1e-9))

    def test_thin_plank_reasonable(self):
        # Monte-Carlo sample of a rotated 4 x 0.2 x 0.1 plank surface
        rng = np.random.default_rng(7)
        r = random_rotation(rng)
        plank = Box([0.1, -0.2, 0.05], [4.0, 0.2, 0.1], r.reshape(9))
        pts = sample_box_surface(plank, 2000, rng)
        fitted = fit_obb(pts)
        assert box_volume(fitted) <= 1.5 * box_volume(plank)

    def test_roundtrip_volume_property(self):
        # fit_obb(box_corners(b)) volume within 1e-6 of box_volume(b)
        rng = np.random.default_rng(8)
        for _ in range(30):
            b = random_box(rng)
            assert box_volume(fit_obb(box_corners(b))) == pytest.approx(box_volume(b), abs=1e-6)

    def test_degenerate_collinear_falls_back(self):
        t = np.linspace(0, 1, 16)
        pts = np.stack([t, 2 * t, -t], axis=1)
        b = fit_obb(pts)  # rank-1 input: axis-aligned fallback, no crash
        assert np.all(contains_points(b, pts, 1e-9))


class TestSampleBoxSurface:
    def test_per_face_counts_binomial(self):
        pts = sample_box_surface(unit_cube(), 6000, 123)
        local = np.abs(pts)
        on_face = np.isclose(local, 0.5, atol=1e-12)
        for axis in range(3):
            count = int(on_face[:, axis].sum())
            # two faces per axis, p = 1/3; 3 sigma of Binomial(6000, 1/3)
            sigma = np.sqrt(6000 * (1 / 3) * (2 / 3))
            assert abs(count - 2000) < 3 * sigma

    def test_points_on_surface(self):
        pts = sample_box_surface(unit_cube(), 500, 9)
        assert np.allclose(np.max(np.abs(pts), axis=1), 0.5, atol=1e-12)

    def test_deterministic(self):
        a = sample_box_surface(unit_cube(), 100, 42)
        b = sample_box_surface(unit_cube(), 100, 42)
        assert np.array_equal(a, b)

    def test_contained_with_tolerance(self):
        rng = np.random.default_rng(10)
        b = random_box(rng)
        pts = sample_box_surface(b, 400, 11)
        assert np.all(contains_points(b, pts, 1e-9))
        local = np.abs((pts - b.center) @ b.rotation)
        at_boundary = np.isclose(local, b.sides / 2.0, atol=1e-9)
        assert np.all(at_boundary.any(axis=1))

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            sample_box_surface(unit_cube(), 0, 1)
