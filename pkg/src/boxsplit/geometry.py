"""Oriented-box geometry: parameterization, validity, sampling, containment, OBB fitting.

A box is 15 parameters in fixed order: center (3), full side lengths (3), and a
row-major flattened 3x3 rotation matrix (9). All downstream modules (merging,
diffusion features, wire formats) use this layout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Repo-wide tolerances: validity checks and strict geometric identities.
VALIDITY_TOL = 1e-6
GEOM_TOL = 1e-9

PARAM_DIM = 15


class InvalidBoxError(ValueError):
    """Box parameters violate the invariants (non-positive sides or bad rotation)."""


class DegenerateOrientationError(ValueError):
    """Orientation matrix is numerically singular; the sample must be rejected."""


class DegenerateInputError(ValueError):
    """Point set too degenerate for the requested fit."""


@dataclass(frozen=True)
class Box:
    """One oriented 3D bounding box.

    center: (3,) position in unit-cube-normalized world units.
    sides:  (3,) full side lengths, all > 0.
    orient: (9,) row-major flattening of a rotation matrix (det +1).
    """

    center: np.ndarray
    sides: np.ndarray
    orient: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "sides", np.asarray(self.sides, dtype=float).reshape(3))
        object.__setattr__(self, "orient", np.asarray(self.orient, dtype=float).reshape(9))

    @property
    def rotation(self) -> np.ndarray:
        """Orientation as a 3x3 matrix (rows are the flattened order)."""
        return self.orient.reshape(3, 3)

    def params(self) -> np.ndarray:
        """The 15-vector (center, sides, orient)."""
        return np.concatenate([self.center, self.sides, self.orient])

    @staticmethod
    def from_params(p) -> "Box":
        p = np.asarray(p, dtype=float).reshape(PARAM_DIM)
        return Box(p[:3], p[3:6], p[6:])


def unit_cube() -> Box:
    """The canonical root box: axis-aligned unit cube centered at the origin."""
    return Box(np.zeros(3), np.ones(3), np.eye(3).reshape(9))


def validate_box(b: Box, tol: float = VALIDITY_TOL) -> None:
    """Raise InvalidBoxError unless sides are positive and orient is a rotation."""
    if not np.all(np.isfinite(b.params())):
        raise InvalidBoxError("box parameters must be finite")
    if np.any(b.sides <= 0):
        raise InvalidBoxError(f"sides must be > 0, got {b.sides}")
    r = b.rotation
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > tol:
        raise InvalidBoxError(f"orientation not orthonormal within {tol} (err={err:.3g})")
    if np.linalg.det(r) < 0:
        raise InvalidBoxError("orientation must have det +1")


def is_valid_box(b: Box, tol: float = VALIDITY_TOL) -> bool:
    try:
        validate_box(b, tol)
        return True
    except InvalidBoxError:
        return False


# Canonical corner ordering: bit k of the corner index selects the sign of axis k.
_CORNER_SIGNS = np.array(
    [[(-1.0 if (i >> k) & 1 == 0 else 1.0) for k in range(3)] for i in range(8)]
)


def box_corners(b: Box) -> np.ndarray:
    """The 8 corners, (8, 3), in the canonical sign ordering."""
    validate_box(b)
    local = _CORNER_SIGNS * (b.sides / 2.0)
    return b.center + local @ b.rotation.T


def box_volume(b: Box) -> float:
    validate_box(b)
    return float(np.prod(b.sides))


def contains_point(b: Box, p, eps: float = 0.0) -> bool:
    """True iff p is inside b, with faces inflated by eps (negative eps shrinks)."""
    validate_box(b)
    local = b.rotation.T @ (np.asarray(p, dtype=float) - b.center)
    return bool(np.all(np.abs(local) <= b.sides / 2.0 + eps))


def contains_points(b: Box, points: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Vectorized contains_point over an (N, 3) array; returns (N,) bool."""
    validate_box(b)
    local = (np.asarray(points, dtype=float) - b.center) @ b.rotation
    return np.all(np.abs(local) <= b.sides / 2.0 + eps, axis=1)


def orthonormalize(o) -> np.ndarray:
    """Project a 9-vector onto the nearest rotation (polar decomposition via SVD).

    det < 0 gets repaired by flipping the column of the smallest singular value.
    Raises DegenerateOrientationError when any singular value < 1e-8; the caller
    must reject the sampled box.
    """
    m = np.asarray(o, dtype=float).reshape(3, 3)
    u, s, vt = np.linalg.svd(m)
    if np.min(s) < 1e-8:
        raise DegenerateOrientationError(f"singular values {s} below 1e-8")
    r = u @ vt
    if np.linalg.det(r) < 0:
        flip = np.ones(3)
        flip[np.argmin(s)] = -1.0
        r = (u * flip) @ vt
    return r.reshape(9)


def fit_obb(points: np.ndarray) -> Box:
    """PCA-based oriented bounding box of a point set.

    Orientation = covariance eigenvectors (columns by descending eigenvalue,
    sign-fixed to det +1); center/sides from min/max extents in that frame.
    Falls back to the axis-aligned bounding box when the covariance has
    rank < 2 (documented suboptimality; adequate for box-corner inputs).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise DegenerateInputError("fit_obb needs an (N>=4, 3) point array")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInputError("points must be finite")

    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]

    scale = max(evals[0], 1e-30)
    if evals[1] / scale < 1e-12:
        # rank < 2: all points essentially collinear; axis-aligned fallback
        r = np.eye(3)
    else:
        if np.linalg.det(evecs) < 0:
            evecs[:, 2] = -evecs[:, 2]
        r = evecs

    local = centered @ r
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    sides = np.maximum(hi - lo, 2.0 * GEOM_TOL)  # keep strictly positive for flat sets
    center = mean + r @ ((hi + lo) / 2.0)
    return Box(center, sides, r.reshape(9))


# Face layout used by surface sampling: (normal axis, sign); the two in-plane
# axes are the remaining two in ascending order.
_FACES = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)]


def face_areas(b: Box) -> np.ndarray:
    """Areas of the 6 faces in the _FACES order."""
    s = b.sides
    pairs = [s[1] * s[2], s[1] * s[2], s[0] * s[2], s[0] * s[2], s[0] * s[1], s[0] * s[1]]
    return np.asarray(pairs, dtype=float)


def sample_box_surface(b: Box, n: int, rng_seed) -> np.ndarray:
    """n points uniform on the box surface; face chosen proportional to area.

    Deterministic per seed (rng_seed may be an int or a numpy Generator).
    """
    validate_box(b)
    if n <= 0:
        raise ValueError("n must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    areas = face_areas(b)
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    local = np.empty((n, 3))
    for f, (axis, sign) in enumerate(_FACES):
        m = faces == f
        if not np.any(m):
            continue
        others = [k for k in range(3) if k != axis]
        local[m, axis] = sign * b.sides[axis] / 2.0
        local[m, others[0]] = uv[m, 0] * b.sides[others[0]]
        local[m, others[1]] = uv[m, 1] * b.sides[others[1]]
    return b.center + local @ b.rotation.T


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rotation matrix about a (not necessarily unit) axis by angle (radians)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    x, y, z = a
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )
