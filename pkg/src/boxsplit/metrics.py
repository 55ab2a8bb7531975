"""Point-cloud metric suite over generated box sets.

Union-boundary sampling, Chamfer distance (symmetric mean of squared
distances), Earth Mover's Distance via an epsilon-scaling auction solver,
the COV/MMD/1-NNA generative metrics, and voxel-grid alignment metrics
(total outside volume and volumetric IoU).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from boxsplit.geometry import Box, contains_points, face_areas, sample_box_surface, validate_box

DEFAULT_POINTS = 2048
GRID_RESOLUTION = 128


class UnreachableSampleCountError(RuntimeError):
    pass


def _as_boxes(boxes) -> list[Box]:
    out = [b if isinstance(b, Box) else Box.from_params(b) for b in boxes]
    for b in out:
        validate_box(b)
    return out


def boxset_points(boxes, n: int = DEFAULT_POINTS, rng_seed=0) -> np.ndarray:
    """Exactly n points on the boundary of the box union.

    Oversamples each box surface proportional to its area, rejects candidates
    strictly inside any other box, then thins to n by farthest-point selection.
    Deterministic per seed.
    """
    boxes = _as_boxes(boxes)
    if not boxes:
        raise ValueError("empty box set")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    areas = np.array([face_areas(b).sum() for b in boxes])
    total = areas.sum()
    if total <= 0:
        raise UnreachableSampleCountError("degenerate total boundary area")

    survivors: list[np.ndarray] = []
    count = 0
    budget = max(4 * n, 1024)
    for _ in range(5):
        counts = rng.multinomial(budget, areas / total)
        pts = np.vstack(
            [sample_box_surface(b, int(c), rng) for b, c in zip(boxes, counts) if c > 0]
        )
        keep = np.ones(len(pts), dtype=bool)
        for b in boxes:
            keep &= ~contains_points(b, pts, -1e-9)
        kept = pts[keep]
        if len(kept):
            survivors.append(kept)
            count += len(kept)
        if count >= n:
            break
        budget *= 2
    else:
        raise UnreachableSampleCountError(
            f"could not collect {n} boundary points (union boundary nearly empty)"
        )
    candidates = np.vstack(survivors)
    return _farthest_point_thin(candidates, n)


def _farthest_point_thin(points: np.ndarray, n: int) -> np.ndarray:
    """Deterministic blue-noise subset: iterative farthest-point from index 0."""
    if len(points) <= n:
        return points[:n].copy()
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = 0
    d2 = ((points - points[0]) ** 2).sum(axis=1)
    for k in range(1, n):
        idx = int(np.argmax(d2))
        chosen[k] = idx
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen]


# ---------------------------------------------------------------------------
# pair distances

_BRUTE_PAIR_LIMIT = 1 << 22  # beyond this |P|*|Q|, nearest neighbours go via KD-tree


def chamfer(P: np.ndarray, Q: np.ndarray) -> float:
    """Symmetric mean of squared nearest distances: (mean_P + mean_Q) / 2."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.ndim != 2 or Q.ndim != 2 or P.shape[1] != 3 or Q.shape[1] != 3:
        raise ValueError("point clouds must be (N, 3)")
    if len(P) * len(Q) <= _BRUTE_PAIR_LIMIT:
        d2 = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2)
        fwd = d2.min(axis=1).mean()
        bwd = d2.min(axis=0).mean()
    else:
        fwd = (cKDTree(Q).query(P)[0] ** 2).mean()
        bwd = (cKDTree(P).query(Q)[0] ** 2).mean()
    return float((fwd + bwd) / 2.0)


class EmdSizeMismatchError(ValueError):
    pass


def emd(P: np.ndarray, Q: np.ndarray, rel_tol: float = 1e-4) -> float:
    """Mean per-point Euclidean cost of the minimum-cost perfect matching.

    Solved by a forward auction with epsilon scaling; phases continue until the
    duality gap bound n*eps is below rel_tol of the observed cost.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape or P.ndim != 2:
        raise EmdSizeMismatchError(f"EMD needs equal-size clouds, got {P.shape} vs {Q.shape}")
    n = len(P)
    cost = np.sqrt(((P[:, None, :] - Q[None, :, :]) ** 2).sum(axis=2))
    assignment = _auction_assignment(-cost, rel_tol)
    return float(cost[np.arange(n), assignment].mean())


def _auction_phase(benefit: np.ndarray, prices: np.ndarray, eps: float) -> np.ndarray:
    """One auction phase at fixed eps; returns person -> object assignment."""
    n = benefit.shape[0]
    owner = np.full(n, -1, dtype=np.int64)  # object -> person
    assigned = np.full(n, -1, dtype=np.int64)  # person -> object
    while True:
        unassigned = np.nonzero(assigned < 0)[0]
        if len(unassigned) == 0:
            return assigned
        values = benefit[unassigned] - prices[None, :]
        order = np.argpartition(-values, 1, axis=1)
        best_j = order[:, 0]
        second = values[np.arange(len(unassigned)), order[:, 1]]
        best = values[np.arange(len(unassigned)), best_j]
        bids = prices[best_j] + (best - second) + eps
        # objects take their single highest bid; ties to the lowest person index
        for j in np.unique(best_j):
            bidders = unassigned[best_j == j]
            jbids = bids[best_j == j]
            top = int(np.argmax(jbids))
            winner = bidders[top]
            prices[j] = jbids[top]
            if owner[j] >= 0:
                assigned[owner[j]] = -1
            owner[j] = winner
            assigned[winner] = j


def _auction_assignment(benefit: np.ndarray, rel_tol: float) -> np.ndarray:
    n = benefit.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    spread = float(benefit.max() - benefit.min())
    if spread == 0.0:
        return np.arange(n, dtype=np.int64)
    prices = np.zeros(n)
    eps = spread / 4.0
    assignment = None
    for _ in range(60):
        assignment = _auction_phase(benefit, prices, eps)
        total_cost = float(-benefit[np.arange(n), assignment].sum())
        gap_bound = n * eps
        lower = max(total_cost - gap_bound, 0.0)
        if gap_bound <= rel_tol * max(lower, 1e-12) or eps <= 1e-15 * spread:
            break
        eps /= 5.0
    return assignment


# ---------------------------------------------------------------------------
# generative metrics


@dataclass(frozen=True)
class GenMetrics:
    cov_pct: float
    mmd: float
    nna_pct: float


_DISTANCES = {"cd": chamfer, "emd": emd}


def pairwise_matrix(A: list[np.ndarray], B: list[np.ndarray], distance: str) -> np.ndarray:
    fn = _DISTANCES[distance]
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = fn(a, b)
    return out


def gen_metrics(generated: list[np.ndarray], reference: list[np.ndarray], distance: str = "cd") -> GenMetrics:
    """COV / MMD / 1-NNA between generated and reference cloud pools.

    COV: % of reference items that are some generated item's nearest reference.
    MMD: mean over reference of the min distance to the generated pool.
    1-NNA: leave-one-out 1-NN label accuracy on the merged pool (50% is best).
    """
    if distance not in _DISTANCES:
        raise ValueError(f"distance must be one of {sorted(_DISTANCES)}")
    if not generated or not reference:
        raise ValueError("empty pools")
    d_gr = pairwise_matrix(generated, reference, distance)
    cov = 100.0 * len(np.unique(d_gr.argmin(axis=1))) / len(reference)
    mmd = float(d_gr.min(axis=0).mean())

    d_gg = pairwise_matrix(generated, generated, distance)
    d_rr = pairwise_matrix(reference, reference, distance)
    top = np.hstack([d_gg, d_gr])
    bottom = np.hstack([d_gr.T, d_rr])
    merged = np.vstack([top, bottom])
    np.fill_diagonal(merged, np.inf)
    labels = np.array([1] * len(generated) + [0] * len(reference))
    nn = merged.argmin(axis=1)
    nna = 100.0 * float((labels[nn] == labels).mean())
    return GenMetrics(cov_pct=float(cov), mmd=mmd, nna_pct=nna)


# ---------------------------------------------------------------------------
# alignment metrics


def grid_axis(resolution: int = GRID_RESOLUTION) -> np.ndarray:
    """Cell-center coordinates along one axis of the unit-cube grid."""
    return (np.arange(resolution) + 0.5) / resolution - 0.5


def voxelize_boxes(boxes, resolution: int = GRID_RESOLUTION) -> np.ndarray:
    """Boolean occupancy of the box union on the unit-cube grid.

    Processed in x-slabs so 256^3 grids stay memory-bounded.
    """
    boxes = _as_boxes(boxes)
    axis = grid_axis(resolution)
    occ = np.zeros((resolution, resolution, resolution), dtype=bool)
    slab = max(1, (1 << 21) // (resolution * resolution))
    for x0 in range(0, resolution, slab):
        gx, gy, gz = np.meshgrid(axis[x0 : x0 + slab], axis, axis, indexing="ij")
        centers = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        hit = np.zeros(len(centers), dtype=bool)
        for b in boxes:
            hit |= contains_points(b, centers, 0.0)
        occ[x0 : x0 + slab] = hit.reshape(-1, resolution, resolution)
    return occ


@dataclass(frozen=True)
class AlignmentMetrics:
    box_cd: float
    box_emd: float
    tov: float
    viou: float


def alignment_metrics(
    boxes,
    shape_points: np.ndarray,
    shape_occupancy: np.ndarray,
    resolution: int | None = None,
    rng_seed=0,
) -> AlignmentMetrics:
    """TOV = vol(union \\ shape) / vol(shape); VIoU = vol(inter) / vol(union of both).

    Box-CD / Box-EMD compare points sampled on the box-union boundary against
    the shape's surface points. Volumes are voxel counts on the shared grid.
    """
    shape_occupancy = np.asarray(shape_occupancy, dtype=bool)
    if resolution is None:
        resolution = shape_occupancy.shape[0]
    if shape_occupancy.shape != (resolution, resolution, resolution):
        raise ValueError("occupancy grid must be cubic and match the stated resolution")
    box_occ = voxelize_boxes(boxes, resolution)
    vol_shape = int(shape_occupancy.sum())
    if vol_shape == 0:
        raise ValueError("shape occupancy is empty")
    outside = int((box_occ & ~shape_occupancy).sum())
    inter = int((box_occ & shape_occupancy).sum())
    union = int((box_occ | shape_occupancy).sum())
    tov = outside / vol_shape
    viou = inter / union if union else 0.0

    shape_points = np.asarray(shape_points, dtype=float)
    pts = boxset_points(boxes, n=len(shape_points), rng_seed=rng_seed)
    return AlignmentMetrics(
        box_cd=chamfer(pts, shape_points),
        box_emd=emd(pts, shape_points),
        tov=float(tov),
        viou=float(viou),
    )
