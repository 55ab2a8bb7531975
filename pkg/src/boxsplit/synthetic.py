"""Procedural shape families used to build training hierarchies.

Desk-scale stand-in for real over-segmented part data: parameter-jittered box
assemblies (tables, chairs, free-form plank constructions) normalized to fit
the unit cube. Every part carries a small random 3-axis rotation so all 15
box features vary across a corpus.
"""
from __future__ import annotations

import numpy as np

from boxsplit.geometry import Box, box_corners, rotation_about

FAMILIES = ("table", "chair", "plank-assembly")

# keeps normalized corners strictly inside [-0.5, 0.5] under float rounding
_FIT_MARGIN = 1.0 - 1e-9


class UnknownFamilyError(ValueError):
    pass


def _jittered(rng: np.random.Generator, center, sides, max_tilt_deg: float = 2.5) -> Box:
    axis = rng.normal(size=3)
    angle = np.deg2rad(rng.normal(0.0, max_tilt_deg))
    r = rotation_about(axis, angle)
    center = np.asarray(center, dtype=float) * (1.0 + rng.uniform(-0.01, 0.01, 3))
    return Box(center, np.asarray(sides, dtype=float), r.reshape(9))


def _normalize_to_unit_cube(boxes: list[Box]) -> list[Box]:
    corners = np.vstack([box_corners(b) for b in boxes])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    mid = (lo + hi) / 2.0
    scale = _FIT_MARGIN / max((hi - lo).max(), 1e-9)
    return [Box((b.center - mid) * scale, b.sides * scale, b.orient) for b in boxes]


def _table(rng: np.random.Generator) -> list[Box]:
    w = rng.uniform(0.9, 1.6)
    d = rng.uniform(0.6, 1.2)
    h = rng.uniform(0.7, 1.1)
    top_t = rng.uniform(0.05, 0.10)
    leg_a = rng.uniform(0.05, 0.11)
    inset = rng.uniform(0.5, 1.2) * leg_a

    boxes = [_jittered(rng, [0, 0, h - top_t / 2], [w, d, top_t], max_tilt_deg=1.0)]
    leg_h = h - top_t
    xs = [-(w / 2 - inset - leg_a / 2), w / 2 - inset - leg_a / 2]
    ys = [-(d / 2 - inset - leg_a / 2), d / 2 - inset - leg_a / 2]
    for x in xs:
        for y in ys:
            boxes.append(_jittered(rng, [x, y, leg_h / 2], [leg_a, leg_a, leg_h]))

    n_stretchers = rng.integers(0, 5)
    z_s = rng.uniform(0.2, 0.5) * leg_h
    bar_t = leg_a * rng.uniform(0.6, 0.9)
    sides_order = rng.permutation(4)[:n_stretchers]
    for side in sides_order:
        if side == 0:  # front (y = ys[0]) spanning x
            boxes.append(_jittered(rng, [0, ys[0], z_s], [abs(xs[1] - xs[0]), bar_t, bar_t]))
        elif side == 1:  # back
            boxes.append(_jittered(rng, [0, ys[1], z_s], [abs(xs[1] - xs[0]), bar_t, bar_t]))
        elif side == 2:  # left spanning y
            boxes.append(_jittered(rng, [xs[0], 0, z_s], [bar_t, abs(ys[1] - ys[0]), bar_t]))
        else:  # right
            boxes.append(_jittered(rng, [xs[1], 0, z_s], [bar_t, abs(ys[1] - ys[0]), bar_t]))
    return boxes


def _chair(rng: np.random.Generator) -> list[Box]:
    seat_w = rng.uniform(0.45, 0.6)
    seat_d = rng.uniform(0.45, 0.6)
    seat_h = rng.uniform(0.4, 0.55)
    seat_t = rng.uniform(0.04, 0.08)
    back_h = rng.uniform(0.45, 0.7)
    leg_a = rng.uniform(0.04, 0.07)

    boxes = [_jittered(rng, [0, 0, seat_h - seat_t / 2], [seat_w, seat_d, seat_t], max_tilt_deg=1.0)]
    leg_h = seat_h - seat_t
    xs = [-(seat_w / 2 - leg_a), seat_w / 2 - leg_a]
    ys = [-(seat_d / 2 - leg_a), seat_d / 2 - leg_a]
    for x in xs:
        for y in ys:
            boxes.append(_jittered(rng, [x, y, leg_h / 2], [leg_a, leg_a, leg_h]))

    # backrest, tilted backwards a little
    back_t = rng.uniform(0.03, 0.06)
    back = _jittered(
        rng,
        [0, seat_d / 2 - back_t / 2, seat_h + back_h / 2],
        [seat_w, back_t, back_h],
        max_tilt_deg=1.0,
    )
    tilt = rotation_about([1, 0, 0], np.deg2rad(rng.uniform(2.0, 10.0)))
    boxes.append(Box(back.center, back.sides, (tilt @ back.rotation).reshape(9)))

    n_extra = rng.integers(0, 5)
    arm_h = seat_h + rng.uniform(0.15, 0.25)
    arm_t = leg_a * rng.uniform(0.8, 1.2)
    extras = rng.permutation(4)[:n_extra]
    for e in extras:
        if e == 0:
            boxes.append(_jittered(rng, [xs[0], 0, arm_h], [arm_t, seat_d * 0.9, arm_t]))
        elif e == 1:
            boxes.append(_jittered(rng, [xs[1], 0, arm_h], [arm_t, seat_d * 0.9, arm_t]))
        elif e == 2:
            boxes.append(_jittered(rng, [0, ys[0], leg_h * 0.4], [abs(xs[1] - xs[0]), arm_t, arm_t]))
        else:
            boxes.append(_jittered(rng, [0, ys[1], leg_h * 0.4], [abs(xs[1] - xs[0]), arm_t, arm_t]))
    return boxes


def _plank_assembly(rng: np.random.Generator) -> list[Box]:
    n = int(rng.integers(4, 15))
    boxes = [
        _jittered(
            rng,
            [0, 0, 0],
            sorted(rng.uniform(0.08, 1.0, 3), reverse=True),
            max_tilt_deg=4.0,
        )
    ]
    for _ in range(n - 1):
        host = boxes[rng.integers(0, len(boxes))]
        sides = np.array(sorted(rng.uniform(0.06, 0.9, 3), reverse=True))
        axis = int(rng.integers(0, 3))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        # attach flush against a host face, with tangential slide
        offset_local = rng.uniform(-0.4, 0.4, 3) * host.sides
        offset_local[axis] = sign * (host.sides[axis] / 2 + sides[axis] / 2)
        center = host.center + host.rotation @ offset_local
        boxes.append(_jittered(rng, center, sides, max_tilt_deg=4.0))
    return boxes


_GENERATORS = {
    "table": _table,
    "chair": _chair,
    "plank-assembly": _plank_assembly,
}


def generate_synthetic_shape(family: str, rng_seed) -> list[Box]:
    """4-14 connected leaf boxes of the family, normalized to the unit cube."""
    if family not in _GENERATORS:
        raise UnknownFamilyError(f"unknown family {family!r}; expected one of {FAMILIES}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return _normalize_to_unit_cube(_GENERATORS[family](rng))
