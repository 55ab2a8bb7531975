"""Dataset assembly: shapes -> merge trees -> split records, plus disk formats.

The train/validation split is by shape at an 8:2 ratio; feature normalization
(per-dimension mean/scale over the 15 box parameters) is computed on the train
split only and is baked into every checkpoint.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from boxsplit.geometry import PARAM_DIM
from boxsplit.hierarchy import SplitRecord, SplitTree, agglomerate, deserialize_tree, extract_records, serialize_tree
from boxsplit.seeding import derive_rng, derive_seed
from boxsplit.synthetic import generate_synthetic_shape

MANIFEST_HEADER = "boxsplit-dataset v1"
SCALE_FLOOR = 1e-8


@dataclass
class Dataset:
    trees: list[SplitTree]
    split: list[str]  # "train" | "val" per tree
    mean: np.ndarray
    scale: np.ndarray
    family: str
    seed: int
    _records: dict[str, list[SplitRecord]] = field(default_factory=dict, repr=False)

    def tree_indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.split) if s == split]

    def records(self, split: str = "train") -> list[SplitRecord]:
        if split not in self._records:
            recs: list[SplitRecord] = []
            for i in self.tree_indices(split):
                recs.extend(extract_records(self.trees[i]))
            self._records[split] = recs
        return self._records[split]

    def standardize(self, params: np.ndarray) -> np.ndarray:
        return (np.asarray(params, dtype=float) - self.mean) / self.scale

    def destandardize(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats, dtype=float) * self.scale + self.mean


def _normalization_from_trees(trees: list[SplitTree], indices: list[int]) -> tuple[np.ndarray, np.ndarray]:
    rows = np.vstack(
        [node.box.params() for i in indices for node in trees[i].nodes]
    )
    mean = rows.mean(axis=0)
    scale = np.maximum(rows.std(axis=0), SCALE_FLOOR)
    return mean, scale


def build_dataset(family: str, count: int, seed: int) -> Dataset:
    """Generate `count` shapes, agglomerate each, split 8:2, fit normalization.

    Per-shape RNG streams are seed-derived so builds are schedule-independent.
    """
    if count < 2:
        raise ValueError("dataset needs at least 2 shapes for an 8:2 split")
    trees = []
    for i in range(count):
        leaves = generate_synthetic_shape(family, derive_rng(seed, "shape", i))
        trees.append(agglomerate(leaves))

    perm = derive_rng(seed, "split").permutation(count)
    n_train = max(1, int(round(count * 0.8)))
    split = ["val"] * count
    for i in perm[:n_train]:
        split[int(i)] = "train"

    mean, scale = _normalization_from_trees(trees, [i for i in range(count) if split[i] == "train"])
    return Dataset(trees=trees, split=split, mean=mean, scale=scale, family=family, seed=seed)


def save_dataset(ds: Dataset, out_dir: str) -> str:
    """Write the manifest plus one boxtree file per shape; returns manifest path."""
    tree_dir = os.path.join(out_dir, "trees")
    os.makedirs(tree_dir, exist_ok=True)
    lines = [
        MANIFEST_HEADER,
        f"family {ds.family}",
        f"seed {ds.seed}",
        "mean " + " ".join(repr(float(x)) for x in ds.mean),
        "scale " + " ".join(repr(float(x)) for x in ds.scale),
    ]
    for i, tree in enumerate(ds.trees):
        rel = os.path.join("trees", f"{i:05d}.boxtree")
        with open(os.path.join(out_dir, rel), "w", encoding="utf-8") as fh:
            fh.write(serialize_tree(tree))
        lines.append(f"tree {rel} {ds.split[i]}")
    manifest = os.path.join(out_dir, "dataset.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest_path: str) -> Dataset:
    base = os.path.dirname(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ValueError(f"bad dataset manifest header; expected {MANIFEST_HEADER!r}")
    family = seed = None
    mean = scale = None
    trees: list[SplitTree] = []
    split: list[str] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, rest = ln.split(" ", 1)
        if key == "family":
            family = rest.strip()
        elif key == "seed":
            seed = int(rest)
        elif key == "mean":
            mean = np.array([float(x) for x in rest.split()])
        elif key == "scale":
            scale = np.array([float(x) for x in rest.split()])
        elif key == "tree":
            rel, label = rest.rsplit(" ", 1)
            with open(os.path.join(base, rel), encoding="utf-8") as tf:
                trees.append(deserialize_tree(tf.read()))
            split.append(label)
        else:
            raise ValueError(f"unknown manifest line {ln!r}")
    if mean is None or scale is None or mean.shape != (PARAM_DIM,) or scale.shape != (PARAM_DIM,):
        raise ValueError("manifest missing 15-dim mean/scale")
    if family is None or seed is None or not trees:
        raise ValueError("manifest missing family/seed/tree entries")
    return Dataset(trees=trees, split=split, mean=mean, scale=scale, family=family, seed=seed)


def intermediate_sets(tree: SplitTree) -> list[np.ndarray]:
    """Every box set along the split path, sizes 1..leaf_count, as (n, 15) arrays."""
    from boxsplit.hierarchy import apply_split
    from boxsplit.geometry import unit_cube

    sets = [unit_cube().params()[None, :]]
    for rec in extract_records(tree):
        sets.append(apply_split(sets[-1], rec.pivot, rec.children))
    return sets


__all__ = [
    "Dataset",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "intermediate_sets",
    "derive_seed",
    "MANIFEST_HEADER",
]
