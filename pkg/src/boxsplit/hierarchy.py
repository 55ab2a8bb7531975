"""Binary merge trees over oriented boxes and their split-record extraction.

Agglomerative merging builds the tree bottom-up; splitting is its reverse.
Node ids encode the merge order: leaves take 0..L-1 (input order), internal
nodes L..2L-2 in merge creation order, so descending internal id is exactly
the top-down split order. The final merged box is overridden by the canonical
unit cube (the root convention).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from boxsplit.geometry import (
    PARAM_DIM,
    VALIDITY_TOL,
    Box,
    box_corners,
    box_volume,
    fit_obb,
    unit_cube,
    validate_box,
)


class MalformedTreeError(ValueError):
    pass


class TreeParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class TreeNode:
    box: Box
    parent: int | None = None
    children: tuple[int, int] | None = None


@dataclass
class SplitTree:
    """Binary hierarchy from the unit-cube root down to leaf boxes."""

    nodes: list[TreeNode] = field(default_factory=list)
    root: int = 0

    def leaf_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.children is None]

    def internal_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.children is not None]

    def leaf_boxes(self) -> list[Box]:
        return [self.nodes[i].box for i in self.leaf_ids()]


def validate_tree(tree: SplitTree, require_unit_root: bool = True) -> None:
    """Structural invariants: one root, binary internals, unit-cube root box.

    Editable session trees pass require_unit_root=False (the user may have
    transformed the root while it was still a leaf).
    """
    n = len(tree.nodes)
    if n == 0:
        raise MalformedTreeError("empty tree")
    roots = [i for i, node in enumerate(tree.nodes) if node.parent is None]
    if roots != [tree.root]:
        raise MalformedTreeError(f"expected single root {tree.root}, found {roots}")
    leaves = internal = 0
    for i, node in enumerate(tree.nodes):
        validate_box(node.box)
        if node.children is None:
            leaves += 1
            continue
        internal += 1
        a, b = node.children
        if len({a, b}) != 2 or not all(0 <= c < n for c in (a, b)):
            raise MalformedTreeError(f"node {i} has bad children {node.children}")
        for c in (a, b):
            if tree.nodes[c].parent != i:
                raise MalformedTreeError(f"child {c} does not point back to {i}")
    if leaves != internal + 1:
        raise MalformedTreeError(f"{leaves} leaves vs {internal} internal nodes")
    if require_unit_root:
        root_params = tree.nodes[tree.root].box.params()
        if np.max(np.abs(root_params - unit_cube().params())) > VALIDITY_TOL:
            raise MalformedTreeError("root box must be the canonical unit cube")


def agglomerate(leaves: list[Box]) -> SplitTree:
    """Greedy bottom-up pairwise merging of the leaf boxes into a binary tree.

    At each step the pair minimizing
        cost(i, j) = volume(fit_obb(corners_i + corners_j)) - volume_i - volume_j
    is merged (ties broken by smallest (i, j) over node ids); the parent box is
    the OBB fitted over both corner sets. The last box standing is replaced by
    the canonical unit cube.
    """
    if len(leaves) == 0:
        raise ValueError("agglomerate needs at least one leaf box")
    for b in leaves:
        validate_box(b)

    if len(leaves) == 1:
        return SplitTree(nodes=[TreeNode(box=unit_cube())], root=0)

    nodes = [TreeNode(box=b) for b in leaves]
    corners = {i: box_corners(b) for i, b in enumerate(leaves)}
    volumes = {i: box_volume(b) for i, b in enumerate(leaves)}
    active = sorted(corners)
    cost_cache: dict[tuple[int, int], tuple[float, Box]] = {}

    def pair_cost(i: int, j: int) -> tuple[float, Box]:
        key = (i, j)
        if key not in cost_cache:
            parent = fit_obb(np.vstack([corners[i], corners[j]]))
            cost_cache[key] = (box_volume(parent) - volumes[i] - volumes[j], parent)
        return cost_cache[key]

    while len(active) > 1:
        best = None
        for a_idx, i in enumerate(active):
            for j in active[a_idx + 1 :]:
                cost, _ = pair_cost(i, j)
                if best is None or cost < best[0] - 1e-15 or (
                    abs(cost - best[0]) <= 1e-15 and (i, j) < best[1:]
                ):
                    best = (cost, i, j)
        _, i, j = best
        _, parent_box = pair_cost(i, j)
        new_id = len(nodes)
        nodes.append(TreeNode(box=parent_box, children=(i, j)))
        nodes[i].parent = new_id
        nodes[j].parent = new_id
        corners[new_id] = box_corners(parent_box)
        volumes[new_id] = box_volume(parent_box)
        active = [k for k in active if k not in (i, j)] + [new_id]

    root = active[0]
    nodes[root].box = unit_cube()  # root convention overrides the fitted top box
    return SplitTree(nodes=nodes, root=root)


@dataclass
class SplitRecord:
    """One training pair: context set, pivot index into it, and the two children.

    context: (n, 15) parameter rows; children: (2, 15).
    """

    context: np.ndarray
    pivot: int
    children: np.ndarray

    @property
    def cardinality(self) -> int:
        return self.context.shape[0]


def extract_records(tree: SplitTree) -> list[SplitRecord]:
    """Walk the tree top-down in reverse merge order, emitting one record per split.

    Applying the records sequentially from {root} reproduces the leaf set.
    """
    validate_tree(tree)
    internal = sorted(tree.internal_ids(), reverse=True)
    context_ids = [tree.root]
    records = []
    for nid in internal:
        v = context_ids.index(nid)
        a, b = tree.nodes[nid].children
        context = np.stack([tree.nodes[k].box.params() for k in context_ids])
        children = np.stack([tree.nodes[a].box.params(), tree.nodes[b].box.params()])
        records.append(SplitRecord(context=context, pivot=v, children=children))
        context_ids = context_ids[:v] + context_ids[v + 1 :] + [a, b]
    return records


def replay_records(records: list[SplitRecord]) -> np.ndarray:
    """Apply records from {unit cube}; returns the final (n, 15) box set."""
    context = unit_cube().params()[None, :]
    for rec in records:
        if rec.pivot >= context.shape[0]:
            raise ValueError(f"pivot {rec.pivot} out of range for context {context.shape[0]}")
        keep = np.delete(context, rec.pivot, axis=0)
        context = np.vstack([keep, rec.children])
    return context


def apply_split(context: np.ndarray, pivot: int, children: np.ndarray) -> np.ndarray:
    """One split step: remove the pivot row, append both children."""
    keep = np.delete(np.asarray(context, dtype=float).reshape(-1, PARAM_DIM), pivot, axis=0)
    return np.vstack([keep, np.asarray(children, dtype=float).reshape(2, PARAM_DIM)])


TREE_HEADER = "boxtree v1"


def serialize_tree(tree: SplitTree, require_unit_root: bool = True) -> str:
    """Versioned line-oriented text form; floats use shortest exact repr."""
    validate_tree(tree, require_unit_root=require_unit_root)
    lines = [TREE_HEADER]
    for i, node in enumerate(tree.nodes):
        parent = "-" if node.parent is None else str(node.parent)
        params = " ".join(repr(float(x)) for x in node.box.params())
        lines.append(f"node {i} parent={parent} box={params}")
    lines.append(f"root {tree.root}")
    return "\n".join(lines) + "\n"


def deserialize_tree(text: str | bytes, require_unit_root: bool = True) -> SplitTree:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != TREE_HEADER:
        raise TreeParseError(f"expected header {TREE_HEADER!r}", 1)

    entries: dict[int, tuple[int | None, np.ndarray]] = {}
    root: int | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("root "):
            try:
                root = int(line.split()[1])
            except (IndexError, ValueError):
                raise TreeParseError("bad root line", lineno) from None
            continue
        if not line.startswith("node "):
            raise TreeParseError(f"unexpected line {line!r}", lineno)
        try:
            head, box_part = line.split("box=", 1)
            fields = head.split()
            node_id = int(fields[1])
            parent_field = fields[2]
            if not parent_field.startswith("parent="):
                raise ValueError
            parent_str = parent_field[len("parent=") :]
            parent = None if parent_str == "-" else int(parent_str)
            params = np.array([float(x) for x in box_part.split()], dtype=float)
            if params.shape != (PARAM_DIM,):
                raise ValueError
        except (ValueError, IndexError):
            raise TreeParseError(f"cannot parse node line {line!r}", lineno) from None
        if node_id in entries:
            raise TreeParseError(f"duplicate node id {node_id}", lineno)
        entries[node_id] = (parent, params)

    if root is None:
        raise TreeParseError("missing root line (truncated document?)", len(lines))
    if sorted(entries) != list(range(len(entries))):
        raise TreeParseError("node ids must be a contiguous 0..N-1 range", len(lines))

    nodes = [TreeNode(box=Box.from_params(entries[i][1]), parent=entries[i][0]) for i in range(len(entries))]
    # children recovered from parent pointers; ascending id order matches merge bookkeeping
    for i, node in enumerate(nodes):
        kids = [j for j in range(len(nodes)) if entries[j][0] == i]
        if len(kids) == 2:
            node.children = (kids[0], kids[1])
        elif len(kids) != 0:
            raise TreeParseError(f"node {i} has {len(kids)} children; tree must be binary", len(lines))
    tree = SplitTree(nodes=nodes, root=root)
    try:
        validate_tree(tree, require_unit_root=require_unit_root)
    except MalformedTreeError as exc:
        raise TreeParseError(str(exc), len(lines)) from None
    return tree
