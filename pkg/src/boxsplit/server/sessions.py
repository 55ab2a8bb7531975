"""Editable split-tree sessions with append-only event-log persistence.

Each session holds a working tree rooted at the unit cube, an undo stack of
edits, and a seed-derived RNG counter advanced by every generative call so
demo runs replay exactly. One JSONL file per session; a full snapshot line is
written every SNAPSHOT_EVERY events so recovery never replays unbounded logs
(replay from the last snapshot is equivalent to replaying everything).
"""
from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np

from boxsplit.geometry import (
    PARAM_DIM,
    Box,
    InvalidBoxError,
    orthonormalize,
    unit_cube,
    validate_box,
)
from boxsplit.hierarchy import SplitTree, TreeNode, serialize_tree
from boxsplit.seeding import derive_seed

SNAPSHOT_EVERY = 64


class UnknownSessionError(KeyError):
    pass


class RevisionConflictError(RuntimeError):
    pass


@dataclass
class _Node:
    params: np.ndarray
    parent: int | None = None
    children: tuple[int, int] | None = None


@dataclass
class SessionCore:
    """Pure tree/undo state machine; all mutations go through apply_event."""

    family: str
    seed: int
    nodes: list[_Node] = field(default_factory=list)
    leaf_ids: list[int] = field(default_factory=list)
    edits: list[dict] = field(default_factory=list)
    rng_calls: int = 0

    def __post_init__(self):
        if not self.nodes:
            self.nodes = [_Node(params=unit_cube().params())]
            self.leaf_ids = [0]

    def leaves(self) -> np.ndarray:
        return np.stack([self.nodes[i].params for i in self.leaf_ids])

    def leaf_boxes(self) -> list[Box]:
        return [Box.from_params(p) for p in self.leaves()]

    def next_rng_seed(self) -> int:
        seed = derive_seed(self.seed, "gen", self.rng_calls)
        return seed

    # -- event application (used both live and during log replay) --------

    def apply_event(self, event: dict) -> None:
        op = event["op"]
        if op == "split":
            self._apply_split(event)
        elif op == "update":
            self._apply_update(event)
        elif op == "undo":
            self._apply_undo()
        elif op == "rng":
            self.rng_calls += 1
        else:
            raise ValueError(f"unknown event op {op!r}")

    def _apply_split(self, event: dict) -> None:
        v = int(event["pivot"])
        children = np.asarray(event["children"], dtype=float).reshape(2, PARAM_DIM)
        if not 0 <= v < len(self.leaf_ids):
            raise IndexError(f"pivot {v} out of range for {len(self.leaf_ids)} leaves")
        pivot_node = self.leaf_ids[v]
        ids = []
        for child in children:
            self.nodes.append(_Node(params=child, parent=pivot_node))
            ids.append(len(self.nodes) - 1)
        self.nodes[pivot_node].children = (ids[0], ids[1])
        self.leaf_ids = self.leaf_ids[:v] + self.leaf_ids[v + 1 :] + ids
        self.edits.append({"kind": "split", "pivot_index": v, "pivot_node": pivot_node, "child_nodes": ids})

    def _apply_update(self, event: dict) -> None:
        i = int(event["leaf"])
        params = np.asarray(event["params"], dtype=float).reshape(PARAM_DIM)
        if not 0 <= i < len(self.leaf_ids):
            raise IndexError(f"leaf {i} out of range for {len(self.leaf_ids)} leaves")
        if np.any(params[3:6] <= 0):
            raise InvalidBoxError(f"sides must be > 0, got {params[3:6]}")
        fixed = np.concatenate([params[:3], params[3:6], orthonormalize(params[6:])])
        validate_box(Box.from_params(fixed))
        node = self.leaf_ids[i]
        prev = self.nodes[node].params.copy()
        self.nodes[node].params = fixed
        self.edits.append({"kind": "update", "node": node, "prev": prev})

    def _apply_undo(self) -> None:
        if not self.edits:
            return
        edit = self.edits.pop()
        if edit["kind"] == "update":
            self.nodes[edit["node"]].params = edit["prev"]
            return
        # split reversal: the two children are the most recent leaves/nodes (LIFO)
        a, b = edit["child_nodes"]
        self.leaf_ids = [i for i in self.leaf_ids if i not in (a, b)]
        self.leaf_ids.insert(edit["pivot_index"], edit["pivot_node"])
        self.nodes[edit["pivot_node"]].children = None
        del self.nodes[max(a, b)]
        del self.nodes[min(a, b)]

    def to_split_tree(self) -> SplitTree:
        nodes = [TreeNode(box=Box.from_params(n.params), parent=n.parent, children=n.children) for n in self.nodes]
        return SplitTree(nodes=nodes, root=0)

    def snapshot(self) -> dict:
        return {
            "family": self.family,
            "seed": self.seed,
            "rng_calls": self.rng_calls,
            "nodes": [
                {"params": n.params.tolist(), "parent": n.parent, "children": list(n.children) if n.children else None}
                for n in self.nodes
            ],
            "leaf_ids": list(self.leaf_ids),
            "edits": [
                {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in e.items()} for e in self.edits
            ],
        }

    @staticmethod
    def from_snapshot(snap: dict) -> "SessionCore":
        core = SessionCore(family=snap["family"], seed=int(snap["seed"]))
        core.nodes = [
            _Node(
                params=np.asarray(n["params"], dtype=float),
                parent=n["parent"],
                children=tuple(n["children"]) if n["children"] else None,
            )
            for n in snap["nodes"]
        ]
        core.leaf_ids = list(snap["leaf_ids"])
        core.rng_calls = int(snap["rng_calls"])
        core.edits = [
            {k: (np.asarray(v, dtype=float) if k == "prev" else v) for k, v in e.items()} for e in snap["edits"]
        ]
        return core


def replay_events(family: str, seed: int, events: list[dict]) -> SessionCore:
    """Rebuild a session purely from its event sequence."""
    core = SessionCore(family=family, seed=seed)
    for event in events:
        core.apply_event(event)
    return core


@dataclass
class Session:
    id: str
    core: SessionCore
    revision: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock)
    log_path: str | None = None
    events_since_snapshot: int = 0

    def summary(self) -> dict:
        return {
            "id": self.id,
            "family": self.core.family,
            "seed": self.core.seed,
            "revision": self.revision,
            "history_depth": len(self.core.edits),
            "boxes": [list(map(float, p)) for p in self.core.leaves()],
        }

    def record(self, event: dict) -> None:
        self.core.apply_event(event)
        self.revision += 1
        if self.log_path is None:
            return
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
            self.events_since_snapshot += 1
            if self.events_since_snapshot >= SNAPSHOT_EVERY:
                fh.write(json.dumps({"op": "snapshot", "state": self.core.snapshot()}) + "\n")
                self.events_since_snapshot = 0

    def tree_text(self) -> str:
        return serialize_tree(self.core.to_split_tree(), require_unit_root=False)


class SessionStore:
    """In-memory session registry with optional on-disk event logs."""

    def __init__(self, store_dir: str | None = None):
        self.store_dir = store_dir
        if store_dir:
            os.makedirs(store_dir, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, family: str, seed: int) -> Session:
        sid = uuid.uuid4().hex[:16]
        core = SessionCore(family=family, seed=int(seed))
        log_path = os.path.join(self.store_dir, f"{sid}.log") if self.store_dir else None
        session = Session(id=sid, core=core, log_path=log_path)
        if log_path:
            with open(log_path, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"op": "create", "id": sid, "family": family, "seed": int(seed)}) + "\n")
        with self._lock:
            self._sessions[sid] = session
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
        session = self._load(sid)
        if session is None:
            raise UnknownSessionError(sid)
        with self._lock:
            return self._sessions.setdefault(sid, session)

    def _load(self, sid: str) -> Session | None:
        if not self.store_dir:
            return None
        path = os.path.join(self.store_dir, f"{sid}.log")
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(ln) for ln in fh if ln.strip()]
        if not lines or lines[0].get("op") != "create":
            raise ValueError(f"corrupt session log {path}")
        head = lines[0]
        core = SessionCore(family=head["family"], seed=int(head["seed"]))
        revision = 0
        tail_since_snapshot = 0
        for event in lines[1:]:
            if event["op"] == "snapshot":
                core = SessionCore.from_snapshot(event["state"])
                tail_since_snapshot = 0
                continue
            core.apply_event(event)
            revision += 1
            tail_since_snapshot += 1
        return Session(id=sid, core=core, revision=revision, log_path=path, events_since_snapshot=tail_since_snapshot)

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)
