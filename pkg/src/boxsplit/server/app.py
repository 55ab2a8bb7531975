"""HTTP/JSON inference service for the interactive box editor.

Boxes travel on the wire as 15-float arrays (center, sides, orient). Errors
are {code, message} JSON with 400 validation / 404 unknown id / 409 revision
conflict / 503 model-not-loaded; the reserved shape-decoding route answers 501.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from boxsplit.geometry import PARAM_DIM, Box, InvalidBoxError
from boxsplit.pivot import PivotModel, softmax
from boxsplit.seeding import derive_rng
from boxsplit.server.sessions import RevisionConflictError, SessionStore, UnknownSessionError

SAMPLER_NAMES = ("conditional", "inpaint", "token")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class ModelRegistry:
    """Loaded checkpoints the server serves from; stub mode fills every slot
    with a deterministic halving splitter so the service runs model-free."""

    pivot: Optional[PivotModel] = None
    splitters: dict = field(default_factory=dict)
    families: dict = field(default_factory=dict)
    stub: bool = False

    def splitter(self, name: str):
        if name not in SAMPLER_NAMES:
            raise ApiError(400, "validation", f"sampler must be one of {list(SAMPLER_NAMES)}")
        fn = self.splitters.get(name)
        if fn is None:
            raise ApiError(503, "model-not-loaded", f"no checkpoint loaded for sampler {name!r}")
        return fn

    def describe(self) -> list[dict]:
        out = [
            {
                "kind": f"splitter:{name}",
                "loaded": name in self.splitters,
                "family": self.families.get(name, "stub" if self.stub else None),
            }
            for name in SAMPLER_NAMES
        ]
        out.append(
            {"kind": "pivot", "loaded": self.pivot is not None, "family": getattr(self.pivot, "family", None)}
        )
        return out


def stub_split(contexts: np.ndarray, pivots: np.ndarray, steps: int, rng_seed) -> np.ndarray:
    """Deterministic model-free splitter: halve the pivot along its longest side."""
    from boxsplit.hierarchy import apply_split

    contexts = np.asarray(contexts, dtype=float)
    out = []
    for b in range(contexts.shape[0]):
        p = contexts[b, int(pivots[b])]
        center, sides, orient = p[:3], p[3:6].copy(), p[6:]
        axis = int(np.argmax(sides))
        offset = orient.reshape(3, 3)[:, axis] * sides[axis] / 4.0
        sides[axis] /= 2.0
        kids = np.stack(
            [np.concatenate([center - offset, sides, orient]), np.concatenate([center + offset, sides, orient])]
        )
        out.append(apply_split(contexts[b], int(pivots[b]), kids))
    return np.stack(out)


def stub_registry() -> ModelRegistry:
    return ModelRegistry(pivot=None, splitters={name: stub_split for name in SAMPLER_NAMES}, stub=True)


def registry_from_checkpoints(ckpt_dir: str) -> ModelRegistry:
    """Load whatever checkpoints exist in the directory; missing ones stay 503."""
    from boxsplit.baselines import TokenModel, UncondModel, inpaint_splitter, token_splitter
    from boxsplit.childsplit import SplitModel, conditional_splitter

    reg = ModelRegistry()
    pivot_path = os.path.join(ckpt_dir, "pivot.ckpt")
    if os.path.exists(pivot_path):
        reg.pivot = PivotModel.load(pivot_path)
    cond_path = os.path.join(ckpt_dir, "cond_split.ckpt")
    if os.path.exists(cond_path):
        model = SplitModel.load(cond_path)
        reg.splitters["conditional"] = conditional_splitter(model)
        reg.families["conditional"] = model.family
    uncond_path = os.path.join(ckpt_dir, "uncond.ckpt")
    if os.path.exists(uncond_path):
        model = UncondModel.load(uncond_path)
        reg.splitters["inpaint"] = inpaint_splitter(model)
        reg.families["inpaint"] = model.family
    token_path = os.path.join(ckpt_dir, "token.ckpt")
    if os.path.exists(token_path):
        model = TokenModel.load(token_path)
        reg.splitters["token"] = token_splitter(model)
        reg.families["token"] = model.family
    return reg


class CreateSessionBody(BaseModel):
    family: str = "table"
    seed: int = 0


class SplitBody(BaseModel):
    pivot: int
    sampler: str = "conditional"
    steps: int = 50
    revision: Optional[int] = None


class UpdateBoxBody(BaseModel):
    params: list[float]
    revision: Optional[int] = None


class UndoBody(BaseModel):
    revision: Optional[int] = None


def create_app(store: SessionStore, registry: ModelRegistry) -> FastAPI:
    app = FastAPI(title="boxsplit", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "validation", "message": str(exc.errors()[:1])})

    def _session(sid: str):
        try:
            return store.get(sid)
        except UnknownSessionError:
            raise ApiError(404, "unknown-session", f"no session {sid!r}") from None

    def _check_revision(session, expected: Optional[int]):
        if expected is not None and expected != session.revision:
            raise RevisionConflictError(f"revision {expected} != current {session.revision}")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/models")
    def models():
        return {"models": registry.describe()}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = store.create(body.family, body.seed)
        return session.summary()

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str):
        session = _session(sid)
        with session.lock:
            return session.summary()

    @app.get("/v1/sessions/{sid}/tree", response_class=PlainTextResponse)
    def get_tree(sid: str):
        session = _session(sid)
        with session.lock:
            return session.tree_text()

    @app.post("/v1/sessions/{sid}/suggest-pivot")
    def suggest_pivot(sid: str):
        session = _session(sid)
        with session.lock:
            leaves = session.core.leaves()
            gen_seed = session.core.next_rng_seed()
            if registry.pivot is not None:
                from boxsplit.pivot import pivot_logits, sample_index

                logits = pivot_logits(registry.pivot, [Box.from_params(p) for p in leaves])
                probs = softmax(logits)
                index = sample_index(logits, 1.0, gen_seed)
            else:
                probs = np.full(len(leaves), 1.0 / len(leaves))
                index = int(derive_rng(gen_seed, "uniform-pivot").integers(0, len(leaves)))
            session.record({"op": "rng"})
            return {"index": int(index), "probabilities": [float(p) for p in probs], "revision": session.revision}

    @app.post("/v1/sessions/{sid}/split")
    def split(sid: str, body: SplitBody):
        session = _session(sid)
        splitter = registry.splitter(body.sampler)
        with session.lock:
            try:
                _check_revision(session, body.revision)
            except RevisionConflictError as exc:
                raise ApiError(409, "conflict", str(exc)) from None
            leaves = session.core.leaves()
            if not 0 <= body.pivot < len(leaves):
                raise ApiError(400, "validation", f"pivot {body.pivot} out of range")
            gen_seed = session.core.next_rng_seed()
            session.record({"op": "rng"})
            try:
                new_set = splitter(leaves[None], np.array([body.pivot]), body.steps, gen_seed)[0]
            except Exception as exc:  # degenerate samples surface as 400
                raise ApiError(400, "degenerate-sample", str(exc)) from None
            children = new_set[-2:]
            session.record({"op": "split", "pivot": body.pivot, "children": children.tolist()})
            return session.summary()

    @app.patch("/v1/sessions/{sid}/boxes/{leaf}")
    def update_box(sid: str, leaf: int, body: UpdateBoxBody):
        session = _session(sid)
        if len(body.params) != PARAM_DIM:
            raise ApiError(400, "validation", f"params must have {PARAM_DIM} floats")
        with session.lock:
            try:
                _check_revision(session, body.revision)
            except RevisionConflictError as exc:
                raise ApiError(409, "conflict", str(exc)) from None
            try:
                session.record({"op": "update", "leaf": leaf, "params": body.params})
            except (InvalidBoxError, IndexError, ValueError) as exc:
                raise ApiError(400, "invalid-box" if isinstance(exc, InvalidBoxError) else "validation", str(exc)) from None
            return session.summary()

    @app.post("/v1/sessions/{sid}/undo")
    def undo(sid: str, body: UndoBody = UndoBody()):
        session = _session(sid)
        with session.lock:
            try:
                _check_revision(session, body.revision)
            except RevisionConflictError as exc:
                raise ApiError(409, "conflict", str(exc)) from None
            session.record({"op": "undo"})
            return session.summary()

    @app.post("/v1/sessions/{sid}/decode")
    def decode(sid: str):
        _session(sid)
        raise ApiError(501, "not-implemented", "shape decoding is not part of this service")

    return app
