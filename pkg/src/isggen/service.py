"""Session-oriented HTTP API for interactive incremental generation.

Sessions live on disk (state document plus one image pair per step), so a
restarted server picks them up where they were. Each step is atomic: state
advances only after the image is safely written.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import numpy as np
import torch
from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse

from . import sgraph
from .dataio import save_image
from .errors import DataError, ValidationError
from .trainer import load_checkpoint, models_from_checkpoint, run_step
from .sgraph import mix_seed


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=self.status,
            content={"code": self.code, "message": self.message, "detail": self.detail},
        )


class SessionStore:
    """Disk layout: <root>/sessions/<sid>/state.json plus step_<k>.{npy,png}."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    def dir_for(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def load(self, session_id: str) -> dict:
        path = self.dir_for(session_id) / "state.json"
        if not path.exists():
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return json.loads(path.read_text())

    def save(self, state: dict) -> None:
        d = self.dir_for(state["session_id"])
        d.mkdir(parents=True, exist_ok=True)
        path = d / "state.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(state, sort_keys=True))
        tmp.replace(path)


def create_app(checkpoint_path, store_dir) -> FastAPI:
    checkpoint_path = str(checkpoint_path)
    store = SessionStore(store_dir)
    app = FastAPI(title="incremental scene-graph image service")

    model_cache: dict[str, tuple[dict, object]] = {}
    cache_guard = threading.Lock()
    session_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def models_for(path: str):
        with cache_guard:
            if path not in model_cache:
                try:
                    archive = load_checkpoint(path)
                except DataError as exc:
                    raise ApiError(404, "unknown_checkpoint", str(exc)) from exc
                models = models_from_checkpoint(archive)
                for name, module in models.named_modules_for_state().items():
                    module.eval()
                model_cache[path] = (archive, models)
            return model_cache[path]

    def lock_for(session_id: str) -> threading.Lock:
        with locks_guard:
            if session_id not in session_locks:
                session_locks[session_id] = threading.Lock()
            return session_locks[session_id]

    # fail fast if the startup checkpoint is unusable
    _, _default_models = models_for(checkpoint_path)

    def vocab_of(state: dict):
        _, models = models_for(state["checkpoint"])
        return models

    def graph_of(state: dict, models) -> sgraph.SceneGraph:
        return sgraph.deserialize(state["graph"], models.vocab)

    def view_of(state: dict) -> dict:
        models = vocab_of(state)
        graph = graph_of(state, models)
        generated = set(state["generated"])
        vocab = models.vocab
        return {
            "session_id": state["session_id"],
            "step_count": state["steps"],
            "seed": state["seed"],
            "nodes": [
                {
                    "id": n.node_id,
                    "category": vocab.categories[n.category],
                    "generated": n.node_id in generated,
                }
                for n in graph.nodes
            ],
            "edges": [
                {"s": e.subject, "p": vocab.predicates[e.predicate], "o": e.object}
                for e in graph.edges
            ],
            "pending_node_ids": sorted(graph.node_ids() - generated),
            "images": [
                f"/v1/sessions/{state['session_id']}/images/{k}"
                for k in range(state["steps"])
            ],
        }

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(RequestValidationError)
    async def on_request_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation_error",
                "message": "request body failed validation",
                "detail": str(exc.errors()),
            },
        )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/vocabulary")
    def vocabulary():
        _, models = models_for(checkpoint_path)
        v = models.vocab
        return {
            "categories": list(v.categories),
            "predicates": list(v.predicates),
            "version": v.version,
        }

    @app.post("/v1/sessions", status_code=201)
    def create_session(payload: dict | None = Body(None)):
        payload = payload or {}
        session_id = uuid.uuid4().hex[:12]
        ckpt = str(payload.get("checkpoint") or checkpoint_path)
        models_for(ckpt)  # 404s before anything is written
        seed = payload.get("seed")
        if seed is None:
            seed = mix_seed("session", session_id)
        if not isinstance(seed, int):
            raise ApiError(422, "validation_error", "seed must be an integer")
        _, models = models_for(ckpt)
        state = {
            "session_id": session_id,
            "checkpoint": ckpt,
            "seed": seed,
            "graph": sgraph.serialize(sgraph.SceneGraph(), models.vocab),
            "generated": [],
            "steps": 0,
        }
        store.save(state)
        return {"session_id": session_id}

    @app.get("/v1/sessions/{session_id}")
    def session_view(session_id: str):
        return view_of(store.load(session_id))

    @app.post("/v1/sessions/{session_id}/graph")
    def update_graph(session_id: str, payload: dict | None = Body(None)):
        payload = payload or {}
        with lock_for(session_id):
            state = store.load(session_id)
            models = vocab_of(state)
            vocab = models.vocab
            graph = graph_of(state, models)
            generated = set(state["generated"])

            remove = payload.get("remove_nodes") or []
            known = {n.node_id for n in graph.nodes}
            for nid in remove:
                if nid not in known:
                    raise ApiError(422, "validation_error", f"cannot remove unknown node {nid}")
                if nid in generated:
                    raise ApiError(
                        409,
                        "conflict",
                        f"node {nid} is already generated",
                        detail="generated objects are part of the preserved image and cannot be removed",
                    )
            removed = set(remove)
            nodes = [n for n in graph.nodes if n.node_id not in removed]
            edges = [
                e
                for e in graph.edges
                if e.subject not in removed and e.object not in removed
            ]

            for i, rn in enumerate(payload.get("add_nodes") or []):
                if not isinstance(rn, dict) or not isinstance(rn.get("id"), int):
                    raise ApiError(422, "validation_error", f"add_nodes[{i}].id must be an integer")
                cat = rn.get("category")
                if not isinstance(cat, str) or cat not in vocab.categories:
                    raise ApiError(
                        422, "validation_error", f"add_nodes[{i}].category: unknown name {cat!r}"
                    )
                nodes.append(sgraph.Node(node_id=rn["id"], category=vocab.category_index(cat)))
            for i, re_ in enumerate(payload.get("add_edges") or []):
                if not isinstance(re_, dict):
                    raise ApiError(422, "validation_error", f"add_edges[{i}] must be an object")
                pred = re_.get("p")
                if not isinstance(pred, str) or pred not in vocab.predicates:
                    raise ApiError(
                        422, "validation_error", f"add_edges[{i}].p: unknown predicate {pred!r}"
                    )
                if not isinstance(re_.get("s"), int) or not isinstance(re_.get("o"), int):
                    raise ApiError(422, "validation_error", f"add_edges[{i}]: s and o must be integers")
                edges.append(
                    sgraph.Edge(
                        subject=re_["s"], predicate=vocab.predicate_index(pred), object=re_["o"]
                    )
                )

            try:
                new_graph = sgraph.SceneGraph(nodes=tuple(nodes), edges=tuple(edges))
            except ValidationError as exc:
                raise ApiError(400, "validation_error", str(exc)) from exc

            state["graph"] = sgraph.serialize(new_graph, vocab)
            store.save(state)
            return view_of(state)

    @app.post("/v1/sessions/{session_id}/step")
    def step(session_id: str):
        lock = lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise ApiError(409, "step_in_flight", "another step is already running")
        try:
            state = store.load(session_id)
            _, models = models_for(state["checkpoint"])
            graph = graph_of(state, models)
            generated = set(state["generated"])
            pending = sorted(graph.node_ids() - generated)
            if not pending:
                raise ApiError(
                    409,
                    "no_pending_nodes",
                    "every node in the graph is already generated; add nodes first",
                )
            k = state["steps"]
            session_dir = store.dir_for(session_id)
            previous = None
            if k > 0:
                previous = torch.from_numpy(np.load(session_dir / f"step_{k - 1}.npy"))
            noise_seed = mix_seed(state["seed"], "noise", k)
            try:
                with torch.no_grad():
                    _, image = run_step(models, graph, generated, previous, noise_seed)
            except ApiError:
                raise
            except Exception as exc:  # session state must survive any failure
                raise ApiError(500, "generation_failed", str(exc)) from exc

            arr = image.numpy().astype(np.float32)
            np.save(session_dir / f"step_{k}.npy", arr)
            save_image(
                session_dir / f"step_{k}.png",
                (np.transpose(arr, (1, 2, 0)) + 1.0) / 2.0,
            )
            state["generated"] = sorted(generated | set(pending))
            state["steps"] = k + 1
            store.save(state)
            return {
                "step_index": k,
                "new_node_ids": pending,
                "image_url": f"/v1/sessions/{session_id}/images/{k}",
            }
        finally:
            lock.release()

    @app.get("/v1/sessions/{session_id}/images/{k}")
    def image(session_id: str, k: int):
        store.load(session_id)  # 404 on unknown session
        path = store.dir_for(session_id) / f"step_{k}.png"
        if not path.exists():
            raise ApiError(404, "unknown_image", f"session has no image for step {k}")
        return FileResponse(path, media_type="image/png")

    return app
