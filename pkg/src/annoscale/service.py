"""HTTP service exposing datasets, hierarchy builds and annotation sessions.

Hierarchy builds and analysis embeddings run on daemon threads; clients poll
GET endpoints until the status flips to ready. All errors use one JSON shape:
{"code": ..., "message": ...} with a matching HTTP status.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import __version__
from .dataio import FeatureTensor, load_manifest, read_features
from .embed import embed
from .hierarchy import build_hierarchy
from .session import EXPORT_FORMATS, Session, SessionError, create_session


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(kind: str, item_id: str) -> ServiceError:
    return ServiceError(404, "not_found", f"unknown {kind} id {item_id!r}")


@dataclass
class DatasetRecord:
    id: str
    manifest: Any
    features: FeatureTensor


@dataclass
class HierarchyRecord:
    id: str
    dataset_id: str
    status: str = "building"  # building | ready | failed
    hierarchy: Any = None
    error: str | None = None
    params: dict = field(default_factory=dict)


@dataclass
class SessionRecord:
    id: str
    hierarchy_id: str
    dataset_id: str
    session: Session
    embed_iters: int
    embed_theta: float
    seed: int
    local_to_global: dict[int, str] = field(default_factory=dict)


@dataclass
class AnalysisRecord:
    id: str
    session_id: str
    local_id: int
    embedding_status: str = "pending"  # pending | ready | failed
    coords: list | None = None
    iteration: int = 0
    kl: float | None = None
    error: str | None = None


class DatasetIn(BaseModel):
    manifest_path: str


class HierarchyIn(BaseModel):
    dataset_id: str
    n_scales: int = 3
    k: int = 30
    perplexity: float = 10.0
    beta_walks: int = 100
    walk_length: int = 15
    threshold_factor: float = 1.5
    beta_aoi: int = 50
    max_steps: int = 100
    seed: int = 0
    n_workers: int = 1


class SessionIn(BaseModel):
    hierarchy_id: str
    embed_iters: int = 500
    embed_theta: float = 0.5
    seed: int = 0


class DrillIn(BaseModel):
    selection: list[int]


class LabelIn(BaseModel):
    analysis_id: str
    selection: list[int]
    label: int


class Registry:
    """In-memory service state guarded by one lock."""

    def __init__(self):
        self.lock = threading.Lock()
        self.datasets: dict[str, DatasetRecord] = {}
        self.hierarchies: dict[str, HierarchyRecord] = {}
        self.sessions: dict[str, SessionRecord] = {}
        self.analyses: dict[str, AnalysisRecord] = {}
        self._counter = 0

    def next_id(self, prefix: str) -> str:
        with self.lock:
            self._counter += 1
            return f"{prefix}{self._counter}"


def _analysis_seed(session_seed: int, local_id: int) -> int:
    return int(np.random.SeedSequence([session_seed, local_id]).generate_state(1)[0])


def create_app(data_root: str | None = None) -> FastAPI:
    app = FastAPI(title="annoscale", version=__version__)
    # The browser client is served statically, so it arrives cross-origin.
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    reg = Registry()
    app.state.registry = reg
    root = Path(data_root).resolve() if data_root is not None else None

    @app.exception_handler(ServiceError)
    async def service_error_handler(_: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"code": "invalid_request", "message": str(exc.errors())}
        )

    @app.exception_handler(SessionError)
    async def session_error_handler(_: Request, exc: SessionError):
        return JSONResponse(status_code=400, content={"code": "invalid_request", "message": str(exc)})

    def get_dataset(dataset_id: str) -> DatasetRecord:
        try:
            return reg.datasets[dataset_id]
        except KeyError:
            raise _not_found("dataset", dataset_id) from None

    def get_hierarchy(hierarchy_id: str) -> HierarchyRecord:
        try:
            return reg.hierarchies[hierarchy_id]
        except KeyError:
            raise _not_found("hierarchy", hierarchy_id) from None

    def get_session(session_id: str) -> SessionRecord:
        try:
            return reg.sessions[session_id]
        except KeyError:
            raise _not_found("session", session_id) from None

    def get_analysis(analysis_id: str) -> AnalysisRecord:
        try:
            return reg.analyses[analysis_id]
        except KeyError:
            raise _not_found("analysis", analysis_id) from None

    def register_analysis(srec: SessionRecord, local_id: int) -> AnalysisRecord:
        arec = AnalysisRecord(
            id=reg.next_id("a"), session_id=srec.id, local_id=local_id
        )
        with reg.lock:
            reg.analyses[arec.id] = arec
            srec.local_to_global[local_id] = arec.id
        analysis = srec.session.analysis(local_id)
        if analysis.n_points == 1:
            with reg.lock:
                arec.coords = [[0.0, 0.0]]
                arec.embedding_status = "ready"
            return arec

        def publish(iteration: int, coords, kl: float):
            with reg.lock:
                arec.coords = coords
                arec.iteration = iteration
                arec.kl = kl

        def work():
            try:
                joint = srec.session.analysis_joint(local_id)
                result = embed(
                    joint,
                    n_iters=srec.embed_iters,
                    theta=srec.embed_theta,
                    seed=_analysis_seed(srec.seed, local_id),
                    on_iteration=publish,
                )
                coords = [[float(x), float(y)] for x, y in result.coords]
                with reg.lock:
                    arec.coords = coords
                    if result.kl_trace:  # exact value beats the running estimate
                        arec.kl = result.kl_trace[-1][1]
                    arec.embedding_status = "ready"
            except Exception as exc:  # failure lands in the poll response
                with reg.lock:
                    arec.error = str(exc)
                    arec.embedding_status = "failed"

        threading.Thread(target=work, daemon=True).start()
        return arec

    def analysis_payload(arec: AnalysisRecord) -> dict:
        srec = get_session(arec.session_id)
        analysis = srec.session.analysis(arec.local_id)
        scale = srec.session.hierarchy.scales[analysis.scale]
        rows = scale.landmark_rows[analysis.indices]
        weights = scale.weights[analysis.indices]
        parent_global = (
            srec.local_to_global.get(analysis.parent_id)
            if analysis.parent_id is not None
            else None
        )
        with reg.lock:  # consistent view against the live publisher
            status = arec.embedding_status
            coords = arec.coords
            iteration = arec.iteration
            kl = arec.kl
            error = arec.error
        return {
            "analysis_id": arec.id,
            "session_id": srec.id,
            "scale": analysis.scale,
            "n_points": analysis.n_points,
            "parent_analysis_id": parent_global,
            "embedding_status": status,
            "embedding": None if coords is None else [[float(x), float(y)] for x, y in coords],
            "iteration": iteration,
            "kl": kl,
            "converged": status != "pending",
            "error": error,
            "points": [
                {"index": i, "row": int(r), "weight": float(w)}
                for i, (r, w) in enumerate(zip(rows, weights))
            ],
        }

    @app.get("/api/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/api/dataset")
    def register_dataset(body: DatasetIn):
        manifest_path = Path(body.manifest_path)
        if root is not None and not manifest_path.is_absolute():
            manifest_path = root / manifest_path
        try:
            manifest = load_manifest(manifest_path)
            features = read_features(manifest.feature_file)
        except FileNotFoundError as exc:
            raise ServiceError(404, "not_found", str(exc)) from None
        except (ValueError, OSError) as exc:
            raise ServiceError(400, "invalid_dataset", str(exc)) from None
        rec = DatasetRecord(id=reg.next_id("d"), manifest=manifest, features=features)
        with reg.lock:
            reg.datasets[rec.id] = rec
        return {
            "dataset_id": rec.id,
            "n_points": manifest.n_points,
            "dim": manifest.dim,
            "n_videos": len(manifest.videos),
            "label_names": manifest.label_names,
        }

    @app.post("/api/hierarchy")
    def start_hierarchy(body: HierarchyIn):
        dataset = get_dataset(body.dataset_id)
        params = body.model_dump(exclude={"dataset_id"})
        rec = HierarchyRecord(id=reg.next_id("h"), dataset_id=dataset.id, params=params)
        with reg.lock:
            reg.hierarchies[rec.id] = rec

        def work():
            try:
                hierarchy = build_hierarchy(dataset.features, **params)
                with reg.lock:
                    rec.hierarchy = hierarchy
                    rec.status = "ready"
            except Exception as exc:  # failure lands in the poll response
                with reg.lock:
                    rec.error = str(exc)
                    rec.status = "failed"

        threading.Thread(target=work, daemon=True).start()
        return {"hierarchy_id": rec.id, "status": rec.status}

    @app.get("/api/hierarchy/{hierarchy_id}/status")
    def hierarchy_status(hierarchy_id: str):
        rec = get_hierarchy(hierarchy_id)
        out = {"hierarchy_id": rec.id, "status": rec.status, "dataset_id": rec.dataset_id}
        if rec.status == "ready":
            out["report"] = rec.hierarchy.report
            out["scale_sizes"] = [s.n_landmarks for s in rec.hierarchy.scales]
        if rec.status == "failed":
            out["error"] = rec.error
        return out

    @app.post("/api/session")
    def start_session(body: SessionIn):
        rec = get_hierarchy(body.hierarchy_id)
        if rec.status == "building":
            raise ServiceError(409, "not_ready", f"hierarchy {rec.id} is still building")
        if rec.status == "failed":
            raise ServiceError(409, "build_failed", rec.error or "hierarchy build failed")
        dataset = get_dataset(rec.dataset_id)
        session = create_session(rec.hierarchy, dataset.manifest)
        srec = SessionRecord(
            id=reg.next_id("s"),
            hierarchy_id=rec.id,
            dataset_id=dataset.id,
            session=session,
            embed_iters=body.embed_iters,
            embed_theta=body.embed_theta,
            seed=body.seed,
        )
        with reg.lock:
            reg.sessions[srec.id] = srec
        root = register_analysis(srec, session.root.id)
        return {
            "session_id": srec.id,
            "hierarchy_id": rec.id,
            "dataset_id": dataset.id,
            "root_analysis_id": root.id,
            "scale": session.root.scale,
            "n_points": session.root.n_points,
        }

    @app.get("/api/session/{session_id}")
    def session_state(session_id: str):
        srec = get_session(session_id)
        dump = srec.session.dump()
        dump["session_id"] = srec.id
        dump["analyses"] = [
            dict(a, analysis_id=srec.local_to_global.get(a["id"])) for a in dump["analyses"]
        ]
        return dump

    @app.get("/api/analysis/{analysis_id}")
    def analysis_state(analysis_id: str):
        return analysis_payload(get_analysis(analysis_id))

    @app.post("/api/analysis/{analysis_id}/drill")
    def drill(analysis_id: str, body: DrillIn):
        arec = get_analysis(analysis_id)
        srec = get_session(arec.session_id)
        child = srec.session.drill(arec.local_id, body.selection)
        child_rec = register_analysis(srec, child.id)
        return analysis_payload(child_rec)

    @app.post("/api/session/{session_id}/label")
    def label(session_id: str, body: LabelIn):
        srec = get_session(session_id)
        arec = get_analysis(body.analysis_id)
        if arec.session_id != srec.id:
            raise ServiceError(
                400, "invalid_request", f"analysis {arec.id} belongs to session {arec.session_id}"
            )
        n = srec.session.label_selection(arec.local_id, body.selection, body.label)
        return {
            "rows_labeled": n,
            "coverage": srec.session.coverage(),
            "clicks": srec.session.clicks,
        }

    @app.get("/api/session/{session_id}/coverage")
    def coverage(session_id: str):
        srec = get_session(session_id)
        dump = srec.session.dump()
        return {
            "session_id": srec.id,
            "coverage": dump["coverage"],
            "clicks": dump["clicks"],
            "label_counts": dump["label_counts"],
        }

    @app.get("/api/session/{session_id}/export")
    def export(session_id: str, format: str = "havana"):
        srec = get_session(session_id)
        if format not in EXPORT_FORMATS:
            raise ServiceError(
                400,
                "invalid_request",
                f"unknown export format {format!r}; use one of {list(EXPORT_FORMATS)}",
            )
        return srec.session.export_json(format)

    @app.get("/api/point/{dataset_id}/{row}/thumbnail")
    def thumbnail(dataset_id: str, row: int):
        dataset = get_dataset(dataset_id)
        if not 0 <= row < dataset.manifest.n_points:
            raise ServiceError(404, "not_found", f"row {row} outside dataset {dataset_id}")
        path = dataset.manifest.thumbnail_path(row)
        if path is None or not path.is_file():
            raise ServiceError(404, "not_found", f"no thumbnail for row {row}")
        return FileResponse(path, media_type="image/jpeg")

    return app


app = create_app()
