"""HTTP surface: submission, polling, health, tiles, report, model discovery."""

from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

from fastapi import FastAPI, Header, Response
from fastapi.responses import HTMLResponse, JSONResponse
from pydantic import BaseModel, Field

from geochip.catalog import CatalogSource
from geochip.chips import ChipSpec
from geochip.errors import DomainError
from geochip.geo import GeoBBox, TileXYZ, bbox_area_km2
from geochip.raster import open_raster
from geochip.service.models import ModelRegistry
from geochip.service.report import render_report
from geochip.service.tasks import TaskEngine, TaskStates, TaskStore
from geochip.service.tiles import MAX_ZOOM, render_tile

DEFAULT_MAX_AREA_KM2 = 50000.0


@dataclass
class ServiceConfig:
    data_dir: str
    catalog: CatalogSource
    registry_path: str
    workers_per_stage: int = 1
    max_area_km2: float = DEFAULT_MAX_AREA_KM2
    base_spec: ChipSpec = field(default_factory=ChipSpec)


class SubmitBody(BaseModel):
    bbox: list[float] = Field(min_length=4, max_length=4)
    model_id: str
    date: str
    overrides: dict = Field(default_factory=dict)


class SubmitResponse(BaseModel):
    task_id: str
    state: str


class ErrorBody(BaseModel):
    code: str
    message: str


class TaskDoc(BaseModel):
    task_id: str
    request: dict
    state: str
    stage_completed: str | None
    created_at: str
    updated_at: str
    error: dict | None
    outputs: dict | None


class HealthDoc(BaseModel):
    status: str
    queue_depths: dict[str, int]
    worker_liveness: dict[str, bool]


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message})


def create_app(config: ServiceConfig) -> FastAPI:
    store = TaskStore(config.data_dir)
    registry = ModelRegistry.load(config.registry_path)
    engine = TaskEngine(store, registry, config.catalog, config.base_spec,
                        workers_per_stage=config.workers_per_stage)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        engine.start()
        yield
        engine.stop()

    app = FastAPI(title="geochip service", lifespan=lifespan)
    app.state.engine = engine
    app.state.store = store
    app.state.registry = registry
    handle_cache: dict[str, list] = {}
    cache_lock = threading.Lock()

    def cog_handles(task_id: str, doc: dict):
        with cache_lock:
            if task_id not in handle_cache:
                task_dir = store.task_dir(task_id)
                handle_cache[task_id] = [
                    open_raster(task_dir / rel) for rel in doc["outputs"]["cogs"]]
            return handle_cache[task_id]

    # ---------------------------------------------------------------- routes
    @app.post("/api/tasks", status_code=202, response_model=SubmitResponse,
              responses={400: {"model": ErrorBody}})
    def submit_task(body: SubmitBody,
                    idempotency_key: str | None = Header(default=None)):
        try:
            bbox = GeoBBox.from_list(body.bbox)
        except DomainError as exc:
            return _error(400, "invalid_bbox", str(exc))
        area = bbox_area_km2(bbox)
        if area > config.max_area_km2:
            return _error(400, "area_limit_exceeded",
                          f"AOI is {area:.0f} km2; limit is {config.max_area_km2:.0f}")
        if body.model_id not in registry.entries:
            return _error(400, "unknown_model", f"model {body.model_id} not registered")
        try:
            Date.fromisoformat(body.date)
        except ValueError:
            return _error(400, "invalid_date", f"bad date {body.date!r}")

        request = {"bbox": body.bbox, "model_id": body.model_id,
                   "date": body.date, "overrides": body.overrides}
        doc, created = store.create(request, idempotency_key=idempotency_key)
        if created:
            engine.submit(doc["task_id"])
        return SubmitResponse(task_id=doc["task_id"], state=doc["state"])

    @app.get("/api/tasks/{task_id}", response_model=TaskDoc,
             responses={404: {"model": ErrorBody}})
    def get_task(task_id: str):
        doc = store.get(task_id)
        if doc is None:
            return _error(404, "unknown_task", f"no task {task_id}")
        return TaskDoc(**doc)

    @app.get("/health", response_model=HealthDoc)
    def health():
        return HealthDoc(status="ok", queue_depths=engine.queue_depths(),
                         worker_liveness=engine.workers_alive())

    @app.get("/api/models")
    def list_models():
        return registry.public_list()

    @app.get("/tiles/{task_id}/{z}/{x}/{y}.png",
             responses={200: {"content": {"image/png": {}}},
                        400: {"model": ErrorBody}, 404: {"model": ErrorBody}})
    def get_tile(task_id: str, z: int, x: int, y: int):
        doc = store.get(task_id)
        if doc is None or doc["state"] != TaskStates.COMPLETED:
            return _error(404, "unknown_task",
                          f"task {task_id} not found or not completed")
        if z < 0 or z > MAX_ZOOM:
            return _error(400, "invalid_tile", f"zoom must be 0..{MAX_ZOOM}")
        try:
            tile = TileXYZ(z, x, y)
        except DomainError as exc:
            return _error(400, "invalid_tile", str(exc))
        entry, _model = registry.get(doc["request"]["model_id"])
        png = render_tile(cog_handles(task_id, doc), entry, tile)
        return Response(content=png, media_type="image/png")

    @app.get("/api/tasks/{task_id}/report", response_class=HTMLResponse,
             responses={404: {"model": ErrorBody}, 409: {"model": ErrorBody}})
    def get_report(task_id: str):
        doc = store.get(task_id)
        if doc is None:
            return _error(404, "unknown_task", f"no task {task_id}")
        if doc["state"] != TaskStates.COMPLETED:
            return _error(409, "not_completed",
                          f"task is {doc['state']}, report needs completed")
        entry, _model = registry.get(doc["request"]["model_id"])
        html = render_report(doc, entry, cog_handles(task_id, doc))
        return HTMLResponse(content=html)

    return app
