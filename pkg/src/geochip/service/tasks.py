"""Task persistence and the three-stage worker pipeline.

One directory per task with an atomically replaced state.json; stage
artifacts live in subdirectories and are only trusted once the state file
records the stage as completed. Workers consume per-stage FIFO queues; a
process restart re-enqueues every task at the stage after its last committed
boundary, so a task never re-runs work that already landed.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import uuid
import hashlib
from datetime import date as Date
from datetime import datetime, timezone
from pathlib import Path

from geochip.catalog import CatalogSource
from geochip.chips import ChipSpec
from geochip.errors import GeochipError, NoImageryError
from geochip.geo import GeoBBox
from geochip.infer import (
    chips_for_region,
    load_region_chips,
    predict_region,
    save_region_chips,
    write_prediction_cog,
)
from geochip.infer.region import load_mosaics, save_mosaics
from geochip.service.models import ModelRegistry

log = logging.getLogger(__name__)


class TaskStates:
    QUEUED = "queued"
    EXTRACTING = "extracting"
    INFERRING = "inferring"
    PREPARING = "preparing"
    COMPLETED = "completed"
    FAILED = "failed"

    TERMINAL = (COMPLETED, FAILED)
    ALL = (QUEUED, EXTRACTING, INFERRING, PREPARING, COMPLETED, FAILED)

    # forward edges; FAILED is reachable from anywhere
    NEXT = {
        QUEUED: EXTRACTING,
        EXTRACTING: INFERRING,
        INFERRING: PREPARING,
        PREPARING: COMPLETED,
    }


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class TaskStore:
    """Directory-backed task state with enforced transitions."""

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        (self.root / "tasks").mkdir(parents=True, exist_ok=True)
        (self.root / "idempotency").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def task_dir(self, task_id: str) -> Path:
        return self.root / "tasks" / task_id

    def create(self, request: dict, idempotency_key: str | None = None
               ) -> tuple[dict, bool]:
        """Returns (doc, created); created is False on an idempotent replay."""
        with self._lock:
            if idempotency_key:
                marker = self._idempotency_path(idempotency_key)
                if marker.is_file():
                    existing = marker.read_text().strip()
                    doc = self.get(existing)
                    if doc is not None:
                        return doc, False
            task_id = uuid.uuid4().hex[:16]
            doc = {
                "task_id": task_id,
                "request": request,
                "state": TaskStates.QUEUED,
                "stage_completed": None,
                "created_at": _utcnow(),
                "updated_at": _utcnow(),
                "error": None,
                "outputs": None,
            }
            task_dir = self.task_dir(task_id)
            task_dir.mkdir(parents=True)
            self._write(task_id, doc)
            if idempotency_key:
                self._idempotency_path(idempotency_key).write_text(task_id)
            return doc, True

    def _idempotency_path(self, key: str) -> Path:
        digest = hashlib.sha256(key.encode()).hexdigest()[:32]
        return self.root / "idempotency" / digest

    def get(self, task_id: str) -> dict | None:
        path = self.task_dir(task_id) / "state.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text())

    def list_ids(self) -> list[str]:
        base = self.root / "tasks"
        return sorted(p.name for p in base.iterdir() if (p / "state.json").is_file())

    def transition(self, task_id: str, new_state: str, **fields) -> dict:
        """Move a task along an allowed edge and persist atomically."""
        with self._lock:
            doc = self.get(task_id)
            if doc is None:
                raise GeochipError(f"unknown task {task_id}")
            current = doc["state"]
            allowed = (new_state == TaskStates.FAILED
                       or TaskStates.NEXT.get(current) == new_state)
            if not allowed:
                raise GeochipError(
                    f"illegal task transition {current} -> {new_state}")
            doc["state"] = new_state
            doc["updated_at"] = _utcnow()
            doc.update(fields)
            self._write(task_id, doc)
            return doc

    def _write(self, task_id: str, doc: dict):
        path = self.task_dir(task_id) / "state.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(doc, indent=2) + "\n")
        os.replace(tmp, path)


class TaskEngine:
    """Stage queues plus one dedicated worker (or more) per stage."""

    STAGES = ("extract", "infer", "prepare")

    def __init__(self, store: TaskStore, registry: ModelRegistry,
                 catalog_src: CatalogSource, base_spec: ChipSpec,
                 workers_per_stage: int | dict = 1, stage_hook=None):
        self.store = store
        self.registry = registry
        self.catalog_src = catalog_src
        self.base_spec = base_spec
        if isinstance(workers_per_stage, int):
            workers_per_stage = {stage: workers_per_stage for stage in self.STAGES}
        self.workers_per_stage = workers_per_stage
        self.stage_hook = stage_hook  # test instrumentation: (task_id, stage) -> None
        self.queues = {stage: queue.Queue() for stage in self.STAGES}
        self.stage_runs = {stage: 0 for stage in self.STAGES}
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    # ------------------------------------------------------------ lifecycle
    def start(self):
        self.recover()
        for stage in self.STAGES:
            for i in range(self.workers_per_stage.get(stage, 1)):
                t = threading.Thread(target=self._worker_loop, args=(stage,),
                                     name=f"geochip-{stage}-{i}", daemon=True)
                t.start()
                self._threads.append(t)

    def stop(self):
        self._stop.set()
        for _t in self._threads:
            for stage in self.STAGES:
                self.queues[stage].put(None)
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()

    def recover(self):
        """Re-enqueue non-terminal tasks at their next uncommitted stage."""
        for task_id in self.store.list_ids():
            doc = self.store.get(task_id)
            state = doc["state"]
            if state in TaskStates.TERMINAL:
                continue
            stage_completed = doc.get("stage_completed")
            if stage_completed == "inferring":
                self.queues["prepare"].put(task_id)
            elif stage_completed == "extracting":
                self.queues["infer"].put(task_id)
            else:
                # queued, or died mid-extract: restart stage 1 (reset state so
                # the transition extracting->... stays legal)
                if state != TaskStates.QUEUED:
                    doc["state"] = TaskStates.QUEUED
                    self.store._write(task_id, doc)
                self.queues["extract"].put(task_id)

    def submit(self, task_id: str):
        self.queues["extract"].put(task_id)

    def queue_depths(self) -> dict[str, int]:
        return {stage: self.queues[stage].qsize() for stage in self.STAGES}

    def workers_alive(self) -> dict[str, bool]:
        alive = {stage: False for stage in self.STAGES}
        for t in self._threads:
            for stage in self.STAGES:
                if t.name.startswith(f"geochip-{stage}") and t.is_alive():
                    alive[stage] = True
        return alive

    # -------------------------------------------------------------- workers
    def _worker_loop(self, stage: str):
        handler = {"extract": self._stage_extract,
                   "infer": self._stage_infer,
                   "prepare": self._stage_prepare}[stage]
        while not self._stop.is_set():
            task_id = self.queues[stage].get()
            if task_id is None:
                break
            try:
                handler(task_id)
                self.stage_runs[stage] += 1
                if self.stage_hook:
                    self.stage_hook(task_id, stage)
            except GeochipError as exc:
                self._fail(task_id, stage, exc)
            except Exception as exc:  # noqa: BLE001 - worker loop must survive
                log.exception("stage %s crashed for task %s", stage, task_id)
                self._fail(task_id, stage, exc)

    def _fail(self, task_id: str, stage: str, exc: Exception):
        code = "no_imagery" if isinstance(exc, NoImageryError) else "internal"
        stage_name = {"extract": TaskStates.EXTRACTING,
                      "infer": TaskStates.INFERRING,
                      "prepare": TaskStates.PREPARING}[stage]
        try:
            self.store.transition(task_id, TaskStates.FAILED,
                                  error={"stage": stage_name, "code": code,
                                         "message": str(exc)})
        except GeochipError:
            log.exception("could not record failure for %s", task_id)

    def _task_spec(self, doc: dict) -> tuple[ChipSpec, object, dict]:
        request = doc["request"]
        entry, model = self.registry.get(request["model_id"])
        overrides = request.get("overrides") or {}
        base = self.base_spec
        spec = ChipSpec(
            timesteps=model.cfg.timesteps,
            step_days=int(overrides.get("step_days", base.step_days)),
            tolerance_days=int(overrides.get("tolerance_days", base.tolerance_days)),
            chip_size=model.cfg.image_size,
            bands=tuple(entry.bands or base.bands),
            mask_band=base.mask_band,
            cloud_threshold=float(overrides.get("cloud_threshold", base.cloud_threshold)),
            daytime_only=bool(overrides.get("daytime_only", base.daytime_only)),
            num_classes=model.cfg.num_classes,
            profile_id=base.profile_id,
        )
        return spec, model, request

    def _stage_extract(self, task_id: str):
        doc = self.store.get(task_id)
        self.store.transition(task_id, TaskStates.EXTRACTING)
        spec, _model, request = self._task_spec(doc)
        bbox = GeoBBox.from_list(request["bbox"])
        date = Date.fromisoformat(request["date"])
        chips, grids = chips_for_region(bbox, date, spec, self.catalog_src)
        save_region_chips(chips, grids, self.store.task_dir(task_id) / "chips")
        self.store.transition(task_id, TaskStates.INFERRING,
                              stage_completed=TaskStates.EXTRACTING)
        self.queues["infer"].put(task_id)

    def _stage_infer(self, task_id: str):
        doc = self.store.get(task_id)
        spec, model, _request = self._task_spec(doc)
        task_dir = self.store.task_dir(task_id)
        chips, grids = load_region_chips(task_dir / "chips")
        mosaics = predict_region(chips, model, grids)
        save_mosaics(mosaics, task_dir / "mosaics")
        self.store.transition(task_id, TaskStates.PREPARING,
                              stage_completed=TaskStates.INFERRING)
        self.queues["prepare"].put(task_id)

    def _stage_prepare(self, task_id: str):
        doc = self.store.get(task_id)
        _spec, model, _request = self._task_spec(doc)
        task_dir = self.store.task_dir(task_id)
        mosaics = load_mosaics(task_dir / "mosaics")
        result = write_prediction_cog(mosaics, task_dir / "serve",
                                      model.cfg.num_classes)
        outputs = {
            "cogs": [str(Path(p).relative_to(task_dir)) for p in result["cog_paths"]],
            "tile_url": f"/tiles/{task_id}/{{z}}/{{x}}/{{y}}.png",
            "summary": result["summary"],
        }
        self.store.transition(task_id, TaskStates.COMPLETED,
                              stage_completed=TaskStates.PREPARING,
                              outputs=outputs)
