import json
import time
from datetime import date as Date

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image
import io

from geochip.catalog import CatalogSource, FixtureLayout, FixtureTileSpec, generate_fixture
from geochip.chips import ChipSpec
from geochip.errors import GeochipError
from geochip.geo import (
    GeoBBox,
    PixelWindow,
    TileXYZ,
    mercator_to_wgs84,
    tile_bounds,
    utm_to_wgs84,
    wgs84_to_mercator,
    wgs84_to_utm,
)
from geochip.model import ModelConfig, VitSegmentation, save_checkpoint
from geochip.raster import open_raster, read_window
from geochip.service import ModelRegistry, ServiceConfig, TaskEngine, TaskStates, TaskStore, create_app

TILE = FixtureTileSpec(size_px=192)
DATES = ("2022-04-16", "2022-05-16", "2022-06-15")
LEGEND = {"0": {"name": "background", "color": "#101010"},
          "1": {"name": "flooded", "color": "#2266ee"}}


def _bbox_for_pixels(col0, row0, col1, row1, tile=TILE):
    gt = tile.geotransform
    x0, y0 = gt.pixel_to_world(col0, row1)
    x1, y1 = gt.pixel_to_world(col1, row0)
    lon0, lat0 = utm_to_wgs84(x0, y0, tile.utm_zone, tile.utm_north)
    lon1, lat1 = utm_to_wgs84(x1, y1, tile.utm_zone, tile.utm_north)
    return GeoBBox(min(lon0, lon1), min(lat0, lat1), max(lon0, lon1), max(lat0, lat1))


AOI = _bbox_for_pixels(10, 10, 180, 180)


def _toy_model(seed=0, constant_class=None):
    cfg = ModelConfig(timesteps=3, in_bands=6, image_size=64, patch_size=8,
                      embed_dim=8, num_layers=2, num_heads=2, num_classes=2,
                      dropout=0.0)
    model = VitSegmentation(cfg, seed=seed)
    if constant_class is not None:
        model.head.classifier.w.data[:] = 0.0
        model.head.classifier.b.data[:] = 0.0
        model.head.classifier.b.data[constant_class] = 10.0
    return model


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    """Fixture catalog + registry with a varied and a constant model."""
    root = tmp_path_factory.mktemp("service")
    catalog = generate_fixture(
        101, root / "catalog", FixtureLayout(dates=DATES, tiles=(TILE,)))
    ckpt_dir = root / "models"
    ckpt_dir.mkdir()
    save_checkpoint(ckpt_dir / "varied.gckp", _toy_model(seed=3))
    save_checkpoint(ckpt_dir / "constant.gckp", _toy_model(constant_class=1))
    registry = [
        {"model_id": "varied", "checkpoint": "models/varied.gckp",
         "display_name": "Varied toy", "legend": LEGEND},
        {"model_id": "constant1", "checkpoint": "models/constant.gckp",
         "display_name": "Constant class 1", "legend": LEGEND},
    ]
    (root / "registry.json").write_text(json.dumps(registry))
    return root, catalog


def _config(env, data_name="data", workers=1):
    root, catalog = env
    return ServiceConfig(
        data_dir=str(root / data_name),
        catalog=CatalogSource.local(catalog),
        registry_path=str(root / "registry.json"),
        workers_per_stage=workers,
    )


def _submit(client, model_id="varied", bbox=None, date="2022-06-15", **kw):
    body = {"bbox": (bbox or AOI).as_list(), "model_id": model_id, "date": date}
    return client.post("/api/tasks", json=body, **kw)


def _wait_terminal(client, task_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/tasks/{task_id}").json()
        if doc["state"] in (TaskStates.COMPLETED, TaskStates.FAILED):
            return doc
        time.sleep(0.05)
    raise TimeoutError(f"task {task_id} still {doc['state']}")


@pytest.fixture(scope="module")
def live(env):
    app = create_app(_config(env, "data_live"))
    with TestClient(app) as client:
        yield client


@pytest.fixture(scope="module")
def completed_task(live):
    resp = _submit(live, model_id="constant1")
    assert resp.status_code == 202
    task_id = resp.json()["task_id"]
    doc = _wait_terminal(live, task_id)
    assert doc["state"] == TaskStates.COMPLETED, doc.get("error")
    return doc


class TestSubmission:
    def test_happy_path(self, live):
        resp = _submit(live)
        assert resp.status_code == 202
        body = resp.json()
        assert body["task_id"]
        assert body["state"] == "queued"

    def test_area_cap(self, live):
        big = GeoBBox(-10.0, 30.0, 10.0, 50.0)
        resp = _submit(live, bbox=big)
        assert resp.status_code == 400
        assert resp.json()["code"] == "area_limit_exceeded"

    def test_unknown_model(self, live):
        resp = _submit(live, model_id="nope")
        assert resp.status_code == 400
        assert resp.json()["code"] == "unknown_model"

    def test_malformed_body(self, live):
        resp = live.post("/api/tasks", json={"bbox": [1, 2], "model_id": "varied"})
        assert resp.status_code == 422

    def test_invalid_bbox(self, live):
        resp = live.post("/api/tasks", json={
            "bbox": [5.0, 40.0, 4.0, 41.0], "model_id": "varied",
            "date": "2022-06-15"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid_bbox"

    def test_idempotency_dedupe(self, live):
        headers = {"Idempotency-Key": "same-request-twice"}
        a = _submit(live, headers=headers).json()
        b = _submit(live, headers=headers).json()
        assert a["task_id"] == b["task_id"]

    def test_unknown_task_404(self, live):
        assert live.get("/api/tasks/deadbeef").status_code == 404


class TestPipeline:
    def test_end_to_end_completion(self, live, completed_task):
        doc = completed_task
        outputs = doc["outputs"]
        assert outputs["tile_url"] == f"/tiles/{doc['task_id']}/{{z}}/{{x}}/{{y}}.png"
        assert outputs["summary"]["classes"]["1"]["pixels"] == 192 * 192
        assert doc["stage_completed"] == "preparing"

    def test_no_imagery_failure(self, live):
        resp = _submit(live, date="2022-12-25")
        task_id = resp.json()["task_id"]
        doc = _wait_terminal(live, task_id)
        assert doc["state"] == TaskStates.FAILED
        assert doc["error"]["code"] == "no_imagery"
        assert doc["error"]["stage"] == "extracting"

    def test_health(self, live):
        t0 = time.time()
        resp = live.get("/health")
        assert time.time() - t0 < 0.1
        body = resp.json()
        assert body["status"] == "ok"
        assert set(body["queue_depths"]) == {"extract", "infer", "prepare"}
        assert all(body["worker_liveness"].values())

    def test_models_listing(self, live):
        body = live.get("/api/models").json()
        assert [m["model_id"] for m in body] == ["constant1", "varied"]
        for m in body:
            for item in m["legend"].values():
                assert item["color"].startswith("#") and len(item["color"]) == 7


class TestCrashRecovery:
    def test_resume_without_rerunning_inference(self, env):
        root, catalog = env
        store = TaskStore(root / "data_crash")
        registry = ModelRegistry.load(root / "registry.json")
        src = CatalogSource.local(catalog)
        # engine with no prepare worker: dies "between stages 2 and 3"
        engine1 = TaskEngine(store, registry, src, ChipSpec(),
                             workers_per_stage={"extract": 1, "infer": 1, "prepare": 0})
        engine1.start()
        doc, created = store.create({"bbox": AOI.as_list(), "model_id": "varied",
                                     "date": "2022-06-15", "overrides": {}})
        assert created
        engine1.submit(doc["task_id"])
        deadline = time.time() + 60
        while time.time() < deadline:
            state = store.get(doc["task_id"])
            if state["stage_completed"] == "inferring":
                break
            time.sleep(0.05)
        engine1.stop()  # "kill" after stage 2 committed
        assert store.get(doc["task_id"])["state"] == TaskStates.PREPARING

        mosaic_file = next((store.task_dir(doc["task_id"]) / "mosaics").glob("*.tif"))
        mosaic_bytes = mosaic_file.read_bytes()

        engine2 = TaskEngine(store, registry, src, ChipSpec(), workers_per_stage=1)
        engine2.start()
        deadline = time.time() + 60
        while time.time() < deadline:
            state = store.get(doc["task_id"])
            if state["state"] in TaskStates.TERMINAL:
                break
            time.sleep(0.05)
        engine2.stop()
        assert state["state"] == TaskStates.COMPLETED
        # inference did not run again: no extract/infer stage executions,
        # and the stage-2 artifact is untouched
        assert engine2.stage_runs["extract"] == 0
        assert engine2.stage_runs["infer"] == 0
        assert engine2.stage_runs["prepare"] == 1
        assert mosaic_file.read_bytes() == mosaic_bytes


class TestStateMachine:
    def test_illegal_transitions_rejected(self, tmp_path):
        store = TaskStore(tmp_path)
        doc, _ = store.create({"bbox": [0, 0, 1, 1], "model_id": "x", "date": "2022-01-01"})
        tid = doc["task_id"]
        with pytest.raises(GeochipError, match="illegal"):
            store.transition(tid, TaskStates.COMPLETED)
        with pytest.raises(GeochipError, match="illegal"):
            store.transition(tid, TaskStates.INFERRING)
        store.transition(tid, TaskStates.EXTRACTING)
        store.transition(tid, TaskStates.FAILED, error={"stage": "extracting",
                                                        "code": "x", "message": ""})
        with pytest.raises(GeochipError, match="illegal"):
            store.transition(tid, TaskStates.INFERRING)

    def test_fuzzed_random_walks_stay_legal(self, tmp_path):
        rng = np.random.default_rng(0)
        store = TaskStore(tmp_path / "fuzz")
        for _ in range(30):
            doc, _ = store.create({"bbox": [0, 0, 1, 1], "model_id": "x",
                                   "date": "2022-01-01"})
            tid = doc["task_id"]
            while True:
                doc = store.get(tid)
                if doc["state"] in TaskStates.TERMINAL:
                    break
                if rng.random() < 0.25:
                    store.transition(tid, TaskStates.FAILED,
                                     error={"stage": doc["state"], "code": "fuzz",
                                            "message": ""})
                else:
                    store.transition(tid, TaskStates.NEXT[doc["state"]])
                new = store.get(tid)
                # timestamps monotone, transition recorded
                assert new["updated_at"] >= doc["updated_at"]

    def test_outputs_only_when_completed(self, live, completed_task):
        for task_id in live.app.state.store.list_ids():
            doc = live.app.state.store.get(task_id)
            if doc["state"] == TaskStates.COMPLETED:
                assert doc["outputs"] is not None
            else:
                assert doc["outputs"] is None


class TestTiles:
    def _covering_tile(self, z=13):
        lon, lat = AOI.centroid()
        x, y = wgs84_to_mercator(lon, lat)
        half = 20037508.342789244
        n = 1 << z
        tx = int((x + half) / (2 * half) * n)
        ty = int((half - y) / (2 * half) * n)
        return z, tx, ty

    def test_constant_mosaic_tile_is_legend_color(self, live, completed_task):
        z, x, y = self._covering_tile()
        resp = live.get(f"/tiles/{completed_task['task_id']}/{z}/{x}/{y}.png")
        assert resp.status_code == 200
        img = np.asarray(Image.open(io.BytesIO(resp.content)))
        assert img.shape == (256, 256, 4)
        opaque = img[:, :, 3] == 255
        assert opaque.any()
        # legend color for class 1 is #2266ee
        assert (img[opaque][:, 0] == 0x22).all()
        assert (img[opaque][:, 1] == 0x66).all()
        assert (img[opaque][:, 2] == 0xee).all()

    def test_outside_coverage_fully_transparent(self, live, completed_task):
        resp = live.get(f"/tiles/{completed_task['task_id']}/10/0/0.png")
        assert resp.status_code == 200
        img = np.asarray(Image.open(io.BytesIO(resp.content)))
        assert (img[:, :, 3] == 0).all()

    def test_tile_determinism(self, live, completed_task):
        z, x, y = self._covering_tile()
        a = live.get(f"/tiles/{completed_task['task_id']}/{z}/{x}/{y}.png").content
        b = live.get(f"/tiles/{completed_task['task_id']}/{z}/{x}/{y}.png").content
        assert a == b

    def test_invalid_addresses(self, live, completed_task):
        tid = completed_task["task_id"]
        assert live.get(f"/tiles/{tid}/15/0/0.png").status_code == 400
        assert live.get(f"/tiles/{tid}/3/9/0.png").status_code == 400
        assert live.get("/tiles/unknown/3/1/1.png").status_code == 404

    def test_pixels_match_projection_oracle(self, live, env, completed_task):
        # 64 random tile pixels vs an independent per-pixel reprojection
        task_id = completed_task["task_id"]
        root, _catalog = env
        task_dir = None
        store = live.app.state.store
        task_dir = store.task_dir(task_id)
        mosaic_path = next((task_dir / "mosaics").glob("*.tif"))
        with open_raster(mosaic_path) as h:
            meta = h.meta
            mosaic = read_window(h, 1, PixelWindow(0, 0, meta.width, meta.height)).values

        z, tx, ty = self._covering_tile(z=13)
        resp = live.get(f"/tiles/{task_id}/{z}/{tx}/{ty}.png")
        img = np.asarray(Image.open(io.BytesIO(resp.content)))

        west, south, east, north = tile_bounds(TileXYZ(z, tx, ty))
        rng = np.random.default_rng(7)
        checked = 0
        legend_rgb = {0: (0x10, 0x10, 0x10), 1: (0x22, 0x66, 0xee)}
        for _ in range(200):
            if checked >= 64:
                break
            i = int(rng.integers(0, 256))
            j = int(rng.integers(0, 256))
            mx = west + (i + 0.5) / 256 * (east - west)
            my = north - (j + 0.5) / 256 * (north - south)
            lon, lat = mercator_to_wgs84(mx, my)
            ux, uy = wgs84_to_utm(lon, lat, TILE.utm_zone, TILE.utm_north)
            col, row = meta.geotransform.world_to_pixel(float(ux), float(uy))
            if not (0 <= col < meta.width and 0 <= row < meta.height):
                continue
            want_class = int(mosaic[row, col])
            got = tuple(int(v) for v in img[j, i])
            if want_class == 255:
                assert got[3] == 0
            else:
                assert got[:3] == legend_rgb[want_class], (i, j, want_class)
                assert got[3] == 255
            checked += 1
        assert checked >= 64


class TestReport:
    def test_report_totals_match_summary(self, live, completed_task):
        tid = completed_task["task_id"]
        resp = live.get(f"/api/tasks/{tid}/report")
        assert resp.status_code == 200
        html = resp.text
        summary = completed_task["outputs"]["summary"]
        for key, info in summary["classes"].items():
            assert f"<td>{info['pixels']}</td>" in html
        assert "flooded" in html and "background" in html
        # absent class shows zero
        assert f"<td>{summary['classes']['0']['pixels']}</td>" in html
        assert summary["classes"]["0"]["pixels"] == 0

    def test_two_exports_identical(self, live, completed_task):
        tid = completed_task["task_id"]
        a = live.get(f"/api/tasks/{tid}/report").text
        b = live.get(f"/api/tasks/{tid}/report").text
        assert a == b

    def test_not_completed_409(self, live):
        resp = _submit(live, date="2022-12-25")
        tid = resp.json()["task_id"]
        _wait_terminal(live, tid)  # fails
        assert live.get(f"/api/tasks/{tid}/report").status_code == 409
        assert live.get("/api/tasks/none/report").status_code == 404


class TestSchemas:
    def test_2xx_bodies_validate(self, live, completed_task):
        from geochip.service.app import HealthDoc, SubmitResponse, TaskDoc
        TaskDoc(**live.get(f"/api/tasks/{completed_task['task_id']}").json())
        HealthDoc(**live.get("/health").json())
        resp = _submit(live)
        SubmitResponse(**resp.json())
