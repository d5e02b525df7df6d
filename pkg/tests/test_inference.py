import json
from datetime import date as Date

import numpy as np
import pytest

from geochip.catalog import CatalogSource, FixtureLayout, FixtureTileSpec, generate_fixture
from geochip.chips import ChipSpec
from geochip.errors import DataError, NoImageryError
from geochip.geo import GeoBBox, PixelWindow, utm_to_wgs84
from geochip.infer import (
    chips_for_region,
    load_region_chips,
    predict_region,
    run_inference,
    save_region_chips,
    write_prediction_cog,
)
from geochip.infer.region import PREDICTION_NODATA, load_mosaics, save_mosaics
from geochip.model import ModelConfig, VitSegmentation
from geochip.raster import open_raster, read_window

TILE = FixtureTileSpec(size_px=192)
DATES = ("2022-04-16", "2022-05-16", "2022-06-15")
REQUEST_DATE = Date(2022, 6, 15)
SPEC = ChipSpec(chip_size=64, timesteps=3)


def _bbox_for_pixels(col0, row0, col1, row1, tile=TILE):
    """WGS84 bbox of a pixel rectangle on the fixture tile."""
    gt = tile.geotransform
    x0, y0 = gt.pixel_to_world(col0, row1)  # lower-left
    x1, y1 = gt.pixel_to_world(col1, row0)  # upper-right
    lon0, lat0 = utm_to_wgs84(x0, y0, tile.utm_zone, tile.utm_north)
    lon1, lat1 = utm_to_wgs84(x1, y1, tile.utm_zone, tile.utm_north)
    return GeoBBox(min(lon0, lon1), min(lat0, lat1), max(lon0, lon1), max(lat0, lat1))


def _constant_class_model(class_id=1, chip=64, timesteps=3, bands=6):
    cfg = ModelConfig(timesteps=timesteps, in_bands=bands, image_size=chip,
                      patch_size=8, embed_dim=8, num_layers=2, num_heads=2,
                      num_classes=2, dropout=0.0)
    model = VitSegmentation(cfg, seed=0)
    model.head.classifier.w.data[:] = 0.0
    model.head.classifier.b.data[:] = 0.0
    model.head.classifier.b.data[class_id] = 10.0
    return model


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    layout = FixtureLayout(dates=DATES, tiles=(TILE,))
    return generate_fixture(77, tmp_path_factory.mktemp("infer_cat"), layout)


@pytest.fixture(scope="module")
def cloudy_fixture_dir(tmp_path_factory):
    layout = FixtureLayout(dates=DATES, tiles=(TILE,), cloud_fractions=(0.0, 0.35, 0.0))
    return generate_fixture(78, tmp_path_factory.mktemp("infer_cloudy"), layout)


class TestChipsForRegion:
    def test_geometric_enumeration(self, fixture_dir):
        # bbox spanning pixels [40, 150) in both axes -> cells {0,1,2} x {0,1,2}
        bbox = _bbox_for_pixels(40, 40, 150, 150)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        got = {(c.chip_ix, c.chip_iy) for c in chips}
        want = {(ix, iy) for ix in range(3) for iy in range(3)}
        assert got == want
        assert grids[TILE.tile_id].width == 192
        for c in chips:
            assert c.values.shape == (3, 6, 64, 64)

    def test_small_bbox_single_cell(self, fixture_dir):
        bbox = _bbox_for_pixels(70, 70, 90, 90)
        chips, _ = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                    CatalogSource.local(fixture_dir))
        assert {(c.chip_ix, c.chip_iy) for c in chips} == {(1, 1)}

    def test_no_tiles_error(self, fixture_dir):
        far = GeoBBox(100.0, 10.0, 101.0, 11.0)
        with pytest.raises(NoImageryError):
            chips_for_region(far, REQUEST_DATE, SPEC, CatalogSource.local(fixture_dir))

    def test_no_assignment_lists_tiles(self, fixture_dir):
        # granules exist in the window but none lands within tolerance of the
        # first timestep target, so assignment fails and the tile is named
        bbox = _bbox_for_pixels(40, 40, 150, 150)
        with pytest.raises(NoImageryError, match=TILE.tile_id):
            chips_for_region(bbox, Date(2022, 7, 10), SPEC,
                             CatalogSource.local(fixture_dir))

    def test_determinism(self, fixture_dir):
        bbox = _bbox_for_pixels(40, 40, 150, 150)
        a, _ = chips_for_region(bbox, REQUEST_DATE, SPEC, CatalogSource.local(fixture_dir))
        b, _ = chips_for_region(bbox, REQUEST_DATE, SPEC, CatalogSource.local(fixture_dir))
        assert [(c.tile_id, c.chip_ix, c.chip_iy) for c in a] == \
            [(c.tile_id, c.chip_ix, c.chip_iy) for c in b]
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.values, cb.values)


class TestPredictRegion:
    def test_constant_model_fills_valid(self, fixture_dir):
        bbox = _bbox_for_pixels(10, 10, 180, 180)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        mosaics = predict_region(chips, _constant_class_model(1), grids)
        mosaic = mosaics[TILE.tile_id]
        assert mosaic.classes.shape == (192, 192)
        assert (mosaic.classes == 1).all()  # clear fixture: everything valid

    def test_cloud_gaps_become_nodata(self, cloudy_fixture_dir):
        bbox = _bbox_for_pixels(10, 10, 180, 180)
        chips, grids = chips_for_region(bbox, REQUEST_DATE,
                                        ChipSpec(chip_size=64, cloud_threshold=100),
                                        CatalogSource.local(cloudy_fixture_dir))
        mosaics = predict_region(chips, _constant_class_model(1), grids)
        mosaic = mosaics[TILE.tile_id]
        # nodata fraction of the mosaic equals invalid fraction of the chips
        invalid = sum(int((~c.valid.all(axis=(0, 1))).sum()) for c in chips)
        assert int((mosaic.classes == PREDICTION_NODATA).sum()) == invalid
        assert invalid > 0

    def test_disjoint_windows_no_bleed(self, fixture_dir):
        bbox = _bbox_for_pixels(10, 10, 180, 180)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        model = _constant_class_model(0)
        mosaics = predict_region(chips, model, grids)
        mosaic = mosaics[TILE.tile_id]
        for c in chips:
            window = mosaic.classes[c.chip_iy * 64:(c.chip_iy + 1) * 64,
                                    c.chip_ix * 64:(c.chip_ix + 1) * 64]
            x = c.values.astype(np.float32) / 10000.0
            x[~c.valid] = 0.0
            want = model.predict_classes(x[None])[0]
            assert np.array_equal(window, want)

    def test_config_shape_mismatch(self, fixture_dir):
        bbox = _bbox_for_pixels(70, 70, 90, 90)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        wrong = _constant_class_model(1, chip=64, timesteps=1)
        with pytest.raises(DataError, match="checkpoint expects"):
            predict_region(chips, wrong, grids)


class TestWritePredictionCog:
    def test_area_summary_and_losslessness(self, fixture_dir, tmp_path):
        bbox = _bbox_for_pixels(10, 10, 180, 180)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        mosaics = predict_region(chips, _constant_class_model(1), grids)
        out = write_prediction_cog(mosaics, tmp_path / "cogs", num_classes=2)
        summary = out["summary"]
        # 192x192 pixels of class 1 at 30 m -> 192*192*900/1e6 km^2
        assert summary["classes"]["1"]["pixels"] == 192 * 192
        assert summary["classes"]["1"]["km2"] == pytest.approx(192 * 192 * 900 / 1e6)
        assert summary["classes"]["0"]["pixels"] == 0
        accounted = (sum(v["pixels"] for v in summary["classes"].values())
                     + summary["nodata_pixels"])
        assert accounted == summary["total_pixels"]

        with open_raster(out["cog_paths"][0]) as h:
            assert h.meta.tiled
            values = read_window(h, 1, PixelWindow(0, 0, 192, 192)).values
            assert np.array_equal(values, mosaics[TILE.tile_id].classes)

    def test_hundred_pixels_point_09_km2(self):
        # unit arithmetic: 100 pixels at 30 m -> 0.09 km^2
        assert 100 * (30.0 * 30.0) / 1e6 == pytest.approx(0.09)


class TestStageSerialization:
    def test_chips_round_trip(self, fixture_dir, tmp_path):
        bbox = _bbox_for_pixels(40, 40, 150, 150)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        save_region_chips(chips, grids, tmp_path / "stage1")
        loaded, loaded_grids = load_region_chips(tmp_path / "stage1")
        assert len(loaded) == len(chips)
        assert loaded_grids[TILE.tile_id].geotransform == grids[TILE.tile_id].geotransform
        for a, b in zip(chips, loaded):
            assert (a.tile_id, a.chip_ix, a.chip_iy) == (b.tile_id, b.chip_ix, b.chip_iy)
            assert np.array_equal(a.values[a.valid], b.values[b.valid])
            assert np.array_equal(a.valid, b.valid)

    def test_mosaics_round_trip(self, fixture_dir, tmp_path):
        bbox = _bbox_for_pixels(70, 70, 90, 90)
        chips, grids = chips_for_region(bbox, REQUEST_DATE, SPEC,
                                        CatalogSource.local(fixture_dir))
        mosaics = predict_region(chips, _constant_class_model(1), grids)
        save_mosaics(mosaics, tmp_path / "stage2")
        loaded = load_mosaics(tmp_path / "stage2")
        assert set(loaded) == set(mosaics)
        for tile_id in mosaics:
            assert np.array_equal(loaded[tile_id].classes, mosaics[tile_id].classes)


class TestRunInference:
    def test_end_to_end(self, fixture_dir, tmp_path):
        bbox = _bbox_for_pixels(40, 40, 150, 150)
        out = run_inference(bbox, REQUEST_DATE, SPEC, CatalogSource.local(fixture_dir),
                            _constant_class_model(1), tmp_path / "out")
        assert (tmp_path / "out" / "summary.json").is_file()
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary == out["summary"]
        assert summary["classes"]["1"]["pixels"] == 192 * 192
