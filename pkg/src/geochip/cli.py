"""Command-line entry point tying the pipeline together.

Exit codes: 0 success, 2 usage error, 3 data error, 4 network error,
5 internal error.
"""

from __future__ import annotations

import csv
import json
import sys
from datetime import date as Date
from pathlib import Path

import click
import numpy as np

from geochip.errors import DataError, DomainError, GeochipError, NetworkError, NoImageryError

EXIT_DATA = 3
EXIT_NETWORK = 4
EXIT_INTERNAL = 5


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run(fn):
    """Map exception taxonomy onto exit codes around a command body."""
    try:
        fn()
    except NetworkError as exc:
        _fail(EXIT_NETWORK, str(exc))
    except (DataError, DomainError, NoImageryError) as exc:
        _fail(EXIT_DATA, str(exc))
    except GeochipError as exc:
        _fail(EXIT_INTERNAL, str(exc))


def _catalog_source(catalog_dir, catalog_url):
    from geochip.catalog import CatalogSource
    if (catalog_dir is None) == (catalog_url is None):
        raise click.UsageError("exactly one of --catalog-dir / --catalog-url required")
    if catalog_dir:
        return CatalogSource.local(catalog_dir)
    return CatalogSource.remote(catalog_url)


def _chip_spec(**kw):
    from geochip.chips import ChipSpec
    bands = kw.pop("bands")
    if isinstance(bands, str):
        bands = tuple(b.strip() for b in bands.split(",") if b.strip())
    return ChipSpec(bands=bands, **kw)


@click.group()
def main():
    """Geospatial chips, compact segmentation models, and a map service."""


# ---------------------------------------------------------------- chip-create

@main.command("chip-create")
@click.option("--observations", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path())
@click.option("--catalog-dir", type=click.Path(exists=True))
@click.option("--catalog-url")
@click.option("--timesteps", default=3, show_default=True)
@click.option("--step-days", default=30, show_default=True)
@click.option("--tolerance-days", default=5, show_default=True)
@click.option("--chip-size", default=256, show_default=True)
@click.option("--cloud-threshold", default=50.0, show_default=True)
@click.option("--bands", default="B02,B03,B04,B8A,B11,B12", show_default=True)
@click.option("--mask-band", default="Fmask", show_default=True)
@click.option("--num-classes", default=2, show_default=True)
@click.option("--daytime-only", is_flag=True)
@click.option("--jobs", default=4, show_default=True)
def chip_create(observations, output, catalog_dir, catalog_url, timesteps, step_days,
                tolerance_days, chip_size, cloud_threshold, bands, mask_band,
                num_classes, daytime_only, jobs):
    """Convert observations into chip/label GeoTIFF pairs plus a manifest."""
    def body():
        from geochip.chips import run_pipeline
        spec = _chip_spec(timesteps=timesteps, step_days=step_days,
                          tolerance_days=tolerance_days, chip_size=chip_size,
                          cloud_threshold=cloud_threshold, bands=bands,
                          mask_band=mask_band, num_classes=num_classes,
                          daytime_only=daytime_only)
        src = _catalog_source(catalog_dir, catalog_url)
        report = run_pipeline(observations, spec, src, output, jobs=jobs)
        click.echo(json.dumps(report.to_dict(), indent=2))
    _run(body)


# ---------------------------------------------------------------------- train

@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--val-manifest", type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="model architecture JSON")
@click.option("--epochs", default=30, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train(manifest, val_manifest, config_path, epochs, lr, batch_size, seed, out):
    """Fine-tune every weight of the model on a chip manifest."""
    def body():
        from geochip.model import ModelConfig, TrainConfig, save_checkpoint, train_vanilla
        from geochip.model.data import load_dataset
        cfg = ModelConfig(**json.loads(Path(config_path).read_text()))
        train_ds = load_dataset(manifest)
        val_ds = load_dataset(val_manifest) if val_manifest else None
        tcfg = TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
        model, history = train_vanilla(cfg, train_ds, tcfg, val_ds=val_ds)
        save_checkpoint(out, model)
        click.echo(json.dumps({"checkpoint": str(out), "history": history[-3:]}))
    _run(body)


# -------------------------------------------------------------------- distill

@main.command()
@click.option("--teacher", required=True, type=click.Path(exists=True))
@click.option("--student-layers", required=True, type=int)
@click.option("--temperature", default=2.0, show_default=True)
@click.option("--alpha", default=1.0, show_default=True)
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--val-manifest", type=click.Path(exists=True))
@click.option("--epochs", default=20, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--batch-size", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def distill(teacher, student_layers, temperature, alpha, manifest, val_manifest,
            epochs, lr, batch_size, seed, out):
    """Distill a shallower student from a frozen fine-tuned teacher."""
    def body():
        from geochip.model import (DistillConfig, TrainConfig, distill_student,
                                   load_checkpoint, save_checkpoint)
        from geochip.model.data import load_dataset
        teacher_model = load_checkpoint(teacher)
        dcfg = DistillConfig(
            student_layers=student_layers, temperature=temperature, alpha=alpha,
            train=TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed))
        train_ds = load_dataset(manifest)
        val_ds = load_dataset(val_manifest) if val_manifest else None
        student, history = distill_student(teacher_model, dcfg, train_ds, val_ds=val_ds)
        save_checkpoint(out, student)
        click.echo(json.dumps({"checkpoint": str(out), "history": history[-3:]}))
    _run(body)


# ------------------------------------------------------------------- evaluate

@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
def evaluate(checkpoint, manifest, report_path):
    """Compute segmentation metrics for a checkpoint over a manifest."""
    def body():
        from geochip.model import evaluate_model, load_checkpoint
        from geochip.model.data import load_dataset
        model = load_checkpoint(checkpoint)
        ds = load_dataset(manifest)
        metrics = evaluate_model(model, ds)
        Path(report_path).write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
        click.echo(json.dumps(metrics.to_dict()))
    _run(body)


# ---------------------------------------------------------------------- infer

@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--bbox", required=True, help="west,south,east,north degrees")
@click.option("--date", "date_text", required=True)
@click.option("--catalog-dir", type=click.Path(exists=True))
@click.option("--catalog-url")
@click.option("--cloud-threshold", default=50.0, show_default=True)
@click.option("--step-days", default=30, show_default=True)
@click.option("--tolerance-days", default=5, show_default=True)
@click.option("--bands", default="B02,B03,B04,B8A,B11,B12", show_default=True)
@click.option("--out", required=True, type=click.Path())
def infer(checkpoint, bbox, date_text, catalog_dir, catalog_url, cloud_threshold,
          step_days, tolerance_days, bands, out):
    """Predict over an AOI and write COGs plus a class-area summary."""
    def body():
        from geochip.geo import GeoBBox
        from geochip.infer import run_inference
        from geochip.model import load_checkpoint
        model = load_checkpoint(checkpoint)
        parts = [float(v) for v in bbox.split(",")]
        box = GeoBBox.from_list(parts)
        spec = _chip_spec(timesteps=model.cfg.timesteps, step_days=step_days,
                          tolerance_days=tolerance_days,
                          chip_size=model.cfg.image_size,
                          cloud_threshold=cloud_threshold, bands=bands,
                          mask_band="Fmask", num_classes=model.cfg.num_classes,
                          daytime_only=False)
        src = _catalog_source(catalog_dir, catalog_url)
        result = run_inference(box, Date.fromisoformat(date_text), spec, src, model, out)
        click.echo(json.dumps(result["summary"]))
    _run(body)


# -------------------------------------------------------------------- fixture

@main.group()
def fixture():
    """Synthetic fixture catalogs for offline runs."""


@fixture.command("generate")
@click.option("--seed", default=42, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--granules", default=3, show_default=True,
              help="number of acquisition dates")
@click.option("--start-date", default="2022-04-16", show_default=True)
@click.option("--step-days", default=30, show_default=True)
@click.option("--cloud-fraction", default=0.0, show_default=True)
@click.option("--tile-size", default=512, show_default=True)
def fixture_generate(seed, out, granules, start_date, step_days, cloud_fraction,
                     tile_size):
    """Write a deterministic local STAC catalog with synthetic assets."""
    def body():
        from datetime import timedelta
        from geochip.catalog import FixtureLayout, FixtureTileSpec, generate_fixture
        first = Date.fromisoformat(start_date)
        dates = tuple((first + timedelta(days=step_days * i)).isoformat()
                      for i in range(granules))
        layout = FixtureLayout(dates=dates,
                               tiles=(FixtureTileSpec(size_px=tile_size),),
                               cloud_fractions=(cloud_fraction,))
        root = generate_fixture(seed, out, layout)
        click.echo(json.dumps({"catalog": str(root), "dates": list(dates)}))
    _run(body)


# ---------------------------------------------------------------------- split

@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--ratios", default="0.7,0.1,0.2", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", type=click.Path(), default=None,
              help="defaults to the manifest's directory")
def split(manifest, ratios, seed, out_dir):
    """Seeded random split of a manifest into train/val/test manifests."""
    def body():
        from geochip.model.data import read_manifest
        parts = [float(v) for v in ratios.split(",")]
        if len(parts) != 3 or abs(sum(parts) - 1.0) > 1e-9:
            raise DataError(f"ratios must be three values summing to 1, got {ratios}")
        rows = read_manifest(manifest)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(rows))
        n_train = int(round(parts[0] * len(rows)))
        n_val = int(round(parts[1] * len(rows)))
        buckets = {
            "train": [rows[i] for i in order[:n_train]],
            "val": [rows[i] for i in order[n_train:n_train + n_val]],
            "test": [rows[i] for i in order[n_train + n_val:]],
        }
        base = Path(out_dir) if out_dir else Path(manifest).parent
        base.mkdir(parents=True, exist_ok=True)
        counts = {}
        for name, subset in buckets.items():
            path = base / f"manifest_{name}.csv"
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["chip", "label"])
                for row in sorted(subset):
                    writer.writerow(row)
            counts[name] = len(subset)
        click.echo(json.dumps(counts))
    _run(body)


# ---------------------------------------------------------------------- serve

@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--catalog-dir", type=click.Path(exists=True))
@click.option("--catalog-url")
@click.option("--models", "registry_path", required=True, type=click.Path(exists=True))
@click.option("--workers", default=1, show_default=True)
@click.option("--max-area-km2", default=50000.0, show_default=True)
def serve(port, host, data_dir, catalog_dir, catalog_url, registry_path, workers,
          max_area_km2):
    """Run the task-queue REST service."""
    def body():
        import uvicorn
        from geochip.service import ServiceConfig, create_app
        config = ServiceConfig(
            data_dir=data_dir,
            catalog=_catalog_source(catalog_dir, catalog_url),
            registry_path=registry_path,
            workers_per_stage=workers,
            max_area_km2=max_area_km2,
        )
        uvicorn.run(create_app(config), host=host, port=port)
    _run(body)


if __name__ == "__main__":
    main()
