"""Model registry: checkpoints with display metadata and class legends."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from geochip.errors import DataError
from geochip.model import VitSegmentation, load_checkpoint

_HEX_COLOR = re.compile(r"^#[0-9a-fA-F]{6}$")


@dataclass
class LegendEntry:
    name: str
    color: str  # #rrggbb

    def rgb(self) -> tuple[int, int, int]:
        return (int(self.color[1:3], 16), int(self.color[3:5], 16),
                int(self.color[5:7], 16))


@dataclass
class ModelEntry:
    model_id: str
    checkpoint: str
    display_name: str
    legend: dict[int, LegendEntry]
    bands: tuple[str, ...] = field(default=())


class ModelRegistry:
    """Loads and self-validates every checkpoint at registration time."""

    def __init__(self):
        self.entries: dict[str, ModelEntry] = {}
        self._models: dict[str, VitSegmentation] = {}

    @classmethod
    def load(cls, registry_path) -> "ModelRegistry":
        path = Path(registry_path)
        if not path.is_file():
            raise DataError(f"model registry {path} does not exist")
        docs = json.loads(path.read_text())
        if not isinstance(docs, list):
            raise DataError("model registry must be a JSON array")
        registry = cls()
        for doc in docs:
            registry.register(doc, base_dir=path.parent)
        return registry

    def register(self, doc: dict, base_dir: Path | None = None):
        model_id = doc.get("model_id")
        if not model_id:
            raise DataError("registry entry missing model_id")
        ckpt = Path(doc.get("checkpoint", ""))
        if base_dir is not None and not ckpt.is_absolute():
            ckpt = base_dir / ckpt
        model = load_checkpoint(ckpt)  # raises if the file is unusable

        legend = {}
        for key, item in (doc.get("legend") or {}).items():
            color = item.get("color", "")
            if not _HEX_COLOR.match(color):
                raise DataError(f"model {model_id}: legend color {color!r} is not #rrggbb")
            legend[int(key)] = LegendEntry(name=item.get("name", str(key)), color=color)
        for k in range(model.cfg.num_classes):
            if k not in legend:
                raise DataError(f"model {model_id}: legend missing class {k}")

        entry = ModelEntry(
            model_id=model_id,
            checkpoint=str(ckpt),
            display_name=doc.get("display_name", model_id),
            legend=legend,
            bands=tuple(doc.get("bands") or ()),
        )
        self.entries[model_id] = entry
        self._models[model_id] = model

    def get(self, model_id: str) -> tuple[ModelEntry, VitSegmentation]:
        if model_id not in self.entries:
            raise DataError(f"unknown model {model_id}")
        return self.entries[model_id], self._models[model_id]

    def public_list(self) -> list[dict]:
        out = []
        for model_id in sorted(self.entries):
            e = self.entries[model_id]
            out.append({
                "model_id": e.model_id,
                "display_name": e.display_name,
                "legend": {str(k): {"name": v.name, "color": v.color}
                           for k, v in sorted(e.legend.items())},
            })
        return out
