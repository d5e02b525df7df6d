"""Vanilla fine-tuning: AdamW with cosine decay, deterministic given a seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geochip.errors import DataError
from geochip.model import nn
from geochip.model.data import Dataset
from geochip.model.losses import ce_loss
from geochip.model.metrics import (
    ConfusionMatrix,
    MetricsReport,
    confusion_matrix,
    metrics_from_confusion,
    roc_auc,
)
from geochip.model.tensor import Parameter, Tensor
from geochip.model.vit import ModelConfig, VitSegmentation


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    weight_decay: float = 0.01
    cosine_decay: bool = True


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[tuple[str, Parameter]], lr: float,
                 weight_decay: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params}
        self.v = {name: np.zeros_like(p.data) for name, p in params}

    def zero_grad(self):
        for _name, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new = p.data - lr * update - lr * self.weight_decay * p.data
            p.data = new.astype(p.data.dtype, copy=False)


def _cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 1:
        return base
    # float() keeps the lr a weak python scalar so float32 weights stay float32
    return float(base * 0.5 * (1.0 + np.cos(np.pi * step / (total - 1))))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_vanilla(cfg: ModelConfig, train_ds: Dataset, tcfg: TrainConfig,
                  init: VitSegmentation | None = None,
                  val_ds: Dataset | None = None) -> tuple[VitSegmentation, list[dict]]:
    """Update every encoder and head weight on the task loss."""
    if len(train_ds) == 0:
        raise DataError("empty training dataset")
    _check_shapes(cfg, train_ds)

    model = init if init is not None else VitSegmentation(cfg, seed=tcfg.seed)
    params = list(model.named_params())
    opt = AdamW(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    rng = np.random.default_rng([tcfg.seed, 0xBEEF])
    drop_rng = np.random.default_rng([tcfg.seed, 0xD0])

    steps_per_epoch = max(1, -(-len(train_ds) // tcfg.batch_size))
    total_steps = tcfg.epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(tcfg.epochs):
        epoch_loss = 0.0
        n_batches = 0
        for idx in _batches(len(train_ds), tcfg.batch_size, rng):
            x = Tensor(train_ds.chips[idx])
            y = train_ds.labels[idx]
            ctx = nn.Context(train=True, rng=drop_rng)
            logits = model.forward(x, ctx)
            loss = ce_loss(logits, y)
            opt.zero_grad()
            loss.backward()
            lr = _cosine_lr(tcfg.lr, step, total_steps) if tcfg.cosine_decay else tcfg.lr
            opt.step(lr)
            epoch_loss += loss.item()
            n_batches += 1
            step += 1
        record = {"epoch": epoch, "train_loss": epoch_loss / n_batches}
        if val_ds is not None:
            report = evaluate_model(model, val_ds)
            record["val_miou"] = report.miou
            record["val_acc"] = report.macc
        history.append(record)
    return model, history


def evaluate_model(model: VitSegmentation, ds: Dataset,
                   batch_size: int = 8) -> MetricsReport:
    """Eval-mode metrics over a dataset; ROC-AUC is macro one-vs-rest."""
    k = model.cfg.num_classes
    cm_total = np.zeros((k, k), dtype=np.int64)
    all_probs = []
    all_refs = []
    for start in range(0, len(ds), batch_size):
        x = ds.chips[start:start + batch_size]
        y = ds.labels[start:start + batch_size]
        probs = model.predict_probs(x)
        pred = np.argmax(probs, axis=1).astype(np.uint8)
        cm_total += confusion_matrix(pred, y, k).counts
        all_probs.append(probs)
        all_refs.append(y)

    report = metrics_from_confusion(ConfusionMatrix(cm_total))
    probs = np.concatenate(all_probs)
    refs = np.concatenate(all_refs)
    try:
        if k == 2:
            report.roc_auc = roc_auc(probs[:, 1], refs)
        else:
            report.roc_auc = roc_auc(np.moveaxis(probs, 1, 0), refs)
    except DataError:
        report.roc_auc = None
    return report


def _check_shapes(cfg: ModelConfig, ds: Dataset):
    want = (cfg.timesteps, cfg.in_bands, cfg.image_size, cfg.image_size)
    got = ds.chips.shape[1:]
    if got != want:
        raise DataError(f"dataset chips {got} do not match model config {want}")
    labeled = ds.labels[ds.labels != 255]
    if labeled.size and int(labeled.max()) >= cfg.num_classes:
        raise DataError("dataset labels exceed num_classes")
