"""Task-specific distillation: truncate the teacher, train against its logits.

The student shares the teacher's patch embedding, its first N encoder layers
and a copy of the head; training minimizes ce_loss + alpha * KL(teacher ||
student) at temperature tau. The teacher stays frozen (bit-identical before
and after).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from geochip.errors import DataError
from geochip.model import nn
from geochip.model.data import Dataset
from geochip.model.losses import ce_loss, kl_distill_loss
from geochip.model.tensor import Tensor
from geochip.model.train import AdamW, TrainConfig, _batches, _cosine_lr, evaluate_model
from geochip.model.vit import VitSegmentation


@dataclass
class DistillConfig:
    student_layers: int
    temperature: float = 2.0
    alpha: float = 1.0
    train: TrainConfig = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.train is None:
            self.train = TrainConfig()
        if self.temperature <= 0:
            raise DataError("temperature must be > 0")
        if self.alpha < 0:
            raise DataError("alpha must be >= 0")


def _check_student_layers(n: int, teacher_layers: int):
    if n < 2 or n % 2 != 0 or n > teacher_layers:
        raise DataError(
            f"student_layers must be even, >= 2 and <= teacher depth "
            f"{teacher_layers}; got {n}")


def make_student(teacher: VitSegmentation, n_layers: int,
                 seed: int = 0) -> VitSegmentation:
    """Fresh model with the teacher's embed, first N layers, and head."""
    _check_student_layers(n_layers, teacher.cfg.num_layers)
    student_cfg = replace(teacher.cfg, num_layers=n_layers)
    student = VitSegmentation(student_cfg, seed=seed)
    student.copy_weights_from(teacher)
    return student


def distill_student(teacher: VitSegmentation, dcfg: DistillConfig,
                    train_ds: Dataset,
                    val_ds: Dataset | None = None) -> tuple[VitSegmentation, list[dict]]:
    if len(train_ds) == 0:
        raise DataError("empty training dataset")
    tcfg = dcfg.train
    student = make_student(teacher, dcfg.student_layers, seed=tcfg.seed)

    teacher_before = teacher.checksum()
    params = list(student.named_params())
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
            x = train_ds.chips[idx]
            y = train_ds.labels[idx]
            teacher_logits = teacher.forward(x).data  # frozen, eval mode
            ctx = nn.Context(train=True, rng=drop_rng)
            student_logits = student.forward(Tensor(x), ctx)
            loss = ce_loss(student_logits, y)
            if dcfg.alpha > 0:
                # distill over every pixel: the teacher supervises densely
                # even where hard labels are sparse
                loss = loss + dcfg.alpha * kl_distill_loss(
                    student_logits, teacher_logits, dcfg.temperature)
            opt.zero_grad()
            loss.backward()
            lr = _cosine_lr(tcfg.lr, step, total_steps) if tcfg.cosine_decay else tcfg.lr
            opt.step(lr)
            epoch_loss += loss.item()
            n_batches += 1
            step += 1
        record = {"epoch": epoch, "train_loss": epoch_loss / n_batches}
        if val_ds is not None:
            report = evaluate_model(student, val_ds)
            record["val_miou"] = report.miou
            record["val_acc"] = report.macc
        history.append(record)

    if teacher.checksum() != teacher_before:
        raise RuntimeError("teacher weights changed during distillation")
    return student, history
