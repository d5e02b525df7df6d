"""Segmentation model stack: tensor engine, transformer, training, distillation, metrics."""

from geochip.model.tensor import Parameter, Tensor
from geochip.model.vit import ModelConfig, VitSegmentation, count_params
from geochip.model.flops import estimate_flops
from geochip.model.losses import ce_loss, kl_distill_loss
from geochip.model.metrics import ConfusionMatrix, MetricsReport, confusion_and_metrics, roc_auc
from geochip.model.checkpoint import load_checkpoint, save_checkpoint
from geochip.model.train import TrainConfig, train_vanilla, evaluate_model
from geochip.model.distill import DistillConfig, distill_student

__all__ = [
    "Parameter",
    "Tensor",
    "ModelConfig",
    "VitSegmentation",
    "count_params",
    "estimate_flops",
    "ce_loss",
    "kl_distill_loss",
    "ConfusionMatrix",
    "MetricsReport",
    "confusion_and_metrics",
    "roc_auc",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "train_vanilla",
    "evaluate_model",
    "DistillConfig",
    "distill_student",
]
