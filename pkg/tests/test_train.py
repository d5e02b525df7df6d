import numpy as np
import pytest

from geochip.errors import DataError
from geochip.model import (
    DistillConfig,
    ModelConfig,
    TrainConfig,
    VitSegmentation,
    distill_student,
    evaluate_model,
    train_vanilla,
)
from geochip.model.data import Dataset
from geochip.model.distill import make_student
from geochip.model.synthetic import synthetic_dataset

SMALL = ModelConfig(timesteps=1, in_bands=3, image_size=32, patch_size=8,
                    embed_dim=32, num_layers=4, num_heads=4, num_classes=2,
                    dropout=0.05)


class TestTrainVanilla:
    def test_learns_synthetic_task(self):
        train_ds = synthetic_dataset(48, seed=0, label_fraction=0.12)
        val_ds = synthetic_dataset(16, seed=1000)
        model, history = train_vanilla(
            SMALL, train_ds, TrainConfig(epochs=30, lr=1e-3, batch_size=8, seed=0))
        report = evaluate_model(model, val_ds)
        assert report.macc >= 0.95
        assert len(history) == 30
        assert history[-1]["train_loss"] < history[0]["train_loss"]

    def test_zero_lr_keeps_weights(self):
        train_ds = synthetic_dataset(8, seed=2)
        init = VitSegmentation(SMALL, seed=7)
        before = init.checksum()
        model, _ = train_vanilla(SMALL, train_ds,
                                 TrainConfig(epochs=2, lr=0.0, batch_size=4, seed=0),
                                 init=init)
        assert model.checksum() == before

    def test_seed_determinism(self):
        train_ds = synthetic_dataset(16, seed=3)
        tcfg = TrainConfig(epochs=3, lr=1e-3, batch_size=4, seed=11)
        m1, h1 = train_vanilla(SMALL, train_ds, tcfg)
        m2, h2 = train_vanilla(SMALL, train_ds, tcfg)
        assert m1.checksum() == m2.checksum()
        assert h1 == h2

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 1, 3, 32, 32), dtype=np.float32),
                        np.zeros((0, 32, 32), dtype=np.uint8))
        with pytest.raises(DataError, match="empty"):
            train_vanilla(SMALL, empty, TrainConfig(epochs=1))

    def test_shape_mismatch(self):
        ds = synthetic_dataset(4, seed=4, bands=2)
        with pytest.raises(DataError, match="match model config"):
            train_vanilla(SMALL, ds, TrainConfig(epochs=1))


class TestDistill:
    def _teacher(self, seed=0, epochs=6):
        train_ds = synthetic_dataset(24, seed=seed, label_fraction=0.2)
        teacher, _ = train_vanilla(
            SMALL, train_ds, TrainConfig(epochs=epochs, lr=1e-3, batch_size=8, seed=seed))
        return teacher, train_ds

    def test_full_depth_zero_steps_reproduces_teacher(self):
        teacher, train_ds = self._teacher(epochs=2)
        dcfg = DistillConfig(student_layers=SMALL.num_layers,
                             train=TrainConfig(epochs=0, seed=0))
        student, _ = distill_student(teacher, dcfg, train_ds)
        x = synthetic_dataset(4, seed=9).chips
        assert np.array_equal(student.forward(x).data, teacher.forward(x).data)

    def test_teacher_frozen(self):
        teacher, train_ds = self._teacher(epochs=2)
        before = teacher.checksum()
        dcfg = DistillConfig(student_layers=2,
                             train=TrainConfig(epochs=2, lr=1e-3, batch_size=8, seed=0))
        distill_student(teacher, dcfg, train_ds)
        assert teacher.checksum() == before

    def test_invalid_student_layers(self):
        teacher, _ = self._teacher(epochs=1)
        with pytest.raises(DataError, match="student_layers"):
            make_student(teacher, 3)  # odd
        with pytest.raises(DataError, match="student_layers"):
            make_student(teacher, 6)  # deeper than teacher

    def test_student_shares_teacher_prefix(self):
        teacher, _ = self._teacher(epochs=1)
        student = make_student(teacher, 2)
        t_state = teacher.state_dict()
        for name, arr in student.state_dict().items():
            assert name in t_state
            assert np.array_equal(arr, t_state[name]), name

    def test_distillation_beats_or_matches_baseline_single_seed(self):
        teacher, train_ds = self._teacher(seed=0, epochs=30)
        val_ds = synthetic_dataset(16, seed=1000)
        base_train = TrainConfig(epochs=20, lr=1e-3, batch_size=8, seed=0)
        distilled, _ = distill_student(
            teacher, DistillConfig(student_layers=2, alpha=1.0, train=base_train),
            train_ds)
        baseline, _ = distill_student(
            teacher, DistillConfig(student_layers=2, alpha=0.0, train=base_train),
            train_ds)
        acc_d = evaluate_model(distilled, val_ds).macc
        acc_b = evaluate_model(baseline, val_ds).macc
        # single-seed smoke check; the 5-seed mean criterion lives in acceptance
        assert acc_d >= acc_b - 0.01

    def test_alpha_zero_matches_pure_task_gradients(self):
        # one step with alpha=0 equals one step of plain fine-tuning on the student
        teacher, train_ds = self._teacher(epochs=1)
        tcfg = TrainConfig(epochs=1, lr=1e-3, batch_size=8, seed=5)
        s1, _ = distill_student(teacher, DistillConfig(student_layers=2, alpha=0.0,
                                                       train=tcfg), train_ds)
        init = make_student(teacher, 2, seed=tcfg.seed)
        s2, _ = train_vanilla(
            ModelConfig(**{**SMALL.__dict__, "num_layers": 2}), train_ds, tcfg, init=init)
        assert s1.checksum() == s2.checksum()
