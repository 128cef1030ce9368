import pytest
import torch

from augdistill.datasets import provide_dataset
from augdistill.encoders import MetaEncoderSet
from augdistill.models import ModelSpec, build_model, pretrain_teacher
from augdistill.trainer import TrainConfig, TrainingLoop, stage1_fit_encoders


@pytest.fixture(scope="session")
def toy_small():
    return provide_dataset("toy-synthetic", train_size=600, test_size=150, seed=0)


@pytest.fixture(scope="session")
def fitted_encoders(toy_small):
    """Encoder set fitted well enough for the unit-level fidelity checks.

    The full-length fit (2000 iterations, full-size data) runs once in the
    acceptance suite; 700 iterations already lands every policy under the
    5e-3 bound on this data.
    """
    encoders = MetaEncoderSet(channels=3, seed=0)
    cfg = TrainConfig(fit_iters=700, fit_batch_size=64, seed=0)
    report = stage1_fit_encoders(toy_small, encoders, cfg)
    assert report.all_ok, [(r.policy, r.mse) for r in report.failures]
    return encoders


@pytest.fixture(scope="session")
def teacher_small(toy_small):
    spec = ModelSpec("mid-cnn", depth=3, n_classes=10)
    teacher, acc = pretrain_teacher(
        spec,
        toy_small.train_x,
        toy_small.train_y,
        toy_small.test_x,
        toy_small.test_y,
        epochs=12,
        seed=0,
        min_accuracy=0.8,
    )
    return teacher


@pytest.fixture(scope="session")
def student_warm(toy_small, teacher_small, fitted_encoders):
    """A briefly distilled student: confident enough for the search loss to
    have signal, far from perfect."""
    cfg = TrainConfig(
        epochs=2, batch_size=128, search_epochs=(), fit_iters=0, seed=3,
        augment_batch=False,
    )
    student = build_model(ModelSpec("tiny-cnn", n_classes=10), seed=7)
    loop = TrainingLoop(cfg, toy_small, teacher_small, student, fitted_encoders)
    loop.run()
    return student


@pytest.fixture()
def rng():
    return torch.Generator().manual_seed(1234)
