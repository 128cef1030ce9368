"""Scikit-learn style wrappers around the pipeline.

``LearnedAugmenter`` is a fit/transform data augmenter: ``fit`` learns the
encoder priors against the manual transforms (Stage I), ``transform`` draws
a fresh sub-policy selection per call and returns augmented images.
``DistilledClassifier`` is a fit/predict classifier that runs the whole
teacher-pretraining / encoder-fitting / alternating-distillation pipeline
on plain arrays.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import CLASSIFICATION, encode, select_subpolicies
from .datasets import DataSplits
from .encoders import MetaEncoderSet
from .models import ModelSpec, build_model, evaluate_accuracy, pretrain_teacher
from .sampling import AugmentParams, sample_params
from .trainer import TrainConfig, TrainingLoop, stage1_fit_encoders
from .validation import as_image_batch, as_label_vector


class LearnedAugmenter(TransformerMixin, BaseEstimator):
    """Differentiable data augmenter with learned priors.

    fit(X) trains one neural encoder per learnable sub-policy to imitate its
    manual counterpart on the given images, then freezes them. transform(X)
    applies the combined augmentation with neutral (sigmoid(0) = 0.5) or
    caller-set raw parameters, drawing a fresh sub-policy selection per call.
    """

    def __init__(
        self,
        n_select: int = 4,
        fit_iters: int = 600,
        fit_lr: float = 5e-3,
        batch_size: int = 64,
        sample_temperature: float = 0.05,
        diversity_noise: bool = False,
        mode: str = CLASSIFICATION,
        random_state: int = 0,
    ):
        self.n_select = n_select
        self.fit_iters = fit_iters
        self.fit_lr = fit_lr
        self.batch_size = batch_size
        self.sample_temperature = sample_temperature
        self.diversity_noise = diversity_noise
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        x = as_image_batch(X)
        cfg = TrainConfig(
            n_select=self.n_select,
            fit_iters=self.fit_iters,
            fit_lr=self.fit_lr,
            fit_batch_size=self.batch_size,
            seed=self.random_state,
            mode=self.mode,
        )
        dummy = torch.zeros(x.shape[0], dtype=torch.int64)
        data = DataSplits(x, dummy, x[: min(256, x.shape[0])],
                          dummy[: min(256, x.shape[0])], 1, "arrays")
        self.encoders_ = MetaEncoderSet(channels=x.shape[1], seed=self.random_state)
        self.fit_report_ = stage1_fit_encoders(data, self.encoders_, cfg)
        self.params_ = AugmentParams.create(requires_grad=False)
        self._rng = torch.Generator().manual_seed(self.random_state + 1)
        return self

    def transform(self, X):
        if not hasattr(self, "encoders_"):
            raise NotFittedError("this LearnedAugmenter is not fitted yet")
        x = as_image_batch(X)
        cfg_mode = self.mode
        with torch.no_grad():
            selection = select_subpolicies(self.n_select, self._rng, mode=cfg_mode)
            sampled = sample_params(self.params_, self.sample_temperature, rng=self._rng)
            out = encode(
                x, sampled, selection, self.encoders_,
                rng=self._rng, diversity=self.diversity_noise,
                temperature=self.sample_temperature,
            )
        return out.numpy()

    def _more_tags(self):
        return {"non_deterministic": True}


class DistilledClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained by teacher-student distillation with learned
    augmentation search.

    fit(X, y) pretrains a teacher on the data (unless one is passed in),
    fits the augmentation encoders, and then alternates the augmentation
    search with distillation epochs. predict/predict_proba run the student.
    """

    def __init__(
        self,
        epochs: int = 8,
        batch_size: int = 128,
        n_select: int = 4,
        search_iters: int = 20,
        fit_iters: int = 600,
        teacher_epochs: int = 20,
        student_lr: float = 0.05,
        teacher=None,
        random_state: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_select = n_select
        self.search_iters = search_iters
        self.fit_iters = fit_iters
        self.teacher_epochs = teacher_epochs
        self.student_lr = student_lr
        self.teacher = teacher
        self.random_state = random_state

    def fit(self, X, y):
        x = as_image_batch(X)
        labels = as_label_vector(y, x.shape[0])
        self.classes_, encoded = np.unique(np.asarray(labels), return_inverse=True)
        labels = torch.as_tensor(encoded, dtype=torch.int64)
        n_classes = len(self.classes_)
        if n_classes < 2:
            raise ValueError("need at least two classes")
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            n_select=self.n_select,
            search_iters=self.search_iters,
            fit_iters=self.fit_iters,
            student_lr=self.student_lr,
            seed=self.random_state,
        )
        # Hold out a slice so teacher pretraining has an accuracy readout.
        n_hold = max(1, x.shape[0] // 10)
        data = DataSplits(x, labels, x[:n_hold], labels[:n_hold], n_classes, "arrays")
        in_shape = tuple(x.shape[1:])
        if self.teacher is None:
            spec = ModelSpec("mid-cnn", depth=3, n_classes=n_classes, in_shape=in_shape)
            teacher, _ = pretrain_teacher(
                spec, x, labels, data.test_x, data.test_y,
                epochs=self.teacher_epochs, seed=self.random_state,
                batch_size=self.batch_size, min_accuracy=0.0,
            )
        else:
            teacher = self.teacher
            teacher.eval()
        self.encoders_ = MetaEncoderSet(channels=x.shape[1], seed=self.random_state)
        self.fit_report_ = stage1_fit_encoders(data, self.encoders_, cfg)
        student = build_model(
            ModelSpec("tiny-cnn", n_classes=n_classes, in_shape=in_shape),
            seed=self.random_state + 1,
        )
        loop = TrainingLoop(cfg, data, teacher, student, self.encoders_)
        self.record_ = loop.run()
        self.teacher_ = teacher
        self.student_ = student
        self.student_.eval()
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "student_"):
            raise NotFittedError("this DistilledClassifier is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        x = as_image_batch(X)
        with torch.no_grad():
            logits = self.student_(x)
            return torch.softmax(logits, dim=1).numpy()

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y):
        x = as_image_batch(X)
        labels = as_label_vector(y, x.shape[0])
        pred = self.predict(x)
        return float((pred == np.asarray(labels)).mean())
