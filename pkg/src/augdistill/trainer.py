"""The three-stage training loop.

Stage I fits each learnable sub-policy's neural encoder against its manual
counterpart and freezes the result. The main loop then alternates: at the
scheduled epochs, Stage II updates the raw augmentation magnitudes and
probabilities to produce samples the (frozen) teacher classifies correctly
but the (frozen) student does not; every epoch, Stage III trains the student
with the distillation loss on batches made of the originals concatenated
with their augmented versions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .augment import CLASSIFICATION, MODES, encode, select_subpolicies
from .datasets import DataSplits
from .encoders import MetaEncoderSet
from .exceptions import ConfigError, TrainingDiverged
from .losses import LossWeights, encoder_fit_loss, kd_loss_components, tst_search_loss
from .policies import N_POLICIES, POLICIES, apply_manual
from .record import EpochRecord, RunRecord, f32
from .sampling import AugmentParams, sample_params
from .models import evaluate_accuracy


def default_search_epochs(epochs: int) -> tuple[int, ...]:
    """Scheduled Stage-II epochs: 1/8 and 3/8 of the run, scaled from the
    reference schedule (epochs 30 and 90 of 240)."""
    points = {max(1, math.ceil(epochs / 8)), max(1, math.ceil(3 * epochs / 8))}
    return tuple(sorted(p for p in points if p <= epochs))


@dataclass
class TrainConfig:
    """Hyperparameters of the full training procedure."""

    ce_weight: float = 1.0
    kl_weight: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    kd_temperature: float = 4.0
    sample_temperature: float = 0.05
    n_select: int = 4
    epochs: int = 16
    batch_size: int = 128
    search_epochs: tuple[int, ...] | None = None
    fit_iters: int = 2000
    fit_lr: float = 5e-3
    fit_batch_size: int = 64
    fit_mse_bound: float = 5e-3
    search_iters: int = 40
    student_iters: int | None = None
    student_lr: float = 0.05
    search_lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    mode: str = CLASSIFICATION
    diversity_noise: bool = True
    param_init_std: float = 0.1
    augment_batch: bool = True
    prior_dim: int = 16

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 1 <= self.n_select <= N_POLICIES:
            raise ConfigError(f"n_select must be in [1, {N_POLICIES}], got {self.n_select}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.fit_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        for name in ("kd_temperature", "sample_temperature", "student_lr",
                     "search_lr", "fit_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("ce_weight", "kl_weight", "alpha", "beta", "weight_decay",
                     "param_init_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("fit_iters", "search_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.search_epochs is None:
            self.search_epochs = default_search_epochs(self.epochs)
        else:
            self.search_epochs = tuple(sorted(set(int(e) for e in self.search_epochs)))
            for e in self.search_epochs:
                if not 1 <= e <= self.epochs:
                    raise ConfigError(
                        f"search_epochs entries must lie in [1, {self.epochs}], got {e}"
                    )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            ce=self.ce_weight,
            kl=self.kl_weight,
            alpha=self.alpha,
            beta=self.beta,
            temperature=self.kd_temperature,
        )


@dataclass
class FitResult:
    policy: str
    status: str  # "fitted", "skipped", or "pretrained" (fit_iters == 0)
    mse: float | None
    ok: bool


@dataclass
class FitReport:
    results: list[FitResult] = field(default_factory=list)
    mse_bound: float = 5e-3

    @property
    def failures(self) -> list[FitResult]:
        return [r for r in self.results if not r.ok]

    @property
    def all_ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "mse_bound": self.mse_bound,
            "results": [asdict(r) for r in self.results],
        }


_HELDOUT_MAGNITUDES = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)


def heldout_fit_mse(
    encoders: MetaEncoderSet,
    policy,
    images: torch.Tensor,
    max_images: int = 256,
) -> float:
    """Held-out per-element MSE between an encoder and its manual policy,
    averaged over a fixed magnitude grid."""
    x = images[:max_images]
    total = 0.0
    with torch.no_grad():
        for m in _HELDOUT_MAGNITUDES:
            target = apply_manual(policy, x, m)
            out = encoders.encoder_for(policy)(x, torch.tensor(m, dtype=x.dtype))
            total += float(((target - out) ** 2).mean())
    return total / len(_HELDOUT_MAGNITUDES)


def stage1_fit_encoders(
    data: DataSplits,
    encoders: MetaEncoderSet,
    config: TrainConfig,
    rng: torch.Generator | None = None,
) -> FitReport:
    """Fit every learnable sub-policy's encoder, then freeze the whole set.

    The three magnitude-unlearnable policies are skipped. A policy that ends
    above the configured MSE bound is flagged in the report (not fatal here;
    the command-line layer turns it into a nonzero exit).
    """
    if rng is None:
        rng = torch.Generator().manual_seed(config.seed)
    report = FitReport(mse_bound=config.fit_mse_bound)
    train_x = data.train_x
    n = train_x.shape[0]
    for policy in POLICIES:
        if not policy.learnable:
            report.results.append(FitResult(policy.name, "skipped", None, True))
            continue
        enc = encoders.encoder_for(policy)
        if config.fit_iters > 0:
            opt = torch.optim.Adam(enc.parameters(), lr=config.fit_lr)
            for _ in range(config.fit_iters):
                idx = torch.randint(0, n, (config.fit_batch_size,), generator=rng)
                m = float(torch.rand((), generator=rng))
                x = train_x[idx]
                with torch.no_grad():
                    target = apply_manual(policy, x, m)
                loss = encoder_fit_loss(target, enc(x, torch.tensor(m, dtype=x.dtype)))
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite Stage-I loss while fitting {policy.name}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
        mse = heldout_fit_mse(encoders, policy, data.test_x)
        status = "fitted" if config.fit_iters > 0 else "pretrained"
        report.results.append(
            FitResult(policy.name, status, mse, mse <= config.fit_mse_bound)
        )
    encoders.freeze()
    return report


def _frozen_params(model: nn.Module):
    """Context helper: temporarily drop requires_grad on a model's params."""

    class _Ctx:
        def __enter__(self_inner):
            self_inner.saved = [p.requires_grad for p in model.parameters()]
            for p in model.parameters():
                p.requires_grad_(False)
            return self_inner

        def __exit__(self_inner, *exc):
            for p, r in zip(model.parameters(), self_inner.saved):
                p.requires_grad_(r)
            return False

    return _Ctx()


def stage2_search(
    data: DataSplits,
    params: AugmentParams,
    encoders: MetaEncoderSet,
    teacher: nn.Module,
    student: nn.Module,
    config: TrainConfig,
    rng: torch.Generator,
    optimizer: torch.optim.Optimizer | None = None,
    fixed_batch: tuple[torch.Tensor, torch.Tensor] | None = None,
    fixed_selection=None,
    frozen_noise: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> list[float]:
    """Run ``config.search_iters`` updates of the raw augmentation parameters.

    Teacher, student and encoder weights stay untouched; gradients only flow
    to ``params``. The fixed_* arguments pin the mini-batch, the sub-policy
    selection and the sampling noise, which turns the objective into a
    deterministic function used by the optimization sanity checks.

    Returns the per-step loss trace.
    """
    if not encoders.frozen:
        raise ConfigError("stage2_search requires a frozen (Stage-I fitted) encoder set")
    if optimizer is None:
        optimizer = torch.optim.Adam(params.tensors(), lr=config.search_lr)
    teacher.eval()
    student.eval()
    trace: list[float] = []
    n = data.train_x.shape[0]
    with _frozen_params(teacher), _frozen_params(student):
        for step in range(config.search_iters):
            if fixed_batch is None:
                idx = torch.randint(0, n, (config.batch_size,), generator=rng)
                x, y = data.train_x[idx], data.train_y[idx]
            else:
                x, y = fixed_batch
            selection = fixed_selection or select_subpolicies(
                config.n_select, rng, mode=config.mode
            )
            sampled = sample_params(
                params,
                config.sample_temperature,
                rng=None if frozen_noise is not None else rng,
                noise=frozen_noise,
            )
            x_hat = encode(
                x,
                sampled,
                selection,
                encoders,
                rng=rng,
                diversity=config.diversity_noise and frozen_noise is None,
                temperature=config.sample_temperature,
            )
            loss = tst_search_loss(teacher(x_hat), student(x_hat), y, config.loss_weights())
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite search loss at step {step}",
                    diagnostics={
                        "step": step,
                        "magnitudes": sampled.m.detach().tolist(),
                        "probabilities": sampled.p.detach().tolist(),
                        "selection": list(selection.indices),
                    },
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            trace.append(float(loss.detach()))
    return trace


def stage3_step(
    batch_x: torch.Tensor,
    batch_y: torch.Tensor,
    params: AugmentParams,
    encoders: MetaEncoderSet,
    teacher: nn.Module,
    student: nn.Module,
    config: TrainConfig,
    optimizer: torch.optim.Optimizer,
    rng: torch.Generator,
) -> dict:
    """One distillation step on originals concatenated with augmented copies.

    Returns the loss components plus running-metric contributions (correct
    predictions and teacher target-probabilities on the original half).
    """
    teacher.eval()
    student.train()
    b = batch_x.shape[0]
    if config.augment_batch:
        with torch.no_grad():
            selection = select_subpolicies(config.n_select, rng, mode=config.mode)
            sampled = sample_params(params, config.sample_temperature, rng=rng)
            x_aug = encode(
                batch_x,
                sampled,
                selection,
                encoders,
                rng=rng,
                diversity=config.diversity_noise,
                temperature=config.sample_temperature,
            )
        x = torch.cat([batch_x, x_aug], dim=0)
        y = torch.cat([batch_y, batch_y], dim=0)
    else:
        x, y = batch_x, batch_y
    with torch.no_grad():
        teacher_logits = teacher(x)
    student_logits = student(x)
    loss, ce, kl_scaled = kd_loss_components(
        student_logits, teacher_logits, y, config.loss_weights()
    )
    if not torch.isfinite(loss):
        raise TrainingDiverged("non-finite distillation loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    with torch.no_grad():
        probs_t = nn.functional.softmax(teacher_logits[:b], dim=1)
        conf = probs_t.gather(1, batch_y.view(-1, 1)).sum()
        correct = (student_logits[:b].argmax(dim=1) == batch_y).sum()
    return {
        "loss_total": float(loss.detach()),
        "loss_ce": float(ce.detach()),
        "loss_kl": float(kl_scaled.detach()),
        "correct": int(correct),
        "confidence_sum": float(conf),
        "count": b,
    }


def teacher_confidence(
    teacher: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int = 512,
) -> float:
    """Mean teacher softmax probability at the true class."""
    if images.shape[0] == 0:
        raise ValueError("empty dataset")
    teacher.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            probs = nn.functional.softmax(teacher(images[i : i + batch_size]), dim=1)
            total += float(
                probs.gather(1, labels[i : i + batch_size].view(-1, 1)).sum()
            )
    return total / images.shape[0]


class TrainingLoop:
    """Stateful driver for the alternating Stage II / Stage III epochs.

    Holds every piece of mutable state (student and parameter optimizers,
    RNG streams, the metrics record, the epoch counter) so a run can be
    checkpointed after any epoch and resumed bit-exactly.
    """

    def __init__(
        self,
        config: TrainConfig,
        data: DataSplits,
        teacher: nn.Module,
        student: nn.Module,
        encoders: MetaEncoderSet,
        params: AugmentParams | None = None,
    ):
        if not encoders.frozen:
            raise ConfigError("run the Stage-I fit before training")
        self.config = config
        self.data = data
        self.teacher = teacher
        self.student = student
        self.encoders = encoders
        self.rng_data = torch.Generator().manual_seed(config.seed * 9973 + 11)
        self.rng_aug = torch.Generator().manual_seed(config.seed * 9973 + 23)
        self.rng_search = torch.Generator().manual_seed(config.seed * 9973 + 37)
        if params is None:
            init_rng = torch.Generator().manual_seed(config.seed * 9973 + 51)
            params = AugmentParams.create(std=config.param_init_std, rng=init_rng)
        self.params = params
        self.student_opt = torch.optim.SGD(
            student.parameters(),
            lr=config.student_lr,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
        )
        milestones = sorted(
            {max(1, int(config.epochs * f)) for f in (0.625, 0.875)}
        )
        self.student_sched = torch.optim.lr_scheduler.MultiStepLR(
            self.student_opt, milestones=milestones, gamma=0.1
        )
        self.param_opt = torch.optim.Adam(self.params.tensors(), lr=config.search_lr)
        self.record = RunRecord()
        self.epoch = 0
        steps_per_epoch = math.ceil(data.train_x.shape[0] / config.batch_size)
        self.total_student_iters = (
            config.student_iters
            if config.student_iters is not None
            else config.epochs * steps_per_epoch
        )
        if config.search_iters > self.total_student_iters / 10:
            warnings.warn(
                "search_iters exceeds a tenth of the student iterations; the "
                "search phase is meant to be much shorter than distillation",
                stacklevel=2,
            )

    def _param_snapshot(self) -> tuple[list[float], list[float]]:
        with torch.no_grad():
            mags = [f32(v) for v in torch.sigmoid(self.params.raw_m).tolist()]
            probs = [f32(v) for v in torch.sigmoid(self.params.raw_p).tolist()]
        return mags, probs

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        self.epoch += 1
        search_trace: list[float] = []
        if self.epoch in cfg.search_epochs:
            search_trace = stage2_search(
                self.data,
                self.params,
                self.encoders,
                self.teacher,
                self.student,
                cfg,
                self.rng_search,
                optimizer=self.param_opt,
            )
        n = self.data.train_x.shape[0]
        order = torch.randperm(n, generator=self.rng_data)
        sums = {"loss_total": 0.0, "loss_ce": 0.0, "loss_kl": 0.0}
        correct = 0
        conf_sum = 0.0
        seen = 0
        steps = 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            out = stage3_step(
                self.data.train_x[idx],
                self.data.train_y[idx],
                self.params,
                self.encoders,
                self.teacher,
                self.student,
                cfg,
                self.student_opt,
                self.rng_aug,
            )
            for k in sums:
                sums[k] += out[k]
            correct += out["correct"]
            conf_sum += out["confidence_sum"]
            seen += out["count"]
            steps += 1
        self.student_sched.step()
        test_acc = evaluate_accuracy(self.student, self.data.test_x, self.data.test_y)
        self.student.train()
        mags, probs = self._param_snapshot()
        entry = EpochRecord(
            epoch=self.epoch,
            train_accuracy=f32(correct / seen),
            test_accuracy=f32(test_acc),
            loss_total=f32(sums["loss_total"] / steps),
            loss_ce=f32(sums["loss_ce"] / steps),
            loss_kl=f32(sums["loss_kl"] / steps),
            teacher_confidence=f32(conf_sum / seen),
            magnitudes=mags,
            probabilities=probs,
            search_losses=[f32(v) for v in search_trace],
        )
        self.record.append(entry)
        return entry

    def run(self, stop_after: int | None = None, on_epoch_end=None) -> RunRecord:
        last = self.config.epochs if stop_after is None else min(stop_after, self.config.epochs)
        while self.epoch < last:
            self.run_epoch()
            if on_epoch_end is not None:
                on_epoch_end(self)
        return self.record

    def state_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "student": self.student.state_dict(),
            "student_opt": self.student_opt.state_dict(),
            "student_sched": self.student_sched.state_dict(),
            "param_opt": self.param_opt.state_dict(),
            "raw_m": self.params.raw_m.detach().clone(),
            "raw_p": self.params.raw_p.detach().clone(),
            "encoders": self.encoders.state_dict(),
            "teacher": self.teacher.state_dict(),
            "rng_data": self.rng_data.get_state(),
            "rng_aug": self.rng_aug.get_state(),
            "rng_search": self.rng_search.get_state(),
            "record": self.record.to_dict(),
        }

    def load_state_dict(self, state: dict) -> None:
        self.epoch = state["epoch"]
        self.student.load_state_dict(state["student"])
        self.teacher.load_state_dict(state["teacher"])
        self.encoders.load_state_dict(state["encoders"])
        with torch.no_grad():
            self.params.raw_m.copy_(state["raw_m"])
            self.params.raw_p.copy_(state["raw_p"])
        self.student_opt.load_state_dict(state["student_opt"])
        self.student_sched.load_state_dict(state["student_sched"])
        self.param_opt.load_state_dict(state["param_opt"])
        self.rng_data.set_state(state["rng_data"])
        self.rng_aug.set_state(state["rng_aug"])
        self.rng_search.set_state(state["rng_search"])
        self.record = RunRecord.from_dict(state["record"])


def run_training(
    config: TrainConfig,
    data: DataSplits,
    teacher: nn.Module,
    student: nn.Module,
    encoders: MetaEncoderSet,
    params: AugmentParams | None = None,
    stop_after: int | None = None,
    on_epoch_end=None,
) -> RunRecord:
    """Convenience wrapper: build a TrainingLoop and run it to completion."""
    loop = TrainingLoop(config, data, teacher, student, encoders, params)
    return loop.run(stop_after=stop_after, on_epoch_end=on_epoch_end)
