"""Desk-scale teacher/student classifiers and teacher pretraining."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .exceptions import ConfigError, FitFailure

FAMILIES = ("tiny-cnn", "mid-cnn", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    family: str = "tiny-cnn"
    width: float = 1.0
    depth: int = 2
    n_classes: int = 10
    in_shape: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected {FAMILIES}")
        if self.width <= 0:
            raise ConfigError(f"width must be positive, got {self.width}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if len(self.in_shape) != 3:
            raise ConfigError(f"in_shape must be (C, H, W), got {self.in_shape}")


class Normalize(nn.Module):
    """Fixed input normalization. Lives inside the model so the augmentation
    pipeline can feed unclamped images without a separate preprocessing step."""

    def __init__(self, mean: float = 0.5, std: float = 0.5):
        super().__init__()
        self.register_buffer("mean", torch.tensor(float(mean)))
        self.register_buffer("std", torch.tensor(float(std)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
        nn.MaxPool2d(2),
    )


def _build_cnn(spec: ModelSpec, base: int) -> nn.Module:
    c, h, _ = spec.in_shape
    chans = [max(4, int(round(base * spec.width * (2 ** i)))) for i in range(spec.depth)]
    blocks: list[nn.Module] = [Normalize()]
    prev = c
    for ch in chans:
        blocks.append(_conv_block(prev, ch))
        prev = ch
    blocks += [nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(prev, spec.n_classes)]
    return nn.Sequential(*blocks)


def _build_mlp(spec: ModelSpec) -> nn.Module:
    c, h, w = spec.in_shape
    hidden = max(16, int(round(256 * spec.width)))
    layers: list[nn.Module] = [Normalize(), nn.Flatten()]
    prev = c * h * w
    for _ in range(spec.depth):
        layers += [nn.Linear(prev, hidden), nn.ReLU(inplace=True)]
        prev = hidden
    layers.append(nn.Linear(prev, spec.n_classes))
    return nn.Sequential(*layers)


def _seeded_init(model: nn.Module, seed: int) -> None:
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2:
                fan_in = p.shape[1] * (p[0][0].numel() if p.dim() > 2 else 1)
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=rng)
            elif "bias" in name:
                p.zero_()
            else:  # norm scales
                p.fill_(1.0)


def build_model(spec: ModelSpec, seed: int = 0) -> nn.Module:
    """Construct a classifier with seed-deterministic initialization."""
    if spec.family == "tiny-cnn":
        model = _build_cnn(spec, base=8)
    elif spec.family == "mid-cnn":
        model = _build_cnn(spec, base=32)
    else:
        model = _build_mlp(spec)
    _seeded_init(model, seed)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def evaluate_accuracy(
    model: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int = 512,
) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            logits = model(images[i : i + batch_size])
            correct += int((logits.argmax(dim=1) == labels[i : i + batch_size]).sum())
    return correct / max(1, images.shape[0])


def state_signature(model: nn.Module) -> torch.Tensor:
    """Flat copy of all parameters and buffers, for bit-identity checks."""
    with torch.no_grad():
        parts = [p.detach().reshape(-1).clone().float() for p in model.parameters()]
        parts += [b.detach().reshape(-1).clone().float() for b in model.buffers()]
        return torch.cat(parts) if parts else torch.zeros(0)


def pretrain_teacher(
    spec: ModelSpec,
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    test_x: torch.Tensor,
    test_y: torch.Tensor,
    epochs: int = 30,
    seed: int = 0,
    lr: float = 0.05,
    batch_size: int = 128,
    min_accuracy: float = 0.85,
) -> tuple[nn.Module, float]:
    """Train the teacher to at least ``min_accuracy`` test accuracy.

    Raises FitFailure (reporting the achieved accuracy) if the floor is not
    reached; epochs == 0 returns the untrained model without the floor check.
    """
    model = build_model(spec, seed=seed)
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9, weight_decay=5e-4)
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=[max(1, int(epochs * f)) for f in (0.6, 0.85)], gamma=0.1
    )
    rng = torch.Generator().manual_seed(seed + 1)
    n = train_x.shape[0]
    for _ in range(epochs):
        model.train()
        order = torch.randperm(n, generator=rng)
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(model(train_x[idx]), train_y[idx])
            loss.backward()
            opt.step()
        sched.step()
    acc = evaluate_accuracy(model, test_x, test_y)
    if epochs > 0 and acc < min_accuracy:
        raise FitFailure(
            f"teacher reached {acc:.3f} test accuracy, below the {min_accuracy:.2f} floor"
        )
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, acc
