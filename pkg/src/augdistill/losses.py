"""Loss functions for the three training stages.

Stage III uses the classic distillation objective (label cross-entropy plus
temperature-scaled KL against the teacher). Stage II scores augmented samples
by how confidently the teacher classifies them and how confidently the
student does NOT; the student term uses cross-entropy against the flipped
probability, -log(1 - p), which is convex in p, instead of the concave
-(-log p). Stage I is a plain squared-error fit between an encoder and its
manual counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Balance weights and temperature shared by the stage losses."""

    ce: float = 1.0
    kl: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 4.0

    def __post_init__(self) -> None:
        for name in ("ce", "kl", "alpha", "beta"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _check_logits(logits: torch.Tensor, labels: torch.Tensor, what: str) -> None:
    if logits.dim() != 2:
        raise ValueError(f"{what} logits must be (batch, classes), got {tuple(logits.shape)}")
    if labels.shape != logits.shape[:1]:
        raise ValueError(
            f"labels shape {tuple(labels.shape)} does not match batch {logits.shape[0]}"
        )
    n_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels out of range for {n_classes} classes")


def kd_loss_components(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, ce, tau^2-scaled kl) of the distillation loss.

    ``ce`` and the scaled ``kl`` are returned unweighted so callers can log
    the decomposition; ``total`` applies the configured weights.
    """
    _check_logits(student_logits, labels, "student")
    if teacher_logits.shape != student_logits.shape:
        raise ValueError("teacher/student logit shapes differ")
    t = teacher_logits.detach()
    tau = weights.temperature
    ce = F.cross_entropy(student_logits, labels)
    log_p_t = F.log_softmax(t / tau, dim=1)
    log_p_s = F.log_softmax(student_logits / tau, dim=1)
    kl = (log_p_t.exp() * (log_p_t - log_p_s)).sum(dim=1).mean()
    kl_scaled = (tau * tau) * kl
    total = weights.ce * ce + weights.kl * kl_scaled
    return total, ce, kl_scaled


def kd_total_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Distillation loss: w_ce * CE(student, y) + w_kl * tau^2 * KL(teacher || student).

    Teacher logits are detached; the gradient only reaches the student.
    """
    return kd_loss_components(student_logits, teacher_logits, labels, weights)[0]


def tst_search_loss(
    teacher_logits: torch.Tensor,
    student_logits: torch.Tensor,
    labels: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Augmentation-search loss: alpha * CE(p_T, y) + beta * CE(1 - p_S, y).

    Against one-hot labels the second term reduces to -log(1 - p_S[target]).
    Neither logit argument is detached: the search needs gradients through
    both networks back to the augmentation parameters.
    """
    _check_logits(teacher_logits, labels, "teacher")
    _check_logits(student_logits, labels, "student")
    if teacher_logits.shape != student_logits.shape:
        raise ValueError("teacher/student logit shapes differ")
    idx = labels.view(-1, 1)
    p_t = F.softmax(teacher_logits, dim=1).gather(1, idx).squeeze(1)
    p_s = F.softmax(student_logits, dim=1).gather(1, idx).squeeze(1)
    teach_term = -torch.log(p_t.clamp_min(EPS))
    fool_term = -torch.log((1.0 - p_s).clamp_min(EPS))
    return (weights.alpha * teach_term + weights.beta * fool_term).mean()


def encoder_fit_loss(manual_out: torch.Tensor, encoder_out: torch.Tensor) -> torch.Tensor:
    """Batch-averaged squared L2 distance between manual and encoder outputs."""
    if manual_out.shape != encoder_out.shape:
        raise ValueError(
            f"shape mismatch: {tuple(manual_out.shape)} vs {tuple(encoder_out.shape)}"
        )
    diff = manual_out - encoder_out
    return diff.reshape(diff.shape[0], -1).pow(2).sum(dim=1).mean()


def convexity_check(samples: list[float] | torch.Tensor) -> bool:
    """Numerically confirm why the search loss flips the student probability.

    Checks, over all pairs from ``samples``, that h(t) = -log(1 - t)
    satisfies the midpoint convexity inequality, and that g(t) = log(t)
    (the negated cross-entropy) violates it somewhere, i.e. minimizing
    -CE(p, y) directly would be a non-convex problem.
    """
    t = torch.as_tensor(samples, dtype=torch.float64).reshape(-1)
    if t.numel() < 2:
        raise ValueError("need at least two samples")
    if torch.any(t <= 0) or torch.any(t >= 1):
        raise ValueError("samples must lie strictly inside (0, 1)")
    a = t.view(-1, 1)
    b = t.view(1, -1)
    mid = 0.5 * (a + b)

    def h(v: torch.Tensor) -> torch.Tensor:
        return -torch.log1p(-v)

    convex_ok = bool(torch.all(h(mid) <= 0.5 * (h(a) + h(b)) + 1e-12))
    g_mid = torch.log(mid)
    g_avg = 0.5 * (torch.log(a) + torch.log(b))
    distinct = (a - b).abs() > 1e-12
    nonconvex_seen = bool(torch.any((g_mid > g_avg + 1e-15) & distinct))
    return convex_ok and nonconvex_seen
