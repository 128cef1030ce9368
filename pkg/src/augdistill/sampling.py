"""Relaxed-Bernoulli reparameterization of the learnable augmentation params.

Raw magnitude/probability parameters are squashed with a sigmoid and then
passed through a relaxed Bernoulli transform,

    rbd(p) = sigmoid((log p + L) / temperature),   L ~ Logistic(0, 1),

which keeps every sampled value in (0, 1) while staying differentiable with
respect to the raw parameters. The logistic draws are recorded so a sampling
step can be replayed exactly (needed for finite-difference gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

EPS = 1e-7

N_MAGNITUDES = 11
N_PROBABILITIES = 14


def logistic_sample(
    shape: tuple[int, ...],
    rng: torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Draw Logistic(0, 1) samples of the given shape."""
    u = torch.rand(shape, generator=rng, dtype=dtype).clamp_(EPS, 1.0 - EPS)
    return torch.log(u) - torch.log1p(-u)


def rbd(
    p: torch.Tensor | float,
    noise: torch.Tensor | float,
    temperature: float,
) -> torch.Tensor:
    """Relaxed-Bernoulli transform of a probability-like value.

    Args:
        p: value(s) in [0, 1]; clamped into (EPS, 1-EPS) before the log.
        noise: Logistic(0, 1) draw(s), broadcastable against ``p``.
        temperature: sharpness; must be positive (smaller is sharper).

    Returns:
        sigmoid((log p + noise) / temperature). Strictly inside (0, 1) in
        exact arithmetic; at sharp temperatures the floating-point result
        saturates to exactly 0.0 or 1.0 once the argument leaves the
        representable range.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    p_t = torch.as_tensor(p)
    if not p_t.is_floating_point():
        p_t = p_t.double()
    if torch.any(torch.isnan(p_t)) or torch.any(p_t < 0) or torch.any(p_t > 1):
        raise ValueError("rbd input must lie in [0, 1]")
    p_t = p_t.clamp(EPS, 1.0 - EPS)
    noise_t = torch.as_tensor(noise, dtype=p_t.dtype, device=p_t.device)
    return torch.sigmoid((torch.log(p_t) + noise_t) / temperature)


@dataclass
class AugmentParams:
    """Raw (pre-sigmoid) learnable magnitudes and probabilities."""

    raw_m: torch.Tensor
    raw_p: torch.Tensor

    def __post_init__(self) -> None:
        if tuple(self.raw_m.shape) != (N_MAGNITUDES,):
            raise ValueError(
                f"raw_m must have shape ({N_MAGNITUDES},), got {tuple(self.raw_m.shape)}"
            )
        if tuple(self.raw_p.shape) != (N_PROBABILITIES,):
            raise ValueError(
                f"raw_p must have shape ({N_PROBABILITIES},), got {tuple(self.raw_p.shape)}"
            )
        if not (torch.isfinite(self.raw_m).all() and torch.isfinite(self.raw_p).all()):
            raise ValueError("augmentation parameters must be finite")

    @classmethod
    def create(
        cls,
        std: float = 0.0,
        rng: torch.Generator | None = None,
        dtype: torch.dtype = torch.float32,
        requires_grad: bool = True,
    ) -> "AugmentParams":
        """Fresh parameters: zeros, or seeded normal noise when std > 0."""
        raw_m = torch.zeros(N_MAGNITUDES, dtype=dtype)
        raw_p = torch.zeros(N_PROBABILITIES, dtype=dtype)
        if std > 0:
            if rng is None:
                raise ValueError("std > 0 requires an rng")
            raw_m.normal_(0.0, std, generator=rng)
            raw_p.normal_(0.0, std, generator=rng)
        raw_m.requires_grad_(requires_grad)
        raw_p.requires_grad_(requires_grad)
        return cls(raw_m, raw_p)

    def tensors(self) -> list[torch.Tensor]:
        return [self.raw_m, self.raw_p]

    def clone_detached(self) -> "AugmentParams":
        return AugmentParams(
            self.raw_m.detach().clone(), self.raw_p.detach().clone()
        )


@dataclass
class SampledParams:
    """Per-step sampled magnitudes/probabilities plus the noise that made them."""

    m: torch.Tensor
    p: torch.Tensor
    noise_m: torch.Tensor
    noise_p: torch.Tensor

    def __post_init__(self) -> None:
        for t, n in ((self.m, N_MAGNITUDES), (self.p, N_PROBABILITIES)):
            if tuple(t.shape) != (n,):
                raise ValueError(f"expected shape ({n},), got {tuple(t.shape)}")


def sample_params(
    params: AugmentParams,
    temperature: float,
    rng: torch.Generator | None = None,
    noise: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> SampledParams:
    """Sample per-step magnitudes and probabilities from the raw parameters.

    Exactly one of ``rng``/``noise`` must be provided. With ``rng``, fresh
    independent logistic draws are used (and returned in the result); with
    ``noise``, the given (noise_m, noise_p) pair is replayed, which makes the
    map from raw parameters to sampled values deterministic.
    """
    if (rng is None) == (noise is None):
        raise ValueError("provide exactly one of rng or noise")
    dtype = params.raw_m.dtype
    if noise is None:
        noise_m = logistic_sample((N_MAGNITUDES,), rng, dtype=dtype)
        noise_p = logistic_sample((N_PROBABILITIES,), rng, dtype=dtype)
    else:
        noise_m, noise_p = noise
        noise_m = torch.as_tensor(noise_m, dtype=dtype)
        noise_p = torch.as_tensor(noise_p, dtype=dtype)
    m = rbd(torch.sigmoid(params.raw_m), noise_m, temperature)
    p = rbd(torch.sigmoid(params.raw_p), noise_p, temperature)
    return SampledParams(m=m, p=p, noise_m=noise_m, noise_p=noise_p)
