"""Neural meta-encoders imitating the manual sub-policies.

Two families: an affine encoder (spatial-transformer style) whose frozen
prior vector, concatenated with the magnitude, is mapped by a single linear
layer to a 2x3 warp matrix; and a color encoder whose prior vector feeds a
linear layer producing a bounded scale/shift, followed by a channel-count
preserving 3x3 convolution. Both are trained once against their manual
counterpart and frozen afterwards, so everything downstream only ever
differentiates through them with respect to the magnitude and the image.
"""

from __future__ import annotations

import torch
from torch import nn

from .policies import (
    AFFINE_POLICIES,
    COLOR_POLICIES,
    Category,
    SubPolicy,
    affine_warp,
    apply_manual,
    policy_by_name,
)
from .sampling import logistic_sample, rbd

DEFAULT_PRIOR_DIM = 16

_IDENTITY_ROWS = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def _as_magnitude(m, dtype: torch.dtype, device) -> torch.Tensor:
    m = torch.as_tensor(m, dtype=dtype, device=device)
    if m.dim() != 0:
        raise ValueError(f"magnitude must be a scalar, got shape {tuple(m.shape)}")
    if not torch.isfinite(m):
        raise ValueError("magnitude must be finite")
    return m


class AffineEncoder(nn.Module):
    """Learned imitation of one affine sub-policy.

    The prior vector is concatenated with the magnitude and mapped linearly
    to the six entries of a 2x3 warp matrix; the image is then warped with
    bilinear sampling and zero padding, exactly like the manual transform.
    """

    def __init__(self, prior_dim: int = DEFAULT_PRIOR_DIM, rng: torch.Generator | None = None):
        super().__init__()
        self.prior = nn.Parameter(torch.empty(prior_dim))
        self.to_matrix = nn.Linear(prior_dim + 1, 6)
        self.reset_parameters(rng)

    def reset_parameters(self, rng: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.prior.normal_(0.0, 0.5, generator=rng)
            self.to_matrix.weight.normal_(0.0, 0.01, generator=rng)
            self.to_matrix.bias.copy_(torch.tensor(_IDENTITY_ROWS))

    def matrix(self, magnitude) -> torch.Tensor:
        """The 2x3 matrix at this magnitude. Deterministic; callers add any
        diversity noise themselves."""
        m = _as_magnitude(magnitude, self.prior.dtype, self.prior.device)
        features = torch.cat([self.prior, m.reshape(1)])
        return self.to_matrix(features).view(2, 3)

    def forward(self, batch: torch.Tensor, magnitude, matrix_noise: torch.Tensor | None = None):
        theta = self.matrix(magnitude)
        if matrix_noise is not None:
            theta = theta + matrix_noise
        return affine_warp(batch, theta)


class ColorEncoder(nn.Module):
    """Learned imitation of one color sub-policy.

    Applies a magnitude-dependent bounded scale (in (0.5, 1.5)) and shift
    (in (-0.5, 0.5)) to the image, then a fixed channel-preserving 3x3
    convolution carrying the remaining learned structure.
    """

    def __init__(
        self,
        channels: int = 3,
        prior_dim: int = DEFAULT_PRIOR_DIM,
        rng: torch.Generator | None = None,
    ):
        super().__init__()
        self.prior = nn.Parameter(torch.empty(prior_dim))
        self.to_scale_shift = nn.Linear(prior_dim + 1, 2)
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.reset_parameters(rng)

    def reset_parameters(self, rng: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.prior.normal_(0.0, 0.5, generator=rng)
            self.to_scale_shift.weight.normal_(0.0, 0.01, generator=rng)
            self.to_scale_shift.bias.zero_()
            nn.init.dirac_(self.conv.weight)
            self.conv.bias.zero_()

    def scale_shift(self, magnitude) -> tuple[torch.Tensor, torch.Tensor]:
        """Pre-noise (sigmoid(scale), sigmoid(shift)), each in (0, 1)."""
        m = _as_magnitude(magnitude, self.prior.dtype, self.prior.device)
        features = torch.cat([self.prior, m.reshape(1)])
        raw = self.to_scale_shift(features)
        return torch.sigmoid(raw[0]), torch.sigmoid(raw[1])

    def forward(
        self,
        batch: torch.Tensor,
        magnitude,
        scale_noise: torch.Tensor | None = None,
        shift_noise: torch.Tensor | None = None,
        temperature: float = 0.05,
    ):
        scale01, shift01 = self.scale_shift(magnitude)
        if scale_noise is not None:
            scale01 = rbd(scale01, scale_noise, temperature)
        if shift_noise is not None:
            shift01 = rbd(shift01, shift_noise, temperature)
        y = batch * (0.5 + scale01) + (shift01 - 0.5)
        return self.conv(y)


class MetaEncoderSet(nn.Module):
    """One neural encoder per learnable sub-policy.

    The three magnitude-unlearnable policies have no encoder; the pipeline
    calls their manual implementation directly.
    """

    def __init__(
        self,
        channels: int = 3,
        prior_dim: int = DEFAULT_PRIOR_DIM,
        seed: int = 0,
    ):
        super().__init__()
        self.channels = channels
        self.prior_dim = prior_dim
        rng = torch.Generator().manual_seed(seed)
        modules = {}
        for p in AFFINE_POLICIES:
            modules[p.name] = AffineEncoder(prior_dim, rng=rng)
        for p in COLOR_POLICIES:
            modules[p.name] = ColorEncoder(channels, prior_dim, rng=rng)
        self.encoders = nn.ModuleDict(modules)
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        """Mark Stage-I training finished: no gradient may reach the priors."""
        for param in self.parameters():
            param.requires_grad_(False)
        self._frozen = True

    def encoder_for(self, policy: SubPolicy | str) -> nn.Module:
        p = policy_by_name(policy) if isinstance(policy, str) else policy
        if not p.learnable:
            raise ValueError(f"{p.name} has no neural encoder")
        return self.encoders[p.name]

    def affine_matrix(
        self,
        policy: SubPolicy | str,
        magnitude,
        rng: torch.Generator | None = None,
        diversity: bool = False,
        temperature: float = 0.05,
    ) -> torch.Tensor:
        """Warp matrix for one affine policy, optionally with diversity noise.

        Diversity noise adds temperature-scaled Logistic(0, 1) draws to each
        matrix entry (the entries are unbounded, so the relaxed-Bernoulli
        transform used on color parameters does not apply here).
        """
        p = policy_by_name(policy) if isinstance(policy, str) else policy
        if p.category is not Category.AFFINE:
            raise ValueError(f"{p.name} is not an affine sub-policy")
        enc = self.encoders[p.name]
        theta = enc.matrix(magnitude)
        if diversity:
            if rng is None:
                raise ValueError("diversity noise requires an rng")
            noise = logistic_sample((2, 3), rng, dtype=theta.dtype)
            theta = theta + temperature * noise
        return theta

    def forward_policy(
        self,
        policy: SubPolicy | str,
        batch: torch.Tensor,
        magnitude=None,
        rng: torch.Generator | None = None,
        diversity: bool = False,
        temperature: float = 0.05,
    ) -> torch.Tensor:
        """Evaluate one sub-policy the way the augmentation pipeline does.

        Learnable policies run through their neural encoder; the rest call
        the manual transform (Cutout drawing its patch center from ``rng``).
        """
        p = policy_by_name(policy) if isinstance(policy, str) else policy
        if p.category is Category.AFFINE:
            theta = self.affine_matrix(p, magnitude, rng, diversity, temperature)
            return affine_warp(batch, theta)
        if p.category is Category.COLOR:
            enc = self.encoders[p.name]
            if diversity:
                if rng is None:
                    raise ValueError("diversity noise requires an rng")
                sn = logistic_sample((), rng, dtype=batch.dtype)
                tn = logistic_sample((), rng, dtype=batch.dtype)
                return enc(batch, magnitude, scale_noise=sn, shift_noise=tn,
                           temperature=temperature)
            return enc(batch, magnitude)
        if magnitude is not None:
            raise ValueError(f"{p.name} does not take a magnitude")
        return apply_manual(p, batch, rng=rng)

    def state_signature(self) -> torch.Tensor:
        """Flat copy of every parameter, for bit-identity freeze checks."""
        with torch.no_grad():
            return torch.cat([p.detach().reshape(-1).clone() for p in self.parameters()])
