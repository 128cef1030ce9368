"""The composite augmentation module: sub-policy selection and combination.

Classification mode mixes the selected sub-policies as probability-weighted
residuals around the input:

    x_hat = x + sum_i p[i] * (f_i(x, m[i]) - x)

Detection mode instead merges all selected affine warps into a single matrix
(so one object cannot be smeared into several), applies that one warp, and
then adds the remaining non-affine policies as residuals on the warped image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .encoders import MetaEncoderSet
from .policies import (
    Category,
    N_LEARNABLE,
    N_POLICIES,
    POLICIES,
    affine_warp,
    check_image_batch,
)
from .sampling import SampledParams

CLASSIFICATION = "classification"
DETECTION = "detection"
MODES = (CLASSIFICATION, DETECTION)

DEFAULT_N_SELECT = 4


@dataclass(frozen=True)
class PolicySelection:
    """Distinct sub-policy indices chosen for one augmentation pass.

    Indices are 0-based positions into the canonical policy order. In
    detection mode the affine indices come first and ``n_affine`` records
    how many there are.
    """

    indices: tuple[int, ...]
    mode: str = CLASSIFICATION
    n_affine: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("selected sub-policy indices must be distinct")
        for i in self.indices:
            if not 0 <= i < N_POLICIES:
                raise ValueError(f"sub-policy index {i} out of range")
        if self.mode == CLASSIFICATION:
            if self.n_affine:
                raise ValueError("n_affine only applies to detection mode")
            return
        affine = [POLICIES[i].category is Category.AFFINE for i in self.indices]
        if sum(affine) != self.n_affine:
            raise ValueError("n_affine does not match the selected indices")
        if any(affine[self.n_affine:]):
            raise ValueError("detection mode lists affine indices first")

    @property
    def n_color(self) -> int:
        return len(self.indices) - self.n_affine


def select_subpolicies(
    n_select: int,
    rng: torch.Generator,
    mode: str = CLASSIFICATION,
    n_total: int = N_POLICIES,
) -> PolicySelection:
    """Uniformly select ``n_select`` distinct sub-policies.

    Detection mode reorders the draw so the affine policies come first,
    keeping the relative draw order within each group.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not 1 <= n_select <= n_total:
        raise ValueError(f"n_select must be in [1, {n_total}], got {n_select}")
    drawn = torch.randperm(n_total, generator=rng)[:n_select].tolist()
    if mode == CLASSIFICATION:
        return PolicySelection(tuple(drawn), mode=CLASSIFICATION)
    affine = [i for i in drawn if POLICIES[i].category is Category.AFFINE]
    rest = [i for i in drawn if POLICIES[i].category is not Category.AFFINE]
    return PolicySelection(tuple(affine + rest), mode=DETECTION, n_affine=len(affine))


def _policy_output(
    encoders: MetaEncoderSet,
    index: int,
    batch: torch.Tensor,
    sampled: SampledParams,
    rng: torch.Generator | None,
    diversity: bool,
    temperature: float,
) -> torch.Tensor:
    policy = POLICIES[index]
    magnitude = sampled.m[index] if policy.learnable else None
    return encoders.forward_policy(
        policy, batch, magnitude, rng=rng, diversity=diversity, temperature=temperature
    )


def encode_classification(
    batch: torch.Tensor,
    sampled: SampledParams,
    selection: PolicySelection,
    encoders: MetaEncoderSet,
    rng: torch.Generator | None = None,
    diversity: bool = False,
    temperature: float = 0.05,
) -> torch.Tensor:
    """Weighted-residual combination of the selected sub-policies.

    No clamping is applied; the teacher/student wrappers normalize their own
    inputs, and clamping here would kill the search gradients.
    """
    check_image_batch(batch)
    if selection.mode != CLASSIFICATION:
        raise ValueError("selection was made for detection mode")
    out = batch
    for idx in selection.indices:
        fx = _policy_output(encoders, idx, batch, sampled, rng, diversity, temperature)
        out = out + sampled.p[idx] * (fx - batch)
    return out


def identity_matrix(dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=dtype)


def combine_affine(
    matrices: list[torch.Tensor] | tuple[torch.Tensor, ...],
    weights: list[torch.Tensor] | tuple[torch.Tensor, ...],
) -> torch.Tensor:
    """Merge several 2x3 warp matrices into one: I + sum_i w[i] * (A[i] - I)."""
    if len(matrices) != len(weights):
        raise ValueError("need one weight per matrix")
    if not matrices:
        return identity_matrix()
    eye = identity_matrix(matrices[0].dtype).to(matrices[0].device)
    out = eye
    for mat, w in zip(matrices, weights):
        if tuple(mat.shape) != (2, 3):
            raise ValueError(f"expected 2x3 matrices, got {tuple(mat.shape)}")
        out = out + w * (mat - eye)
    return out


def encode_detection(
    batch: torch.Tensor,
    sampled: SampledParams,
    selection: PolicySelection,
    encoders: MetaEncoderSet,
    rng: torch.Generator | None = None,
    diversity: bool = False,
    temperature: float = 0.05,
) -> torch.Tensor:
    """Single-warp combination for detection-style use.

    All selected affine matrices are merged first and applied as exactly one
    warp; the remaining policies then contribute weighted residuals on the
    warped image.
    """
    check_image_batch(batch)
    if selection.mode != DETECTION:
        raise ValueError("selection was made for classification mode")
    affine_idx = selection.indices[: selection.n_affine]
    matrices = [
        encoders.affine_matrix(
            POLICIES[i], sampled.m[i], rng=rng, diversity=diversity, temperature=temperature
        )
        for i in affine_idx
    ]
    weights = [sampled.p[i] for i in affine_idx]
    merged = combine_affine(matrices, weights).to(batch.dtype)
    warped = affine_warp(batch, merged)
    out = warped
    for idx in selection.indices[selection.n_affine:]:
        fx = _policy_output(encoders, idx, warped, sampled, rng, diversity, temperature)
        out = out + sampled.p[idx] * (fx - warped)
    return out


def encode(
    batch: torch.Tensor,
    sampled: SampledParams,
    selection: PolicySelection,
    encoders: MetaEncoderSet,
    rng: torch.Generator | None = None,
    diversity: bool = False,
    temperature: float = 0.05,
) -> torch.Tensor:
    """Dispatch on the selection's mode."""
    fn = encode_classification if selection.mode == CLASSIFICATION else encode_detection
    return fn(batch, sampled, selection, encoders, rng=rng, diversity=diversity,
              temperature=temperature)
