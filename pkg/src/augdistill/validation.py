"""Input validation helpers for the array-facing estimator API."""

from __future__ import annotations

import numpy as np
import torch


def as_image_batch(X, name: str = "X") -> torch.Tensor:
    """Coerce an array-like into a float32 (N, C, H, W) tensor in [0, 1]."""
    if isinstance(X, torch.Tensor):
        arr = X.detach().cpu().float()
    else:
        arr = torch.as_tensor(np.asarray(X), dtype=torch.float32)
    if arr.dim() != 4:
        raise ValueError(
            f"{name} must be 4D (n_samples, channels, height, width), "
            f"got shape {tuple(arr.shape)}"
        )
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must contain at least one sample")
    if not torch.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if float(arr.min()) < -1e-6 or float(arr.max()) > 1.0 + 1e-6:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr.clamp(0.0, 1.0)


def as_label_vector(y, n_samples: int, name: str = "y") -> torch.Tensor:
    """Coerce labels into a 1D int64 tensor aligned with the batch."""
    arr = torch.as_tensor(np.asarray(y)).reshape(-1)
    if arr.shape[0] != n_samples:
        raise ValueError(
            f"{name} has {arr.shape[0]} entries for {n_samples} samples"
        )
    if arr.is_floating_point():
        if not torch.all(arr == arr.round()):
            raise ValueError(f"{name} must contain integer class labels")
        arr = arr.long()
    return arr.to(torch.int64)
