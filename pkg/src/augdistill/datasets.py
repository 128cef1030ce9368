"""Dataset provisioning for desk-scale experiments.

Two datasets are available, both fully local and deterministic given a seed:

* ``toy-synthetic``: generated 32x32 RGB images of ten soft-edged shape
  classes. Foreground/background intensities are kept in a moderate range
  ([~0.12, ~0.65]) with mild chroma and similar per-image means, which keeps
  every manual sub-policy well inside the regime the color encoders can fit.
* ``small-natural``: scikit-learn's bundled handwritten digits, upscaled to
  32x32 and replicated to three channels.

The training split can be subsampled to a fraction with stratified,
largest-remainder rounding so the subset size is exactly floor(fraction * N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

TOY = "toy-synthetic"
NATURAL = "small-natural"
DATASET_NAMES = (TOY, NATURAL)

TOY_CLASSES = 10
_SUPERSAMPLE = 4


@dataclass
class DataSplits:
    """In-memory train/test tensors: images (N, C, H, W) in [0, 1], int labels."""

    train_x: torch.Tensor
    train_y: torch.Tensor
    test_x: torch.Tensor
    test_y: torch.Tensor
    n_classes: int
    name: str

    def __post_init__(self) -> None:
        if self.train_x.shape[0] != self.train_y.shape[0]:
            raise ValueError("train images/labels length mismatch")
        if self.test_x.shape[0] != self.test_y.shape[0]:
            raise ValueError("test images/labels length mismatch")


def _shape_mask(cls: int, size: int, cy: float, cx: float, s: float) -> torch.Tensor:
    """Binary mask of one shape class on a supersampled grid."""
    n = size * _SUPERSAMPLE
    scale = _SUPERSAMPLE
    ys = torch.arange(n, dtype=torch.float32).view(-1, 1) / scale - cy
    xs = torch.arange(n, dtype=torch.float32).view(1, -1) / scale - cx
    dy = ys.expand(n, n)
    dx = xs.expand(n, n)
    r = torch.sqrt(dx * dx + dy * dy)
    box = torch.maximum(dx.abs(), dy.abs())
    if cls == 0:  # disk
        m = r <= s
    elif cls == 1:  # square
        m = box <= s * 0.85
    elif cls == 2:  # triangle (apex up)
        m = (dy >= -s) & (dy <= s * 0.7) & (dx.abs() <= (dy + s) * 0.55)
    elif cls == 3:  # ring
        m = (r <= s) & (r >= s * 0.55)
    elif cls == 4:  # plus
        m = ((dx.abs() <= 0.32 * s) & (dy.abs() <= s)) | (
            (dy.abs() <= 0.32 * s) & (dx.abs() <= s)
        )
    elif cls == 5:  # diamond
        m = (dx.abs() + dy.abs()) <= 1.15 * s
    elif cls == 6:  # horizontal stripes
        period = max(s * 0.7, 3.0)
        m = (box <= s) & (torch.remainder(dy, period) < 0.5 * period)
    elif cls == 7:  # vertical stripes
        period = max(s * 0.7, 3.0)
        m = (box <= s) & (torch.remainder(dx, period) < 0.5 * period)
    elif cls == 8:  # dot grid
        period = max(s * 0.8, 4.0)
        gx = torch.remainder(dx, period) - 0.5 * period
        gy = torch.remainder(dy, period) - 0.5 * period
        m = (box <= s) & (gx * gx + gy * gy <= (0.3 * period) ** 2)
    elif cls == 9:  # X cross
        m = ((dx - dy).abs() <= 0.3 * s) | ((dx + dy).abs() <= 0.3 * s)
        m = m & (box <= s)
    else:
        raise ValueError(f"unknown toy class {cls}")
    return m.float()


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    radius = max(1, int(math.ceil(2.5 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=torch.float32)
    k = torch.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _smooth(img: torch.Tensor, sigma: float) -> torch.Tensor:
    # Separable Gaussian blur with reflect padding; img is (C, H, W).
    k = _gaussian_kernel(sigma)
    r = (k.numel() - 1) // 2
    c = img.shape[0]
    x = img.unsqueeze(0)
    x = torch.nn.functional.pad(x, (r, r, 0, 0), mode="reflect")
    x = torch.nn.functional.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = torch.nn.functional.pad(x, (0, 0, r, r), mode="reflect")
    x = torch.nn.functional.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return x.squeeze(0)


def _render_toy(
    n: int, size: int, rng: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    labels = torch.arange(n) % TOY_CLASSES
    labels = labels[torch.randperm(n, generator=rng)]
    images = torch.empty(n, 3, size, size)
    pool = torch.nn.AvgPool2d(_SUPERSAMPLE)
    for i in range(n):
        cls = int(labels[i])
        u = torch.rand(12, generator=rng)
        cy = size / 2 + (u[0] - 0.5) * 6.0
        cx = size / 2 + (u[1] - 0.5) * 6.0
        s = 7.0 + u[2] * 4.0
        bg = 0.12 + u[3] * 0.10
        fg = 0.45 + u[4] * 0.17
        bg_tint = (u[5:8] - 0.5) * 0.06
        fg_tint = (u[8:11] - 0.5) * 0.10
        sigma = 0.6 + u[11] * 0.4
        mask = _shape_mask(cls, size, float(cy), float(cx), float(s))
        mask = pool(mask.unsqueeze(0).unsqueeze(0)).squeeze()
        bg_col = (bg + bg_tint).clamp(0.03, 0.3).view(3, 1, 1)
        fg_col = (fg + fg_tint).clamp(0.35, 0.65).view(3, 1, 1)
        img = bg_col + mask.unsqueeze(0) * (fg_col - bg_col)
        images[i] = _smooth(img, float(sigma)).clamp(0.0, 1.0)
    return images, labels


def _load_digits(size: int) -> tuple[torch.Tensor, torch.Tensor]:
    from sklearn.datasets import load_digits

    raw = load_digits()
    x = torch.as_tensor(raw.images, dtype=torch.float32) / 16.0
    x = x.unsqueeze(1)
    x = torch.nn.functional.interpolate(x, size=(size, size), mode="bilinear",
                                        align_corners=False)
    x = x.expand(-1, 3, -1, -1).contiguous().clamp(0.0, 1.0)
    y = torch.as_tensor(raw.target, dtype=torch.int64)
    return x, y


def stratified_fraction(
    labels: torch.Tensor, fraction: float, rng: torch.Generator
) -> torch.Tensor:
    """Indices of a stratified subset of exactly floor(fraction * N) samples.

    Per-class quotas use largest-remainder rounding, so every class lands
    within one sample of its proportional share.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = labels.shape[0]
    target = int(math.floor(fraction * n))
    classes = torch.unique(labels, sorted=True).tolist()
    quotas = {}
    remainders = []
    total = 0
    for c in classes:
        exact = fraction * int((labels == c).sum())
        q = int(math.floor(exact))
        quotas[c] = q
        total += q
        remainders.append((exact - q, c))
    remainders.sort(key=lambda t: (-t[0], t[1]))
    for _, c in remainders[: target - total]:
        quotas[c] += 1
    picked = []
    for c in classes:
        idx = (labels == c).nonzero().reshape(-1)
        order = torch.randperm(idx.numel(), generator=rng)
        picked.append(idx[order[: quotas[c]]])
    out, _ = torch.sort(torch.cat(picked))
    return out


def provide_dataset(
    name: str,
    fraction: float = 1.0,
    seed: int = 0,
    train_size: int = 4000,
    test_size: int = 1000,
    image_size: int = 32,
) -> DataSplits:
    """Build the named dataset's train/test splits.

    ``fraction`` subsamples the training split only (stratified). The split
    and the subset are deterministic functions of ``seed``.
    """
    if name == TOY:
        rng = torch.Generator().manual_seed(seed)
        train_x, train_y = _render_toy(train_size, image_size, rng)
        test_x, test_y = _render_toy(test_size, image_size, rng)
        n_classes = TOY_CLASSES
    elif name == NATURAL:
        x, y = _load_digits(image_size)
        rng = torch.Generator().manual_seed(seed)
        order = torch.randperm(x.shape[0], generator=rng)
        n_test = min(x.shape[0] // 5, test_size)
        test_idx, train_idx = order[:n_test], order[n_test:]
        train_idx = train_idx[: min(train_size, train_idx.numel())]
        train_x, train_y = x[train_idx], y[train_idx]
        test_x, test_y = x[test_idx], y[test_idx]
        n_classes = 10
    else:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")

    if fraction < 1.0:
        sub_rng = torch.Generator().manual_seed(seed + 0x5EED)
        keep = stratified_fraction(train_y, fraction, sub_rng)
        train_x, train_y = train_x[keep], train_y[keep]
    return DataSplits(train_x, train_y, test_x, test_y, n_classes, name)
