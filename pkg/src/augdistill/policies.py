"""Reference implementations of the 14 augmentation sub-policies.

These are the non-learnable "manual" transforms. The five affine and six
color policies carry a magnitude in [0, 1] that maps affinely onto a
transform-native parameter range; the remaining three (Equalize, Invert,
Cutout) take no magnitude. The neural encoders are fitted against these
functions, and the three magnitude-unlearnable policies are called directly
inside the augmentation pipeline.

Index convention: positions 0..10 are the magnitude-bearing (learnable)
policies, positions 11..13 the magnitude-unlearnable ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


class Category(enum.Enum):
    AFFINE = "affine-learnable"
    COLOR = "color-learnable"
    UNLEARNABLE = "magnitude-unlearnable"


@dataclass(frozen=True)
class SubPolicy:
    """One augmentation sub-policy: name, category, and magnitude range.

    ``low``/``high`` are in transform-native units (degrees for Rotate,
    fraction of the image dimension for Translate, shear coefficient,
    bit depth for Posterize, threshold for Solarize, enhancement factor for
    Brightness/Color/Contrast/Sharpness). They are ``None`` for the
    magnitude-unlearnable policies.
    """

    name: str
    category: Category
    index: int
    low: float | None = None
    high: float | None = None

    @property
    def learnable(self) -> bool:
        return self.category is not Category.UNLEARNABLE

    def native_magnitude(self, m: float) -> float:
        """Affine map from m in [0, 1] to the transform-native parameter."""
        if not self.learnable:
            raise ValueError(f"{self.name} has no magnitude")
        return self.low + float(m) * (self.high - self.low)


# Signed geometric policies put the identity at m = 0.5. Ranges are chosen
# so the neural encoders can actually reach them: the rotation matrix is an
# affine function of the magnitude inside the affine encoder, so the cosine
# entries are representable to ~2% only over a moderate angle span; the
# color encoder's scale path is architecturally bounded to (0.5, 1.5) and a
# fixed convolution cannot flip sign, which rules out the classic wide
# enhancement (0.1..1.9) and full Solarize (threshold down to 0) ranges.
POLICIES: tuple[SubPolicy, ...] = (
    SubPolicy("ShearX", Category.AFFINE, 0, -0.3, 0.3),
    SubPolicy("ShearY", Category.AFFINE, 1, -0.3, 0.3),
    SubPolicy("TranslateX", Category.AFFINE, 2, -0.3, 0.3),
    SubPolicy("TranslateY", Category.AFFINE, 3, -0.3, 0.3),
    SubPolicy("Rotate", Category.AFFINE, 4, -25.0, 25.0),
    SubPolicy("Posterize", Category.COLOR, 5, 8.0, 4.0),
    SubPolicy("Solarize", Category.COLOR, 6, 1.0, 0.55),
    SubPolicy("Brightness", Category.COLOR, 7, 0.6, 1.4),
    SubPolicy("Color", Category.COLOR, 8, 0.6, 1.4),
    SubPolicy("Contrast", Category.COLOR, 9, 0.6, 1.4),
    SubPolicy("Sharpness", Category.COLOR, 10, 0.6, 1.4),
    SubPolicy("Equalize", Category.UNLEARNABLE, 11),
    SubPolicy("Invert", Category.UNLEARNABLE, 12),
    SubPolicy("Cutout", Category.UNLEARNABLE, 13),
)

POLICY_NAMES: tuple[str, ...] = tuple(p.name for p in POLICIES)
LEARNABLE_POLICIES: tuple[SubPolicy, ...] = tuple(p for p in POLICIES if p.learnable)
AFFINE_POLICIES: tuple[SubPolicy, ...] = tuple(
    p for p in POLICIES if p.category is Category.AFFINE
)
COLOR_POLICIES: tuple[SubPolicy, ...] = tuple(
    p for p in POLICIES if p.category is Category.COLOR
)

N_POLICIES = len(POLICIES)
N_LEARNABLE = len(LEARNABLE_POLICIES)
N_UNLEARNABLE = N_POLICIES - N_LEARNABLE

_BY_NAME = {p.name: p for p in POLICIES}

# Luminance weights (ITU-R 601), used by Color and Contrast on 3-channel input.
_LUMA = (0.299, 0.587, 0.114)

CUTOUT_FILL = 0.5
CUTOUT_FRACTION = 0.25


def policy_by_name(name: str) -> SubPolicy:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown sub-policy {name!r}") from None


def _as_policy(policy: SubPolicy | str) -> SubPolicy:
    return policy_by_name(policy) if isinstance(policy, str) else policy


def check_image_batch(batch: torch.Tensor) -> None:
    """Raise if ``batch`` is not a rank-4 (B, C, H, W) float tensor."""
    if not isinstance(batch, torch.Tensor):
        raise TypeError(f"expected a torch.Tensor, got {type(batch).__name__}")
    if batch.dim() != 4:
        raise ValueError(f"expected a 4D (B, C, H, W) batch, got shape {tuple(batch.shape)}")
    if not batch.is_floating_point():
        raise ValueError(f"expected a floating-point batch, got dtype {batch.dtype}")


def affine_warp(batch: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Warp a batch with 2x3 affine matrices (bilinear, zero padding).

    ``theta`` maps normalized output coordinates to normalized input
    coordinates, per the usual grid-sampling convention. Accepts a single
    (2, 3) matrix broadcast over the batch or a (B, 2, 3) stack.
    """
    if theta.dim() == 2:
        theta = theta.unsqueeze(0).expand(batch.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(batch.shape), align_corners=False)
    return F.grid_sample(
        batch, grid, mode="bilinear", padding_mode="zeros", align_corners=False
    )


def manual_affine_matrix(
    policy: SubPolicy | str,
    magnitude: float,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """The 2x3 matrix realizing an affine sub-policy at the given magnitude.

    Translation entries are in normalized coordinates, where the full image
    width/height spans 2 units; a content shift by fraction f of the
    dimension corresponds to a matrix entry of -2f.
    """
    p = _as_policy(policy)
    if p.category is not Category.AFFINE:
        raise ValueError(f"{p.name} is not an affine sub-policy")
    v = p.native_magnitude(magnitude)
    if p.name == "ShearX":
        rows = [[1.0, v, 0.0], [0.0, 1.0, 0.0]]
    elif p.name == "ShearY":
        rows = [[1.0, 0.0, 0.0], [v, 1.0, 0.0]]
    elif p.name == "TranslateX":
        rows = [[1.0, 0.0, -2.0 * v], [0.0, 1.0, 0.0]]
    elif p.name == "TranslateY":
        rows = [[1.0, 0.0, 0.0], [0.0, 1.0, -2.0 * v]]
    else:  # Rotate
        a = math.radians(v)
        rows = [
            [math.cos(a), -math.sin(a), 0.0],
            [math.sin(a), math.cos(a), 0.0],
        ]
    return torch.tensor(rows, dtype=dtype)


def _luminance(x: torch.Tensor) -> torch.Tensor:
    if x.shape[1] == 3:
        w = torch.tensor(_LUMA, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        return (x * w).sum(dim=1, keepdim=True)
    return x.mean(dim=1, keepdim=True)


def _posterize(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    bits = int(round(policy_by_name("Posterize").native_magnitude(magnitude)))
    bits = max(1, min(8, bits))
    if bits >= 8:
        return x
    q = torch.floor(x * 255.0).clamp_(0, 255).to(torch.int64)
    shift = 8 - bits
    q = (q >> shift) << shift
    return q.to(x.dtype) / 255.0


def _solarize(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    threshold = policy_by_name("Solarize").native_magnitude(magnitude)
    return torch.where(x > threshold, 1.0 - x, x)


def _blend(base: torch.Tensor, x: torch.Tensor, factor: float) -> torch.Tensor:
    return base + factor * (x - base)


def _brightness(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    f = policy_by_name("Brightness").native_magnitude(magnitude)
    return x * f


def _color(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    f = policy_by_name("Color").native_magnitude(magnitude)
    return _blend(_luminance(x).expand_as(x), x, f)


def _contrast(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    f = policy_by_name("Contrast").native_magnitude(magnitude)
    mean = _luminance(x).mean(dim=(2, 3), keepdim=True)
    return _blend(mean, x, f)


_SMOOTH_KERNEL = torch.tensor(
    [[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]
) / 13.0


def _sharpness(x: torch.Tensor, magnitude: float) -> torch.Tensor:
    # PIL-style: the smoothing filter only covers the interior; the 1-pixel
    # border stays untouched.
    f = policy_by_name("Sharpness").native_magnitude(magnitude)
    c = x.shape[1]
    kernel = _SMOOTH_KERNEL.to(dtype=x.dtype, device=x.device)
    kernel = kernel.expand(c, 1, 3, 3)
    interior = F.conv2d(x, kernel, groups=c)
    smooth = x.clone()
    smooth[..., 1:-1, 1:-1] = interior
    return _blend(smooth, x, f)


def _equalize(x: torch.Tensor) -> torch.Tensor:
    # Per-plane histogram equalization following the classic 8-bit algorithm.
    q = torch.round(x * 255.0).clamp_(0, 255).to(torch.int64)
    out = torch.empty_like(x)
    b, c = x.shape[:2]
    for i in range(b):
        for j in range(c):
            plane = q[i, j]
            hist = torch.bincount(plane.reshape(-1), minlength=256)
            nonzero = hist.nonzero().reshape(-1)
            if nonzero.numel() <= 1:
                out[i, j] = plane.to(x.dtype) / 255.0
                continue
            step = int((int(hist.sum()) - int(hist[nonzero[-1]])) // 255)
            if step == 0:
                out[i, j] = plane.to(x.dtype) / 255.0
                continue
            csum = torch.cumsum(hist, dim=0) - hist  # exclusive prefix sum
            lut = ((csum + step // 2) // step).clamp_(0, 255)
            out[i, j] = lut.to(x.dtype)[plane] / 255.0
    return out


def _invert(x: torch.Tensor) -> torch.Tensor:
    return 1.0 - x


def cutout_side(height: int, width: int) -> int:
    return math.ceil(CUTOUT_FRACTION * min(height, width))


def _cutout(x: torch.Tensor, rng: torch.Generator) -> torch.Tensor:
    b, _, h, w = x.shape
    side = cutout_side(h, w)
    cy = torch.randint(0, h, (b,), generator=rng)
    cx = torch.randint(0, w, (b,), generator=rng)
    ys = torch.arange(h).view(1, h, 1)
    xs = torch.arange(w).view(1, 1, w)
    y0 = (cy - side // 2).view(b, 1, 1)
    x0 = (cx - side // 2).view(b, 1, 1)
    mask = (ys >= y0) & (ys < y0 + side) & (xs >= x0) & (xs < x0 + side)
    mask = mask.unsqueeze(1).to(device=x.device)
    fill = torch.as_tensor(CUTOUT_FILL, dtype=x.dtype, device=x.device)
    return torch.where(mask, fill, x)


def apply_manual(
    policy: SubPolicy | str,
    batch: torch.Tensor,
    magnitude: float | None = None,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Apply one manual sub-policy to an image batch.

    Args:
        policy: sub-policy or its name.
        batch: (B, C, H, W) float tensor with values in [0, 1].
        magnitude: strength in [0, 1]; required for learnable policies and
            forbidden for the magnitude-unlearnable ones.
        rng: generator for Cutout's random patch center (required there,
            ignored elsewhere).

    Returns:
        Transformed batch of identical shape, clamped to [0, 1].
    """
    check_image_batch(batch)
    p = _as_policy(policy)
    if p.learnable:
        if magnitude is None:
            raise ValueError(f"{p.name} requires a magnitude")
    elif magnitude is not None:
        raise ValueError(f"{p.name} does not take a magnitude")

    if p.category is Category.AFFINE:
        theta = manual_affine_matrix(p, magnitude, dtype=batch.dtype).to(batch.device)
        out = affine_warp(batch, theta)
    elif p.name == "Posterize":
        out = _posterize(batch, magnitude)
    elif p.name == "Solarize":
        out = _solarize(batch, magnitude)
    elif p.name == "Brightness":
        out = _brightness(batch, magnitude)
    elif p.name == "Color":
        out = _color(batch, magnitude)
    elif p.name == "Contrast":
        out = _contrast(batch, magnitude)
    elif p.name == "Sharpness":
        out = _sharpness(batch, magnitude)
    elif p.name == "Equalize":
        out = _equalize(batch)
    elif p.name == "Invert":
        out = _invert(batch)
    else:  # Cutout
        if rng is None:
            raise ValueError("Cutout requires an rng for its patch center")
        out = _cutout(batch, rng)
    return out.clamp(0.0, 1.0)
