import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from augdistill.policies import (
    AFFINE_POLICIES,
    COLOR_POLICIES,
    Category,
    CUTOUT_FILL,
    LEARNABLE_POLICIES,
    N_LEARNABLE,
    N_POLICIES,
    N_UNLEARNABLE,
    POLICIES,
    apply_manual,
    cutout_side,
    manual_affine_matrix,
    policy_by_name,
)


def _batch(b=2, c=3, h=8, w=8, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(b, c, h, w, generator=g)


class TestRegistry:
    def test_category_counts(self):
        assert N_POLICIES == 14
        assert N_LEARNABLE == 11
        assert N_UNLEARNABLE == 3
        assert len(AFFINE_POLICIES) == 5
        assert len(COLOR_POLICIES) == 6

    def test_index_convention_learnable_first(self):
        for p in POLICIES[:11]:
            assert p.learnable
        for p in POLICIES[11:]:
            assert not p.learnable
        assert [p.index for p in POLICIES] == list(range(14))

    def test_expected_members(self):
        names = {p.name for p in POLICIES}
        assert names == {
            "ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate",
            "Posterize", "Solarize", "Brightness", "Color", "Contrast",
            "Sharpness", "Equalize", "Invert", "Cutout",
        }
        assert policy_by_name("Equalize").category is Category.UNLEARNABLE

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown sub-policy"):
            policy_by_name("MixUp")

    def test_signed_policies_identity_at_half(self):
        for name in ("ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate"):
            assert policy_by_name(name).native_magnitude(0.5) == pytest.approx(0.0)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_magnitude_map_affine_and_monotone(self, m1, m2):
        for p in LEARNABLE_POLICIES:
            v1, v2 = p.native_magnitude(m1), p.native_magnitude(m2)
            mid = p.native_magnitude((m1 + m2) / 2)
            assert mid == pytest.approx((v1 + v2) / 2, abs=1e-9)
            if m1 < m2:
                increasing = p.high > p.low
                assert (v1 < v2) == increasing or v1 == v2


class TestContracts:
    def test_magnitude_required_for_learnable(self):
        with pytest.raises(ValueError, match="requires a magnitude"):
            apply_manual("Rotate", _batch())

    def test_magnitude_forbidden_for_unlearnable(self):
        with pytest.raises(ValueError, match="does not take a magnitude"):
            apply_manual("Invert", _batch(), magnitude=0.3)

    def test_non_4d_input_rejected(self):
        with pytest.raises(ValueError, match="4D"):
            apply_manual("Invert", torch.rand(3, 8, 8))

    def test_non_tensor_rejected(self):
        with pytest.raises(TypeError):
            apply_manual("Invert", [[0.0]])

    def test_cutout_needs_rng(self):
        with pytest.raises(ValueError, match="rng"):
            apply_manual("Cutout", _batch())


class TestPointwiseOps:
    def test_invert_is_complement(self):
        x = _batch()
        assert torch.equal(apply_manual("Invert", x), 1.0 - x)

    def test_invert_involution(self):
        x = _batch()
        back = apply_manual("Invert", apply_manual("Invert", x))
        assert torch.allclose(back, x, atol=1e-7)

    def test_solarize_against_pixel_loop(self):
        # Element-wise oracle on a small image, checked at several magnitudes.
        g = torch.Generator().manual_seed(7)
        x = torch.rand(1, 3, 4, 4, generator=g)
        pol = policy_by_name("Solarize")
        for m in (0.0, 0.3, 0.77, 1.0):
            thr = pol.native_magnitude(m)
            got = apply_manual("Solarize", x, m)
            for c in range(3):
                for i in range(4):
                    for j in range(4):
                        v = float(x[0, c, i, j])
                        want = 1.0 - v if v > thr else v
                        assert float(got[0, c, i, j]) == pytest.approx(want, abs=1e-6)

    def test_solarize_identity_at_zero(self):
        x = _batch()
        assert torch.equal(apply_manual("Solarize", x, 0.0), x)

    def test_posterize_bit_depths(self):
        x = torch.tensor([17 / 255, 100 / 255, 200 / 255]).view(1, 1, 1, 3)
        out = apply_manual("Posterize", x, 1.0)  # 4 bits
        want = torch.tensor([16 / 255, 96 / 255, 192 / 255]).view(1, 1, 1, 3)
        assert torch.allclose(out, want, atol=1e-7)
        assert torch.allclose(apply_manual("Posterize", x, 0.0), x, atol=1e-7)

    def test_brightness_scales(self):
        x = _batch() * 0.5
        out = apply_manual("Brightness", x, 1.0)
        assert torch.allclose(out, (x * 1.4).clamp(0, 1), atol=1e-6)

    def test_enhancement_identity_at_half(self):
        x = _batch()
        for name in ("Brightness", "Color", "Contrast", "Sharpness"):
            assert torch.allclose(apply_manual(name, x, 0.5), x, atol=1e-6), name

    def test_color_desaturates_at_zero_end(self):
        x = _batch()
        out = apply_manual("Color", x, 0.0)  # factor 0.6: closer to grayscale
        w = torch.tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1)
        gray = (x * w).sum(1, keepdim=True).expand_as(x)
        assert torch.allclose(out, (gray + 0.6 * (x - gray)).clamp(0, 1), atol=1e-6)

    def test_contrast_uses_per_image_mean(self):
        x = _batch(b=3)
        out = apply_manual("Contrast", x, 1.0)
        w = torch.tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1)
        mean = (x * w).sum(1, keepdim=True).mean(dim=(2, 3), keepdim=True)
        assert torch.allclose(out, (mean + 1.4 * (x - mean)).clamp(0, 1), atol=1e-6)

    def test_sharpness_preserves_border(self):
        x = _batch(h=6, w=6)
        out = apply_manual("Sharpness", x, 1.0)
        assert torch.allclose(out[..., 0, :], x[..., 0, :], atol=1e-6)
        assert torch.allclose(out[..., -1, :], x[..., -1, :], atol=1e-6)
        assert torch.allclose(out[..., :, 0], x[..., :, 0], atol=1e-6)

    def test_equalize_flat_image_unchanged(self):
        # quantizes through 256 bins, so "unchanged" means within half a bin
        x = torch.full((1, 1, 8, 8), 0.25)
        assert torch.allclose(apply_manual("Equalize", x), x, atol=1 / 255)

    def test_equalize_spreads_histogram(self):
        # Two-level image: equalization must widen the value range.
        x = torch.cat([torch.full((1, 1, 8, 4), 0.4), torch.full((1, 1, 8, 4), 0.5)], dim=3)
        out = apply_manual("Equalize", x)
        assert float(out.max() - out.min()) > float(x.max() - x.min())


class TestAffineOps:
    def test_rotate_identity_at_half(self):
        x = _batch(h=16, w=16)
        out = apply_manual("Rotate", x, 0.5)
        assert torch.allclose(out, x, atol=1e-6)

    def test_all_affine_identity_at_half(self):
        x = _batch(h=16, w=16)
        for p in AFFINE_POLICIES:
            assert torch.allclose(apply_manual(p, x, 0.5), x, atol=1e-6), p.name

    def test_translate_moves_content(self):
        x = torch.zeros(1, 1, 8, 8)
        x[0, 0, 4, 2] = 1.0
        out = apply_manual("TranslateX", x, 1.0)  # +0.3 of width = +2.4 px
        hot = out[0, 0, 4]
        assert float(hot[4]) + float(hot[5]) > 0.9  # mass moved right by ~2.4
        assert float(out[0, 0, 4, 2]) < 0.05

    def test_translate_matrix_entry(self):
        theta = manual_affine_matrix("TranslateX", 1.0)
        assert float(theta[0, 2]) == pytest.approx(-0.6)
        theta = manual_affine_matrix("TranslateY", 0.0)
        assert float(theta[1, 2]) == pytest.approx(0.6)

    def test_rotate_inverse_composition(self):
        # interpolation error is only meaningful on band-limited content,
        # so build a smooth image rather than white noise
        g = torch.Generator().manual_seed(3)
        coarse = torch.rand(1, 3, 8, 8, generator=g)
        x = torch.nn.functional.interpolate(
            coarse, size=(32, 32), mode="bilinear", align_corners=False
        )
        for m in (0.2, 0.7):
            there = apply_manual("Rotate", x, m)
            back = apply_manual("Rotate", there, 1.0 - m)
            inner = (slice(None), slice(None), slice(8, 24), slice(8, 24))
            err = (back[inner] - x[inner]).abs().mean()
            assert float(err) < 0.02, (m, float(err))

    def test_manual_matrix_only_for_affine(self):
        with pytest.raises(ValueError, match="not an affine"):
            manual_affine_matrix("Brightness", 0.5)


class TestCutout:
    def test_patch_geometry(self):
        x = torch.ones(1, 1, 32, 32)
        g = torch.Generator().manual_seed(0)
        out = apply_manual("Cutout", x, rng=g)
        filled = (out == CUTOUT_FILL).sum()
        side = cutout_side(32, 32)
        assert side == 8
        assert 0 < int(filled) <= side * side

    def test_seed_controls_center(self):
        x = _batch(b=4, h=16, w=16)
        a = apply_manual("Cutout", x, rng=torch.Generator().manual_seed(5))
        b = apply_manual("Cutout", x, rng=torch.Generator().manual_seed(5))
        c = apply_manual("Cutout", x, rng=torch.Generator().manual_seed(6))
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_per_image_centers_differ(self):
        x = torch.zeros(8, 1, 32, 32)
        out = apply_manual("Cutout", x, rng=torch.Generator().manual_seed(1))
        masks = (out == CUTOUT_FILL).reshape(8, -1)
        assert len({tuple(m.tolist()) for m in masks}) > 1


class TestGlobalProperties:
    @pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.name)
    def test_shape_and_range(self, policy):
        x = _batch(b=2, c=3, h=12, w=12)
        kwargs = {}
        if policy.learnable:
            kwargs["magnitude"] = 0.8
        if policy.name == "Cutout":
            kwargs["rng"] = torch.Generator().manual_seed(0)
        out = apply_manual(policy, x, **kwargs)
        assert out.shape == x.shape
        assert float(out.min()) >= 0.0
        assert float(out.max()) <= 1.0

    @pytest.mark.parametrize("policy", POLICIES, ids=lambda p: p.name)
    def test_deterministic_given_seed(self, policy):
        x = _batch(b=2, c=3, h=12, w=12, seed=9)
        def run():
            kwargs = {}
            if policy.learnable:
                kwargs["magnitude"] = 0.33
            if policy.name == "Cutout":
                kwargs["rng"] = torch.Generator().manual_seed(77)
            return apply_manual(policy, x, **kwargs)
        assert torch.equal(run(), run())
