import pytest
import torch

from augdistill.encoders import AffineEncoder, ColorEncoder, MetaEncoderSet
from augdistill.policies import apply_manual, manual_affine_matrix
from augdistill.trainer import heldout_fit_mse


def _batch(b=4, h=16, w=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    coarse = torch.rand(b, 3, h // 4, w // 4, generator=g)
    return torch.nn.functional.interpolate(coarse, size=(h, w), mode="bilinear",
                                           align_corners=False)


class TestAffineEncoder:
    def test_zero_fc_gives_zero_matrix(self):
        enc = AffineEncoder()
        with torch.no_grad():
            enc.to_matrix.weight.zero_()
            enc.to_matrix.bias.zero_()
        theta = enc.matrix(0.3)
        assert torch.equal(theta, torch.zeros(2, 3))

    def test_identity_matrix_warp_is_identity(self):
        enc = AffineEncoder()
        with torch.no_grad():
            enc.to_matrix.weight.zero_()
            enc.to_matrix.bias.copy_(torch.tensor([1.0, 0, 0, 0, 1, 0]))
        x = _batch()
        out = enc(x, 0.7)
        assert torch.allclose(out, x, atol=1e-6)

    def test_matrix_deterministic_in_magnitude(self):
        enc = AffineEncoder(rng=torch.Generator().manual_seed(0))
        a = enc.matrix(0.25)
        b = enc.matrix(0.25)
        assert torch.equal(a, b)

    def test_magnitude_must_be_finite_scalar(self):
        enc = AffineEncoder()
        with pytest.raises(ValueError, match="scalar"):
            enc.matrix(torch.tensor([0.1, 0.2]))
        with pytest.raises(ValueError, match="finite"):
            enc.matrix(float("nan"))

    def test_gradient_wrt_magnitude_matches_fd(self):
        enc = AffineEncoder(rng=torch.Generator().manual_seed(3)).double()
        x = _batch(seed=5).double()
        m = torch.tensor(0.4, dtype=torch.float64, requires_grad=True)
        enc(x, m).mean().backward()
        grad = float(m.grad)
        # the warp evaluation carries ~1e-11 relative noise, so the step
        # must stay large enough for the difference to dominate it
        h = 1e-4
        with torch.no_grad():
            fp = float(enc(x, torch.tensor(0.4 + h).double()).mean())
            fm = float(enc(x, torch.tensor(0.4 - h).double()).mean())
        fd = (fp - fm) / (2 * h)
        assert fd == pytest.approx(grad, rel=1e-3)

    def test_matrix_noise_shifts_warp(self):
        enc = AffineEncoder(rng=torch.Generator().manual_seed(1))
        x = _batch()
        clean = enc(x, 0.5)
        noised = enc(x, 0.5, matrix_noise=torch.full((2, 3), 0.05))
        assert not torch.allclose(clean, noised)


class TestColorEncoder:
    def test_neutral_scale_shift_identity_conv(self):
        enc = ColorEncoder()
        with torch.no_grad():
            enc.to_scale_shift.weight.zero_()
            enc.to_scale_shift.bias.zero_()
        x = _batch()
        out = enc(x, 0.9)
        assert torch.allclose(out, x, atol=1e-6)

    def test_shift_saturation_limit(self):
        # shift pre-activation -> +inf saturates the output toward x + 0.5
        enc = ColorEncoder()
        with torch.no_grad():
            enc.to_scale_shift.weight.zero_()
            enc.to_scale_shift.bias.copy_(torch.tensor([0.0, 50.0]))
        x = _batch()
        out = enc(x, 0.2)
        assert torch.allclose(out, x + 0.5, atol=1e-5)

    def test_identity_init_property(self):
        for seed in range(3):
            enc = ColorEncoder(rng=torch.Generator().manual_seed(seed))
            x = _batch(seed=seed)
            mse = float(((enc(x, 0.5) - x) ** 2).mean())
            assert mse <= 0.05

    def test_scale_shift_ranges(self):
        enc = ColorEncoder(rng=torch.Generator().manual_seed(2))
        s, t = enc.scale_shift(0.7)
        assert 0.0 < float(s) < 1.0
        assert 0.0 < float(t) < 1.0

    def test_rbd_noise_on_scale_and_shift(self):
        enc = ColorEncoder(rng=torch.Generator().manual_seed(4))
        x = _batch()
        clean = enc(x, 0.5)
        noised = enc(x, 0.5, scale_noise=torch.tensor(2.0),
                     shift_noise=torch.tensor(-2.0), temperature=0.05)
        assert not torch.allclose(clean, noised)

    def test_gradient_wrt_magnitude_finite_everywhere(self):
        enc = ColorEncoder(rng=torch.Generator().manual_seed(5))
        x = _batch()
        for mv in (0.0, 0.25, 0.5, 0.75, 1.0):
            m = torch.tensor(mv, requires_grad=True)
            enc(x, m).mean().backward()
            assert torch.isfinite(m.grad)


class TestMetaEncoderSet:
    def test_one_encoder_per_learnable_policy(self):
        enc = MetaEncoderSet(seed=0)
        assert len(enc.encoders) == 11
        assert isinstance(enc.encoder_for("Rotate"), AffineEncoder)
        assert isinstance(enc.encoder_for("Brightness"), ColorEncoder)
        with pytest.raises(ValueError, match="no neural encoder"):
            enc.encoder_for("Invert")

    def test_seed_determinism(self):
        a = MetaEncoderSet(seed=5)
        b = MetaEncoderSet(seed=5)
        c = MetaEncoderSet(seed=6)
        assert torch.equal(a.state_signature(), b.state_signature())
        assert not torch.equal(a.state_signature(), c.state_signature())

    def test_freeze_blocks_gradients(self):
        enc = MetaEncoderSet(seed=0)
        assert not enc.frozen
        enc.freeze()
        assert enc.frozen
        assert all(not p.requires_grad for p in enc.parameters())

    def test_forward_policy_unlearnable_uses_manual(self):
        enc = MetaEncoderSet(seed=0)
        x = _batch()
        out = enc.forward_policy("Invert", x)
        assert torch.equal(out, 1.0 - x)
        with pytest.raises(ValueError, match="magnitude"):
            enc.forward_policy("Invert", x, magnitude=0.5)

    def test_forward_policy_cutout_uses_rng(self):
        enc = MetaEncoderSet(seed=0)
        x = _batch()
        a = enc.forward_policy("Cutout", x, rng=torch.Generator().manual_seed(3))
        b = enc.forward_policy("Cutout", x, rng=torch.Generator().manual_seed(3))
        assert torch.equal(a, b)

    def test_affine_matrix_diversity_noise_seeded(self):
        enc = MetaEncoderSet(seed=0)
        base = enc.affine_matrix("Rotate", 0.5)
        n1 = enc.affine_matrix("Rotate", 0.5, rng=torch.Generator().manual_seed(1),
                               diversity=True)
        n2 = enc.affine_matrix("Rotate", 0.5, rng=torch.Generator().manual_seed(1),
                               diversity=True)
        assert torch.equal(n1, n2)
        assert not torch.equal(base, n1)
        with pytest.raises(ValueError, match="rng"):
            enc.affine_matrix("Rotate", 0.5, diversity=True)

    def test_affine_matrix_rejects_color_policy(self):
        enc = MetaEncoderSet(seed=0)
        with pytest.raises(ValueError, match="not an affine"):
            enc.affine_matrix("Brightness", 0.5)


class TestFittedEncoders:
    """Fidelity checks on the Stage-I fitted set (session fixture)."""

    def test_rotate_matrix_near_identity_at_midpoint(self, fitted_encoders):
        theta = fitted_encoders.affine_matrix("Rotate", 0.5)
        eye = torch.tensor([[1.0, 0, 0], [0, 1, 0]])
        assert float((theta - eye).norm()) <= 0.05

    def test_translate_matrix_matches_manual_extreme(self, fitted_encoders):
        theta = fitted_encoders.affine_matrix("TranslateX", 1.0)
        manual = manual_affine_matrix("TranslateX", 1.0)
        assert float((theta[0, 2] - manual[0, 2]).abs()) <= 0.05

    @pytest.mark.parametrize("m", [0.1, 0.9])
    def test_shear_matches_manual(self, fitted_encoders, toy_small, m):
        x = toy_small.test_x[:64]
        manual = apply_manual("ShearX", x, m)
        out = fitted_encoders.forward_policy("ShearX", x, torch.tensor(m))
        assert float(((manual - out) ** 2).mean()) <= 5e-3

    def test_brightness_matches_manual(self, fitted_encoders, toy_small):
        x = toy_small.test_x[:64]
        manual = apply_manual("Brightness", x, 0.75)
        out = fitted_encoders.forward_policy("Brightness", x, torch.tensor(0.75))
        assert float(((manual - out) ** 2).mean()) <= 5e-3

    def test_all_learnable_policies_under_bound(self, fitted_encoders, toy_small):
        for name in ("ShearY", "TranslateY", "Rotate", "Posterize", "Solarize",
                     "Color", "Contrast", "Sharpness"):
            mse = heldout_fit_mse(fitted_encoders, name, toy_small.test_x)
            assert mse <= 5e-3, (name, mse)
