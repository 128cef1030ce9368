import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from augdistill.sampling import (
    EPS,
    AugmentParams,
    SampledParams,
    logistic_sample,
    rbd,
    sample_params,
)


class TestRbdValues:
    def test_p_near_one_noise_zero_gives_half(self):
        # log(1 - eps) ~= 0, so the pre-sigmoid argument is ~0
        out = rbd(torch.tensor(1.0 - EPS), 0.0, 0.05)
        assert float(out) == pytest.approx(0.5, abs=1e-5)

    def test_p_half_noise_zero(self):
        # sigmoid(log(0.5)/0.05) = sigmoid(-13.8629...) = 9.5366e-7
        out = rbd(torch.tensor(0.5), 0.0, 0.05)
        want = 1.0 / (1.0 + math.exp(-math.log(0.5) / 0.05))
        assert want == pytest.approx(9.54e-7, rel=5e-3)
        assert float(out) == pytest.approx(want, rel=1e-4)

    def test_clamps_p_one_exactly(self):
        out = rbd(torch.tensor(1.0), 0.0, 0.05)
        assert float(out) == pytest.approx(0.5, abs=1e-5)

    def test_domain_errors(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            rbd(torch.tensor(1.5), 0.0, 0.05)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            rbd(torch.tensor(-0.1), 0.0, 0.05)
        with pytest.raises(ValueError, match="temperature"):
            rbd(torch.tensor(0.5), 0.0, 0.0)
        with pytest.raises(ValueError, match="temperature"):
            rbd(torch.tensor(0.5), 0.0, -1.0)

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_exceedance_matches_analytic_law(self, p):
        # P(rbd > 0.5) = P(log p + L > 0) = p / (1 + p) under Logistic(0, 1)
        n = 100_000
        g = torch.Generator().manual_seed(int(p * 1000))
        noise = logistic_sample((n,), g, dtype=torch.float64)
        out = rbd(torch.full((n,), p, dtype=torch.float64), noise, 0.05)
        frac = float((out > 0.5).double().mean())
        assert abs(frac - p / (1 + p)) < 0.01


class TestRbdProperties:
    @given(
        st.floats(1e-6, 1 - 1e-6),
        st.floats(-8.0, 8.0),
        st.floats(0.01, 2.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_output_inside_unit_interval(self, p, noise, temp):
        # strictly inside (0, 1) while the sigmoid argument is representable
        # in double precision; saturates to an exact bound beyond that
        out = float(rbd(torch.tensor(p, dtype=torch.float64), noise, temp))
        assert 0.0 <= out <= 1.0
        arg = (math.log(max(p, EPS)) + noise) / temp
        if abs(arg) < 36.0:
            assert 0.0 < out < 1.0

    @given(
        st.floats(0.05, 0.7),
        st.floats(0.005, 0.02),
        st.floats(-1.0, 1.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_strictly_increasing_in_p(self, p, dp, noise):
        lo = rbd(torch.tensor(p, dtype=torch.float64), noise, 0.05)
        hi = rbd(torch.tensor(p + dp, dtype=torch.float64), noise, 0.05)
        assert float(hi) > float(lo)

    def test_sharpening_as_temperature_vanishes(self):
        g = torch.Generator().manual_seed(0)
        n = 20_000
        p = 0.6
        noise = logistic_sample((n,), g, dtype=torch.float64)
        out = rbd(torch.full((n,), p, dtype=torch.float64), noise, 0.005)
        extreme = ((out < 0.01) | (out > 0.99)).double().mean()
        assert float(extreme) > 0.98
        high = float((out > 0.5).double().mean())
        assert high == pytest.approx(p / (1 + p), abs=0.02)

    def test_gradient_nonvanishing_over_raw_range(self):
        raw = torch.linspace(-6.0, 6.0, 25, dtype=torch.float64, requires_grad=True)
        out = rbd(torch.sigmoid(raw), torch.zeros_like(raw), 0.05)
        out.sum().backward()
        assert torch.all(raw.grad > 0.0)


class TestAugmentParams:
    def test_shapes_enforced(self):
        with pytest.raises(ValueError, match="raw_m"):
            AugmentParams(torch.zeros(10), torch.zeros(14))
        with pytest.raises(ValueError, match="raw_p"):
            AugmentParams(torch.zeros(11), torch.zeros(13))

    def test_finite_enforced(self):
        bad = torch.zeros(11)
        bad[3] = float("inf")
        with pytest.raises(ValueError, match="finite"):
            AugmentParams(bad, torch.zeros(14))

    def test_create_zeros_and_seeded(self):
        p = AugmentParams.create()
        assert torch.equal(p.raw_m, torch.zeros(11))
        assert p.raw_m.requires_grad
        g1 = torch.Generator().manual_seed(3)
        g2 = torch.Generator().manual_seed(3)
        a = AugmentParams.create(std=0.1, rng=g1)
        b = AugmentParams.create(std=0.1, rng=g2)
        assert torch.equal(a.raw_m, b.raw_m)
        assert torch.equal(a.raw_p, b.raw_p)


class TestSampleParams:
    def test_all_zero_raw_frozen_noise(self):
        params = AugmentParams.create(requires_grad=False)
        noise = (torch.zeros(11), torch.zeros(14))
        out = sample_params(params, 0.05, noise=noise)
        want = float(rbd(torch.tensor(0.5), 0.0, 0.05))
        assert torch.allclose(out.m, torch.full((11,), want), rtol=1e-5)
        assert torch.allclose(out.p, torch.full((14,), want), rtol=1e-5)

    def test_same_seed_identical(self):
        params = AugmentParams.create(requires_grad=False)
        a = sample_params(params, 0.05, rng=torch.Generator().manual_seed(9))
        b = sample_params(params, 0.05, rng=torch.Generator().manual_seed(9))
        assert torch.equal(a.m, b.m)
        assert torch.equal(a.p, b.p)
        assert torch.equal(a.noise_m, b.noise_m)

    def test_noise_record_replays_exactly(self):
        params = AugmentParams.create(requires_grad=False)
        a = sample_params(params, 0.05, rng=torch.Generator().manual_seed(4))
        b = sample_params(params, 0.05, noise=(a.noise_m, a.noise_p))
        assert torch.equal(a.m, b.m)
        assert torch.equal(a.p, b.p)

    def test_requires_rng_xor_noise(self):
        params = AugmentParams.create(requires_grad=False)
        with pytest.raises(ValueError, match="exactly one"):
            sample_params(params, 0.05)
        with pytest.raises(ValueError, match="exactly one"):
            sample_params(params, 0.05, rng=torch.Generator(),
                          noise=(torch.zeros(11), torch.zeros(14)))

    def test_range_and_monotonicity_with_frozen_noise(self):
        # moderate noise keeps every sigmoid argument representable, where
        # the strict range/monotonicity guarantees are exact
        g = torch.Generator().manual_seed(11)
        noise = (
            logistic_sample((11,), g, dtype=torch.float64).clamp(-0.4, 0.4),
            logistic_sample((14,), g, dtype=torch.float64).clamp(-0.4, 0.4),
        )
        base = AugmentParams(
            torch.randn(11, generator=g, dtype=torch.float64),
            torch.randn(14, generator=g, dtype=torch.float64),
        )
        lo = sample_params(base, 0.05, noise=noise)
        assert torch.all(lo.m > 0) and torch.all(lo.m < 1)
        assert torch.all(lo.p > 0) and torch.all(lo.p < 1)
        bumped = AugmentParams(base.raw_m.detach() + 0.05, base.raw_p.detach() + 0.05)
        hi = sample_params(bumped, 0.05, noise=noise)
        assert torch.all(hi.m > lo.m)
        assert torch.all(hi.p > lo.p)

    def test_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(21)
        raw_m = torch.randn(11, generator=g, dtype=torch.float64)
        raw_p = torch.randn(14, generator=g, dtype=torch.float64)
        noise = (
            logistic_sample((11,), g, dtype=torch.float64),
            logistic_sample((14,), g, dtype=torch.float64),
        )
        params = AugmentParams(raw_m.clone().requires_grad_(True),
                               raw_p.clone().requires_grad_(True))
        out = sample_params(params, 0.05, noise=noise)
        out.m.sum().backward()
        grad = params.raw_m.grad.clone()
        h = 1e-6
        for i in range(11):
            plus, minus = raw_m.clone(), raw_m.clone()
            plus[i] += h
            minus[i] -= h
            fd = (
                sample_params(AugmentParams(plus, raw_p), 0.05, noise=noise).m.sum()
                - sample_params(AugmentParams(minus, raw_p), 0.05, noise=noise).m.sum()
            ) / (2 * h)
            if max(abs(float(fd)), abs(float(grad[i]))) < 1e-9:
                continue  # saturated coordinate: both effectively zero
            denom = max(abs(float(fd)), abs(float(grad[i])))
            assert abs(float(fd) - float(grad[i])) / denom < 1e-3

    def test_sampled_params_shape_validation(self):
        with pytest.raises(ValueError):
            SampledParams(torch.zeros(10), torch.zeros(14),
                          torch.zeros(10), torch.zeros(14))
