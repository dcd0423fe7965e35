"""Tests for direction-conditioning primitives."""

import math

import numpy as np
import pytest
import torch
from torch.autograd import gradcheck

from steerex.conditioning import (
    CondAlignment,
    CondFeatures,
    ConditioningMode,
    DoAOneHot,
    DoaProjection,
    FilmParams,
    MaskFusion,
    encode_doa,
    film,
    spatial_attention,
)
from steerex.errors import ConfigError


class TestEncodeDoa:
    def test_basis_vectors(self):
        v = encode_doa(0, 72)
        assert v[0] == 1 and v.sum() == 1
        v = encode_doa(24, 72)
        assert v[24] == 1 and v.sum() == 1
        assert 24 * 5 == 120  # index 24 decodes to 120 degrees at 5 degree grid

    def test_all_indices_one_hot(self):
        for i in range(72):
            v = encode_doa(i, 72)
            assert v.sum() == 1 and v.max() == 1 and (v == 0).sum() == 71

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            encode_doa(72, 72)
        with pytest.raises(ValueError):
            encode_doa(-1, 72)

    def test_onehot_wrapper_validates(self):
        DoAOneHot(encode_doa(3, 72), resolution_deg=5)
        with pytest.raises(ValueError):
            DoAOneHot(torch.ones(72), resolution_deg=5)
        with pytest.raises(ConfigError):
            DoAOneHot(encode_doa(3, 72), resolution_deg=10)


class TestDoaProjection:
    def test_time_repetition(self):
        proj = DoaProjection(72, channels=4, freq_bins=9)
        out = proj(encode_doa(7, 72), num_frames=6)
        assert out.shape == (1, 4, 9, 6)
        for t in range(1, 6):
            assert torch.equal(out[..., t], out[..., 0])

    def test_zero_weights_give_zero(self):
        proj = DoaProjection(72, 4, 9)
        torch.nn.init.zeros_(proj.linear.weight)
        assert torch.all(proj(encode_doa(0, 72), 3) == 0)

    def test_injective_over_codes(self):
        torch.manual_seed(0)
        proj = DoaProjection(72, 2, 5)
        outs = [proj(encode_doa(i, 72), 1).flatten() for i in range(72)]
        for i in range(72):
            for j in range(i + 1, 72):
                assert not torch.allclose(outs[i], outs[j])

    def test_wrong_code_length(self):
        with pytest.raises(ConfigError):
            DoaProjection(72, 4, 9)(torch.zeros(8), 3)

    def test_batched(self):
        proj = DoaProjection(8, 3, 5)
        codes = torch.stack([encode_doa(1, 8), encode_doa(5, 8)])
        out = proj(codes, 4)
        assert out.shape == (2, 3, 5, 4)
        assert not torch.allclose(out[0], out[1])


class TestCondAlignment:
    def test_same_time_is_conv_only(self):
        torch.manual_seed(1)
        align = CondAlignment(in_channels=2, in_bins=257, out_channels=4, out_bins=129)
        x = torch.randn(1, 2, 257, 6)
        assert torch.equal(align(x, 6), align.conv(x))

    def test_frequency_chain_shapes(self):
        # the 512-point grid maps 257 -> 129 -> 65 -> 33 -> 17 with strides 2^r
        for out_bins in (129, 65, 33, 17):
            align = CondAlignment(3, 257, 5, out_bins)
            out = align(torch.randn(1, 3, 257, 4), 4)
            assert out.shape == (1, 5, out_bins, 4)

    def test_impossible_mapping_rejected(self):
        with pytest.raises(ConfigError):
            CondAlignment(2, 257, 4, 100)
        with pytest.raises(ConfigError):
            CondAlignment(2, 65, 4, 129)

    def test_constant_in_time_stays_constant(self):
        torch.manual_seed(2)
        align = CondAlignment(2, 257, 4, 129)
        frame = torch.randn(1, 2, 257, 1)
        out = align(frame.expand(-1, -1, -1, 5).contiguous(), 10)
        for t in range(1, 10):
            assert torch.allclose(out[..., t], out[..., 0], atol=1e-6)

    def test_linear_ramp_matches_interpolation_formula(self):
        # centered conv configured as a pass-through isolates the time stage
        align = CondAlignment(1, 257, 1, 257)
        with torch.no_grad():
            align.conv.weight.zero_()
            align.conv.weight[0, 0, 1, 0] = 1.0
            align.conv.bias.zero_()
        t_in, t_out = 4, 7
        ramp = torch.arange(t_in, dtype=torch.float32)
        x = ramp.expand(1, 1, 257, t_in)
        with torch.no_grad():
            out = align(x, t_out)
        # endpoint-aligned linear interpolation: query j sits at j*(T'-1)/(T-1)
        expected = np.arange(t_out) * (t_in - 1) / (t_out - 1)
        got = out[0, 0, 100, :].numpy()
        assert np.allclose(got, expected, atol=1e-6)


class TestSpatialAttention:
    def test_zero_encoder_gives_zero(self):
        e = torch.zeros(1, 4, 5, 3)
        out = spatial_attention(e, torch.randn_like(e), torch.randn_like(e),
                                ConditioningMode.X_PHI_DL)
        assert torch.all(out == 0)

    def test_channel_softmax_normalization(self):
        # with unit encoder features the output reduces to the softmax weights
        torch.manual_seed(3)
        e = torch.ones(2, 6, 5, 4)
        out = spatial_attention(e, torch.randn_like(e), None, ConditioningMode.X_PHI)
        sums = out.sum(dim=1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)

    def test_matches_direct_formula(self):
        torch.manual_seed(4)
        e = torch.randn(1, 3, 4, 2, dtype=torch.float64)
        q = torch.randn_like(e)
        d = torch.randn_like(e)
        out = spatial_attention(e, q, d, ConditioningMode.X_PHI_DL)
        expected = torch.softmax((q + d) * e / math.sqrt(3), dim=1) * e
        assert torch.allclose(out, expected, atol=1e-12)

    def test_not_homogeneous_in_query(self):
        torch.manual_seed(5)
        e = torch.randn(1, 3, 4, 2)
        q = torch.randn_like(e)
        a1 = spatial_attention(e, q, None, ConditioningMode.X_PHI)
        a2 = spatial_attention(e, 2 * q, None, ConditioningMode.X_PHI)
        assert not torch.allclose(a2, 2 * a1, atol=1e-4)

    def test_mode_ignores_unused_condition(self):
        torch.manual_seed(6)
        e = torch.randn(1, 4, 5, 3)
        q = torch.randn_like(e)
        d1, d2 = torch.randn_like(e), torch.randn_like(e)
        out1 = spatial_attention(e, q, d1, ConditioningMode.X_PHI)
        out2 = spatial_attention(e, q, d2, ConditioningMode.X_PHI)
        assert torch.equal(out1, out2)
        out3 = spatial_attention(e, q, d1, ConditioningMode.X_DL)
        out4 = spatial_attention(e, torch.randn_like(e), d1, ConditioningMode.X_DL)
        assert torch.equal(out3, out4)

    def test_missing_required_condition(self):
        e = torch.randn(1, 4, 5, 3)
        with pytest.raises(ConfigError):
            spatial_attention(e, None, None, ConditioningMode.X_PHI)
        with pytest.raises(ConfigError):
            spatial_attention(e, torch.randn_like(e), None, ConditioningMode.X_PHI_DL)

    def test_gradients(self):
        torch.manual_seed(7)
        e = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)
        q = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)
        d = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)
        assert gradcheck(
            lambda a, b, c: spatial_attention(a, b, c, ConditioningMode.X_PHI_DL),
            (e, q, d),
            eps=1e-6,
            atol=1e-7,
            rtol=1e-4,
        )


class TestMaskFusion:
    def test_identity_when_conv_and_attention_zero(self):
        fusion = MaskFusion(channels=4)
        with torch.no_grad():
            fusion.conv.weight.zero_()
            fusion.conv.bias.zero_()
        e = torch.randn(1, 4, 5, 3)
        fused, mask = fusion(e, torch.zeros_like(e))
        assert torch.allclose(mask, torch.ones_like(mask))
        assert torch.allclose(fused, e)

    def test_mask_bounded_fuzz(self):
        torch.manual_seed(8)
        fusion = MaskFusion(channels=8)
        total = 0
        with torch.no_grad():
            for scale in (1e-3, 1.0, 1e6):
                a = torch.randn(2, 8, 50, 45) * scale
                mask = fusion.mask(a)
                assert torch.all(mask >= 0) and torch.all(mask <= 2)
                total += mask.numel()
        assert total >= 100_000

    def test_matches_hand_arithmetic(self):
        fusion = MaskFusion(channels=1)
        with torch.no_grad():
            fusion.conv.weight.zero_()
            fusion.conv.weight[0, 0, 1, 1] = 1.0  # center tap pass-through
            fusion.conv.bias.zero_()
        e = torch.tensor([[[[0.5, -1.0], [2.0, 0.0]]]])
        a = torch.tensor([[[[0.0, 1.0], [-1.0, 3.0]]]])
        with torch.no_grad():
            fused, mask = fusion(e, a)
        expect_mask = 2 / (1 + np.exp(-a.numpy()))
        assert np.allclose(mask.numpy(), expect_mask, atol=1e-6)
        assert np.allclose(fused.numpy(), e.numpy() * expect_mask + a.numpy(), atol=1e-6)

    def test_shape_mismatch(self):
        fusion = MaskFusion(channels=2)
        with pytest.raises(ValueError):
            fusion(torch.zeros(1, 2, 4, 4), torch.zeros(1, 2, 4, 5))

    def test_gradients(self):
        torch.manual_seed(9)
        fusion = MaskFusion(channels=2).double()
        e = torch.randn(1, 2, 3, 2, dtype=torch.float64, requires_grad=True)
        a = torch.randn(1, 2, 3, 2, dtype=torch.float64, requires_grad=True)
        assert gradcheck(fusion, (e, a), eps=1e-6, atol=1e-7, rtol=1e-4)


class TestFilm:
    def test_identity(self):
        x = torch.randn(2, 3)
        assert torch.equal(film(x, torch.zeros(3), torch.zeros(3)), x)

    def test_unit_scale_doubles(self):
        x = torch.randn(2, 3)
        assert torch.allclose(film(x, torch.ones(3), torch.zeros(3)), 2 * x)

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3))
        g = rng.standard_normal((2, 3))
        b = rng.standard_normal((2, 3))
        out = film(torch.tensor(x), torch.tensor(g), torch.tensor(b))
        assert np.allclose(out.numpy(), x + (g * x + b), atol=1e-12)

    def test_film_params_wrapper(self):
        x = torch.randn(4)
        params = FilmParams(gamma=torch.ones(4), beta=torch.zeros(4))
        assert torch.allclose(film(x, params), 2 * x)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            film(torch.zeros(2, 3), torch.zeros(4), torch.zeros(4))

    def test_gradients(self):
        x = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        g = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        b = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        assert gradcheck(film, (x, g, b), eps=1e-6, atol=1e-7, rtol=1e-4)


class TestCondFeatures:
    def test_validation(self):
        CondFeatures(torch.zeros(1, 2, 3, 4), provider_id="p", tap_point="lstm")
        with pytest.raises(ValueError):
            CondFeatures(torch.zeros(2, 3, 4))
        bad = torch.zeros(1, 2, 3, 4)
        bad[0, 0, 0, 0] = float("nan")
        with pytest.raises(ValueError):
            CondFeatures(bad)
