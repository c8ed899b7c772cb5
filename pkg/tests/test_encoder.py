"""
Tests for deformable convolution and the unimodal encoders.
"""
import numpy as np
import pytest

from autograd import Tensor, conv2d, deform_conv2d, grad_check
from model.encoder import Encoder, ResNeXtBlock, check_encoder_config, encode
from model.layers import Conv2d, DeformConvLayer
from utils.config import EncoderConfig
from utils.errors import ConfigError, ShapeError


def bilinear(img, x, y):
    h, w = img.shape
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - x0, y - y0
    total = 0.0
    for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
        for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
            if 0 <= yy < h and 0 <= xx < w:
                total += wy * wx * img[yy, xx]
    return total


def naive_deform(img, kernel, offsets, pad):
    """Single-channel deformable convolution, stride 1."""
    kh, kw = kernel.shape
    h, w = img.shape
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            for u in range(kh):
                for v in range(kw):
                    k = u * kw + v
                    x = j - pad + v + offsets[2 * k, i, j]
                    y = i - pad + u + offsets[2 * k + 1, i, j]
                    out[i, j] += kernel[u, v] * bilinear(img, x, y)
    return out


class TestDeformConv2d:
    def test_offset_channel_count(self, rng):
        layer = DeformConvLayer(4, 4, 3, rng)
        assert layer.offset_channels == 18
        assert layer.offset_predictor.out_channels == 18

    def test_fresh_layer_equals_plain_conv(self, rng):
        layer = DeformConvLayer(4, 6, 3, rng, groups=2)
        layer.bias.data[:] = rng.standard_normal(6)
        x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
        plain = conv2d(x, layer.weight, layer.bias, pad=1, groups=2)
        np.testing.assert_allclose(layer(x).data, plain.data, atol=1e-5)

    def test_strided_zero_offsets(self, rng):
        layer = DeformConvLayer(2, 2, 3, rng, stride=2)
        x = Tensor(rng.standard_normal((1, 2, 8, 8)).astype(np.float32))
        plain = conv2d(x, layer.weight, layer.bias, stride=2, pad=1)
        assert layer(x).shape == (1, 2, 4, 4)
        np.testing.assert_allclose(layer(x).data, plain.data, atol=1e-5)

    def test_integer_offset_shifts_input(self, rng):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        offsets = np.zeros((1, 18, 6, 6))
        offsets[:, 0::2] = 1.0
        shifted = np.zeros_like(x)
        shifted[..., :-1] = x[..., 1:]
        out = deform_conv2d(Tensor(x), Tensor(w), Tensor(offsets), pad=1)
        plain = conv2d(Tensor(shifted), Tensor(w), pad=1)
        np.testing.assert_allclose(out.data[..., 1:], plain.data[..., 1:], atol=1e-6)

    def test_fractional_offsets_match_naive_oracle(self, rng):
        img = rng.standard_normal((5, 5))
        kernel = rng.standard_normal((3, 3))
        offsets = rng.uniform(-1.5, 1.5, (18, 5, 5))
        out = deform_conv2d(Tensor(img[None, None]), Tensor(kernel[None, None]), Tensor(offsets[None]), pad=1)
        np.testing.assert_allclose(out.data[0, 0], naive_deform(img, kernel, offsets, 1), atol=1e-5)

    def test_offsets_shape_checked(self, rng):
        with pytest.raises(ShapeError):
            deform_conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))),
                          Tensor(np.zeros((1, 9, 5, 5))), pad=1)

    def test_gradient_reaches_offsets(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((2, 2, 3, 3)))
        offsets = Tensor(rng.uniform(-0.8, 0.8, (1, 18, 4, 4)))
        err = grad_check(lambda a, b, c: deform_conv2d(a, b, c, pad=1), [x, w, offsets])
        assert err < 1e-4


class TestEncode:
    def test_desk_default_shape(self, rng):
        encoder = Encoder(3, EncoderConfig(), rng)
        out = encode(Tensor(rng.standard_normal((1, 3, 64, 64)).astype(np.float32)), encoder)
        assert out.shape == (1, 64, 8, 8)
        assert encoder.total_stride == 8

    def test_zero_input_with_zeroed_final_block(self, rng, tiny_model_config):
        encoder = Encoder(1, tiny_model_config.encoder, rng)
        encoder.blocks[-1].conv3.weight.data[:] = 0.0
        out = encode(Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32)), encoder)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identical_weights_identical_outputs(self, rng, tiny_model_config):
        a = Encoder(3, tiny_model_config.encoder, np.random.default_rng(5))
        b = Encoder(3, tiny_model_config.encoder, np.random.default_rng(5))
        image = Tensor(rng.standard_normal((1, 3, 16, 16)).astype(np.float32))
        np.testing.assert_array_equal(encode(image, a).data, encode(image, b).data)

    def test_from_config_builds_seeded_encoder(self, rng, tiny_model_config):
        image = Tensor(rng.standard_normal((1, 3, 16, 16)).astype(np.float32))
        built = Encoder(3, tiny_model_config.encoder, np.random.default_rng(4))
        np.testing.assert_array_equal(encode(image, tiny_model_config.encoder, seed=4).data,
                                      encode(image, built).data)

    def test_from_config_rejects_indivisible_widths(self):
        with pytest.raises(ConfigError):
            encode(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)), EncoderConfig(widths=(16, 30, 64)))

    def test_grouped_convs_honor_cardinality(self, rng, tiny_model_config):
        encoder = Encoder(3, tiny_model_config.encoder, rng)
        for block, card in zip(encoder.blocks, tiny_model_config.encoder.cardinality):
            assert block.conv2.groups == card

    def test_deformable_stage_placement(self, rng, tiny_model_config):
        encoder = Encoder(3, tiny_model_config.encoder, rng)
        assert isinstance(encoder.blocks[0].conv2, Conv2d)
        assert isinstance(encoder.blocks[1].conv2, DeformConvLayer)

    def test_plain_variant_has_no_deformable_layers(self, rng):
        cfg = EncoderConfig(widths=(8,), blocks=(1,), cardinality=(2,), strides=(2,),
                            deformable_stages=(False,), deformable=False)
        encoder = Encoder(1, cfg, rng)
        assert not isinstance(encoder.blocks[0].conv2, DeformConvLayer)

    def test_residual_shortcut_only_when_shape_changes(self, rng):
        assert ResNeXtBlock(8, 8, 2, 1, False, rng).shortcut is None
        assert ResNeXtBlock(4, 8, 2, 1, False, rng).shortcut is not None
        assert ResNeXtBlock(8, 8, 2, 2, False, rng).shortcut is not None

    def test_indivisible_image(self, rng, tiny_model_config):
        encoder = Encoder(3, tiny_model_config.encoder, rng)
        with pytest.raises(ShapeError):
            encoder(Tensor(np.zeros((1, 3, 18, 18))))

    def test_wrong_channel_count(self, rng, tiny_model_config):
        encoder = Encoder(1, tiny_model_config.encoder, rng)
        with pytest.raises(ShapeError):
            encoder(Tensor(np.zeros((1, 3, 16, 16))))


class TestEncoderConfig:
    def test_default_is_valid(self):
        check_encoder_config(EncoderConfig())

    def test_width_not_divisible_by_cardinality(self):
        with pytest.raises(ConfigError):
            check_encoder_config(EncoderConfig(widths=(16, 30, 64)))

    def test_deformable_needs_a_stage(self):
        with pytest.raises(ConfigError):
            check_encoder_config(EncoderConfig(deformable_stages=(False, False, False)))

    def test_stage_lists_must_agree(self):
        with pytest.raises(ConfigError):
            check_encoder_config(EncoderConfig(blocks=(1, 1)))
