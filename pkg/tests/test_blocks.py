"""Building blocks against scalar-loop layer oracles and exact identities."""

import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from polypgan.blocks import (
    BN_EPS,
    BN_MOMENTUM,
    ConvBNReLU,
    InvertedResidual,
    ReSEBlock,
    SqueezeExcite,
    batch_norm,
    count_parameters,
    init_weights,
)

from oracles import (
    oracle_bn_eval,
    oracle_conv2d,
    oracle_depthwise_conv2d,
    oracle_relu6,
    oracle_rese_block,
    oracle_se,
)


def _randomize_bn(bn, rng):
    with torch.no_grad():
        bn.weight.copy_(torch.from_numpy(rng.uniform(0.5, 1.5, bn.weight.shape[0])))
        bn.bias.copy_(torch.from_numpy(rng.uniform(-0.3, 0.3, bn.bias.shape[0])))
        bn.running_mean.copy_(torch.from_numpy(rng.uniform(-0.5, 0.5, bn.running_mean.shape[0])))
        bn.running_var.copy_(torch.from_numpy(rng.uniform(0.2, 2.0, bn.running_var.shape[0])))


def test_batch_norm_constants():
    bn = batch_norm(4)
    assert bn.eps == BN_EPS == 1e-3
    assert bn.momentum == BN_MOMENTUM == 0.01


def test_init_weights_zeroes_biases():
    block = ReSEBlock(8, 8)
    init_weights(block)
    assert torch.all(block.se.fc1.bias == 0)
    assert torch.all(block.se.fc2.bias == 0)


# ---------------------------------------------------------------------------
# squeeze-excite


def test_se_hidden_width():
    assert SqueezeExcite(16, ratio=8).fc1.out_features == 2
    assert SqueezeExcite(4, ratio=8).fc1.out_features == 1  # floor clamps to 1


def test_se_zero_weights_halve_input():
    se = SqueezeExcite(6)
    with torch.no_grad():
        se.fc1.weight.zero_()
        se.fc1.bias.zero_()
        se.fc2.weight.zero_()
        se.fc2.bias.zero_()
    x = torch.randn(2, 6, 5, 5, generator=torch.Generator().manual_seed(0))
    out = se(x)
    assert torch.equal(out, 0.5 * x)  # sigmoid(0) scales every channel by 1/2


def test_se_matches_oracle():
    rng = np.random.default_rng(7)
    se = SqueezeExcite(5, ratio=2).double()
    x = rng.normal(size=(1, 5, 4, 4))
    got = se(torch.from_numpy(x)).detach().numpy()[0]
    want = oracle_se(
        x[0],
        se.fc1.weight.detach().numpy(),
        se.fc1.bias.detach().numpy(),
        se.fc2.weight.detach().numpy(),
        se.fc2.bias.detach().numpy(),
    )
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_se_attenuates():
    se = SqueezeExcite(8)
    x = torch.randn(2, 8, 3, 3, generator=torch.Generator().manual_seed(1))
    out = se(x)
    assert torch.all(out.abs() <= x.abs() + 1e-7)


def test_se_channel_mismatch_raises():
    with pytest.raises(ValueError):
        SqueezeExcite(8)(torch.zeros(1, 4, 2, 2))
    with pytest.raises(ValueError):
        SqueezeExcite(0)


# ---------------------------------------------------------------------------
# ReSE block


def test_rese_bottleneck_width_is_quarter_ceil():
    assert ReSEBlock(32, 32).reduce.out_channels == 8
    assert ReSEBlock(9, 16).reduce.out_channels == math.ceil(9 / 4)
    assert ReSEBlock(1, 4).reduce.out_channels == 1


def test_rese_projection_shortcut_only_on_width_change():
    assert isinstance(ReSEBlock(8, 8).shortcut, nn.Identity)
    assert isinstance(ReSEBlock(8, 16).shortcut, nn.Sequential)


def test_rese_zero_spatial_path_is_relu_identity():
    block = ReSEBlock(6, 6, use_se=False)
    with torch.no_grad():
        block.spatial.weight.zero_()
    block.eval()
    x = torch.randn(2, 6, 5, 5, generator=torch.Generator().manual_seed(2))
    out = block(x)
    assert torch.equal(out, torch.relu(x))


@pytest.mark.parametrize("in_ch,out_ch", [(6, 6), (5, 7)])
def test_rese_matches_oracle(in_ch, out_ch):
    rng = np.random.default_rng(11)
    block = ReSEBlock(in_ch, out_ch, se_ratio=2).double()
    for m in block.modules():
        if isinstance(m, nn.BatchNorm2d):
            _randomize_bn(m, rng)
    block.eval()
    x = rng.normal(size=(1, in_ch, 4, 4))
    with torch.no_grad():
        got = block(torch.from_numpy(x)).numpy()[0]
    want = oracle_rese_block(block, x[0])
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_rese_channel_mismatch_raises():
    with pytest.raises(ValueError):
        ReSEBlock(8, 8)(torch.zeros(1, 4, 4, 4))


def test_rese_output_spatial_dims_preserved():
    block = ReSEBlock(3, 10).eval()
    with torch.no_grad():
        out = block(torch.randn(2, 3, 9, 9))
    assert out.shape == (2, 10, 9, 9)


# ---------------------------------------------------------------------------
# inverted residual and plain conv block


def test_inverted_residual_uses_skip_only_when_shape_preserved():
    assert InvertedResidual(8, 8, stride=1, expansion=3).use_res
    assert not InvertedResidual(8, 16, stride=1, expansion=3).use_res
    assert not InvertedResidual(8, 8, stride=2, expansion=3).use_res


def test_inverted_residual_expansion_one_skips_expand_conv():
    block = InvertedResidual(8, 8, stride=1, expansion=1)
    convs = [m for m in block.body if isinstance(m, nn.Conv2d)]
    assert len(convs) == 2  # depthwise + project only
    block3 = InvertedResidual(8, 8, stride=1, expansion=3)
    convs3 = [m for m in block3.body if isinstance(m, nn.Conv2d)]
    assert len(convs3) == 3
    assert convs3[0].out_channels == 24


def test_inverted_residual_matches_oracle():
    rng = np.random.default_rng(13)
    block = InvertedResidual(4, 6, stride=2, expansion=3).double()
    for m in block.modules():
        if isinstance(m, nn.BatchNorm2d):
            _randomize_bn(m, rng)
    block.eval()
    x = rng.normal(size=(1, 4, 6, 6))
    with torch.no_grad():
        got = block(torch.from_numpy(x)).numpy()[0]

    convs = [m for m in block.body if isinstance(m, nn.Conv2d)]
    bns = [m for m in block.body if isinstance(m, nn.BatchNorm2d)]

    def bn_args(bn):
        return (
            bn.weight.detach().numpy(),
            bn.bias.detach().numpy(),
            bn.running_mean.numpy(),
            bn.running_var.numpy(),
            bn.eps,
        )

    h = oracle_conv2d(x[0], convs[0].weight.detach().numpy())
    h = oracle_relu6(oracle_bn_eval(h, *bn_args(bns[0])))
    h = oracle_depthwise_conv2d(h, convs[1].weight.detach().numpy(), stride=2, padding=1)
    h = oracle_relu6(oracle_bn_eval(h, *bn_args(bns[1])))
    h = oracle_conv2d(h, convs[2].weight.detach().numpy())
    h = oracle_bn_eval(h, *bn_args(bns[2]))
    np.testing.assert_allclose(got, h, atol=1e-10)


def test_inverted_residual_skip_adds_input():
    rng = np.random.default_rng(17)
    block = InvertedResidual(5, 5, stride=1, expansion=3).double().eval()
    x = torch.from_numpy(rng.normal(size=(1, 5, 4, 4)))
    with torch.no_grad():
        body = block.body(x)
        out = block(x)
    assert torch.allclose(out, x + body)


def test_conv_bn_relu_output_nonnegative():
    block = ConvBNReLU(3, 7).eval()
    with torch.no_grad():
        out = block(torch.randn(1, 3, 6, 6))
    assert out.shape == (1, 7, 6, 6)
    assert torch.all(out >= 0)


def test_count_parameters_counts_trainable_only():
    block = ConvBNReLU(2, 3)
    expect = 2 * 3 * 9 + 3 + 3  # conv kernel + bn affine pair
    assert count_parameters(block) == expect
    block.conv.weight.requires_grad_(False)
    assert count_parameters(block) == 6
