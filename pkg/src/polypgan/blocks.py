"""Convolutional building blocks shared by the generator.

Normalization is batch-style with eps=1e-3 and a 0.99 running-average
momentum (torch's ``momentum`` argument is the complementary update
fraction, 0.01); evaluation mode uses the running statistics.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

BN_EPS = 1e-3
BN_MOMENTUM = 0.01  # update fraction; running average keeps 0.99


def batch_norm(channels: int) -> nn.BatchNorm2d:
    return nn.BatchNorm2d(channels, eps=BN_EPS, momentum=BN_MOMENTUM)


def init_weights(module: nn.Module) -> None:
    """He fan-in init for convs; SE linear layers get zero biases."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class SqueezeExcite(nn.Module):
    """Channel recalibration: global average pool -> FC -> ReLU -> FC -> sigmoid.

    The per-channel sigmoid weights scale the input map, so outputs are
    always attenuated relative to the input.
    """

    def __init__(self, channels: int, ratio: int = 8):
        super().__init__()
        if channels < 1 or ratio < 1:
            raise ValueError("channels and ratio must be positive")
        hidden = max(1, channels // ratio)
        self.channels = channels
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ValueError(
                f"expected {self.channels} channels, got {x.shape[1]}"
            )
        z = x.mean(dim=(2, 3))  # (B, C) spatial mean per channel
        s = torch.sigmoid(self.fc2(torch.relu(self.fc1(z))))
        return x * s[:, :, None, None]


class ReSEBlock(nn.Module):
    """Residual bottleneck block followed by squeeze-and-excitation.

    1x1 conv reduces channels by ceil(in/4), BN+ReLU; 3x3 conv restores the
    output width, BN; a projection shortcut (1x1 conv + BN) kicks in only
    when the channel count changes; add, ReLU, then SE rescaling (skipped
    when ``use_se`` is off).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        bottleneck_factor: int = 4,
        use_se: bool = True,
        se_ratio: int = 8,
    ):
        super().__init__()
        bottleneck = max(1, math.ceil(in_channels / bottleneck_factor))
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.reduce = nn.Conv2d(in_channels, bottleneck, 1, bias=False)
        self.reduce_bn = batch_norm(bottleneck)
        self.spatial = nn.Conv2d(bottleneck, out_channels, 3, padding=1, bias=False)
        self.spatial_bn = batch_norm(out_channels)
        if in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, bias=False),
                batch_norm(out_channels),
            )
        else:
            self.shortcut = nn.Identity()
        self.se = SqueezeExcite(out_channels, se_ratio) if use_se else nn.Identity()

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} channels, got {x.shape[1]}"
            )
        h = torch.relu(self.reduce_bn(self.reduce(x)))
        h = self.spatial_bn(self.spatial(h))
        residual = torch.relu(self.shortcut(x) + h)
        return self.se(residual)


class ConvBNReLU(nn.Module):
    """Plain 3x3 conv-norm-ReLU; stands in for ReSE in ablations."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.bn = batch_norm(out_channels)

    def forward(self, x):
        return torch.relu(self.bn(self.conv(x)))


class InvertedResidual(nn.Module):
    """Depthwise-separable inverted residual (expand -> depthwise -> project)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, expansion: int):
        super().__init__()
        hidden = in_channels * expansion
        self.use_res = stride == 1 and in_channels == out_channels
        layers = []
        if expansion != 1:
            layers += [
                nn.Conv2d(in_channels, hidden, 1, bias=False),
                batch_norm(hidden),
                nn.ReLU6(inplace=True),
            ]
        layers += [
            nn.Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, bias=False),
            batch_norm(hidden),
            nn.ReLU6(inplace=True),
            nn.Conv2d(hidden, out_channels, 1, bias=False),
            batch_norm(out_channels),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        out = self.body(x)
        return x + out if self.use_res else out


def count_parameters(module: nn.Module) -> int:
    """Number of trainable scalars in ``module``."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
