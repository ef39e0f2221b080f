"""Patch discriminator over concatenated (image, mask) pairs.

Five stride-2 3x3 convolutions with LeakyReLU(0.2) shrink the 256x256x4
input to an 8x8x512 grid; a stack of four smoothing layers (3x3 conv +
sigmoid each) tapers it to the 8x8x1 patch-wise real/fake probability
map. The last layer's sigmoid is the discriminator output itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import init_weights


@dataclass
class DiscriminatorConfig:
    conv_filters: tuple[int, ...] = (64, 128, 256, 512, 512)
    leaky_slope: float = 0.2
    convcrf_channels: tuple[int, ...] = (64, 32, 16, 1)
    use_convcrf: bool = True
    input_size: int = 256

    def __post_init__(self):
        if len(self.conv_filters) != 5:
            raise ValueError("exactly 5 stride-2 feature layers required")
        if list(self.conv_filters) != sorted(self.conv_filters):
            raise ValueError("conv filters must be non-decreasing")
        if self.convcrf_channels[-1] != 1:
            raise ValueError("last smoothing stage must output 1 channel")


class ConvCRFLayer(nn.Module):
    """Learned local-smoothness layer: same-padding 3x3 conv + sigmoid."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)

    def forward(self, x):
        return torch.sigmoid(self.conv(x))


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig | None = None):
        super().__init__()
        self.cfg = cfg or DiscriminatorConfig()
        layers = []
        in_ch = 4  # RGB image + 1-channel mask
        for out_ch in self.cfg.conv_filters:
            layers.append(nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1))
            layers.append(nn.LeakyReLU(self.cfg.leaky_slope, inplace=True))
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        if self.cfg.use_convcrf:
            stack = []
            for out_ch in self.cfg.convcrf_channels:
                stack.append(ConvCRFLayer(in_ch, out_ch))
                in_ch = out_ch
            self.refine = nn.Sequential(*stack)
        else:
            self.refine = ConvCRFLayer(in_ch, 1)
        init_weights(self)

    def forward(self, image, mask):
        if image.dim() != 4 or mask.dim() != 4:
            raise ValueError("image and mask must be batched 4-D tensors")
        if image.shape[1] != 3 or mask.shape[1] != 1:
            raise ValueError(
                f"expected 3-channel image and 1-channel mask, got "
                f"{image.shape[1]} and {mask.shape[1]}"
            )
        if image.shape[0] != mask.shape[0] or image.shape[-2:] != mask.shape[-2:]:
            raise ValueError(
                f"image/mask shape mismatch: {tuple(image.shape)} vs {tuple(mask.shape)}"
            )
        size = self.cfg.input_size
        if image.shape[-2:] != (size, size):
            raise ValueError(f"expected {size}x{size} inputs, got {tuple(image.shape[-2:])}")
        x = torch.cat([image, mask], dim=1)
        x = self.features(x)
        return self.refine(x)
