"""Encoder-decoder segmentation generator.

The encoder is a narrow depthwise-separable backbone (halved widths,
reduced expansion) whose four intermediate feature maps at strides
2/4/8/16 feed skip connections; the stride-32 output is the bottleneck.
The decoder runs four (bilinear x2 upsample -> concat skip -> block)
stages, a final x2 upsample, and a 1x1 conv + sigmoid to emit a
single-channel probability mask at full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (
    ConvBNReLU,
    InvertedResidual,
    ReSEBlock,
    batch_norm,
    count_parameters,
    init_weights,
)


@dataclass
class GeneratorConfig:
    input_size: int = 256
    stem_width: int = 16
    stage_widths: tuple[int, ...] = (8, 12, 16, 32, 48, 80)
    stage_repeats: tuple[int, ...] = (1, 2, 3, 4, 3, 3)
    stage_strides: tuple[int, ...] = (1, 2, 2, 2, 1, 2)
    expansion_factor: int = 3
    skip_tap_strides: tuple[int, int, int, int] = (2, 4, 8, 16)
    decoder_widths: tuple[int, int, int, int] = (576, 208, 64, 32)
    se_ratio: int = 8
    use_se: bool = True
    use_rese: bool = True
    parameter_budget: tuple[int, int] = (900_000, 1_200_000)

    def __post_init__(self):
        if not (
            len(self.stage_widths) == len(self.stage_repeats) == len(self.stage_strides)
        ):
            raise ValueError("stage_widths/repeats/strides must have equal length")
        taps = tuple(self.skip_tap_strides)
        if len(taps) != 4:
            raise ValueError("exactly 4 skip taps required")
        if list(taps) != sorted(set(taps)):
            raise ValueError("skip tap strides must be strictly increasing")
        for i, s in enumerate(taps):
            if self.input_size % s != 0:
                raise ValueError(f"tap stride {s} does not divide input_size")
            if s != 2 ** (i + 1):
                raise ValueError("tap strides must be (2, 4, 8, 16)")
        if len(self.decoder_widths) != 4:
            raise ValueError("exactly 4 decoder widths required")
        bottleneck_stride = 2
        for s in self.stage_strides:
            bottleneck_stride *= s
        if bottleneck_stride != 2 * taps[-1]:
            raise ValueError(
                f"backbone must end at stride {2 * taps[-1]}, got {bottleneck_stride}"
            )


class Encoder(nn.Module):
    """Backbone of inverted-residual stages; exposes tapped feature maps."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Sequential(
            nn.Conv2d(3, cfg.stem_width, 3, stride=2, padding=1, bias=False),
            batch_norm(cfg.stem_width),
            nn.ReLU6(inplace=True),
        )
        stages = []
        width_at_stride: dict[int, int] = {2: cfg.stem_width}
        stride_of_stage = []
        in_ch = cfg.stem_width
        cum = 2
        for width, repeats, stride in zip(
            cfg.stage_widths, cfg.stage_repeats, cfg.stage_strides
        ):
            blocks = []
            for r in range(repeats):
                s = stride if r == 0 else 1
                blocks.append(InvertedResidual(in_ch, width, s, cfg.expansion_factor))
                in_ch = width
            cum *= stride
            stages.append(nn.Sequential(*blocks))
            stride_of_stage.append(cum)
            width_at_stride[cum] = width
        self.stages = nn.ModuleList(stages)
        self.stage_strides_cum = stride_of_stage
        self.tap_channels = [width_at_stride[s] for s in cfg.skip_tap_strides]
        self.bottleneck_channels = in_ch

    def forward(self, x):
        size = self.cfg.input_size
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != size or x.shape[3] != size:
            raise ValueError(
                f"expected input of shape (B, 3, {size}, {size}), got {tuple(x.shape)}"
            )
        out = self.stem(x)
        by_stride = {2: out}
        for stage, cum in zip(self.stages, self.stage_strides_cum):
            out = stage(out)
            by_stride[cum] = out  # deepest output at each stride wins
        taps = [by_stride[s] for s in self.cfg.skip_tap_strides]
        return taps, out


class Decoder(nn.Module):
    """Four upsample+skip stages, final x2 upsample, 1x1 conv + sigmoid."""

    def __init__(self, cfg: GeneratorConfig, tap_channels: list[int], bottleneck_channels: int):
        super().__init__()
        self.cfg = cfg
        blocks = []
        prev = bottleneck_channels
        for i, out_ch in enumerate(cfg.decoder_widths):
            skip_ch = tap_channels[-(i + 1)]  # taps consumed deepest first
            in_ch = prev + skip_ch
            if cfg.use_rese:
                blocks.append(
                    ReSEBlock(in_ch, out_ch, use_se=cfg.use_se, se_ratio=cfg.se_ratio)
                )
            else:
                blocks.append(ConvBNReLU(in_ch, out_ch))
            prev = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, 1, 1)

    def forward(self, taps, bottleneck):
        if len(taps) != 4:
            raise ValueError(f"expected 4 skip taps, got {len(taps)}")
        x = bottleneck
        for i, block in enumerate(self.blocks):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            tap = taps[-(i + 1)]
            if tap.shape[-2:] != x.shape[-2:]:
                raise ValueError(
                    f"skip tap {len(taps) - 1 - i} has spatial size "
                    f"{tuple(tap.shape[-2:])}, decoder stage expects {tuple(x.shape[-2:])}"
                )
            x = block(torch.cat([x, tap], dim=1))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(x))


class Generator(nn.Module):
    """Maps a (B, 3, 256, 256) image in [0, 1] to a (B, 1, 256, 256) mask."""

    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.encoder = Encoder(self.cfg)
        self.decoder = Decoder(
            self.cfg, self.encoder.tap_channels, self.encoder.bottleneck_channels
        )
        init_weights(self)

    def encode(self, image):
        return self.encoder(image)

    def decode(self, taps, bottleneck):
        return self.decoder(taps, bottleneck)

    def forward(self, image):
        taps, bottleneck = self.encoder(image)
        return self.decoder(taps, bottleneck)

    def forward_with_bottleneck(self, image):
        """Forward pass that also returns the stride-32 bottleneck map."""
        taps, bottleneck = self.encoder(image)
        return self.decoder(taps, bottleneck), bottleneck

    def num_parameters(self) -> int:
        return count_parameters(self)
