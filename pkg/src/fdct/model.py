"""Depth completion network for transparent objects.

A U-shaped trunk: an input head at full resolution, four encoder blocks that
each fuse the resized raw depth and halve the resolution, and four decoder
blocks that fuse depth plus encoder residuals and double the resolution via
sub-pixel rearrangement. A fusion branch of shortcut-fusion modules carries
low-level encoder features to the bottleneck, and 1-channel cross-layer
shortcuts feed each trunk block's features to the block two positions later.

3x3 convolutions use replicate padding so constant inputs stay spatially
constant through the trunk (max and average pooling then agree exactly).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ConfigError, DepthMap, ShapeError, _values, normalize_depth

DOWNSAMPLE_MODES = ("max_pool", "avg_pool", "strided_conv")
DEPTH_FUSION_MODES = ("conv_fuse", "concat")


@dataclass(frozen=True)
class FdctConfig:
    """Architecture hyperparameters, including the ablation switches."""

    channels: int = 64
    osa_layers: int = 5
    osa_stage_channels: int = 20
    downsample_mode: str = "max_pool"
    depth_fusion_mode: str = "conv_fuse"
    use_fusion_branch: bool = True
    use_cross_shortcuts: bool = True
    depth_max: float = 10.0

    def __post_init__(self):
        if min(self.channels, self.osa_layers, self.osa_stage_channels) < 1:
            raise ConfigError("channels, osa_layers, osa_stage_channels must be >= 1")
        if self.downsample_mode not in DOWNSAMPLE_MODES:
            raise ConfigError(f"downsample_mode must be one of {DOWNSAMPLE_MODES}")
        if self.depth_fusion_mode not in DEPTH_FUSION_MODES:
            raise ConfigError(f"depth_fusion_mode must be one of {DEPTH_FUSION_MODES}")
        if self.depth_max <= 0:
            raise ConfigError("depth_max must be positive")

    @classmethod
    def full(cls, **overrides) -> "FdctConfig":
        return cls(**overrides)

    @classmethod
    def slim(cls, **overrides) -> "FdctConfig":
        base = dict(channels=32, osa_layers=4, osa_stage_channels=16)
        base.update(overrides)
        return cls(**base)

    def with_overrides(self, **overrides) -> "FdctConfig":
        return replace(self, **overrides)

    def as_dict(self) -> dict:
        return asdict(self)


def _conv3(in_ch, out_ch):
    return nn.Conv2d(in_ch, out_ch, 3, padding=1, padding_mode="replicate")


def _downsample(mode, channels):
    if mode == "max_pool":
        return nn.MaxPool2d(2)
    if mode == "avg_pool":
        return nn.AvgPool2d(2)
    return nn.Conv2d(channels, channels, 2, stride=2)


class OneShotAggregation(nn.Module):
    """Chain of 3x3 convolutions aggregated once by a 1x1 reduction.

    The block input and every intermediate output are concatenated and reduced
    back to `channels`; an additive identity connection applies whenever the
    input width already equals `channels`.
    """

    def __init__(self, in_channels, channels, n_layers, stage_channels):
        super().__init__()
        layers = []
        width = in_channels
        for _ in range(n_layers):
            layers.append(_conv3(width, stage_channels))
            width = stage_channels
        self.layers = nn.ModuleList(layers)
        self.reduce = nn.Conv2d(in_channels + n_layers * stage_channels, channels, 1)
        self.residual = in_channels == channels

    def forward(self, x):
        feats = [x]
        y = x
        for conv in self.layers:
            y = F.relu(conv(y))
            feats.append(y)
        out = F.relu(self.reduce(torch.cat(feats, dim=1)))
        return out + x if self.residual else out


class EncoderBlock(nn.Module):
    """Fuses features with resized raw depth (plus an optional 1-channel
    shortcut), extracts with one-shot aggregation, then downsamples 2x.

    Returns (downsampled output, pre-pool features)."""

    def __init__(self, cfg: FdctConfig, has_shortcut: bool):
        super().__init__()
        c = cfg.channels
        in_ch = c + 1 + (1 if has_shortcut else 0)
        self.has_shortcut = has_shortcut
        if cfg.depth_fusion_mode == "conv_fuse":
            self.fuse = _conv3(in_ch, c)
            self.osa = OneShotAggregation(c, c, cfg.osa_layers, cfg.osa_stage_channels)
        else:
            self.fuse = None
            self.osa = OneShotAggregation(in_ch, c, cfg.osa_layers, cfg.osa_stage_channels)
        self.pool = _downsample(cfg.downsample_mode, c)

    def forward(self, features, depth, shortcut=None):
        _check_same_scale("encoder block", features, depth, shortcut)
        parts = [features, depth]
        if self.has_shortcut:
            parts.append(shortcut)
        x = torch.cat(parts, dim=1)
        if self.fuse is not None:
            x = F.relu(self.fuse(x))
        pre_pool = self.osa(x)
        return self.pool(pre_pool), pre_pool


class DecoderBlock(nn.Module):
    """Fuses features with resized depth and side inputs (encoder residual or
    fusion-branch output, optional 1-channel shortcut), extracts, then doubles
    the resolution by sub-pixel rearrangement.

    Returns (upsampled output, pre-upsample features)."""

    def __init__(self, cfg: FdctConfig, side_channels: int):
        super().__init__()
        c = cfg.channels
        in_ch = c + 1 + side_channels
        if cfg.depth_fusion_mode == "conv_fuse":
            self.fuse = _conv3(in_ch, c)
            self.osa = OneShotAggregation(c, c, cfg.osa_layers, cfg.osa_stage_channels)
        else:
            self.fuse = None
            self.osa = OneShotAggregation(in_ch, c, cfg.osa_layers, cfg.osa_stage_channels)
        self.up = nn.Conv2d(c, 4 * c, 1)

    def forward(self, features, depth, *side_inputs):
        _check_same_scale("decoder block", features, depth, *side_inputs)
        x = torch.cat([features, depth, *side_inputs], dim=1)
        if self.fuse is not None:
            x = F.relu(self.fuse(x))
        pre_up = self.osa(x)
        out = F.pixel_shuffle(self.up(pre_up), 2)
        return out, pre_up


class ShortcutFusion(nn.Module):
    """Pools the running fusion state 2x and exchanges information with the
    next encoder output through a 1x1 channel-mixing convolution."""

    def __init__(self, channels):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.mix = nn.Conv2d(2 * channels, channels, 1)

    def forward(self, prev, enc_out):
        ph, pw = prev.shape[-2:]
        eh, ew = enc_out.shape[-2:]
        if (ph, pw) != (2 * eh, 2 * ew):
            raise ShapeError(
                f"fusion state {ph}x{pw} must be exactly twice {eh}x{ew}"
            )
        x = torch.cat([self.pool(prev), enc_out], dim=1)
        return F.relu(self.mix(x))


def _check_same_scale(where, *tensors):
    sizes = {t.shape[-2:] for t in tensors if t is not None}
    if len(sizes) > 1:
        raise ShapeError(f"{where}: inputs disagree on spatial size: {sizes}")


class FdctNetwork(nn.Module):
    """Maps (rgb, raw depth) to completed depth in meters.

    Input tensors are (B, 3, H, W) rgb in [0, 1] and (B, 1, H, W) depth in
    meters with H and W divisible by 16; the output is (B, 1, H, W) depth in
    meters (unclamped).
    """

    def __init__(self, config: FdctConfig | None = None, seed: int | None = None):
        super().__init__()
        cfg = config if config is not None else FdctConfig()
        self.config = cfg
        c = cfg.channels
        cs = cfg.use_cross_shortcuts

        self.head = _conv3(4, c)
        self.encoder = nn.ModuleList(
            [EncoderBlock(cfg, has_shortcut=cs and k >= 1) for k in range(4)]
        )
        if cfg.use_fusion_branch:
            self.fusion = nn.ModuleList([ShortcutFusion(c) for _ in range(3)])

        # decoder side widths: block 0 sees the fusion-branch output (C) when
        # enabled; blocks 1..3 see a C-channel encoder residual plus an
        # optional 1-channel shortcut
        d1_side = c if cfg.use_fusion_branch else 0
        sides = [d1_side] + [c + (1 if cs else 0)] * 3
        self.decoder = nn.ModuleList([DecoderBlock(cfg, s) for s in sides])
        self.residual_proj = nn.ModuleList([nn.Conv2d(c, c, 1) for _ in range(3)])

        if cs:
            self.enc_shortcut_proj = nn.ModuleList(
                [nn.Conv2d(c, 1, 1) for _ in range(3)]
            )
            self.dec_shortcut_proj = nn.ModuleList(
                [nn.Conv2d(c, 1, 1) for _ in range(3)]
            )

        self.out_head = _conv3(c, 1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int | None = None):
        """Fan-in-scaled uniform init for conv kernels, zero biases."""
        gen = torch.Generator()
        if seed is None:
            gen.seed()
        else:
            gen.manual_seed(seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    bound = math.sqrt(6.0 / fan_in)
                    m.weight.uniform_(-bound, bound, generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()

    def forward(self, rgb, depth):
        if rgb.dim() != 4 or rgb.shape[1] != 3:
            raise ShapeError(f"rgb must be (B, 3, H, W), got {tuple(rgb.shape)}")
        if depth.dim() != 4 or depth.shape[1] != 1:
            raise ShapeError(f"depth must be (B, 1, H, W), got {tuple(depth.shape)}")
        if rgb.shape[-2:] != depth.shape[-2:]:
            raise ShapeError("rgb and depth disagree on spatial size")
        h, w = rgb.shape[-2:]
        if h % 16 or w % 16 or h < 16 or w < 16:
            raise ShapeError(f"input size {h}x{w} must be divisible by 16")
        if not (torch.isfinite(rgb).all() and torch.isfinite(depth).all()):
            raise ValueError("network inputs must be finite")

        cfg = self.config
        cs = cfg.use_cross_shortcuts
        dn = normalize_depth(depth, cfg.depth_max)
        pyr = [dn]
        for k in range(1, 5):
            pyr.append(
                F.interpolate(dn, size=(h >> k, w >> k), mode="nearest")
            )

        head_out = F.relu(self.head(torch.cat([rgb, dn], dim=1)))

        # encoder trunk; shortcut sources: head output -> block 1, pre-pool of
        # block k -> block k+2, projected to one channel and pooled to scale
        enc_sc = [None] * 4
        if cs:
            enc_sc[1] = F.max_pool2d(self.enc_shortcut_proj[0](head_out), 2)
        x = head_out
        pre_pools, enc_outs = [], []
        for k, block in enumerate(self.encoder):
            x, pre = block(x, pyr[k], enc_sc[k])
            pre_pools.append(pre)
            enc_outs.append(x)
            if cs and k + 2 < 4:
                enc_sc[k + 2] = F.max_pool2d(self.enc_shortcut_proj[k + 1](pre), 4)
        bottleneck = x

        # fusion branch folds the four encoder outputs down to bottleneck scale
        fusion_out = None
        if cfg.use_fusion_branch:
            s = enc_outs[0]
            for sfm, enc_out in zip(self.fusion, enc_outs[1:]):
                s = sfm(s, enc_out)
            fusion_out = s

        # decoder trunk; shortcut sources mirror the encoder: bottleneck ->
        # block 1, pre-upsample of block k -> block k+2, nearest-upsampled
        dec_sc = [None] * 4
        if cs:
            dec_sc[1] = F.interpolate(
                self.dec_shortcut_proj[0](bottleneck), scale_factor=2, mode="nearest"
            )
        x = bottleneck
        for k, block in enumerate(self.decoder):
            if k == 0:
                side = (fusion_out,) if fusion_out is not None else ()
            else:
                res = self.residual_proj[k - 1](pre_pools[4 - k])
                side = (res, dec_sc[k]) if cs else (res,)
            x, pre_up = block(x, pyr[4 - k], *side)
            if cs and k + 2 < 4:
                dec_sc[k + 2] = F.interpolate(
                    self.dec_shortcut_proj[k + 1](pre_up),
                    scale_factor=4,
                    mode="nearest",
                )

        return self.out_head(x) * cfg.depth_max


def count_parameters(net: nn.Module) -> int:
    """Exact number of trainable scalars."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def parameter_breakdown(net: nn.Module) -> dict[str, int]:
    """Trainable parameter count per top-level block."""
    out = {}
    for name, child in net.named_children():
        out[name] = count_parameters(child)
    return out


def complete_depth(net: FdctNetwork, rgb, raw_depth) -> DepthMap:
    """Single-image inference: numpy/domain inputs, clamped metric-ready output."""
    rgb_v = np.asarray(_values(rgb), dtype=np.float32)
    d_v = np.asarray(_values(raw_depth), dtype=np.float32)
    rgb_t = torch.from_numpy(rgb_v).permute(2, 0, 1).unsqueeze(0)
    d_t = torch.from_numpy(d_v).unsqueeze(0).unsqueeze(0)
    net.eval()
    with torch.no_grad():
        pred = net(rgb_t, d_t)
    pred = torch.clamp(pred, 0.0, net.config.depth_max)
    return DepthMap(pred[0, 0].numpy().astype(np.float64))
