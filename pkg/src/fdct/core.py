"""Shared domain types plus depth normalization, validity masking, and surface normals.

Depth maps are stored in meters with missing sensor readings encoded as exactly 0.0
(the 16-bit PNG zero-fill convention). All functions here accept either the wrapper
types below or raw numpy arrays / torch tensors, and are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ShapeError(ValueError):
    """Image dimensions disagree or are unusable."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


def _values(x):
    if isinstance(x, (DepthMap, RgbImage, TransparentMask)):
        return x.values
    return x


@dataclass(frozen=True)
class DepthMap:
    """Single-channel depth image in meters; 0.0 marks missing readings."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError(f"depth map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("depth map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RgbImage:
    """H x W x 3 color image with channel values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ShapeError(f"rgb image must be HxWx3, got shape {v.shape}")
        if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("rgb values must be finite and within [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TransparentMask:
    """Boolean map, true where a pixel belongs to a transparent object."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", v.astype(bool))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Sample:
    """One aligned training/eval unit: rgb, raw depth, ground-truth depth, mask."""

    rgb: RgbImage
    raw_depth: DepthMap
    gt_depth: DepthMap
    mask: TransparentMask
    id: str = ""

    def __post_init__(self):
        shapes = {
            (self.rgb.height, self.rgb.width),
            (self.raw_depth.height, self.raw_depth.width),
            (self.gt_depth.height, self.gt_depth.width),
            (self.mask.height, self.mask.width),
        }
        if len(shapes) != 1:
            raise ShapeError(f"sample {self.id!r} images disagree on size: {shapes}")

    @property
    def height(self) -> int:
        return self.rgb.height

    @property
    def width(self) -> int:
        return self.rgb.width


@dataclass(frozen=True)
class ValidRange:
    """Depth interval (meters) outside which ground truth is ignored."""

    lo: float = 0.3
    hi: float = 1.5

    def __post_init__(self):
        if not (0.0 < self.lo < self.hi):
            raise ConfigError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")


def valid_pixels(gt, mask, valid_range: ValidRange | None = None):
    """Mask of pixels used by every loss and metric.

    A pixel is valid when it is inside the transparent mask and its ground-truth
    depth lies within the valid range. Works on numpy arrays or torch tensors.
    """
    vr = valid_range if valid_range is not None else ValidRange()
    g = _values(gt)
    m = _values(mask)
    if g.shape != m.shape:
        raise ShapeError(f"gt shape {tuple(g.shape)} != mask shape {tuple(m.shape)}")
    if not torch.is_tensor(m):
        m = np.asarray(m, dtype=bool)
    return (g >= vr.lo) & (g <= vr.hi) & m


def normalize_depth(depth, depth_max: float):
    """Scale depth by 1/depth_max and clip to [0, 1]; missing (0.0) stays 0.0."""
    if depth_max <= 0:
        raise ConfigError(f"depth_max must be positive, got {depth_max}")
    v = _values(depth)
    if torch.is_tensor(v):
        return torch.clamp(v / depth_max, 0.0, 1.0)
    return np.clip(np.asarray(v) / depth_max, 0.0, 1.0)


def normals_from_depth(depth):
    """Unit surface normals from image-space depth gradients.

    Gradients are central differences with one-sided differences at the borders
    and unit pixel spacing; the unnormalized normal is (-gx, -gy, 1), so the
    result is always well defined. Returns an array/tensor shaped (..., H, W, 3)
    matching the input backend.
    """
    v = _values(depth)
    if torch.is_tensor(v):
        gy, gx = torch.gradient(v, dim=(-2, -1))
        n = torch.stack((-gx, -gy, torch.ones_like(v)), dim=-1)
        return n / torch.linalg.vector_norm(n, dim=-1, keepdim=True)
    v = np.asarray(v)
    if v.ndim < 2:
        raise ShapeError(f"depth must have at least 2 dims, got shape {v.shape}")
    gy, gx = np.gradient(v, axis=(-2, -1))
    n = np.stack((-gx, -gy, np.ones_like(v)), axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)
