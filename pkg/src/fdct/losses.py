"""Composite training objective restricted to valid transparent pixels.

The total is a Huber depth term plus weighted structural-similarity and
surface-normal penalty terms. Every function accepts numpy arrays or torch
tensors; the torch path is differentiable and is what training uses. Passing
float64 inputs reproduces the reference values to ~1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import ConfigError, ValidRange, _values, normals_from_depth, valid_pixels

# Standard SSIM constants (0.01*R)^2 and (0.03*R)^2 with R = 1.5 m, the upper
# end of the default valid depth range.
DEFAULT_C1 = (0.01 * 1.5) ** 2
DEFAULT_C2 = (0.03 * 1.5) ** 2


@dataclass(frozen=True)
class LossConfig:
    delta: float = 0.1
    alpha: float = 0.1
    beta: float = 0.001
    epsilon: float = 1e-8
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    edge_weighting: bool = False
    edge_blur_sigma: float = 2.0

    def __post_init__(self):
        if self.delta <= 0 or self.epsilon <= 0 or self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("delta, epsilon, c1, c2 must all be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.edge_weighting and self.edge_blur_sigma <= 0:
            raise ConfigError("edge_blur_sigma must be positive")


@dataclass(frozen=True)
class LossBundle:
    """Per-batch loss components; total = huber + alpha*ssim_term + beta*smooth.

    `total_tensor` carries the differentiable total when the inputs were torch
    tensors; it is None for numpy inputs or when no pixel was valid.
    """

    total: float
    huber: float
    ssim_term: float
    smooth: float
    valid_pixel_count: int
    total_tensor: torch.Tensor | None = field(
        default=None, compare=False, repr=False
    )

    @property
    def active(self) -> bool:
        return self.valid_pixel_count > 0


def _as_float(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _clamp_min(x, lo):
    if torch.is_tensor(x):
        return torch.clamp(x, min=lo)
    return np.maximum(x, lo)


def _huber_map(pred, gt, delta):
    xp = torch if torch.is_tensor(pred) else np
    e = pred - gt
    ae = xp.abs(e)
    return xp.where(ae <= delta, 0.5 * e * e, delta * ae - 0.5 * delta * delta)


def huber_loss(pred, gt, valid, delta: float = 0.1):
    """Mean Huber error over valid pixels; 0 when the valid set is empty.

    Quadratic for |pred - gt| <= delta, linear beyond, so the loss is even,
    non-negative, and continuously differentiable at the threshold.
    """
    pred, gt, valid = _values(pred), _values(gt), _values(valid)
    if not valid.any():
        return 0.0
    m = _huber_map(pred, gt, delta)[valid].mean()
    return m if torch.is_tensor(m) else float(m)


def ssim(pred, gt, valid, c1: float = DEFAULT_C1, c2: float = DEFAULT_C2):
    """Structural similarity from global statistics of the valid pixel set.

    Means, population variances, and covariance are taken over all valid
    pixels at once (no sliding window). Needs at least 2 valid pixels;
    returns None otherwise.
    """
    pred, gt, valid = _values(pred), _values(gt), _values(valid)
    n = int(valid.sum())
    if n < 2:
        return None
    p = pred[valid]
    g = gt[valid]
    mu_p = p.mean()
    mu_g = g.mean()
    var_p = ((p - mu_p) ** 2).mean()
    var_g = ((g - mu_g) ** 2).mean()
    cov = ((p - mu_p) * (g - mu_g)).mean()
    index = ((2.0 * cov + c2) * (2.0 * mu_g * mu_p + c1)) / (
        (var_g + var_p + c2) * (mu_g * mu_g + mu_p * mu_p + c1)
    )
    return index if torch.is_tensor(index) else float(index)


def smooth_loss(pred, gt, valid, epsilon: float = 1e-8):
    """Mean cosine distance between predicted and ground-truth surface normals.

    Normals are computed on the full maps and masked afterwards, so pixels at
    the border of the valid set still see true neighboring depth.
    """
    pred, gt, valid = _values(pred), _values(gt), _values(valid)
    if not valid.any():
        return 0.0
    n_p = normals_from_depth(pred)
    n_g = normals_from_depth(gt)
    dot = (n_p * n_g).sum(-1)
    norms = _norm_last(n_p) * _norm_last(n_g)
    cos = dot / _clamp_min(norms, epsilon)
    m = (1.0 - cos)[valid].mean()
    return m if torch.is_tensor(m) else float(m)


def _norm_last(x):
    if torch.is_tensor(x):
        return torch.linalg.vector_norm(x, dim=-1)
    return np.linalg.norm(x, axis=-1)


def edge_weight_map(gt, sigma: float) -> np.ndarray:
    """Gaussian-blurred gradient magnitude of a depth map.

    Central-difference gradients (one-sided at borders), then a separable
    Gaussian of std `sigma` with kernel radius ceil(3*sigma) and symmetric
    reflection at the borders. Always non-negative.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    v = _values(gt)
    if torch.is_tensor(v):
        v = v.detach().cpu().numpy()
    v = np.asarray(v)
    gy, gx = np.gradient(v, axis=(-2, -1))
    mag = np.hypot(gx, gy)

    r = math.ceil(3 * sigma)
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    taps /= taps.sum()
    mag = _conv1d_symmetric(mag, taps, axis=-2)
    mag = _conv1d_symmetric(mag, taps, axis=-1)
    return mag


def _conv1d_symmetric(a, taps, axis):
    r = len(taps) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    ap = np.pad(a, pad, mode="symmetric")
    out = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    for j, wj in enumerate(taps):
        sl[axis] = slice(j, j + a.shape[axis])
        out = out + wj * ap[tuple(sl)]
    return out


def total_loss(
    pred,
    gt,
    mask,
    valid_range: ValidRange | None = None,
    cfg: LossConfig | None = None,
) -> LossBundle:
    """Assemble the full objective over valid_pixels(gt, mask, valid_range).

    With edge_weighting on, per-pixel Huber contributions are scaled by
    1/(1 + blurred gt gradient), renormalized to mean 1 over the valid set.
    An empty valid set yields an all-zero, inactive bundle.
    """
    cfg = cfg if cfg is not None else LossConfig()
    pred, gt, mask = _values(pred), _values(gt), _values(mask)
    valid = valid_pixels(gt, mask, valid_range)
    n = int(valid.sum())
    if n == 0:
        return LossBundle(0.0, 0.0, 0.0, 0.0, 0)

    is_torch = torch.is_tensor(pred)

    hmap = _huber_map(pred, gt, cfg.delta)
    if cfg.edge_weighting:
        w = 1.0 / (1.0 + edge_weight_map(gt, cfg.edge_blur_sigma))
        if is_torch:
            w = torch.as_tensor(w, dtype=pred.dtype, device=pred.device)
        w = w / w[valid].mean()
        hmap = hmap * w
    huber_t = hmap[valid].mean()

    ssim_index = ssim(pred, gt, valid, cfg.c1, cfg.c2)
    ssim_t = 1.0 - ssim_index if ssim_index is not None else None

    smooth_t = smooth_loss(pred, gt, valid, cfg.epsilon)

    huber_v = _as_float(huber_t)
    ssim_v = _as_float(ssim_t) if ssim_t is not None else 0.0
    smooth_v = _as_float(smooth_t)
    total_v = huber_v + cfg.alpha * ssim_v + cfg.beta * smooth_v

    total_tensor = None
    if is_torch:
        total_tensor = huber_t + cfg.beta * smooth_t
        if ssim_t is not None:
            total_tensor = total_tensor + cfg.alpha * ssim_t

    return LossBundle(total_v, huber_v, ssim_v, smooth_v, n, total_tensor)
