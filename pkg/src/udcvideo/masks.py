"""Soft flare/haze decoupling masks.

``flare = max(0, max_c(I) - tau) / (1 - tau)`` is a linear ramp from the
threshold to full saturation; ``haze = 1 - flare``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .core.config import MaskConfig

_RANGE_TOL = 1e-6


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPair:
    flare: np.ndarray  # 1 x H x W
    haze: np.ndarray   # 1 x H x W


def flare_map(frame: np.ndarray, tau: float) -> np.ndarray:
    peak = np.asarray(frame, dtype=np.float64).max(axis=-3, keepdims=True)
    return np.maximum(0.0, peak - tau) / (1.0 - tau)


def soft_mask(frame: np.ndarray, cfg: MaskConfig = MaskConfig()) -> MaskPair:
    """Split a 3 x H x W display-domain frame into flare and haze maps."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise MaskError(f"expected a 3 x H x W frame, got {frame.shape}")
    lo, hi = frame.min(), frame.max()
    if lo < -_RANGE_TOL or hi > 1 + _RANGE_TOL:
        raise MaskError(f"frame values must lie in [0, 1] (found [{lo:g}, {hi:g}]); clamp first")
    cfg.validate()
    flare = flare_map(np.clip(frame, 0.0, 1.0), cfg.tau)
    return MaskPair(flare, 1.0 - flare)


def box_downsample(x: np.ndarray, scale: int) -> np.ndarray:
    """Average s x s blocks; identical to repeated 2x bilinear halving."""
    *lead, H, W = x.shape
    return x.reshape(*lead, H // scale, scale, W // scale, scale).mean(axis=(-3, -1))


def mask_at_scale(frame: np.ndarray, cfg: MaskConfig, scale: int) -> MaskPair:
    """Downsample the frame by ``scale`` and then apply :func:`soft_mask`."""
    if scale not in (2, 4, 8):
        raise MaskError(f"scale must be 2, 4 or 8, got {scale}")
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape[-2:]
    if H % scale or W % scale:
        raise MaskError(f"frame {H}x{W} is not divisible by scale {scale}")
    return soft_mask(box_downsample(frame, scale), cfg)


def downsample(x: torch.Tensor, scale: int) -> torch.Tensor:
    """Torch counterpart of :func:`box_downsample` for B x C x H x W."""
    return x if scale == 1 else F.avg_pool2d(x, scale)


def flare_map_torch(frames: torch.Tensor, tau: float) -> torch.Tensor:
    """B x 3 x H x W -> B x 1 x H x W flare map (no gradient is needed)."""
    peak = frames.amax(dim=1, keepdim=True).clamp(0.0, 1.0)
    return torch.clamp(peak - tau, min=0.0) / (1.0 - tau)
