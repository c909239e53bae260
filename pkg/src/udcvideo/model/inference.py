"""Building networks and restoring whole clips."""

from __future__ import annotations

import numpy as np
import torch

from ..core.config import MaskConfig, ModelConfig
from ..core.frames import FrameStack
from ..core.rng import torch_seed
from .network import D2RNet


def build_model(cfg: ModelConfig, mask_cfg: MaskConfig = MaskConfig(), seed: int = 0) -> D2RNet:
    """Construct a network whose initial weights depend only on ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed, "model-init"))
        return D2RNet(cfg, mask_cfg)


def restore_clip(clip: FrameStack, model: D2RNet, flows_to_prev: np.ndarray | None = None,
                 flows_to_next: np.ndarray | None = None):
    """Restore a T x 3 x H x W clip.

    Returns the restored clip (clamped to the display range) and the
    intermediate frames keyed by ``(scale, direction, t)``.
    """
    frames = torch.from_numpy(np.array(clip.data, dtype=np.float32))[None]
    to_prev = None if flows_to_prev is None else torch.from_numpy(np.array(flows_to_prev, np.float32))[None]
    to_next = None if flows_to_next is None else torch.from_numpy(np.array(flows_to_next, np.float32))[None]
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(frames, to_prev, to_next)
    finally:
        model.train(was_training)
    restored = out.output[0].numpy()
    if not np.all(np.isfinite(restored)):
        raise FloatingPointError("network produced non-finite values")
    inters = {k: v[0].numpy() for k, v in out.intermediates.items()}
    return FrameStack(np.clip(restored, 0.0, 1.0), "display-clamped"), inters
