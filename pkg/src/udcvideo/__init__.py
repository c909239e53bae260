"""Video restoration for under-display cameras.

The package synthesizes degraded clips from a point spread function that
follows camera motion, trains a bidirectional recurrent restoration network
with flare/haze gated attention, and scores results with PSNR and SSIM.
"""

from .core import FrameStack, Manifest, RunConfig, load_clip, load_config, load_manifest, save_clip
from .evalmetrics import evaluate, psnr, ssim
from .masks import soft_mask
from .model import D2RNet, build_model, restore_clip
from .psf import PSF, psf_transform
from .synth import degrade_frame, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "D2RNet", "FrameStack", "Manifest", "PSF", "RunConfig", "build_model", "degrade_frame",
    "evaluate", "generate_dataset", "load_clip", "load_config", "load_manifest", "psf_transform",
    "psnr", "restore_clip", "save_clip", "soft_mask", "ssim",
]
