from .config import (ConfigError, DegradeParams, MaskConfig, ModelConfig, RunConfig,
                     SynthConfig, TrainConfig, config_from_dict, dump_config, load_config)
from .frames import ClipError, FrameStack, list_frames, load_clip, save_clip
from .manifest import ClipEntry, Manifest, ManifestError, load_manifest
from .rng import seeded_rng, torch_seed

__all__ = [
    "ClipEntry", "ClipError", "ConfigError", "DegradeParams", "FrameStack", "Manifest",
    "ManifestError", "MaskConfig", "ModelConfig", "RunConfig", "SynthConfig", "TrainConfig",
    "config_from_dict", "dump_config", "list_frames", "load_clip", "load_config",
    "load_manifest", "save_clip", "seeded_rng", "torch_seed",
]
