"""Run configuration schema.

One YAML file describes an experiment. Every field has a default, so an
empty file (or no file) is a valid configuration; unknown keys are
rejected and ``section.key=value`` overrides are type-checked against the
dataclass annotations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the first failing dotted key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(key, message)


@dataclass(frozen=True)
class ModelConfig:
    scales: tuple[int, ...] = (2, 4, 8)
    channels: tuple[int, ...] = (48, 60, 72)
    n_resblocks: int = 5
    enable_sup: bool = True
    enable_shr: bool = True
    enable_lfr: bool = True
    enable_smg: bool = True
    # "known" reads simulator flows, "zero" disables alignment, "learned" is the pyramid net
    flow: str = "known"
    flow_levels: int = 4
    global_residual: bool = True
    zero_init_head: bool = False

    def validate(self, prefix: str = "model") -> None:
        _require(len(self.scales) >= 1, f"{prefix}.scales", "at least one scale required")
        _require(len(self.scales) == len(self.channels), f"{prefix}.channels",
                 f"length {len(self.channels)} does not match scales length {len(self.scales)}")
        _require(all(s >= 2 and s & (s - 1) == 0 for s in self.scales), f"{prefix}.scales",
                 "each scale must be a power of two >= 2")
        _require(all(a < b for a, b in zip(self.scales, self.scales[1:])), f"{prefix}.scales",
                 "scales must be strictly increasing")
        _require(all(c >= 1 for c in self.channels), f"{prefix}.channels", "widths must be positive")
        _require(self.n_resblocks >= 1, f"{prefix}.n_resblocks", "must be >= 1")
        _require(self.flow in ("known", "zero", "learned"), f"{prefix}.flow",
                 f"unknown estimator {self.flow!r}")
        _require(self.flow_levels >= 1, f"{prefix}.flow_levels", "must be >= 1")

    @classmethod
    def large(cls) -> "ModelConfig":
        """Full-size network with the jointly trained flow estimator."""
        return cls(flow="learned")


@dataclass(frozen=True)
class TrainConfig:
    lr_main: float = 1e-4
    lr_flow: float = 1.25e-5
    betas: tuple[float, float] = (0.9, 0.99)
    schedule: str = "cosine"
    total_iters: int = 20000
    # None: freeze for the same fraction of the run as 5K of 400K iterations
    flow_freeze_iters: Optional[int] = None
    batch: int = 8
    patch: int = 64
    seq_len: int = 6
    eps_charb: float = 1e-3
    sup_weight: float = 1.0
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    ckpt_every: int = 1000
    val_every: int = 1000
    val_clips: int = 1

    @property
    def freeze_iters(self) -> int:
        if self.flow_freeze_iters is not None:
            return self.flow_freeze_iters
        return round(self.total_iters * 5_000 / 400_000)

    def validate(self, prefix: str = "train") -> None:
        for name in ("lr_main", "lr_flow", "eps_charb"):
            _require(getattr(self, name) > 0, f"{prefix}.{name}", "must be positive")
        _require(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas),
                 f"{prefix}.betas", "need two values in [0, 1)")
        _require(self.schedule in ("cosine", "constant"), f"{prefix}.schedule",
                 f"unknown schedule {self.schedule!r}")
        for name in ("total_iters", "batch", "patch", "seq_len", "ckpt_every", "val_every"):
            _require(getattr(self, name) >= 1, f"{prefix}.{name}", "must be >= 1")
        if self.flow_freeze_iters is not None:
            _require(0 <= self.flow_freeze_iters <= self.total_iters, f"{prefix}.flow_freeze_iters",
                     "must lie in [0, total_iters]")
        _require(self.sup_weight >= 0, f"{prefix}.sup_weight", "must be >= 0")
        _require(self.val_clips >= 0, f"{prefix}.val_clips", "must be >= 0")


@dataclass(frozen=True)
class DegradeParams:
    gamma: float = 1.0
    noise_sigma: float = 0.0
    clamp_hi: float = 1.0
    tone_map: str = "linear"
    brightness_gain_range: tuple[float, float] = (1.0, 8.0)

    def validate(self, prefix: str = "synth.degrade") -> None:
        _require(self.gamma > 0 and self.gamma < float("inf"), f"{prefix}.gamma", "must be finite and > 0")
        _require(0 <= self.noise_sigma < float("inf"), f"{prefix}.noise_sigma", "must be finite and >= 0")
        _require(self.clamp_hi > 0, f"{prefix}.clamp_hi", "must be > 0")
        _require(self.tone_map in ("linear", "gamma-2.2"), f"{prefix}.tone_map",
                 f"unknown tone map {self.tone_map!r}")
        lo, hi = self.brightness_gain_range
        _require(1.0 <= lo <= hi, f"{prefix}.brightness_gain_range", "need 1 <= lo <= hi")


@dataclass(frozen=True)
class SynthConfig:
    degrade: DegradeParams = field(default_factory=DegradeParams)
    gamma_range: tuple[float, float] = (0.8, 1.2)
    noise_sigma_range: tuple[float, float] = (0.0, 0.01)
    psf_kind: str = "diffraction-like"
    psf_path: Optional[str] = None
    psf_size: int = 31
    psf_sigma: float = 1.5
    psf_period: float = 6.0
    psf_slits: int = 4
    psf_envelope: float = 10.0
    max_translation: float = 2.0
    max_rotation: float = 0.01
    max_perspective: float = 1e-5
    # procedural source scenes used when no source clips are given
    n_clips: int = 10
    n_frames: int = 6
    height: int = 64
    width: int = 64
    encoding: str = "int16"

    def validate(self, prefix: str = "synth") -> None:
        self.degrade.validate(f"{prefix}.degrade")
        for name in ("gamma_range", "noise_sigma_range"):
            lo, hi = getattr(self, name)
            _require(0 <= lo <= hi, f"{prefix}.{name}", "need 0 <= lo <= hi")
        _require(self.gamma_range[0] > 0, f"{prefix}.gamma_range", "gamma must be > 0")
        _require(self.psf_kind in ("gaussian", "diffraction-like", "file"), f"{prefix}.psf_kind",
                 f"unknown PSF kind {self.psf_kind!r}")
        _require(self.psf_kind != "file" or self.psf_path is not None, f"{prefix}.psf_path",
                 "required when psf_kind is 'file'")
        _require(self.psf_size >= 1 and self.psf_size % 2 == 1, f"{prefix}.psf_size", "must be odd")
        for name in ("psf_sigma", "psf_period", "psf_envelope"):
            _require(getattr(self, name) > 0, f"{prefix}.{name}", "must be > 0")
        _require(self.psf_slits >= 1, f"{prefix}.psf_slits", "must be >= 1")
        for name in ("max_translation", "max_rotation", "max_perspective"):
            _require(getattr(self, name) >= 0, f"{prefix}.{name}", "must be >= 0")
        for name in ("n_frames", "height", "width"):
            _require(getattr(self, name) >= 1, f"{prefix}.{name}", "must be >= 1")
        _require(self.n_clips >= 0, f"{prefix}.n_clips", "must be >= 0")
        _require(self.encoding in ("int8", "int16", "float"), f"{prefix}.encoding",
                 f"unknown encoding {self.encoding!r}")


@dataclass(frozen=True)
class MaskConfig:
    tau: float = 0.9

    def validate(self, prefix: str = "mask") -> None:
        _require(0 < self.tau < 1, f"{prefix}.tau", "must lie strictly between 0 and 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.synth.validate()
        self.mask.validate()
        _require(self.seed >= 0, "seed", "must be >= 0")
        return self

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections: Any) -> "RunConfig":
        return dataclasses.replace(self, **sections).validate()


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(key, f"expected a mapping, got {type(value).__name__}")
        return _build(tp, value, key)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(key, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{key}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise ConfigError(key, f"unsupported field type {tp}")


def _build(cls: type, data: dict[str, Any], prefix: str = "") -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in names:
            raise ConfigError(key, "unknown key")
        kwargs[k] = _coerce(v, hints[k], key)
    return cls(**kwargs)


def _set_dotted(tree: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot descend into a scalar")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    """Split ``a.b=value``; the value is parsed as YAML (``1e-4``, ``[2, 4]``, ``true``)."""
    if "=" not in text:
        raise ConfigError(text, "override must have the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    value = yaml.safe_load(raw) if raw.strip() else ""
    if isinstance(value, str) and _looks_numeric(raw.strip()):
        value = float(raw)
    return key, value


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def config_from_dict(data: dict[str, Any] | None,
                     overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    tree = dict(data or {})
    tree = json.loads(json.dumps(tree))  # deep copy, plain containers
    for text in overrides:
        key, value = parse_override(text)
        _set_dotted(tree, key, value)
    cfg = _build(RunConfig, tree)
    return cfg.validate()


def load_config(path: str | Path | None = None,
                overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Read a YAML run config; missing keys fall back to defaults."""
    data: dict[str, Any] = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text())
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config file must hold a mapping")
        data = raw
    return config_from_dict(data, overrides)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
