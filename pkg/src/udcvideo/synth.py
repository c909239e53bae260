"""Degraded-video synthesis for under-display cameras.

Each clean frame is scaled, convolved with the current diffraction PSF,
perturbed with Gaussian noise and clamped; the PSF itself evolves along a
sampled camera-motion script. ``generate_dataset`` writes the clean and
degraded streams together with per-frame PSFs, homographies and exact
alignment flows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .core.config import DegradeParams, RunConfig, SynthConfig
from .core.frames import FrameStack, load_clip, save_clip
from .core.manifest import ClipEntry, Manifest
from .core.rng import seeded_rng
from .geometry import Homography, homography_apply, homography_to_flow, write_flow
from .psf import PSF, load_psf, make_synthetic_psf, psf_transform, save_psf

log = logging.getLogger(__name__)


class SynthError(ValueError):
    pass


def _kernel_image(kernel: np.ndarray, H: int, W: int) -> np.ndarray:
    """Place a K x K kernel on an H x W torus with its centre tap at (0, 0)."""
    K = kernel.shape[-1]
    c = (K - 1) // 2
    rows = (np.arange(K) - c) % H
    cols = (np.arange(K) - c) % W
    img = np.zeros((H, W), dtype=np.float64)
    np.add.at(img, (rows[:, None], cols[None, :]), kernel)
    return img


def circular_convolve(frame: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-channel circular convolution of C x H x W with C x K x K via FFT."""
    C, H, W = frame.shape
    out = np.empty((C, H, W), dtype=np.float64)
    for c in range(C):
        kf = np.fft.rfft2(_kernel_image(kernels[c], H, W))
        out[c] = np.fft.irfft2(np.fft.rfft2(frame[c].astype(np.float64)) * kf, s=(H, W))
    return out


def tone_map(x: np.ndarray, mode: str, clamp_hi: float = 1.0) -> np.ndarray:
    if mode == "linear":
        return x
    if mode == "gamma-2.2":
        return clamp_hi * np.power(x / clamp_hi, 1.0 / 2.2)
    raise SynthError(f"unknown tone map {mode!r}")


def degrade_frame(gt: np.ndarray, k: PSF, p: DegradeParams,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Degrade one C x H x W linear frame: clamp(gamma * gt (*) k + n)."""
    gt = np.asarray(gt)
    if gt.ndim != 3:
        raise SynthError(f"frame must be C x H x W, got {gt.shape}")
    try:
        kernels = k.for_channels(gt.shape[0])
    except ValueError as exc:
        raise SynthError(str(exc)) from exc
    out = circular_convolve(p.gamma * gt.astype(np.float64), kernels)
    if p.noise_sigma > 0:
        if rng is None:
            raise SynthError("noise_sigma > 0 needs a random generator")
        out = out + rng.normal(0.0, p.noise_sigma, size=out.shape)
    out = np.clip(out, 0.0, p.clamp_hi)
    return tone_map(out, p.tone_map, p.clamp_hi)


@dataclass(frozen=True)
class MotionScript:
    """Inter-frame homographies ``H_{t-1->t}`` for t = 1..T-1 (0-based).

    ``params`` holds the sampled (tx, ty, angle, px, py) per step.
    """

    homographies: tuple[Homography, ...]
    params: np.ndarray
    max_translation: float = 0.0
    max_rotation: float = 0.0
    max_perspective: float = 0.0

    def __len__(self) -> int:
        return len(self.homographies)

    @classmethod
    def identity(cls, T: int) -> "MotionScript":
        return cls(tuple(Homography.identity() for _ in range(T - 1)), np.zeros((T - 1, 5)))

    def cumulative(self) -> list[Homography]:
        """``C_t`` mapping frame-0 coordinates into frame t (``C_0 = I``)."""
        acc = [Homography.identity()]
        for h in self.homographies:
            acc.append(h @ acc[-1])
        return acc


def sample_motion(max_translation: float, max_rotation: float, max_perspective: float,
                  T: int, rng: np.random.Generator,
                  shape: tuple[int, int] = (64, 64), smoothness: float = 0.7) -> MotionScript:
    """Smooth random walk over per-step translation, rotation and perspective.

    Each parameter follows ``v <- smoothness * v + (1 - smoothness) * u``
    with ``u ~ U(-1, 1)``; the step value is ``bound * v`` so it never
    leaves ``[-bound, bound]``. Rotation and perspective act about the
    frame centre.
    """
    if T < 1:
        raise SynthError(f"T must be >= 1, got {T}")
    bounds = np.array([max_translation, max_translation, max_rotation,
                       max_perspective, max_perspective], dtype=np.float64)
    if np.any(bounds < 0):
        raise SynthError("motion bounds must be >= 0")
    H, W = shape
    center = ((W - 1) / 2.0, (H - 1) / 2.0)
    v = rng.uniform(-1.0, 1.0, size=5)
    params, homs = [], []
    for _ in range(T - 1):
        v = smoothness * v + (1.0 - smoothness) * rng.uniform(-1.0, 1.0, size=5)
        step = bounds * np.clip(v, -1.0, 1.0)
        params.append(step)
        homs.append(Homography.from_params(*step, center=center))
    return MotionScript(tuple(homs), np.array(params).reshape(T - 1, 5),
                        max_translation, max_rotation, max_perspective)


def render_motion(source: FrameStack, script: MotionScript, out_shape: tuple[int, int]) -> FrameStack:
    """Impose the camera motion on a source clip and centre-crop to ``out_shape``.

    Output frame t samples source frame t at ``C_t^{-1}(p)`` so content moves
    exactly by the script; borders replicate the nearest source pixel.
    """
    T = len(source)
    if len(script) != T - 1:
        raise SynthError(f"motion script has {len(script)} steps, clip needs {T - 1}")
    h, w = out_shape
    Hs, Ws = source.shape[2:]
    if Hs < h or Ws < w:
        raise SynthError(f"source {Hs}x{Ws} is smaller than output {h}x{w}")
    oy, ox = (Hs - h) / 2.0, (Ws - w) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    frames = []
    for t, cum in enumerate(script.cumulative()):
        if cum.is_identity() and oy == int(oy) and ox == int(ox):
            frames.append(source.data[t][:, int(oy):int(oy) + h, int(ox):int(ox) + w])
            continue
        src = homography_apply(cum.inverse(), grid)
        coords = np.stack([src[:, 1] + oy, src[:, 0] + ox])
        frames.append(np.stack([
            ndimage.map_coordinates(ch.astype(np.float64), coords, order=1, mode="nearest").reshape(h, w)
            for ch in source.data[t]]))
    return FrameStack(np.maximum(np.stack(frames), 0.0), source.colorspace)


class SynthesizedClip(NamedTuple):
    degraded: FrameStack
    psfs: list[PSF]
    flows_to_prev: np.ndarray
    flows_to_next: np.ndarray
    target: FrameStack
    gain: float


def alignment_flows(script: MotionScript, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Exact sampling flows: ``to_prev[t]`` pulls frame t-1 onto frame t,
    ``to_next[t]`` pulls frame t+1 onto frame t (zero where absent)."""
    T = len(script) + 1
    to_prev = np.zeros((T, 2, *shape), dtype=np.float32)
    to_next = np.zeros((T, 2, *shape), dtype=np.float32)
    for t, h in enumerate(script.homographies, start=1):
        to_prev[t] = homography_to_flow(h.inverse(), shape)
        to_next[t - 1] = homography_to_flow(h, shape)
    return to_prev, to_next


def sample_gain(lo: float, hi: float, rng: np.random.Generator) -> float:
    """Log-uniform brightness gain in ``[lo, hi]``."""
    if lo == hi:
        return float(lo)
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def synthesize_clip(gt: FrameStack, k0: PSF, script: MotionScript, p: DegradeParams,
                    rng: np.random.Generator, gain: float | None = None) -> SynthesizedClip:
    """Degrade a clean clip frame by frame with a motion-evolved PSF.

    A single brightness gain (sampled from ``p.brightness_gain_range`` unless
    given) scales the whole clip first. The returned ``target`` is the
    matching display-domain ground truth ``tone(clamp(gain * gt))``.
    """
    T = len(gt)
    if len(script) != T - 1:
        raise SynthError(f"motion script has {len(script)} steps, clip needs {T - 1}")
    if gain is None:
        gain = sample_gain(*p.brightness_gain_range, rng)
    scaled = gt.data.astype(np.float64) * gain
    psfs = [k0]
    for h in script.homographies:
        psfs.append(psf_transform(psfs[-1], h))
    degraded = np.stack([degrade_frame(scaled[t], psfs[t], p, rng) for t in range(T)])
    target = tone_map(np.clip(scaled, 0.0, p.clamp_hi), p.tone_map, p.clamp_hi)
    to_prev, to_next = alignment_flows(script, gt.shape[2:])
    return SynthesizedClip(FrameStack(degraded, "display-clamped"), psfs, to_prev, to_next,
                           FrameStack(target, "display-clamped"), gain)


# --------------------------------------------------------------------------
# procedural sources
# --------------------------------------------------------------------------

def make_procedural_scene(rng: np.random.Generator, T: int, H: int, W: int,
                          n_lights: int | None = None) -> FrameStack:
    """Static dim HDR scene with texture and a few bright light sources.

    The background stays below ~0.15 so that brightness gains up to 8 leave
    most content unsaturated, while lights reach several times the clamp
    level and produce diffraction flare.
    """
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    base = rng.uniform(0.02, 0.06, size=3)[:, None, None] * np.ones((3, H, W))
    base += rng.uniform(0.0, 0.04, size=3)[:, None, None] * (xs / W + rng.uniform(0, 1) * ys / H)
    for _ in range(rng.integers(2, 5)):
        fx, fy = rng.uniform(0.05, 0.35, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.01, 0.04, size=3)[:, None, None]
        base += amp * (0.5 + 0.5 * np.sin(2 * np.pi * (fx * xs + fy * ys) + phase))
    for _ in range(rng.integers(3, 7)):
        x0, y0 = rng.uniform(0, W), rng.uniform(0, H)
        rw, rh = rng.uniform(3, W / 3), rng.uniform(3, H / 3)
        inside = (np.abs(xs - x0) < rw / 2) & (np.abs(ys - y0) < rh / 2)
        base[:, inside] = rng.uniform(0.01, 0.15, size=3)[:, None]
    if n_lights is None:
        n_lights = int(rng.integers(1, 4))
    for _ in range(n_lights):
        x0, y0 = rng.uniform(0.15 * W, 0.85 * W), rng.uniform(0.15 * H, 0.85 * H)
        r = rng.uniform(1.0, 2.5)
        peak = rng.uniform(1.5, 6.0)
        tint = rng.uniform(0.7, 1.0, size=3)[:, None, None]
        base += peak * tint * np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) / (2 * r * r))
    return FrameStack(np.repeat(np.clip(base, 0.0, None)[None], T, axis=0), "linear-hdr")


# --------------------------------------------------------------------------
# dataset generation
# --------------------------------------------------------------------------

def base_psf(cfg: SynthConfig) -> PSF:
    if cfg.psf_kind == "file":
        return load_psf(cfg.psf_path)
    return make_synthetic_psf(cfg.psf_kind, cfg.psf_size, sigma=cfg.psf_sigma, period=cfg.psf_period,
                              slits=cfg.psf_slits, envelope=cfg.psf_envelope, channels=3)


def _digest(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for path in paths:
        files = sorted(path.iterdir()) if path.is_dir() else [path]
        for f in files:
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def procedural_sources(cfg: RunConfig) -> list[tuple[str, FrameStack]]:
    s = cfg.synth
    margin = int(np.ceil(2 * s.max_translation * max(s.n_frames - 1, 1))) + 4
    out = []
    for i in range(s.n_clips):
        rng = seeded_rng(cfg.seed, f"scene:{i}")
        out.append((f"clip{i:03d}",
                    make_procedural_scene(rng, s.n_frames, s.height + 2 * margin, s.width + 2 * margin)))
    return out


def _resolve_source(item, index: int) -> tuple[str, FrameStack]:
    if isinstance(item, tuple):
        return item
    if isinstance(item, FrameStack):
        return f"clip{index:03d}", item
    path = Path(item)
    try:
        return path.name, load_clip(path)
    except (OSError, ValueError) as exc:
        raise SynthError(f"source clip {path}: {exc}") from exc


def generate_dataset(src_clips, cfg: RunConfig, out_dir: str | Path) -> Manifest:
    """Synthesize every source clip into ``out_dir`` and write the manifest.

    ``src_clips`` items may be clip directories, FrameStacks or
    ``(id, FrameStack)`` pairs. Each clip draws from its own random stream
    keyed by ``(seed, clip id)``, so output does not depend on clip order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    s = cfg.synth
    k0 = base_psf(s)
    clips = []
    for index, item in enumerate(src_clips):
        clip_id, source = _resolve_source(item, index)
        try:
            clips.append(_generate_clip(clip_id, source, k0, cfg, out_dir))
        except (OSError, ValueError) as exc:
            raise SynthError(f"clip {clip_id}: {exc}") from exc
    synthesis = {"seed": cfg.seed, "config_digest": cfg.digest(),
                 "synth": json.loads(json.dumps(dataclasses.asdict(s)))}
    manifest = Manifest(out_dir, clips, synthesis)
    manifest.save()
    return manifest


def _generate_clip(clip_id: str, source: FrameStack, k0: PSF, cfg: RunConfig, out_dir: Path) -> ClipEntry:
    s = cfg.synth
    rng = seeded_rng(cfg.seed, f"clip:{clip_id}")
    T = len(source)
    shape = (min(s.height, source.shape[2]), min(s.width, source.shape[3]))
    script = sample_motion(s.max_translation, s.max_rotation, s.max_perspective, T, rng, shape)
    gt = render_motion(source, script, shape)
    params = dataclasses.replace(s.degrade, gamma=float(rng.uniform(*s.gamma_range)),
                                 noise_sigma=float(rng.uniform(*s.noise_sigma_range)))
    result = synthesize_clip(gt, k0, script, params, rng)
    base = out_dir / clip_id
    streams = {name: f"{clip_id}/{name}" for name in
               ("clean", "clean_hdr", "degraded", "psf", "flow_to_prev", "flow_to_next")}
    streams["homography"] = f"{clip_id}/homography.json"
    save_clip(result.target, base / "clean", s.encoding)
    save_clip(FrameStack(gt.data * result.gain, "linear-hdr"), base / "clean_hdr", "float")
    save_clip(result.degraded, base / "degraded", s.encoding)
    for name in ("psf", "flow_to_prev", "flow_to_next"):
        (base / name).mkdir(parents=True, exist_ok=True)
    for t in range(T):
        save_psf(result.psfs[t], base / "psf" / f"{t:06d}.psf")
        write_flow(base / "flow_to_prev" / f"{t:06d}.flo", result.flows_to_prev[t])
        write_flow(base / "flow_to_next" / f"{t:06d}.flo", result.flows_to_next[t])
    homs = [Homography.identity().tolist()] + [h.tolist() for h in script.homographies]
    (base / "homography.json").write_text(json.dumps(homs) + "\n")
    digest = _digest([out_dir / v for v in sorted(streams.values())])
    log.info("synthesized %s: %d frames, gain %.3f, gamma %.3f, sigma %.4f",
             clip_id, T, result.gain, params.gamma, params.noise_sigma)
    return ClipEntry(clip_id, T, streams, digest,
                     {"gain": result.gain, "gamma": params.gamma, "noise_sigma": params.noise_sigma})
