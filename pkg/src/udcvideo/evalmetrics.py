"""Full-reference quality metrics and evaluation reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core.frames import load_clip

INF_SENTINEL = "inf"


class MetricError(ValueError):
    pass


def psnr(x, y, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` over all elements; ``inf`` when identical."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    m = len(g) // 2
    return out[m:img.shape[0] - m, m:img.shape[1] - m]


def ssim_map(x: np.ndarray, y: np.ndarray, data_range: float = 1.0,
             k1: float = 0.01, k2: float = 0.03, win: int = 11, sigma: float = 1.5) -> np.ndarray:
    """SSIM map of two H x W planes over the valid window positions."""
    g = _gaussian_window(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y, data_range: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03).

    Accepts C x H x W frames (channel average) or T x C x H x W clips
    (average over frames of the per-frame value).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 4:
        return float(np.mean([ssim(a, b, data_range) for a, b in zip(x, y)]))
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.ndim != 3:
        raise MetricError(f"expected C x H x W or T x C x H x W, got {x.shape}")
    if min(x.shape[-2:]) < 11:
        raise MetricError(f"frame {x.shape[-2:]} is smaller than the 11x11 window")
    return float(np.mean([ssim_map(a, b, data_range).mean() for a, b in zip(x, y)]))


def _fmt(v: float) -> float | str:
    return INF_SENTINEL if math.isinf(v) else round(float(v), 6)


@dataclass
class EvalReport:
    clips: list[dict] = field(default_factory=list)   # {"id", "psnr", "ssim", "frames"}
    config_digest: str = ""
    crop: int = 0

    @property
    def psnr(self) -> float:
        return float(np.mean([c["psnr"] for c in self.clips]))

    @property
    def ssim(self) -> float:
        return float(np.mean([c["ssim"] for c in self.clips]))

    def to_dict(self) -> dict:
        return {"config_digest": self.config_digest, "crop": self.crop,
                "aggregate": {"psnr": _fmt(self.psnr), "ssim": _fmt(self.ssim), "lpips": None},
                "clips": [{"id": c["id"], "frames": c["frames"], "psnr": _fmt(c["psnr"]),
                           "ssim": _fmt(c["ssim"]), "lpips": None} for c in self.clips]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js = out_dir / f"{stem}.json"
        js.write_text(self.to_json())
        cs = out_dir / f"{stem}.csv"
        d = self.to_dict()
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip", "frames", "psnr_db", "ssim", "lpips"])
            for c in d["clips"]:
                w.writerow([c["id"], c["frames"], c["psnr"], c["ssim"], ""])
            w.writerow(["MEAN", sum(c["frames"] for c in d["clips"]),
                        d["aggregate"]["psnr"], d["aggregate"]["ssim"], ""])
        return js, cs

    def summary(self) -> str:
        return (f"{len(self.clips)} clips  PSNR {_fmt(self.psnr)} dB  SSIM {_fmt(self.ssim)}"
                f"  (config {self.config_digest or '-'})")


def _crop(a: np.ndarray, crop: int) -> np.ndarray:
    return a if crop <= 0 else a[..., crop:-crop, crop:-crop]


def evaluate(restored, reference, restored_stream: str = "restored",
             reference_stream: str = "clean", crop: int = 0, config_digest: str = "") -> EvalReport:
    """Compare matching clips of two manifests stream by stream."""
    got, want = set(restored.ids()), set(reference.ids())
    if got != want:
        raise MetricError(f"clip sets differ: extra {sorted(got - want)}, missing {sorted(want - got)}")
    if not want:
        raise MetricError("nothing to evaluate: empty clip set")
    report = EvalReport(config_digest=config_digest, crop=crop)
    for clip_id in reference.ids():
        x = load_clip(restored.path_of(restored.clip(clip_id), restored_stream)).data
        y = load_clip(reference.path_of(reference.clip(clip_id), reference_stream)).data
        if x.shape != y.shape:
            raise MetricError(f"clip {clip_id}: shapes differ {x.shape} vs {y.shape}")
        x, y = _crop(x, crop), _crop(y, crop)
        report.clips.append({"id": clip_id, "frames": int(x.shape[0]),
                             "psnr": psnr(np.clip(x, 0, 1), np.clip(y, 0, 1)),
                             "ssim": ssim(np.clip(x, 0, 1), np.clip(y, 0, 1))})
    return report
