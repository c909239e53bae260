"""Projective transforms, flow fields and warping.

Flow convention: a *sampling* flow ``f`` of shape 2 x H x W lives on the
grid of a reference frame; ``warp_bilinear(src, f)[y, x]`` reads ``src`` at
``(x + f[0, y, x], y + f[1, y, x])``. ``homography_to_flow(h)`` is the
forward displacement field of ``h``; aligning frame t-1 content to frame t
for a motion ``H_{t-1->t}`` therefore uses ``homography_to_flow(inv(H))``.
Pixel centres sit at integer coordinates, origin at the top-left pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy import ndimage

_W_EPS = 1e-12


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 projective transform, normalized so ``m[2, 2] == 1``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise GeometryError(f"homography must be a finite 3x3 matrix, got {m.shape}")
        if abs(m[2, 2]) < _W_EPS:
            raise GeometryError("homography has m[2][2] == 0 and cannot be normalized")
        m = m / m[2, 2]
        det = np.linalg.det(m)
        if not np.isfinite(det) or abs(det) < 1e-12:
            raise GeometryError(f"homography is singular (det={det:g})")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    @classmethod
    def from_params(cls, tx: float, ty: float, angle: float, px: float, py: float,
                    center: tuple[float, float] = (0.0, 0.0)) -> "Homography":
        """Rotation by ``angle`` about ``center``, then translation, with a
        perspective row ``(px, py)`` expressed in centred coordinates."""
        c, s = np.cos(angle), np.sin(angle)
        core = np.array([[c, -s, tx], [s, c, ty], [px, py, 1.0]])
        cx, cy = center
        to_c = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
        from_c = np.array([[1.0, 0, cx], [0, 1.0, cy], [0, 0, 1.0]])
        return cls(from_c @ core @ to_c)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, first: "Homography") -> "Homography":
        """Return the transform that applies ``first`` and then ``self``."""
        return Homography(self.m @ first.m)

    def __matmul__(self, other: "Homography") -> "Homography":
        return self.compose(other)

    def centered(self, center: tuple[float, float]) -> "Homography":
        """Re-express this transform in a frame whose origin is ``center``."""
        cx, cy = center
        to_c = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
        from_c = np.array([[1.0, 0, cx], [0, 1.0, cy], [0, 0, 1.0]])
        return Homography(from_c @ self.m @ to_c)

    def is_identity(self, atol: float = 0.0) -> bool:
        return bool(np.allclose(self.m, np.eye(3), rtol=0.0, atol=atol))

    def tolist(self) -> list[list[float]]:
        return self.m.tolist()


def compose(h2: Homography, h1: Homography) -> Homography:
    """``h2 after h1``."""
    return h2.compose(h1)


def homography_apply(h: Homography, pts) -> np.ndarray:
    """Map points ``(N, 2)`` through ``h``; raises on points sent to infinity."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points must be finite")
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ h.m.T
    w = hom[:, 2]
    bad = np.abs(w) < _W_EPS
    if np.any(bad):
        raise GeometryError(f"points mapped to infinity: {pts[bad].tolist()}")
    return hom[:, :2] / w[:, None]


def homography_to_flow(h: Homography, shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel displacement ``h(x, y) - (x, y)`` as a 2 x H x W array."""
    H, W = shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    mapped = homography_apply(h, pts)
    return (mapped - pts).T.reshape(2, H, W)


def check_flow(flow: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise GeometryError(f"flow must be 2 x H x W, got {flow.shape}")
    if shape is not None and tuple(flow.shape[1:]) != tuple(shape):
        raise GeometryError(f"flow dims {flow.shape[1:]} do not match frame dims {tuple(shape)}")
    if not np.all(np.isfinite(flow)):
        raise GeometryError("flow has non-finite values")
    return flow


def _base_grid(H: int, W: int, dtype, device) -> tuple[torch.Tensor, torch.Tensor]:
    ys = torch.arange(H, dtype=dtype, device=device).view(H, 1).expand(H, W)
    xs = torch.arange(W, dtype=dtype, device=device).view(1, W).expand(H, W)
    return xs, ys


def _warp_torch(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    B, C, H, W = src.shape
    if flow.shape != (B, 2, H, W):
        raise GeometryError(f"flow shape {tuple(flow.shape)} does not match source {tuple(src.shape)}")
    xs, ys = _base_grid(H, W, flow.dtype, flow.device)
    gx = xs + flow[:, 0]
    gy = ys + flow[:, 1]
    x0 = torch.floor(gx)
    y0 = torch.floor(gy)
    wx = (gx - x0).unsqueeze(1)
    wy = (gy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    flat = src.reshape(B, C, H * W)
    out = src.new_zeros(B, C, H, W)
    for dy, wgt_y in ((0, 1 - wy), (1, wy)):
        for dx, wgt_x in ((0, 1 - wx), (1, wx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = ((xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)).unsqueeze(1)
            idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).reshape(B, 1, H * W).expand(B, C, H * W)
            vals = torch.gather(flat, 2, idx).view(B, C, H, W)
            out = out + wgt_y * wgt_x * vals * inside.to(src.dtype)
    return out


def warp_bilinear(src, flow):
    """Bilinearly sample ``src`` at ``grid + flow``; out-of-grid samples are 0.

    Accepts C x H x W / 2 x H x W (or batched B x C x H x W / B x 2 x H x W)
    numpy arrays or torch tensors. Torch inputs stay differentiable with
    respect to both ``src`` and ``flow``.
    """
    as_numpy = isinstance(src, np.ndarray)
    s = torch.from_numpy(np.asarray(src)) if as_numpy else src
    f = torch.from_numpy(np.asarray(flow)) if isinstance(flow, np.ndarray) else flow
    f = f.to(s.dtype)
    single = s.dim() == 3
    if single:
        s, f = s.unsqueeze(0), f.unsqueeze(0)
    out = _warp_torch(s, f)
    if single:
        out = out.squeeze(0)
    return out.numpy() if as_numpy else out


def warp_complex(field: np.ndarray, h: Homography) -> np.ndarray:
    """Inverse-map a complex H x W field through ``h`` with bilinear sampling.

    ``out(p) = field(h^{-1}(p))``; real and imaginary parts are sampled
    independently and samples outside the grid read as 0.
    """
    field = np.asarray(field)
    H, W = field.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    src = homography_apply(h.inverse(), np.stack([xs.ravel(), ys.ravel()], axis=1))
    coords = np.stack([src[:, 1], src[:, 0]])

    def sample(part: np.ndarray) -> np.ndarray:
        return ndimage.map_coordinates(part.astype(np.float64), coords, order=1,
                                       mode="grid-constant", cval=0.0).reshape(H, W)

    return sample(field.real) + 1j * sample(field.imag)


def downsample_flow(flow: torch.Tensor, scale: int) -> torch.Tensor:
    """Box-average a B x 2 x H x W flow by ``scale`` and rescale its vectors."""
    if scale == 1:
        return flow
    return F.avg_pool2d(flow, scale) / scale


def write_flow(path: str | Path, flow: np.ndarray) -> None:
    """Save a 2 x H x W flow as a Middlebury ``.flo`` file."""
    flow = check_flow(flow)
    hw2 = np.ascontiguousarray(flow.transpose(1, 2, 0).astype(np.float32))
    if not cv2.writeOpticalFlow(str(path), hw2):
        raise OSError(f"failed to write flow {path}")


def read_flow(path: str | Path) -> np.ndarray:
    hw2 = cv2.readOpticalFlow(str(path))
    if hw2 is None:
        raise OSError(f"cannot read flow {path}")
    return np.ascontiguousarray(hw2.transpose(2, 0, 1))


# --------------------------------------------------------------------------
# flow estimators
# --------------------------------------------------------------------------

class ZeroFlow:
    """Disables alignment: every flow is identically zero."""

    def __call__(self, ref: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        return np.zeros((2, *np.asarray(ref).shape[-2:]), dtype=np.float32)


class KnownMotion:
    """Reads exact simulator flows.

    ``to_prev[t]`` aligns frame t-1 onto frame t and ``to_next[t]`` aligns
    frame t+1 onto frame t (each T x 2 x H x W).
    """

    def __init__(self, to_prev: np.ndarray | None, to_next: np.ndarray | None):
        if to_prev is None or to_next is None:
            raise GeometryError("known-motion flow requested without a manifest")
        self.to_prev = np.asarray(to_prev, dtype=np.float32)
        self.to_next = np.asarray(to_next, dtype=np.float32)

    @classmethod
    def from_manifest(cls, manifest, clip_id: str | None) -> "KnownMotion":
        if manifest is None or clip_id is None:
            raise GeometryError("known-motion flow requested without a manifest")
        clip = manifest.clip(clip_id)
        def stack(stream: str) -> np.ndarray:
            return np.stack([read_flow(p) for p in list_frames_flo(manifest.path_of(clip, stream))])

        return cls(stack("flow_to_prev"), stack("flow_to_next"))

    def pair(self, ref_index: int, tgt_index: int) -> np.ndarray:
        if tgt_index == ref_index - 1:
            return self.to_prev[ref_index]
        if tgt_index == ref_index + 1:
            return self.to_next[ref_index]
        raise GeometryError(f"known motion only covers adjacent frames, got {ref_index}->{tgt_index}")


def list_frames_flo(path: Path) -> list[Path]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix == ".flo")
    if not files:
        raise GeometryError(f"no flow files in {path}")
    return files


def estimate_flow(ref, tgt, model, pair: tuple[int, int] | None = None) -> np.ndarray:
    """Flow on ``ref``'s grid that aligns ``tgt`` onto ``ref``.

    ``model`` is a :class:`ZeroFlow`, a :class:`KnownMotion` (``pair`` gives
    the frame indices) or a :class:`PyramidFlowNet`.
    """
    ref = np.asarray(ref, dtype=np.float32)
    tgt = np.asarray(tgt, dtype=np.float32)
    if ref.shape != tgt.shape:
        raise GeometryError(f"frame shapes differ: {ref.shape} vs {tgt.shape}")
    if model is None:
        raise GeometryError("known-motion flow requested without a manifest")
    if isinstance(model, KnownMotion):
        if pair is None:
            raise GeometryError("known-motion flow needs the (ref, tgt) frame indices")
        return model.pair(*pair)
    if isinstance(model, ZeroFlow):
        return model(ref, tgt)
    if isinstance(model, PyramidFlowNet):
        with torch.no_grad():
            out = model(torch.from_numpy(ref)[None], torch.from_numpy(tgt)[None])
        return out[0].numpy()
    raise GeometryError(f"unknown flow estimator {type(model).__name__}")


class _FlowLevel(nn.Module):
    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(8, 32, 7, padding=3), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(32, 64, 7, padding=3), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(64, 32, 7, padding=3), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(32, 16, 7, padding=3), nn.LeakyReLU(0.1, inplace=True),
            nn.Conv2d(16, 2, 7, padding=3),
        )
        last = self.body[-1]
        nn.init.normal_(last.weight, std=1e-4)
        nn.init.zeros_(last.bias)

    def forward(self, x):
        return self.body(x)


class PyramidFlowNet(nn.Module):
    """Coarse-to-fine flow estimator (one residual refinement net per level).

    ``forward(ref, tgt)`` takes B x 3 x H x W frames and returns the
    B x 2 x H x W flow aligning ``tgt`` onto ``ref``. Levels that would be
    smaller than 4 pixels are skipped, so any input size works.
    """

    def __init__(self, levels: int = 4):
        super().__init__()
        self.levels = nn.ModuleList(_FlowLevel() for _ in range(levels))

    def forward(self, ref: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
        refs, tgts = [ref], [tgt]
        for _ in range(len(self.levels) - 1):
            if min(refs[0].shape[-2:]) < 8 or any(d % 2 for d in refs[0].shape[-2:]):
                break
            refs.insert(0, F.avg_pool2d(refs[0], 2))
            tgts.insert(0, F.avg_pool2d(tgts[0], 2))
        modules = list(self.levels)[-len(refs):]
        B, _, h, w = refs[0].shape
        flow = ref.new_zeros(B, 2, h, w)
        for level, (r, t) in enumerate(zip(refs, tgts)):
            if level > 0:
                flow = 2.0 * F.interpolate(flow, size=r.shape[-2:], mode="bilinear", align_corners=False)
            warped = _warp_torch(t, flow)
            flow = flow + modules[level](torch.cat([r, warped, flow], dim=1))
        return flow
