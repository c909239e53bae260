"""Point spread functions and their motion-driven evolution.

The temporal model warps the *aperture field* of a PSF: take the
nonnegative square root of the intensity kernel, inverse-FFT it into a
complex field, perspective-warp that field, FFT back and square the
magnitude. All transforms use the centred convention (zero frequency and
the aperture origin in the middle of the K x K grid).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Homography, warp_complex

_SUM_TOL = 1e-12
_MAGIC = "UDCPSF 1"


class PSFError(ValueError):
    pass


@dataclass(frozen=True)
class PSF:
    """Nonnegative C x K x K kernel (C in {1, 3}, K odd), unit sum per channel."""

    k: np.ndarray

    def __post_init__(self):
        k = np.array(self.k, dtype=np.float64, copy=True)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3 or k.shape[0] not in (1, 3) or k.shape[1] != k.shape[2]:
            raise PSFError(f"PSF must be C x K x K with C in {{1, 3}}, got {k.shape}")
        if k.shape[1] % 2 == 0:
            raise PSFError(f"PSF size must be odd so it has a centre tap, got K={k.shape[1]}")
        if not np.all(np.isfinite(k)):
            raise PSFError("PSF has non-finite entries")
        if np.any(k < 0):
            raise PSFError(f"PSF has negative entries (min {k.min():g})")
        sums = k.sum(axis=(1, 2))
        if np.any(sums <= 0):
            raise PSFError("PSF channel has zero total energy")
        if np.any(np.abs(sums - 1.0) > _SUM_TOL):
            k = k / sums[:, None, None]
        k.flags.writeable = False
        object.__setattr__(self, "k", k)

    @property
    def channels(self) -> int:
        return self.k.shape[0]

    @property
    def size(self) -> int:
        return self.k.shape[1]

    def for_channels(self, c: int) -> np.ndarray:
        """Kernel broadcast to ``c`` channels."""
        if self.channels == c:
            return self.k
        if self.channels == 1:
            return np.repeat(self.k, c, axis=0)
        raise PSFError(f"cannot broadcast a {self.channels}-channel PSF to {c} channels")


def centered_ifft2(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a, axes=(-2, -1))), axes=(-2, -1))


def centered_fft2(a: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a, axes=(-2, -1))), axes=(-2, -1))


def psf_transform(prev: PSF, h: Homography | np.ndarray) -> PSF:
    """Advance a PSF by one inter-frame motion ``h = H_{t-1->t}``.

    The aperture field is warped with ``H^{-1}`` about the grid centre, and
    the result is renormalized so total energy stays 1.
    """
    if not isinstance(h, Homography):
        h = Homography(h)
    try:
        h_inv = h.inverse()
    except (np.linalg.LinAlgError, GeometryError) as exc:
        raise PSFError(f"homography is not invertible: {exc}") from exc
    c = (prev.size - 1) / 2.0
    g = h_inv.centered((c, c))
    out = np.empty_like(prev.k)
    for ch, kernel in enumerate(prev.k):
        aperture = centered_ifft2(np.sqrt(kernel))
        warped = warp_complex(aperture, g)
        out[ch] = np.abs(centered_fft2(warped)) ** 2
    sums = out.sum(axis=(1, 2), keepdims=True)
    if np.any(sums <= 0):
        raise PSFError("warp moved all aperture energy off the grid")
    return PSF(out / sums)


# relative wavelengths for R, G, B; diffraction spacing scales with wavelength
_WAVELENGTH_RATIOS = (620 / 530, 1.0, 460 / 530)


def _grating_profile(x: np.ndarray, period: float, slits: int, envelope: float) -> np.ndarray:
    phase = np.pi * x / period
    num = np.sin(slits * phase)
    den = slits * np.sin(phase)
    near_order = np.abs(den) < 1e-12
    ratio = np.where(near_order, 1.0, num / np.where(near_order, 1.0, den))
    return np.sinc(x / envelope) ** 2 * ratio ** 2


def make_synthetic_psf(kind: str, K: int, *, sigma: float = 1.5, period: float = 6.0,
                       slits: int = 4, envelope: float = 10.0, channels: int = 1) -> PSF:
    """Build a stand-in PSF.

    ``gaussian`` is isotropic with std ``sigma``. ``diffraction-like`` is
    the separable intensity pattern of an ``slits``-aperture grating with
    pitch ``period`` under a sinc^2 envelope of width ``envelope``: a
    bright centre lobe with axis-aligned periodic side lobes. With
    ``channels=3`` the side-lobe spacing scales with the R/G/B wavelength.
    """
    if K < 1 or K % 2 == 0:
        raise PSFError(f"K must be a positive odd integer, got {K}")
    if channels not in (1, 3):
        raise PSFError(f"channels must be 1 or 3, got {channels}")
    c = (K - 1) // 2
    x = np.arange(K, dtype=np.float64) - c
    ratios = _WAVELENGTH_RATIOS if channels == 3 else (1.0,)
    planes = []
    for r in ratios:
        if kind == "gaussian":
            if not sigma > 0:
                raise PSFError(f"sigma must be > 0, got {sigma}")
            g = np.exp(-0.5 * (x / (sigma * r)) ** 2)
        elif kind == "diffraction-like":
            if not (period > 0 and envelope > 0 and slits >= 1):
                raise PSFError("diffraction-like PSF needs period > 0, envelope > 0, slits >= 1")
            g = _grating_profile(x / r, period, slits, envelope)
        else:
            raise PSFError(f"unknown PSF kind {kind!r}")
        planes.append(np.outer(g, g))
    return PSF(np.stack(planes))


def save_psf(psf: PSF, path: str | Path) -> None:
    """Write a PSF as a short text header followed by raw little-endian float64."""
    normalized = int(bool(np.all(np.abs(psf.k.sum(axis=(1, 2)) - 1.0) <= _SUM_TOL)))
    header = (f"{_MAGIC}\nchannels {psf.channels}\nsize {psf.size}\n"
              f"normalized {normalized}\ndtype float64\nend\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(psf.k, dtype="<f8").tobytes())


def load_psf(path: str | Path) -> PSF:
    with open(path, "rb") as fh:
        fields = {}
        magic = fh.readline().decode("ascii").strip()
        if magic != _MAGIC:
            raise PSFError(f"{path} is not a PSF file (header {magic!r})")
        while True:
            line = fh.readline()
            if not line:
                raise PSFError(f"{path}: truncated header")
            line = line.decode("ascii").strip()
            if line == "end":
                break
            key, _, value = line.partition(" ")
            fields[key] = value
        try:
            C, K = int(fields["channels"]), int(fields["size"])
        except (KeyError, ValueError) as exc:
            raise PSFError(f"{path}: bad header field {exc}") from None
        if K % 2 == 0:
            raise PSFError(f"{path}: PSF size must be odd, got {K}")
        raw = fh.read()
    data = np.frombuffer(raw, dtype="<f8")
    if data.size != C * K * K:
        raise PSFError(f"{path}: expected {C * K * K} values, found {data.size}")
    k = data.reshape(C, K, K)
    if np.any(k < 0):
        raise PSFError(f"{path}: PSF has negative entries")
    return PSF(k)
