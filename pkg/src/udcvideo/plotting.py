"""Figures written next to the CSV/JSON outputs (Agg backend, PNG files)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "image.interpolation": "nearest",
}


def new_figure(nrows: int = 1, ncols: int = 1, width: float = 5.0, aspect: float = 0.62):
    with matplotlib.rc_context(RC):
        return plt.subplots(nrows, ncols, figsize=(width, width * aspect * nrows / ncols), squeeze=False)


def save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(RC):
        fig.savefig(path)
    plt.close(fig)
    return path


def save_gray(img: np.ndarray, path: str | Path) -> Path:
    """Write a 2-D array in [0, 1] as an 8-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, np.clip(img, 0.0, 1.0), cmap="gray", vmin=0.0, vmax=1.0)
    return path


def plot_psf(psf, path: str | Path, floor: float = 1e-6) -> Path:
    """Log10-scaled view of every PSF channel."""
    C = psf.channels
    fig, axes = new_figure(1, C, width=2.6 * C, aspect=1.0)
    names = ["R", "G", "B"] if C == 3 else ["PSF"]
    for c in range(C):
        ax = axes[0, c]
        im = ax.imshow(np.log10(np.maximum(psf.k[c], floor)), cmap="magma", vmin=np.log10(floor))
        ax.set_title(f"{names[c]}  (log10)")
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes[0, :].tolist(), shrink=0.8)
    return save(fig, path)


def plot_masks(frame: np.ndarray, flare: np.ndarray, haze: np.ndarray, path: str | Path, tau: float) -> Path:
    fig, axes = new_figure(1, 3, width=8.0, aspect=0.35 * 3)
    axes[0, 0].imshow(np.clip(frame.transpose(1, 2, 0), 0, 1))
    axes[0, 0].set_title("input")
    axes[0, 1].imshow(flare[0], cmap="gray", vmin=0, vmax=1)
    axes[0, 1].set_title(f"flare (tau={tau:g})")
    axes[0, 2].imshow(haze[0], cmap="gray", vmin=0, vmax=1)
    axes[0, 2].set_title("haze")
    for ax in axes[0]:
        ax.set_xticks([])
        ax.set_yticks([])
    return save(fig, path)


def plot_training_log(log_path: str | Path, path: str | Path) -> Path:
    iters, loss, final, val_it, val = [], [], [], [], []
    with open(log_path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            iters.append(int(row["iter"]))
            loss.append(float(row["loss"]))
            final.append(float(row["final"]))
            if row.get("val_psnr"):
                val_it.append(int(row["iter"]))
                val.append(float(row["val_psnr"]))
    fig, axes = new_figure(1, 2, width=8.0, aspect=0.38 * 2)
    ax = axes[0, 0]
    ax.semilogy(iters, loss, lw=0.8, label="total")
    ax.semilogy(iters, final, lw=0.8, label="final frame")
    ax.set_xlabel("iteration")
    ax.set_ylabel("Charbonnier loss")
    ax.legend()
    ax = axes[0, 1]
    if val:
        ax.plot(val_it, val, "o-", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("validation PSNR (dB)")
    return save(fig, path)


def plot_report(report, path: str | Path, baseline=None) -> Path:
    """Per-clip PSNR bars, optionally next to a baseline (e.g. degraded input)."""
    ids = [c["id"] for c in report.clips]
    ours = [min(c["psnr"], 99.0) for c in report.clips]
    x = np.arange(len(ids))
    fig, axes = new_figure(1, 1, width=max(4.0, 0.5 * len(ids) + 2))
    ax = axes[0, 0]
    width = 0.4 if baseline is not None else 0.7
    if baseline is not None:
        base = {c["id"]: min(c["psnr"], 99.0) for c in baseline.clips}
        ax.bar(x - width / 2, [base[i] for i in ids], width, label="input", color="0.7")
        ax.bar(x + width / 2, ours, width, label="restored", color="C0")
        ax.legend()
    else:
        ax.bar(x, ours, width, color="C0")
    ax.set_xticks(x)
    ax.set_xticklabels(ids, rotation=45, ha="right")
    ax.set_ylabel("PSNR (dB)")
    return save(fig, path)
