"""Losses, augmentation and the training loop.

Every iteration draws its batch from a random stream keyed by the
iteration number, so a run resumed from a checkpoint replays exactly the
batches the uninterrupted run would have seen.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core.config import RunConfig, TrainConfig
from .core.frames import load_clip
from .core.manifest import Manifest
from .core.rng import seeded_rng
from .evalmetrics import psnr
from .geometry import read_flow, list_frames_flo
from .masks import downsample
from .model.inference import build_model
from .model.network import D2RNet, pad_to_multiple

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_FIELDS = ["iter", "loss", "final", "intermediate", "lr_main", "lr_flow", "val_psnr"]


class TrainingError(RuntimeError):
    pass


def charbonnier(x: torch.Tensor, y: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Mean over elements of ``sqrt((x - y)^2 + eps^2)``."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    return torch.sqrt((x - y) ** 2 + eps * eps).mean()


def total_loss(output: torch.Tensor, intermediates: dict, gt: torch.Tensor, cfg: RunConfig):
    """Final-frame loss plus ``sup_weight`` times the mean intermediate loss.

    ``gt`` is B x T x 3 x H x W. Intermediate targets are the ground truth
    box-downsampled to each intermediate's scale. Returns ``(total, terms)``.
    """
    eps = cfg.train.eps_charb
    final = charbonnier(output, gt, eps)
    terms = {"final": float(final.detach())}
    if not cfg.model.enable_sup:
        terms["intermediate"] = 0.0
        return final, terms
    if not intermediates:
        if cfg.model.enable_lfr or cfg.model.enable_shr:
            raise TrainingError("intermediate supervision enabled but no intermediates were produced")
        terms["intermediate"] = 0.0
        return final, terms
    padded = pad_to_multiple(gt, max(cfg.model.scales))
    cache = {}
    inter_terms = []
    for (scale, _direction, t), pred in sorted(intermediates.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        if (scale, t) not in cache:
            cache[(scale, t)] = downsample(padded[:, t], scale)
        inter_terms.append(charbonnier(pred, cache[(scale, t)], eps))
    inter = torch.stack(inter_terms).mean()
    terms["intermediate"] = float(inter.detach())
    return final + cfg.train.sup_weight * inter, terms


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

def _hflip_flow(f: np.ndarray) -> np.ndarray:
    out = f[..., ::-1].copy()
    out[..., 0, :, :] *= -1
    return out


def _vflip_flow(f: np.ndarray) -> np.ndarray:
    out = f[..., ::-1, :].copy()
    out[..., 1, :, :] *= -1
    return out


def _rot90_flow(f: np.ndarray) -> np.ndarray:
    # np.rot90 maps new pixel (x, y) to old (W-1-y, x); vectors map (u, v) -> (v, -u)
    r = np.rot90(f, 1, axes=(-2, -1))
    out = np.empty(r.shape, dtype=r.dtype)
    out[..., 0, :, :] = r[..., 1, :, :]
    out[..., 1, :, :] = -r[..., 0, :, :]
    return out


def hflip(frames=None, flows=None):
    return (None if frames is None else frames[..., ::-1].copy(),
            None if flows is None else _hflip_flow(flows))


def vflip(frames=None, flows=None):
    return (None if frames is None else frames[..., ::-1, :].copy(),
            None if flows is None else _vflip_flow(flows))


def rot90(frames=None, flows=None):
    return (None if frames is None else np.rot90(frames, 1, axes=(-2, -1)).copy(),
            None if flows is None else _rot90_flow(flows))


def augment(clips: list[np.ndarray], flows: list[np.ndarray], rng: np.random.Generator,
            cfg: TrainConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Apply one random flip/rotation draw identically to every clip and flow.

    ``clips`` are ... x H x W arrays (e.g. T x 3 x H x W); ``flows`` are
    T x 2 x H x W sampling flows whose vectors are rotated/negated to stay
    consistent with the transformed frames.
    """
    ops = []
    draws = rng.random(3)
    if cfg.hflip and draws[0] < 0.5:
        ops.append(hflip)
    if cfg.vflip and draws[1] < 0.5:
        ops.append(vflip)
    if cfg.rot90 and draws[2] < 0.5:
        ops.append(rot90)
    for op in ops:
        clips = [op(frames=c)[0] for c in clips]
        flows = [op(flows=f)[1] for f in flows]
    return clips, flows


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass
class ClipData:
    id: str
    degraded: np.ndarray   # T x 3 x H x W
    clean: np.ndarray      # T x 3 x H x W
    to_prev: np.ndarray    # T x 2 x H x W
    to_next: np.ndarray


def load_training_clips(manifest: Manifest) -> list[ClipData]:
    out = []
    for clip in manifest.clips:
        to_prev = np.stack([read_flow(p) for p in list_frames_flo(manifest.path_of(clip, "flow_to_prev"))])
        to_next = np.stack([read_flow(p) for p in list_frames_flo(manifest.path_of(clip, "flow_to_next"))])
        out.append(ClipData(clip.id, load_clip(manifest.path_of(clip, "degraded")).data,
                            load_clip(manifest.path_of(clip, "clean")).data, to_prev, to_next))
    return out


def sample_batch(clips: list[ClipData], cfg: RunConfig, iteration: int):
    """Draw the batch for ``iteration``: clip, temporal window, patch, augmentation."""
    tc = cfg.train
    rng = seeded_rng(cfg.seed, f"batch:{iteration}")
    deg, gt, prev, nxt, ids = [], [], [], [], []
    for _ in range(tc.batch):
        c = clips[int(rng.integers(len(clips)))]
        T, _, H, W = c.degraded.shape
        L = min(tc.seq_len, T)
        t0 = int(rng.integers(0, T - L + 1))
        p = min(tc.patch, H, W)
        y0 = int(rng.integers(0, H - p + 1))
        x0 = int(rng.integers(0, W - p + 1))
        win = (slice(t0, t0 + L), slice(None), slice(y0, y0 + p), slice(x0, x0 + p))
        to_prev = c.to_prev[win].copy()
        to_next = c.to_next[win].copy()
        to_prev[0] = 0.0
        to_next[-1] = 0.0
        (d, g), (fp, fn) = augment([c.degraded[win], c.clean[win]], [to_prev, to_next], rng, tc)
        deg.append(d)
        gt.append(g)
        prev.append(fp)
        nxt.append(fn)
        ids.append(f"{c.id}[t={t0}:{t0 + L},y={y0},x={x0}]")
    stack = lambda xs: torch.from_numpy(np.ascontiguousarray(np.stack(xs), dtype=np.float32))
    return stack(deg), stack(gt), stack(prev), stack(nxt), ids


# --------------------------------------------------------------------------
# optimisation
# --------------------------------------------------------------------------

def make_optimizer(model: D2RNet, tc: TrainConfig):
    groups = [{"params": model.main_parameters(), "lr": tc.lr_main, "name": "main"}]
    if model.flow_parameters():
        groups.append({"params": model.flow_parameters(), "lr": tc.lr_flow, "name": "flow"})
    opt = torch.optim.Adam(groups, betas=tuple(tc.betas))
    if tc.schedule == "cosine":
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=tc.total_iters, eta_min=0.0)
    else:
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda _: 1.0)
    return opt, sched


def save_checkpoint(path: Path, model: D2RNet, opt, sched, iteration: int, cfg: RunConfig) -> None:
    """Checkpoint format v1: a torch pickle of plain containers and tensors."""
    torch.save({"version": CHECKPOINT_VERSION, "iteration": iteration, "config": cfg.to_dict(),
                "model": model.state_dict(), "optimizer": opt.state_dict() if opt else None,
                "scheduler": sched.state_dict() if sched else None}, path)


def load_checkpoint(path: str | Path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"{path} is not a version {CHECKPOINT_VERSION} checkpoint")
    return ckpt


def model_from_checkpoint(path: str | Path) -> tuple[D2RNet, RunConfig, int]:
    from .core.config import config_from_dict
    ckpt = load_checkpoint(path)
    cfg = config_from_dict(ckpt["config"])
    model = build_model(cfg.model, cfg.mask, cfg.seed)
    model.load_state_dict(ckpt["model"])
    return model, cfg, ckpt["iteration"]


def set_deterministic() -> None:
    torch.use_deterministic_algorithms(True)
    torch.backends.cudnn.benchmark = False


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    iterations: int
    final_loss: float
    history: list[dict] = field(default_factory=list)


def validate(model: D2RNet, clips: list[ClipData]) -> float:
    """Mean PSNR of full-clip restorations against the clean frames."""
    model.eval()
    scores = []
    with torch.no_grad():
        for c in clips:
            out = model(torch.tensor(c.degraded)[None], torch.tensor(c.to_prev)[None],
                        torch.tensor(c.to_next)[None]).output[0]
            scores.append(psnr(out.clamp(0, 1).numpy(), c.clean))
    model.train()
    return float(np.mean(scores))


def train(manifest: Manifest, cfg: RunConfig, out_dir: str | Path, resume: str | Path | None = None,
          stop_at: int | None = None) -> TrainResult:
    """Train a network on the manifest's clips.

    Writes ``checkpoints/iter_XXXXXXX.pt`` every ``ckpt_every`` iterations and
    at the end (``last.pt``), and appends one CSV row per iteration to
    ``train_log.csv``. ``stop_at`` halts early (used to test resumption).
    """
    if not manifest.clips:
        raise TrainingError("manifest has no clips")
    set_deterministic()
    tc = cfg.train
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    clips = load_training_clips(manifest)
    val_clips = clips[:tc.val_clips]

    model = build_model(cfg.model, cfg.mask, cfg.seed)
    model.train()
    opt, sched = make_optimizer(model, tc)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model.load_state_dict(ckpt["model"])
        opt.load_state_dict(ckpt["optimizer"])
        sched.load_state_dict(ckpt["scheduler"])
        start = ckpt["iteration"]
        log.info("resumed from %s at iteration %d", resume, start)

    log_path = out_dir / "train_log.csv"
    new_log = start == 0 or not log_path.exists()
    if new_log:
        with open(log_path, "w", newline="") as fh:
            fh.write(f"# config_digest={cfg.digest()} total_iters={tc.total_iters} seed={cfg.seed}\n")
            csv.writer(fh).writerow(LOG_FIELDS)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    end = tc.total_iters if stop_at is None else min(stop_at, tc.total_iters)
    history = []
    loss_value = float("nan")
    flow_params = model.flow_parameters()
    t_start = time.time()
    with open(log_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        for it in range(start, end):
            deg, gt, to_prev, to_next, ids = sample_batch(clips, cfg, it)
            out = model(deg, to_prev, to_next)
            loss, terms = total_loss(out.output, out.intermediates, gt, cfg)
            if not torch.isfinite(loss):
                dump = out_dir / f"nan_batch_iter{it}.json"
                dump.write_text(json.dumps({"iteration": it, "batch": ids, "terms": terms}, indent=2))
                raise TrainingError(f"non-finite loss at iteration {it}; batch {ids} (see {dump})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if it < tc.freeze_iters:
                for p in flow_params:
                    p.grad = None
            opt.step()
            lrs = {g.get("name", "main"): g["lr"] for g in opt.param_groups}
            sched.step()
            loss_value = float(loss.detach())
            done = it + 1
            val = ""
            if val_clips and (done % tc.val_every == 0 or done == tc.total_iters):
                val = f"{validate(model, val_clips):.4f}"
            row = {"iter": done, "loss": f"{loss_value:.6g}", "final": f"{terms['final']:.6g}",
                   "intermediate": f"{terms['intermediate']:.6g}", "lr_main": f"{lrs['main']:.6g}",
                   "lr_flow": f"{lrs.get('flow', 0.0):.6g}", "val_psnr": val}
            writer.writerow([row[k] for k in LOG_FIELDS])
            history.append(row)
            if done % tc.ckpt_every == 0 and done != tc.total_iters:
                save_checkpoint(ckpt_dir / f"iter_{done:07d}.pt", model, opt, sched, done, cfg)
            if done % 100 == 0:
                fh.flush()
                log.info("iter %d loss %.5f (%.1fs)", done, loss_value, time.time() - t_start)
    last = ckpt_dir / ("last.pt" if end == tc.total_iters else f"iter_{end:07d}.pt")
    save_checkpoint(last, model, opt, sched, end, cfg)
    return TrainResult(last, log_path, end, loss_value, history)
