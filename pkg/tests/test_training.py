import csv
import itertools

import numpy as np
import pytest
import torch

from udcvideo.core import TrainConfig, config_from_dict
from udcvideo.geometry import warp_bilinear
from udcvideo.model import build_model
from udcvideo.synth import generate_dataset, procedural_sources
from udcvideo.training import (TrainingError, augment, charbonnier, hflip, load_checkpoint,
                               model_from_checkpoint, rot90, sample_batch, load_training_clips,
                               total_loss, train, vflip)

TINY = {"model": {"channels": [4, 6, 8], "n_resblocks": 1},
        "train": {"batch": 1, "patch": 16, "seq_len": 3, "ckpt_every": 5, "val_every": 5},
        "synth": {"n_clips": 1, "n_frames": 3, "height": 16, "width": 16}}


def tiny_cfg(*overrides, **sections):
    data = {k: dict(v) for k, v in TINY.items()}
    for k, v in sections.items():
        data.setdefault(k, {}).update(v)
    return config_from_dict(data, list(overrides))


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    cfg = tiny_cfg()
    return generate_dataset(procedural_sources(cfg), cfg, tmp_path_factory.mktemp("data"))


def test_charbonnier_examples():
    x = torch.zeros(4, 5)
    assert charbonnier(x, x, 1e-3).item() == pytest.approx(1e-3, rel=1e-6)
    assert charbonnier(torch.tensor([1e-3]), torch.tensor([0.0]), 1e-3).item() == pytest.approx(
        np.sqrt(2) * 1e-3, rel=1e-6)
    assert abs(charbonnier(torch.tensor([0.5]), torch.tensor([0.0]), 1e-3).item() - 0.5) < 1e-5
    y = torch.rand(10, dtype=torch.float64)
    assert charbonnier(y, y + 0.01, 1e-3) > 1e-3
    with pytest.raises(ValueError):
        charbonnier(torch.zeros(2), torch.zeros(3))


def _perfect(T=2, H=16):
    gt = torch.rand(1, T, 3, H, H, dtype=torch.float64)
    inters = {(s, d, t): torch.nn.functional.avg_pool2d(gt[:, t], s)
              for s in (2, 4, 8) for d in ("backward", "forward") for t in range(T)}
    return gt, inters


def test_total_loss_floor_and_toggles():
    gt, inters = _perfect()
    cfg = tiny_cfg()
    loss, terms = total_loss(gt, inters, gt, cfg)
    assert loss.item() == pytest.approx(2e-3, rel=1e-9)
    assert terms["final"] == pytest.approx(1e-3) and terms["intermediate"] == pytest.approx(1e-3)
    out = gt + 0.1
    off, _ = total_loss(out, inters, gt, tiny_cfg("model.enable_sup=false"))
    zero, _ = total_loss(out, inters, gt, tiny_cfg("train.sup_weight=0"))
    assert off.item() == zero.item() == charbonnier(out, gt).item()
    with pytest.raises(TrainingError):
        total_loss(out, {}, gt, cfg)


def test_flips_are_involutions(rng):
    frames = rng.normal(size=(2, 3, 5, 7))
    flows = rng.normal(size=(2, 2, 5, 7))
    for op in (hflip, vflip):
        f2, w2 = op(*op(frames, flows))
        assert np.array_equal(f2, frames) and np.array_equal(w2, flows)
    f, w = frames, flows
    for _ in range(4):
        f, w = rot90(f, w)
    assert np.array_equal(f, frames) and np.array_equal(w, flows)


def test_hflip_mirror_law(rng):
    flows = rng.normal(size=(1, 2, 4, 6))
    _, out = hflip(flows=flows)
    assert out[0, 0, 1, 0] == -flows[0, 0, 1, 5] and out[0, 1, 1, 0] == flows[0, 1, 1, 5]


@pytest.mark.parametrize("ops", [ops for n in range(4) for ops in itertools.combinations(
    (hflip, vflip, rot90), n)], ids=lambda ops: "+".join(o.__name__ for o in ops) or "none")
def test_augmented_flow_still_aligns(rng, ops):
    src = rng.uniform(size=(3, 9, 9))
    flow = rng.uniform(-2, 2, (2, 9, 9))
    warped = warp_bilinear(src, flow)
    a_src, a_flow, a_warped = src, flow, warped
    for op in ops:
        a_src, a_flow = op(a_src, a_flow)
        a_warped, _ = op(a_warped)
    np.testing.assert_allclose(warp_bilinear(a_src, a_flow), a_warped, atol=1e-4)


def test_augment_applies_same_draw_everywhere(rng):
    clip = rng.uniform(size=(3, 3, 8, 8))
    flows = rng.normal(size=(3, 2, 8, 8))
    cfg = TrainConfig()
    (a, b), (fa, fb) = augment([clip, clip.copy()], [flows, flows.copy()], np.random.default_rng(1), cfg)
    assert np.array_equal(a, b) and np.array_equal(fa, fb)
    (c,), _ = augment([clip], [], np.random.default_rng(0), TrainConfig(hflip=False, vflip=False, rot90=False))
    assert np.array_equal(c, clip)


def test_sample_batch_deterministic(tiny_data):
    cfg = tiny_cfg()
    clips = load_training_clips(tiny_data)
    a, b = sample_batch(clips, cfg, 3), sample_batch(clips, cfg, 3)
    assert all(torch.equal(x, y) for x, y in zip(a[:4], b[:4])) and a[4] == b[4]
    deg, gt, to_prev, to_next, _ = a
    assert deg.shape == gt.shape == (1, 3, 3, 16, 16)
    assert not to_prev[:, 0].any() and not to_next[:, -1].any()


def test_train_smoke_and_log_header(tiny_data, tmp_path):
    cfg = tiny_cfg("train.total_iters=10")
    result = train(tiny_data, cfg, tmp_path)
    assert result.checkpoint.name == "last.pt" and np.isfinite(result.final_loss)
    header = result.log_path.read_text().splitlines()[0]
    assert "total_iters=10" in header and cfg.digest() in header
    rows = list(csv.DictReader(result.log_path.read_text().splitlines()[1:]))
    assert [int(r["iter"]) for r in rows] == list(range(1, 11))
    assert rows[-1]["val_psnr"] != ""
    assert (tmp_path / "checkpoints" / "iter_0000005.pt").exists()
    model, back, it = model_from_checkpoint(result.checkpoint)
    assert back == cfg and it == 10


def test_resume_is_exact(tiny_data, tmp_path):
    cfg = tiny_cfg("train.total_iters=10", "model.flow=learned", "train.flow_freeze_iters=3")
    full = train(tiny_data, cfg, tmp_path / "full")
    train(tiny_data, cfg, tmp_path / "part", stop_at=5)
    resumed = train(tiny_data, cfg, tmp_path / "part", resume=tmp_path / "part" / "checkpoints" / "iter_0000005.pt")
    a, b = load_checkpoint(full.checkpoint)["model"], load_checkpoint(resumed.checkpoint)["model"]
    assert a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)
    assert resumed.final_loss == full.final_loss


def test_flow_frozen_then_trained(tiny_data, tmp_path):
    cfg = tiny_cfg("train.total_iters=8", "train.ckpt_every=4", "model.flow=learned",
                   "train.flow_freeze_iters=4", "train.lr_flow=1e-3")
    init = build_model(cfg.model, cfg.mask, cfg.seed).state_dict()
    train(tiny_data, cfg, tmp_path / "b")
    frozen = load_checkpoint(tmp_path / "b" / "checkpoints" / "iter_0000004.pt")["model"]
    final = load_checkpoint(tmp_path / "b" / "checkpoints" / "last.pt")["model"]
    flow_keys = [k for k in init if k.startswith("flownet.")]
    main_keys = [k for k in init if not k.startswith("flownet.")]
    assert flow_keys and all(torch.equal(init[k], frozen[k]) for k in flow_keys)
    assert any(not torch.equal(init[k], frozen[k]) for k in main_keys)
    assert any(not torch.equal(frozen[k], final[k]) for k in flow_keys)


def test_empty_manifest_rejected(tmp_path):
    from udcvideo.core import Manifest

    with pytest.raises(TrainingError, match="no clips"):
        train(Manifest(tmp_path), tiny_cfg(), tmp_path)


@pytest.mark.slow
def test_loss_decreases_on_single_clip(tmp_path):
    cfg = tiny_cfg("train.total_iters=500", "train.lr_main=1e-3", "train.patch=48", "train.seq_len=6",
                   "train.ckpt_every=500", "train.val_every=500", "model.channels=[8, 8, 8]",
                   synth={"n_frames": 6, "height": 48, "width": 48})
    data = generate_dataset(procedural_sources(cfg), cfg, tmp_path / "data")
    result = train(data, cfg, tmp_path / "run")
    losses = [float(r["loss"]) for r in result.history]
    assert losses[-1] < losses[0]
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
