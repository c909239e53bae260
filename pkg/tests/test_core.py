import json

import cv2
import numpy as np
import pytest

from udcvideo.core import (ClipEntry, ClipError, FrameStack, Manifest, ManifestError, list_frames,
                           load_clip, load_manifest, save_clip, seeded_rng, torch_seed)


def _write_gray8(path, index, value, shape=(6, 7)):
    img = np.full((*shape, 3), value, dtype=np.uint8)
    cv2.imwrite(str(path / f"{index:04d}.png"), img)


def test_load_mid_gray_8bit(tmp_path):
    for i in range(5):
        _write_gray8(tmp_path, i, 128)
    clip = load_clip(tmp_path)
    assert clip.shape == (5, 3, 6, 7)
    assert clip.colorspace == "display-clamped"
    np.testing.assert_array_equal(clip.data, np.float32(128 / 255))


def test_float_frames_pass_through_hdr(tmp_path):
    save_clip(FrameStack(np.full((2, 3, 4, 5), 2.0)), tmp_path, "float")
    clip = load_clip(tmp_path)
    assert clip.colorspace == "linear-hdr"
    np.testing.assert_array_equal(clip.data, 2.0)


def test_gap_is_reported(tmp_path):
    _write_gray8(tmp_path, 1, 10)
    _write_gray8(tmp_path, 3, 10)
    with pytest.raises(ClipError, match="missing frame 0002"):
        load_clip(tmp_path)


def test_mixed_resolution_rejected(tmp_path):
    _write_gray8(tmp_path, 0, 10, (4, 4))
    _write_gray8(tmp_path, 1, 10, (5, 4))
    with pytest.raises(ClipError, match="mixed resolutions"):
        load_clip(tmp_path)


def test_frame_range(tmp_path):
    data = np.arange(4, dtype=np.float32)[:, None, None, None] * np.ones((4, 3, 2, 2))
    save_clip(FrameStack(data), tmp_path)
    np.testing.assert_array_equal(load_clip(tmp_path, (1, 3)).data[:, 0, 0, 0], [1, 2])


def test_float_round_trip_bit_identical(tmp_path, rng):
    stack = FrameStack(rng.uniform(0, 3, (3, 3, 9, 11)))
    save_clip(stack, tmp_path, "float")
    assert np.array_equal(load_clip(tmp_path).data, stack.data)


@pytest.mark.parametrize("encoding, top", [("int8", 255), ("int16", 65535)])
def test_integer_round_trip_within_quantization(tmp_path, rng, encoding, top):
    stack = FrameStack(rng.uniform(0, 1, (2, 3, 8, 8)), "display-clamped")
    save_clip(stack, tmp_path, encoding)
    back = load_clip(tmp_path)
    assert np.abs(back.data - stack.data).max() <= 0.5 / top + 1e-7


def test_int8_half_gray(tmp_path):
    save_clip(FrameStack(np.full((1, 3, 2, 2), 0.5), "display-clamped"), tmp_path, "int8")
    assert abs(load_clip(tmp_path).data.max() - 0.5) <= 1 / 255


def test_int16_full_scale_code(tmp_path):
    save_clip(FrameStack(np.ones((1, 3, 2, 2)), "display-clamped"), tmp_path, "int16")
    raw = cv2.imread(str(tmp_path / "000000.png"), cv2.IMREAD_UNCHANGED)
    assert raw.dtype == np.uint16 and raw.min() == 65535


def test_clamped_stack_is_channel_rgb_ordered(tmp_path):
    data = np.zeros((1, 3, 2, 2))
    data[0, 0] = 1.0
    save_clip(FrameStack(data, "display-clamped"), tmp_path, "int8")
    np.testing.assert_array_equal(load_clip(tmp_path).data, data)


@pytest.mark.parametrize("bad", [np.full((1, 3, 2, 2), -0.1), np.full((1, 3, 2, 2), np.nan),
                                 np.zeros((3, 2, 2)), np.zeros((1, 4, 2, 2))])
def test_framestack_invariants(bad):
    with pytest.raises(ClipError):
        FrameStack(bad)


def test_display_clamped_upper_bound():
    with pytest.raises(ClipError):
        FrameStack(np.full((1, 3, 2, 2), 1.5), "display-clamped")
    assert FrameStack(np.full((1, 3, 2, 2), 1.5)).clamped().data.max() == 1.0


def test_framestack_is_read_only():
    stack = FrameStack(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ValueError):
        stack.data[0, 0, 0, 0] = 1.0


def test_list_frames_missing_dir(tmp_path):
    with pytest.raises(ClipError):
        list_frames(tmp_path / "nope")


def test_rng_streams():
    a = seeded_rng(42, "noise").random(8)
    assert np.array_equal(a, seeded_rng(42, "noise").random(8))
    assert not np.array_equal(a, seeded_rng(42, "motion").random(8))
    assert not np.array_equal(a, seeded_rng(43, "noise").random(8))
    assert torch_seed(42, "x") == torch_seed(42, "x") != torch_seed(42, "y")
    with pytest.raises(ValueError):
        seeded_rng(-1, "noise")


def _tiny_manifest(tmp_path):
    save_clip(FrameStack(np.zeros((2, 3, 4, 4))), tmp_path / "a" / "clean")
    (tmp_path / "a" / "homography.json").write_text(json.dumps([np.eye(3).tolist()] * 2))
    m = Manifest(tmp_path, [ClipEntry("a", 2, {"clean": "a/clean", "homography": "a/homography.json"})])
    m.save()
    return m


def test_manifest_round_trip(tmp_path):
    m = _tiny_manifest(tmp_path)
    back = load_manifest(tmp_path)
    assert back.to_json() == m.to_json()
    assert back.path_of(back.clip("a"), "clean") == tmp_path / "a" / "clean"


def test_manifest_errors(tmp_path):
    _tiny_manifest(tmp_path)
    (tmp_path / "a" / "clean" / "000001.pfm").unlink()
    with pytest.raises(ManifestError, match="has 1 frames"):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError, match="manifest.json"):
        load_manifest(tmp_path)
    with pytest.raises(ManifestError, match="does not exist"):
        load_manifest(tmp_path / "elsewhere")
