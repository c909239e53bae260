from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from udcvideo.core import MaskConfig
from udcvideo.masks import MaskError, box_downsample, downsample, flare_map_torch, mask_at_scale, soft_mask

CFG = MaskConfig(0.9)


def pixel(r, g, b):
    return np.array([r, g, b], dtype=np.float64).reshape(3, 1, 1)


def test_saturated_pixel():
    m = soft_mask(pixel(1.0, 0.2, 0.1), CFG)
    assert m.flare.item() == 1.0 and m.haze.item() == 0.0


def test_dark_pixel():
    m = soft_mask(pixel(0.3, 0.3, 0.3), CFG)
    assert m.flare.item() == 0.0 and m.haze.item() == 1.0


def test_ramp_midpoint():
    flare = soft_mask(pixel(0.95, 0.5, 0.5), CFG).flare.item()
    # 0.95 and 0.9 are not binary fractions; the ramp is exact up to the
    # rounding of its single subtraction and division
    exact = (Fraction(0.95) - Fraction(0.9)) / (1 - Fraction(0.9))
    assert abs(flare - 0.5) < 1e-12
    assert abs(Fraction(flare) - exact) <= Fraction(2.0 ** -52)


def test_threshold_endpoints_exact():
    assert soft_mask(pixel(0.9, 0.0, 0.0), CFG).flare.item() == 0.0
    assert soft_mask(pixel(0.0, 1.0, 0.0), CFG).flare.item() == 1.0


frames = arrays(np.float64, (3, 4, 5), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(frame=frames, tau=st.floats(0.05, 0.99))
def test_complementary_and_in_range(frame, tau):
    m = soft_mask(frame, MaskConfig(tau))
    assert np.array_equal(m.flare + m.haze, np.ones_like(m.flare))
    assert m.flare.min() >= 0 and m.flare.max() <= 1


@settings(max_examples=200, deadline=None)
@given(a=frames, bump=frames)
def test_monotone(a, bump):
    b = np.minimum(a + bump, 1.0)
    assert np.all(soft_mask(a, CFG).flare <= soft_mask(b, CFG).flare)


def test_out_of_range_rejected():
    with pytest.raises(MaskError, match="clamp first"):
        soft_mask(np.full((3, 2, 2), 1.2), CFG)
    with pytest.raises(MaskError):
        soft_mask(np.zeros((1, 2, 2)), CFG)


def test_constant_frame_is_scale_invariant():
    frame = np.full((3, 16, 16), 0.96)
    full = soft_mask(frame, CFG).flare[0, 0, 0]
    for s in (2, 4, 8):
        m = mask_at_scale(frame, CFG, s)
        assert m.flare.shape == (1, 16 // s, 16 // s)
        np.testing.assert_allclose(m.flare, full, atol=1e-12)


def test_saturated_block_survives_halving():
    frame = np.full((3, 64, 64), 0.1)
    frame[:, 10:12, 20:22] = 1.0
    m = mask_at_scale(frame, CFG, 2)
    assert m.flare.shape == (1, 32, 32)
    assert m.flare[0, 5, 10] == 1.0 and m.flare[0, 0, 0] == 0.0


def test_scale_errors():
    with pytest.raises(MaskError):
        mask_at_scale(np.zeros((3, 10, 10)), CFG, 4)
    with pytest.raises(MaskError):
        mask_at_scale(np.zeros((3, 8, 8)), CFG, 3)


def test_box_average_equals_repeated_bilinear_halving(rng):
    import torch.nn.functional as F

    x = torch.tensor(rng.uniform(0, 1, (1, 3, 32, 32)))
    y = x
    for _ in range(3):
        y = F.interpolate(y, scale_factor=0.5, mode="bilinear", align_corners=False)
    np.testing.assert_allclose(downsample(x, 8).numpy(), y.numpy(), atol=1e-12)
    np.testing.assert_allclose(box_downsample(x.numpy()[0], 8), y.numpy()[0], atol=1e-12)


def test_torch_flare_matches_numpy(rng):
    frames = rng.uniform(0, 1, (2, 3, 6, 6))
    ours = flare_map_torch(torch.tensor(frames), 0.9).numpy()
    for b in range(2):
        np.testing.assert_allclose(ours[b], soft_mask(frames[b], CFG).flare, atol=1e-15)
