import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from udcvideo.geometry import (GeometryError, Homography, KnownMotion, PyramidFlowNet, ZeroFlow,
                               compose, downsample_flow, estimate_flow, homography_apply,
                               homography_to_flow, read_flow, warp_bilinear, warp_complex, write_flow)

small = st.floats(-0.05, 0.05)


def _random_h(rng, scale=1.0):
    return Homography.from_params(*(rng.uniform(-2, 2, 2) * scale), rng.uniform(-0.05, 0.05) * scale,
                                  *(rng.uniform(-1e-4, 1e-4, 2) * scale), center=(8.0, 8.0))


def test_apply_examples():
    np.testing.assert_array_equal(homography_apply(Homography.identity(), [(3, 4)]), [[3, 4]])
    np.testing.assert_array_equal(homography_apply(Homography.translation(2, -1), [(0, 0)]), [[2, -1]])


def test_compose_matches_sequential_application(rng):
    pts = rng.uniform(-20, 20, (50, 2))
    for _ in range(20):
        h1, h2 = _random_h(rng), _random_h(rng)
        direct = homography_apply(h2, homography_apply(h1, pts))
        np.testing.assert_allclose(homography_apply(compose(h2, h1), pts), direct, atol=1e-10)


def test_compose_associative(rng):
    a, b, c = (_random_h(rng) for _ in range(3))
    np.testing.assert_allclose(((a @ b) @ c).m, (a @ (b @ c)).m, atol=1e-10)


def test_singular_and_degenerate_rejected():
    with pytest.raises(GeometryError, match="singular"):
        Homography(np.zeros((3, 3)) + np.diag([1, 0, 1]))
    with pytest.raises(GeometryError):
        Homography(np.eye(2))
    h = Homography(np.array([[1.0, 0, 0], [0, 1, 0], [1, 0, 1]]))
    with pytest.raises(GeometryError, match="infinity"):
        homography_apply(h, [(-1.0, 5.0)])


def test_flow_from_identity_and_translation():
    assert not homography_to_flow(Homography.identity(), (5, 6)).any()
    flow = homography_to_flow(Homography.translation(1, 0), (5, 6))
    np.testing.assert_array_equal(flow[0], 1.0)
    np.testing.assert_array_equal(flow[1], 0.0)


def test_rotation_flow_grows_linearly_with_radius():
    H = W = 33
    c = (W - 1) / 2
    theta = 0.01
    flow = homography_to_flow(Homography.from_params(0, 0, theta, 0, 0, center=(c, c)), (H, W))
    ys, xs = np.mgrid[0:H, 0:W]
    r = np.hypot(xs - c, ys - c)
    mag = np.hypot(*flow)
    mask = r > 0
    np.testing.assert_allclose(mag[mask] / r[mask], 2 * np.sin(theta / 2), rtol=1e-10)
    assert mag[16, 16] < 1e-12


def test_zero_flow_warp_is_exact(rng):
    src = rng.normal(size=(3, 7, 9))
    assert np.array_equal(warp_bilinear(src, np.zeros((2, 7, 9))), src)
    flow = homography_to_flow(Homography.identity(), (7, 9))
    assert np.array_equal(warp_bilinear(src, flow), src)


def test_integer_shift_zero_fills():
    ramp = np.tile(np.arange(5.0), (1, 3, 1))
    flow = np.zeros((2, 3, 5))
    flow[0] = 1.0
    out = warp_bilinear(ramp, flow)
    np.testing.assert_array_equal(out[0, :, :4], ramp[0, :, 1:])
    np.testing.assert_array_equal(out[0, :, 4], 0.0)


def test_half_pixel_midpoint():
    src = np.array([[[0.0, 1.0]]])
    flow = np.zeros((2, 1, 2))
    flow[0] = 0.5
    assert warp_bilinear(src, flow)[0, 0, 0] == 0.5


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_warp_is_linear_in_source(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 2, 6, 7))
    f = r.uniform(-2, 2, (2, 6, 7))
    lhs = warp_bilinear(a * x + b * y, f)
    np.testing.assert_allclose(lhs, a * warp_bilinear(x, f) + b * warp_bilinear(y, f), atol=1e-12)


def test_gradient_matches_finite_differences():
    torch.manual_seed(0)
    r = np.random.default_rng(0)
    src = torch.tensor(r.normal(size=(1, 2, 6, 7)), requires_grad=True)
    # keep sample points off cell boundaries, where bilinear weights have kinks
    base = r.integers(-1, 2, (1, 2, 6, 7)) + r.uniform(0.1, 0.9, (1, 2, 6, 7))
    flow = torch.tensor(base, requires_grad=True)
    weights = torch.tensor(r.normal(size=(1, 2, 6, 7)))

    def loss(s, f):
        return (warp_bilinear(s, f) * weights).sum()

    loss(src, flow).backward()
    step = 1e-3
    for tensor, grad in ((src, src.grad), (flow, flow.grad)):
        numeric = torch.zeros_like(tensor)
        flat = tensor.detach().reshape(-1)
        for i in range(flat.numel()):
            plus, minus = flat.clone(), flat.clone()
            plus[i] += step
            minus[i] -= step
            args_p = (plus.view_as(tensor), flow.detach()) if tensor is src else (src.detach(), plus.view_as(tensor))
            args_m = (minus.view_as(tensor), flow.detach()) if tensor is src else (src.detach(), minus.view_as(tensor))
            numeric.view(-1)[i] = (loss(*args_p) - loss(*args_m)) / (2 * step)
        rel = (grad - numeric).norm() / numeric.norm()
        assert rel < 1e-3, float(rel)


def test_warp_rejects_mismatched_flow():
    with pytest.raises(GeometryError):
        warp_bilinear(np.zeros((3, 4, 4)), np.zeros((2, 4, 5)))


def test_warp_complex_identity_and_real(rng):
    field = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    np.testing.assert_array_equal(warp_complex(field, Homography.identity()), field)
    real = warp_complex(field.real.astype(complex), _random_h(rng))
    assert not real.imag.any()


def test_warp_complex_matches_two_channel_bilinear(rng):
    field = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    for _ in range(5):
        h = _random_h(rng)
        flow = homography_to_flow(h.inverse(), (16, 16))
        ref = warp_bilinear(np.stack([field.real, field.imag]), flow)
        out = warp_complex(field, h)
        np.testing.assert_allclose(out.real, ref[0], atol=1e-12)
        np.testing.assert_allclose(out.imag, ref[1], atol=1e-12)


def test_downsample_flow_scales_vectors():
    flow = torch.full((1, 2, 8, 8), 4.0)
    out = downsample_flow(flow, 4)
    assert out.shape == (1, 2, 2, 2) and torch.all(out == 1.0)


def test_flow_file_round_trip(tmp_path, rng):
    flow = rng.normal(size=(2, 5, 6)).astype(np.float32)
    write_flow(tmp_path / "f.flo", flow)
    assert np.array_equal(read_flow(tmp_path / "f.flo"), flow)


def test_estimators():
    frame = np.zeros((3, 8, 8), np.float32)
    assert not estimate_flow(frame, frame, ZeroFlow()).any()
    flows = np.stack([homography_to_flow(Homography.identity(), (8, 8))] * 3)
    known = KnownMotion(flows, flows)
    assert not estimate_flow(frame, frame, known, pair=(1, 0)).any()
    with pytest.raises(GeometryError, match="without a manifest"):
        KnownMotion(None, None)
    with pytest.raises(GeometryError, match="adjacent"):
        known.pair(0, 2)
    out = estimate_flow(frame, frame, PyramidFlowNet(3))
    assert out.shape == (2, 8, 8) and np.abs(out).mean() < 0.5


def test_pyramid_flow_net_handles_odd_sizes():
    net = PyramidFlowNet(4)
    out = net(torch.rand(2, 3, 37, 29), torch.rand(2, 3, 37, 29))
    assert out.shape == (2, 2, 37, 29)
