import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sliceocc.geometry import (CameraParams, GeometryError, SceneConfig, backproject,
                               build_reference_set, make_anchor_grid, make_pillar_refs,
                               make_planar_refs, pillar_heights, project)
from sliceocc.synthscene import camera_ring

K100 = [[100, 0, 64], [0, 100, 64], [0, 0, 1]]


def cam100(size=(128, 128)):
    return CameraParams(K100, np.eye(3), np.zeros(3), size)


def test_planar_refs_examples():
    refs = make_planar_refs(SceneConfig(W=2, L=2))
    assert sorted(map(tuple, refs)) == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    np.testing.assert_array_equal(make_planar_refs(SceneConfig(W=1, L=1)), [[0.5, 0.5]])
    assert make_planar_refs(SceneConfig()).shape == (1600, 2)


def test_planar_refs_token_order_is_x_fastest():
    refs = make_planar_refs(SceneConfig(W=2, L=3))  # nx = L = 3 cells along x
    np.testing.assert_allclose(refs[:3, 0], [1 / 6, 0.5, 5 / 6])
    np.testing.assert_allclose(refs[:3, 1], 0.25)


def test_pillar_heights_examples():
    cfg = SceneConfig()
    np.testing.assert_allclose(pillar_heights(cfg, 1, "floor"), [0.02, 0.04, 0.06, 0.08],
                               atol=1e-12)
    np.testing.assert_allclose(pillar_heights(cfg, 1, "ceiling"), [0.10, 0.12, 0.14, 0.16],
                               atol=1e-12)
    z = make_pillar_refs(cfg, 1, "floor")[0, :, 2]
    np.testing.assert_allclose(z, [-1.26, -1.24, -1.22, -1.20], atol=1e-12)
    single = SceneConfig(S=1, N_r3d=1)
    np.testing.assert_allclose(pillar_heights(single, 1, "floor"), [1.28], atol=1e-12)


def test_pillar_span_override():
    cfg = SceneConfig(S=4, N_r3d=2, pillar_span=1.0)
    np.testing.assert_allclose(pillar_heights(cfg, 1, "floor"), [0.5, 1.0])


def test_pillar_errors():
    cfg = SceneConfig(S=4)
    with pytest.raises(GeometryError):
        pillar_heights(cfg, 0, "floor")
    with pytest.raises(GeometryError):
        pillar_heights(cfg, 5, "floor")
    with pytest.raises(GeometryError):
        pillar_heights(cfg, 1, "wall")


@pytest.mark.parametrize("S,N", [(1, 1), (2, 3), (16, 4), (5, 7)])
def test_pillars_tile_the_height(S, N):
    cfg = SceneConfig(S=S, N_r3d=N)
    step = cfg.H / (2 * S * N)
    tops = []
    for i in range(1, S + 1):
        f, c = pillar_heights(cfg, i, "floor"), pillar_heights(cfg, i, "ceiling")
        assert f.max() < c.min()
        np.testing.assert_allclose(np.diff(f), step, atol=1e-12)
        np.testing.assert_allclose(np.diff(c), step, atol=1e-12)
        # floor pillar spans (i-1)H/S .. (i-1/2)H/S, ceiling the upper half
        assert f[0] - step == pytest.approx((i - 1) * cfg.H / S, abs=1e-12)
        tops += [f[-1], c[-1]]
    np.testing.assert_allclose(tops, np.arange(1, 2 * S + 1) * cfg.H / (2 * S), atol=1e-12)


def test_pillars_at_cell_centres():
    cfg = SceneConfig(W=4, L=2, x_range=(0, 2), y_range=(0, 8))
    p = make_pillar_refs(cfg, 1, "floor")
    assert p.shape == (8, 4, 3)
    np.testing.assert_allclose(np.unique(p[:, 0, 0]), [0.5, 1.5])
    np.testing.assert_allclose(np.unique(p[:, 0, 1]), [1, 3, 5, 7])


def test_anchor_grid_examples():
    anchors = make_anchor_grid(SceneConfig())
    assert len(anchors) == 16 and all(a.shape == (1600, 3) for a in anchors)
    assert anchors[0][0, 2] == pytest.approx(-1.20, abs=1e-12)
    one = make_anchor_grid(SceneConfig(W=1, L=1, S=1))
    np.testing.assert_allclose(one[0], [[0.0, 0.0, 0.0]], atol=1e-12)


def test_project_examples():
    cam = cam100()
    pix, depth, hit = project(np.array([[0.5, 0.5, 1.0], [0, 0, -1], [10, 0, 1]]), cam)
    np.testing.assert_allclose(pix[0], [114, 114])
    assert depth[0] == 1.0 and hit.tolist() == [True, False, False]
    np.testing.assert_allclose(pix[2], [1064, 64])


def test_project_degenerate_depth_is_miss():
    _, _, hit = project(np.array([[0.0, 0.0, 1e-12]]), cam100())
    assert not hit[0]


def test_camera_validation():
    with pytest.raises(GeometryError):
        CameraParams(K100, np.diag([1.0, 1.0, -1.0]), np.zeros(3), (8, 8))
    with pytest.raises(GeometryError):
        CameraParams([[100, 0, 0], [1, 100, 0], [0, 0, 1]], np.eye(3), np.zeros(3), (8, 8))
    with pytest.raises(GeometryError):
        CameraParams([[-1, 0, 0], [0, 100, 0], [0, 0, 1]], np.eye(3), np.zeros(3), (8, 8))


def test_camera_dict_round_trip():
    cam = camera_ring(SceneConfig(), 3)[1]
    back = CameraParams.from_dict(cam.to_dict())
    np.testing.assert_array_equal(back.R, cam.R)
    np.testing.assert_array_equal(back.T, cam.T)
    assert back.image_size == cam.image_size


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 20), st.integers(0, 7))
def test_backprojection_round_trip(u_off, v_off, d, k):
    cam = camera_ring(SceneConfig(), 8, image_size=(64, 48))[k]
    pix = np.array([[32 + 10 * u_off, 24 + 10 * v_off]])
    world = backproject(pix, np.array([d]), cam)
    pix2, depth, _ = project(world, cam)
    np.testing.assert_allclose(pix2, pix, atol=1e-9)
    assert depth[0] == pytest.approx(d, abs=1e-9)
    # the reconstructed point sits on the camera ray through the pixel
    world2 = backproject(pix, np.array([2 * d]), cam)
    ray = world2 - cam.center
    np.testing.assert_allclose(world - cam.center, ray / 2, atol=1e-9)


def test_hit_mask_monotone_in_image_size():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, (500, 3)) + np.array([0, 0, 4])
    small = CameraParams([[50, 0, 20], [0, 50, 20], [0, 0, 1]], np.eye(3), np.zeros(3), (40, 40))
    big = CameraParams(small.K, np.eye(3), np.zeros(3), (80, 90))
    _, _, h_small = project(pts, small)
    _, _, h_big = project(pts, big)
    assert np.all(h_big[h_small])
    assert h_big.sum() > h_small.sum()


def test_reference_set_hits_are_in_bounds():
    cfg = SceneConfig(W=6, L=5, S=2, N_r3d=3, num_views=4)
    cams = camera_ring(cfg, 4, image_size=(32, 24))
    refs = build_reference_set(cfg, cams)
    for key, hit in refs.hit_mask.items():
        img = refs.ref2d_img[key]
        assert hit.shape == (4, 30, 3)
        inside = (img >= 0).all(-1) & (img[..., 0] < 1) & (img[..., 1] < 1)
        assert np.all(inside[hit])
        assert hit.any()
    assert refs.anchor_img.shape == (2, 4, 30, 2)
