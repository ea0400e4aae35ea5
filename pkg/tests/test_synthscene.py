import numpy as np
import pytest

from sliceocc.geometry import CameraParams, SceneConfig
from sliceocc.synthscene import (Box, FeatureRenderer, SceneError, SyntheticScene, camera_ring,
                                 cast_rays, generate_scene, render_views, voxelize)


def brute_force_gt(boxes, cfg):
    out = np.zeros(cfg.grid_shape, dtype=np.int64)
    lo = np.array([cfg.x_range[0], cfg.y_range[0], cfg.z_range[0]])
    size = cfg.voxel_size
    for ix, iy, iz in np.ndindex(*cfg.grid_shape):
        c = lo + (np.array([ix, iy, iz]) + 0.5) * size
        for b in boxes:
            if all(b.center[k] - b.size[k] / 2 <= c[k] <= b.center[k] + b.size[k] / 2
                   for k in range(3)):
                out[ix, iy, iz] = b.cls
    return out


def test_unit_box_at_origin():
    cfg = SceneConfig()
    gt = voxelize([Box((0, 0, 0), (1, 1, 1), 2)], cfg)
    c = cfg.voxel_centers()
    inside = (np.abs(c) <= 0.5).all(axis=-1)
    np.testing.assert_array_equal(gt == 2, inside)
    assert set(np.unique(gt)) == {0, 2}


@pytest.mark.parametrize("seed,stacking", [(0, 0), (1, 2), (2, 3)])
def test_generated_gt_matches_brute_force(seed, stacking):
    cfg = SceneConfig(W=10, L=12, S=2, H_v=6, C=5)
    scene = generate_scene(seed, 4, stacking=stacking, cfg=cfg, num_classes=5, num_views=4)
    np.testing.assert_array_equal(scene.gt, brute_force_gt(scene.boxes, scene.cfg))


def test_later_box_wins():
    cfg = SceneConfig(W=4, L=4, H_v=4)
    outer, inner = Box((0, 0, 0), (4, 4, 4), 1), Box((0, 0, 0), (2, 2, 2), 3)
    gt = voxelize([outer, inner], cfg)
    assert gt[2, 2, 2] == 3 and gt[0, 0, 0] == 0
    assert voxelize([inner, outer], cfg)[2, 2, 2] == 1


def test_generation_is_deterministic():
    a = generate_scene(5, 3, num_views=4)
    b = generate_scene(5, 3, num_views=4)
    assert a.to_dict() == b.to_dict()
    assert generate_scene(6, 3, num_views=4).to_dict() != a.to_dict()


def test_stacking_builds_a_tower():
    scene = generate_scene(3, 3, stacking=2, num_views=4)
    t0, t1 = scene.boxes[:2]
    np.testing.assert_array_equal(t0.center[:2], t1.center[:2])
    np.testing.assert_array_equal(t0.size[:2], t1.size[:2])
    assert t0.hi[2] < t1.lo[2] and t0.cls != t1.cls


def test_every_camera_sees_an_object():
    scene = generate_scene(9, 2, num_views=6)
    for cam in scene.cameras:
        cls, _ = cast_rays(scene.boxes, cam)
        assert (cls > 0).any()


def test_placement_failure_is_reported():
    with pytest.raises(SceneError):
        generate_scene(0, 40, max_tries=3, num_views=2)
    with pytest.raises(SceneError):
        generate_scene(0, 0)
    with pytest.raises(SceneError):
        generate_scene(0, 3, stacking=3, num_classes=3)


def test_scene_json_round_trip(tmp_path):
    scene = generate_scene(1, 3, stacking=2, num_views=3)
    scene.save(tmp_path / "s.json")
    back = SyntheticScene.load(tmp_path / "s.json", scene.cfg)
    assert back.to_dict() == scene.to_dict()
    np.testing.assert_array_equal(back.gt, scene.gt)
    inferred = SyntheticScene.load(tmp_path / "s.json")
    np.testing.assert_array_equal(inferred.gt, scene.gt)


def test_empty_scene_renders_background():
    cfg = SceneConfig()
    scene = SyntheticScene(cfg, [], camera_ring(cfg, 2, image_size=(8, 6)), 4)
    imgs = render_views(scene)[0]
    assert imgs.shape == (2, 4, 6, 8)
    np.testing.assert_array_equal(imgs[:, 0], 1.0)
    np.testing.assert_array_equal(imgs[:, 1:], 0.0)


def test_box_in_front_of_camera_fills_centre():
    cam = CameraParams.look_at((0, -5, 0), (0, 0, 0), 30, (3, 3))
    cls, depth = cast_rays([Box((0, 0, 0), (1, 1, 1), 2)], cam)
    assert cls[1, 1] == 2
    assert depth[1, 1] == pytest.approx(4.5, abs=1e-9)


def test_mirrored_cameras_give_mirrored_renders():
    cfg = SceneConfig()
    boxes = [Box((0, 1.2, -0.5), (0.8, 0.8, 1.0), 1), Box((0, -1.0, -0.3), (0.6, 1.0, 1.5), 2)]
    cams = [CameraParams.look_at((4, 0, 0.5), (0, 0, -0.3), 70, (20, 16)),
            CameraParams.look_at((-4, 0, 0.5), (0, 0, -0.3), 70, (20, 16))]
    scene = SyntheticScene(cfg, boxes, cams, 3)
    a, b = render_views(scene)[0]
    np.testing.assert_array_equal(a, b[:, :, ::-1])
    assert (a[1:] > 0).any()


def test_render_matches_first_occupied_voxel():
    cfg = SceneConfig(W=20, L=20, H_v=16)
    scene = generate_scene(4, 4, stacking=2, cfg=cfg, num_views=3, image_size=(24, 24))
    lo = np.array([cfg.x_range[0], cfg.y_range[0], cfg.z_range[0]])
    size = cfg.voxel_size
    checked = 0
    for cam in scene.cameras:
        cls, depth = cast_rays(scene.boxes, cam)
        w, h = cam.image_size
        for v in range(0, h, 3):
            for u in range(0, w, 3):
                if cls[v, u] == 0:
                    continue
                ray = np.linalg.solve(cam.K, [u + 0.5, v + 0.5, 1.0]) @ cam.R
                p = cam.center + ray * (depth[v, u] + 1e-6)
                idx = np.floor((p - lo) / size).astype(int)
                sl = tuple(slice(max(i - 1, 0), i + 2) for i in idx)
                assert cls[v, u] in scene.gt[sl]
                checked += 1
    assert checked > 20


def test_renderer_modes():
    scene = generate_scene(2, 2, num_views=2, image_size=(16, 16))
    depth = render_views(scene, renderer=FeatureRenderer("depth"))[0]
    assert depth.shape == (2, 1, 16, 16) and depth.max() > 0
    toy = render_views(scene, renderer=FeatureRenderer("learned-toy-encoder", scales=2))
    assert [x.shape for x in toy] == [(2, 3, 16, 16), (2, 3, 8, 8)]
    one = render_views(scene)[0]
    np.testing.assert_allclose(one.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        FeatureRenderer("photoreal")
