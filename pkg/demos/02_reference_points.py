"""Where the slice queries look: pillar heights, anchors and camera hits.

Run: python demos/02_reference_points.py
"""
import numpy as np

from sliceocc.geometry import (CameraParams, SceneConfig, build_reference_set, pillar_heights,
                               project)
from sliceocc.synthscene import camera_ring

cfg = SceneConfig()  # 40x40 slices, 16 levels, 2.56 m tall room
print(f"slab height {cfg.slab_height:.2f} m, pillar spacing "
      f"{cfg.H / (2 * cfg.S * cfg.N_r3d):.2f} m")

# Floor pillars rise through the lower half of a slab, ceiling pillars through the upper half.
for role in ("floor", "ceiling"):
    print(f"level 1 {role:<7} z:", np.round(pillar_heights(cfg, 1, role) + cfg.z_range[0], 2))

# Pinhole projection of a point 1 m in front of an axis-aligned camera.
cam = CameraParams(K=np.array([[100.0, 0, 64], [0, 100, 64], [0, 0, 1]]), R=np.eye(3),
                   T=np.zeros(3), image_size=(128, 128))
pix, d, hit = project(np.array([[0.5, 0.5, 1.0], [0.0, 0.0, -1.0]]), cam)
print("pixels", pix[0], "depth", d[0], "hits", hit.tolist())

# With a ring of cameras, most pillars are visible from several views.
small = SceneConfig(W=8, L=8, S=2, H_v=4)
refs = build_reference_set(small, camera_ring(small, 6, (32, 32)))
views_per_token = refs.hit_mask[(1, "floor")].any(axis=2).sum(axis=0)
print("views hitting each level-1 floor token: min", views_per_token.min(),
      "max", views_per_token.max())
