"""Procedural box scenes with exact occupancy labels and a ray-cast feature renderer.

Scenes are axis-aligned boxes resting on the floor or stacked into towers.
Ground truth labels each voxel by the last-placed box containing its centre
(closed box), else 0 ("empty").  The renderer casts one ray per pixel centre
and reports the nearest box surface.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraParams, SceneConfig
from .numerics import Rng


class SceneError(RuntimeError):
    pass


@dataclass
class Box:
    center: np.ndarray
    size: np.ndarray
    cls: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if np.any(self.size <= 0):
            raise SceneError("box sizes must be positive")
        if self.cls < 1:
            raise SceneError("box class must be >= 1 (0 is empty)")

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.size / 2

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.size / 2

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "size": self.size.tolist(), "cls": int(self.cls)}


def voxelize(boxes: list[Box], cfg: SceneConfig) -> np.ndarray:
    """Label grid [X, Y, Z]: last box containing the voxel centre wins."""
    centers = cfg.voxel_centers()
    labels = np.zeros(cfg.grid_shape, dtype=np.int64)
    for b in boxes:
        labels[b.contains(centers)] = b.cls
    return labels


@dataclass
class SyntheticScene:
    cfg: SceneConfig
    boxes: list[Box]
    cameras: list[CameraParams]
    num_classes: int
    gt: np.ndarray = field(init=False)

    def __post_init__(self):
        for b in self.boxes:
            if b.cls >= self.num_classes:
                raise SceneError(f"box class {b.cls} >= num_classes {self.num_classes}")
        self.gt = voxelize(self.boxes, self.cfg)

    def to_dict(self) -> dict:
        c = self.cfg
        return {
            "format": "sliceocc-scene",
            "version": 1,
            "bounds": {"x_range": list(c.x_range), "y_range": list(c.y_range),
                       "z_range": list(c.z_range)},
            "grid_shape": list(c.grid_shape),
            "num_classes": self.num_classes,
            "boxes": [b.to_dict() for b in self.boxes],
            "cameras": [cam.to_dict() for cam in self.cameras],
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d: dict, cfg: SceneConfig | None = None) -> "SyntheticScene":
        if d.get("format") != "sliceocc-scene":
            raise SceneError("not a sliceocc scene document")
        if cfg is None:
            b = d["bounds"]
            gx, gy, gz = d["grid_shape"]
            cfg = SceneConfig(x_range=b["x_range"], y_range=b["y_range"], z_range=b["z_range"],
                              L=gx, W=gy, H_v=gz, S=1, C=d["num_classes"],
                              num_views=max(1, len(d["cameras"])))
        boxes = [Box(b["center"], b["size"], b["cls"]) for b in d["boxes"]]
        cams = [CameraParams.from_dict(c) for c in d["cameras"]]
        return cls(cfg, boxes, cams, int(d["num_classes"]))

    @classmethod
    def load(cls, path, cfg: SceneConfig | None = None) -> "SyntheticScene":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), cfg)


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------
def camera_ring(cfg: SceneConfig, num_views: int, image_size=(48, 48), radius: float = 4.5,
                height: float = 1.2, target_z: float = -0.7, fov_deg: float = 75.0,
                phase: float = 0.0) -> list[CameraParams]:
    """Inward-facing cameras evenly spaced in azimuth around the scene centre."""
    cx = 0.5 * (cfg.x_range[0] + cfg.x_range[1])
    cy = 0.5 * (cfg.y_range[0] + cfg.y_range[1])
    cams = []
    for k in range(num_views):
        a = phase + 2 * np.pi * k / num_views
        eye = (cx + radius * np.cos(a), cy + radius * np.sin(a), height)
        cams.append(CameraParams.look_at(eye, (cx, cy, target_z), fov_deg, image_size))
    return cams


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------
def _overlaps(a_lo, a_hi, boxes, margin):
    for b in boxes:
        if np.all(a_lo[:2] < b.hi[:2] + margin) and np.all(a_hi[:2] > b.lo[:2] - margin):
            return True
    return False


def _sees_object(cam: CameraParams, boxes: list[Box]) -> bool:
    from .geometry import project
    for b in boxes:
        corners = b.lo + b.size * np.array(np.meshgrid([0, 1], [0, 1], [0, 1])).reshape(3, -1).T
        pts = np.concatenate([corners, b.center[None]])
        if project(pts, cam)[2].any():
            return True
    return False


def generate_scene(seed: int, num_objects: int, stacking: int = 0,
                   cfg: SceneConfig | None = None, num_classes: int = 5, num_views: int = 8,
                   image_size=(48, 48), size_range=(0.8, 1.8), height_range=(0.4, 1.4),
                   max_tries: int = 200, cameras: list[CameraParams] | None = None,
                   ring: dict | None = None) -> SyntheticScene:
    """Random room of ``num_objects`` boxes.

    With ``stacking >= 2`` the first ``stacking`` boxes form one tower: same
    footprint, distinct classes, disjoint vertical extents.  The other boxes
    stand on the floor with non-overlapping footprints.  Raises
    :class:`SceneError` when placement or camera coverage fails within
    ``max_tries`` attempts.
    """
    if num_objects < 1:
        raise SceneError("num_objects must be >= 1")
    if stacking > num_objects:
        raise SceneError("stacking cannot exceed num_objects")
    cfg = cfg or SceneConfig()
    if stacking > num_classes - 1:
        raise SceneError("a tower needs distinct classes: stacking <= num_classes - 1")
    rng = Rng(seed)
    z0, z1 = cfg.z_range
    if cameras is None:
        cameras = camera_ring(cfg, num_views, image_size, **(ring or {}))
    margin = 0.2

    for _ in range(max_tries):
        boxes: list[Box] = []
        ok = True
        tower = stacking if stacking >= 2 else 0
        if tower:
            fx, fy = rng.uniform(*size_range, size=2)
            lo = np.array([cfg.x_range[0], cfg.y_range[0]]) + margin + np.array([fx, fy]) / 2
            hi = np.array([cfg.x_range[1], cfg.y_range[1]]) - margin - np.array([fx, fy]) / 2
            cx, cy = rng.uniform(lo, hi)
            # split the room height into `tower` disjoint layers with small gaps
            cuts = np.sort(rng.uniform(0.2, 0.8, size=tower - 1))
            edges = np.concatenate([[0.0], cuts, [1.0]]) * (z1 - z0) * 0.95
            classes = rng.choice(np.arange(1, num_classes), size=tower, replace=False)
            for k in range(tower):
                b_lo, b_hi = z0 + edges[k], z0 + edges[k + 1] - 0.04
                boxes.append(Box((cx, cy, (b_lo + b_hi) / 2), (fx, fy, b_hi - b_lo),
                                 int(classes[k])))
        for _ in range(num_objects - tower):
            placed = False
            for _ in range(max_tries):
                sx, sy = rng.uniform(*size_range, size=2)
                sz = rng.uniform(*height_range)
                lo = np.array([cfg.x_range[0], cfg.y_range[0]]) + np.array([sx, sy]) / 2
                hi = np.array([cfg.x_range[1], cfg.y_range[1]]) - np.array([sx, sy]) / 2
                cx, cy = rng.uniform(lo, hi)
                cand = Box((cx, cy, z0 + sz / 2), (sx, sy, sz), int(rng.integers(1, num_classes)))
                if not _overlaps(cand.lo, cand.hi, boxes, margin):
                    boxes.append(cand)
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok and all(_sees_object(cam, boxes) for cam in cameras):
            cfg_scene = SceneConfig(**{**vars(cfg), "num_views": len(cameras)})
            scene = SyntheticScene(cfg_scene, boxes, cameras, num_classes)
            # coarse grids can miss every voxel centre; such scenes have no training signal
            occupied = scene.gt > 0
            if occupied.any() and not occupied.all():
                return scene
    raise SceneError(f"could not place {num_objects} objects visible from every camera "
                     f"and covering some voxels after {max_tries} attempts")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------
def cast_rays(scene_boxes: list[Box], cam: CameraParams):
    """Per-pixel nearest hit: (class id [H, W] with 0 for background, depth [H, W])."""
    w, h = cam.image_size
    u, v = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs_cam = np.linalg.solve(cam.K, pix.T).T  # camera-frame rays with z = 1
    dirs = dirs_cam @ cam.R  # world directions, unnormalized
    origin = cam.center
    best_t = np.full(dirs.shape[0], np.inf)
    cls = np.zeros(dirs.shape[0], dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for b in scene_boxes:
            t1 = (b.lo - origin) * inv
            t2 = (b.hi - origin) * inv
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            t_hit = np.where(tmin > 0, tmin, tmax)
            hit = (tmax >= tmin) & (tmax > 0) & (t_hit < best_t)
            best_t = np.where(hit, t_hit, best_t)
            cls = np.where(hit, b.cls, cls)
    # rays have unit camera-z, so the ray parameter is the depth
    depth = np.where(np.isfinite(best_t), best_t, 0.0)
    return cls.reshape(h, w), depth.reshape(h, w)


PALETTE_SEED = 7


def class_palette(num_classes: int) -> np.ndarray:
    """Fixed RGB colour per class; background is black."""
    pal = Rng(PALETTE_SEED).uniform(0.2, 1.0, size=(num_classes, 3))
    pal[0] = 0.0
    return pal


@dataclass
class FeatureRenderer:
    """Turns ray-cast hits into per-view feature pyramids.

    ``semantic-onehot``: one channel per class (channel 0 = background).
    ``depth``: normalized inverse depth (0 for background).
    ``learned-toy-encoder``: palette colour shaded by inverse depth, three
    channels, meant to be fed through a trainable encoder.
    Coarser scales are 2x2 average pools of the previous one.
    """

    mode: str = "semantic-onehot"
    scales: int = 1

    def __post_init__(self):
        if self.mode not in ("semantic-onehot", "depth", "learned-toy-encoder"):
            raise ValueError(f"unknown renderer mode {self.mode!r}")
        if self.scales < 1:
            raise ValueError("scales must be >= 1")

    def channels(self, num_classes: int) -> int:
        return {"semantic-onehot": num_classes, "depth": 1, "learned-toy-encoder": 3}[self.mode]

    def render_one(self, scene: SyntheticScene, cam: CameraParams) -> np.ndarray:
        cls, depth = cast_rays(scene.boxes, cam)
        inv = np.where(depth > 0, 1.0 / np.maximum(depth, 1e-9), 0.0)
        if self.mode == "semantic-onehot":
            return (cls[None] == np.arange(scene.num_classes)[:, None, None]).astype(np.float64)
        if self.mode == "depth":
            return inv[None]
        pal = class_palette(scene.num_classes)
        shade = np.clip(inv, 0.0, 1.0)
        return (pal[cls] * (0.5 + 0.5 * shade[..., None])).transpose(2, 0, 1)


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    return x[:, :H2 * 2, :W2 * 2].reshape(C, H2, 2, W2, 2).mean(axis=(2, 4))


def render_views(scene: SyntheticScene, cams: list[CameraParams] | None = None,
                 renderer: FeatureRenderer | None = None) -> list[np.ndarray]:
    """Feature pyramid: list over scales of arrays [V, C_in, H_l, W_l]."""
    cams = scene.cameras if cams is None else cams
    renderer = renderer or FeatureRenderer()
    sizes = {cam.image_size for cam in cams}
    if len(sizes) != 1:
        raise SceneError("all views must share one image size")
    base = np.stack([renderer.render_one(scene, cam) for cam in cams])
    pyramid = [base]
    for _ in range(renderer.scales - 1):
        pyramid.append(np.stack([_avg_pool2(x) for x in pyramid[-1]]))
    return pyramid
