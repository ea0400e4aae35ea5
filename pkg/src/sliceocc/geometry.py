"""Camera model, scene lattice, anchors, pillar reference points and projection.

Plane layout used throughout the package: a slice plane has ``nx = L`` cells
along world x and ``ny = W`` cells along world y, with metric cell sizes
``p_h = x_extent / L`` and ``p_w = y_extent / W``.  Plane tokens are stored
row-major with y as the row: token ``t = iy * nx + ix``.  Normalized plane
coordinates are "extent" coordinates, cell ``i`` centred at ``(i + 0.5) / n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROLES = ("floor", "ceiling")
_DEPTH_EPS = 1e-9


class GeometryError(ValueError):
    pass


@dataclass
class CameraParams:
    """Pinhole camera: ``pixel ~ K @ (R @ p_world + T)``.

    Camera frame is x right, y down, z forward.  ``image_size`` is
    (width, height) in pixels; pixel ``(u, v)`` lies inside the image when
    ``0 <= u < width`` and ``0 <= v < height``.
    """

    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        self.validate()

    def validate(self):
        if not np.allclose(self.R @ self.R.T, np.eye(3), atol=1e-9) or \
                abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise GeometryError("R must be a rotation (orthonormal, det +1)")
        if np.any(np.tril(self.K, -1) != 0) or self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise GeometryError("K must be upper-triangular with positive focal lengths")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise GeometryError("image_size must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.T

    @classmethod
    def look_at(cls, eye, target, fov_deg: float, image_size, up=(0.0, 0.0, 1.0)):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            raise GeometryError("view direction parallel to up vector")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        w, h = image_size
        f = 0.5 * w / np.tan(np.deg2rad(fov_deg) / 2)
        K = np.array([[f, 0.0, w / 2], [0.0, f, h / 2], [0.0, 0.0, 1.0]])
        return cls(K, R, -R @ eye, image_size)

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "R": self.R.tolist(), "T": self.T.tolist(),
                "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        return cls(d["K"], d["R"], d["T"], tuple(d["image_size"]))


@dataclass
class SceneConfig:
    x_range: tuple[float, float] = (-3.2, 3.2)
    y_range: tuple[float, float] = (-3.2, 3.2)
    z_range: tuple[float, float] = (-1.28, 1.28)
    W: int = 40
    L: int = 40
    S: int = 16
    N_r3d: int = 4
    C: int = 82
    layers: int = 3
    num_views: int = 20
    H_v: int = 16
    # pillar span override in metres; None means H / (2 S) as in the slab formula
    pillar_span: float | None = None

    def __post_init__(self):
        self.x_range = tuple(float(v) for v in self.x_range)
        self.y_range = tuple(float(v) for v in self.y_range)
        self.z_range = tuple(float(v) for v in self.z_range)
        self.validate()

    def validate(self):
        for key in ("W", "L", "S", "N_r3d", "layers", "H_v", "num_views"):
            if int(getattr(self, key)) < 1:
                raise GeometryError(f"{key} must be >= 1")
        if self.C < 2:
            raise GeometryError("C must be >= 2 (empty plus at least one class)")
        for key in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, key)
            if not hi > lo:
                raise GeometryError(f"{key} must be non-degenerate")
        if self.pillar_span is not None and self.pillar_span <= 0:
            raise GeometryError("pillar_span must be positive")

    @property
    def H(self) -> float:
        return self.z_range[1] - self.z_range[0]

    @property
    def nx(self) -> int:
        return self.L

    @property
    def ny(self) -> int:
        return self.W

    @property
    def p_h(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.L

    @property
    def p_w(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / self.W

    @property
    def slab_height(self) -> float:
        return self.H / self.S

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        """Voxel lattice dims along (x, y, z)."""
        return (self.nx, self.ny, self.H_v)

    @property
    def voxel_size(self) -> np.ndarray:
        ext = np.array([self.x_range[1] - self.x_range[0], self.y_range[1] - self.y_range[0],
                        self.H])
        return ext / np.array(self.grid_shape)

    def voxel_centers(self) -> np.ndarray:
        """World centres of all voxels, shape [nx, ny, H_v, 3]."""
        axes = []
        for (lo, _), n, size in zip((self.x_range, self.y_range, self.z_range), self.grid_shape,
                                    self.voxel_size):
            axes.append(lo + (np.arange(n) + 0.5) * size)
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


def _plane_xy(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Integer cell indices (ix, iy) per token, tokens ordered t = iy * nx + ix."""
    iy, ix = np.meshgrid(np.arange(cfg.ny), np.arange(cfg.nx), indexing="ij")
    return ix.reshape(-1), iy.reshape(-1)


def make_planar_refs(cfg: SceneConfig) -> np.ndarray:
    """Normalized (x, y) cell centres of the slice plane, shape [W*L, 2].

    Floor and ceiling planes share this grid.
    """
    ix, iy = _plane_xy(cfg)
    return np.stack([(ix + 0.5) / cfg.nx, (iy + 0.5) / cfg.ny], axis=1)


def _world_xy(cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    # cell-centre form of x' = (x - L/2) p_h about the scene centre
    ix, iy = _plane_xy(cfg)
    cx = 0.5 * (cfg.x_range[0] + cfg.x_range[1])
    cy = 0.5 * (cfg.y_range[0] + cfg.y_range[1])
    x = cx + (ix + 0.5 - cfg.L / 2) * cfg.p_h
    y = cy + (iy + 0.5 - cfg.W / 2) * cfg.p_w
    return x, y


def pillar_heights(cfg: SceneConfig, slice_i: int, role: str) -> np.ndarray:
    """Slab-local pillar heights z_n = (i - 1 + beta) H/S + n * span/N_r3d, n = 1..N_r3d.

    ``beta`` is 0 for the floor pillar and 1/2 for the ceiling pillar.  The
    default span is H/(2S), half a slab.  Heights are measured from the scene
    bottom.
    """
    if not 1 <= slice_i <= cfg.S:
        raise GeometryError(f"slice index {slice_i} outside 1..{cfg.S}")
    if role not in ROLES:
        raise GeometryError(f"role must be one of {ROLES}, got {role!r}")
    beta = 0.0 if role == "floor" else 0.5
    span = cfg.H / (2 * cfg.S) if cfg.pillar_span is None else cfg.pillar_span
    n = np.arange(1, cfg.N_r3d + 1)
    return (slice_i - 1 + beta) * cfg.H / cfg.S + n * span / cfg.N_r3d


def make_pillar_refs(cfg: SceneConfig, slice_i: int, role: str) -> np.ndarray:
    """World-space pillar points per token, shape [W*L, N_r3d, 3]."""
    z = cfg.z_range[0] + pillar_heights(cfg, slice_i, role)
    x, y = _world_xy(cfg)
    T = x.size
    out = np.empty((T, cfg.N_r3d, 3))
    out[:, :, 0] = x[:, None]
    out[:, :, 1] = y[:, None]
    out[:, :, 2] = z[None, :]
    return out


def make_anchor_grid(cfg: SceneConfig) -> list[np.ndarray]:
    """One [W*L, 3] anchor set per slice level, at cell centres and slab mid-height."""
    x, y = _world_xy(cfg)
    anchors = []
    for i in range(1, cfg.S + 1):
        z = cfg.z_range[0] + (i - 0.5) * cfg.slab_height
        anchors.append(np.stack([x, y, np.full_like(x, z)], axis=1))
    return anchors


def project(points: np.ndarray, cam: CameraParams):
    """World points [P, 3] -> (pixels [P, 2], depth [P], hit [P]).

    ``hit`` is true when depth is positive and the pixel lies inside the image.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = points @ cam.R.T + cam.T
    depth = pc[:, 2]
    ok = np.abs(depth) >= _DEPTH_EPS
    safe = np.where(ok, depth, 1.0)
    uvw = pc @ cam.K.T
    pix = uvw[:, :2] / safe[:, None]
    w, h = cam.image_size
    hit = ok & (depth > 0) & (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    pix = np.where(ok[:, None], pix, 0.0)
    return pix, depth, hit


def backproject(pixels: np.ndarray, depth: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Inverse of :func:`project` for points in front of the camera."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    homo = np.concatenate([pixels, np.ones((pixels.shape[0], 1))], axis=1)
    rays = np.linalg.solve(cam.K, homo.T).T
    pc = rays * depth[:, None]
    return (pc - cam.T) @ cam.R


def pixels_to_normalized(pixels: np.ndarray, cam: CameraParams) -> np.ndarray:
    """Pixel coordinates -> extent-normalized image coordinates in [0, 1]^2."""
    w, h = cam.image_size
    return np.asarray(pixels) / np.array([w, h], dtype=np.float64)


@dataclass
class ReferencePointSet:
    """Reference geometry for one scene config and camera rig.

    ``ref3d[(i, role)]`` is [W*L, N_r3d, 3]; ``ref2d_img[(i, role)]`` is
    [V, W*L, N_r3d, 2] in extent-normalized image coordinates and
    ``hit_mask[(i, role)]`` the matching [V, W*L, N_r3d] booleans.
    ``anchors[i-1]`` are the query-initialisation anchors of level i, with
    projections ``anchor_img`` [S, V, W*L, 2] and ``anchor_hit`` [S, V, W*L].
    """

    ref2d: np.ndarray
    ref3d: dict = field(default_factory=dict)
    ref2d_img: dict = field(default_factory=dict)
    hit_mask: dict = field(default_factory=dict)
    anchors: list = field(default_factory=list)
    anchor_img: np.ndarray | None = None
    anchor_hit: np.ndarray | None = None


def build_reference_set(cfg: SceneConfig, cams: list[CameraParams]) -> ReferencePointSet:
    refs = ReferencePointSet(ref2d=make_planar_refs(cfg))
    T = cfg.W * cfg.L
    for i in range(1, cfg.S + 1):
        for role in ROLES:
            pts = make_pillar_refs(cfg, i, role)
            refs.ref3d[(i, role)] = pts
            img = np.zeros((len(cams), T, cfg.N_r3d, 2))
            hit = np.zeros((len(cams), T, cfg.N_r3d), dtype=bool)
            for v, cam in enumerate(cams):
                pix, _, h = project(pts.reshape(-1, 3), cam)
                img[v] = pixels_to_normalized(pix, cam).reshape(T, cfg.N_r3d, 2)
                hit[v] = h.reshape(T, cfg.N_r3d)
            refs.ref2d_img[(i, role)] = img
            refs.hit_mask[(i, role)] = hit
    refs.anchors = make_anchor_grid(cfg)
    refs.anchor_img = np.zeros((cfg.S, len(cams), T, 2))
    refs.anchor_hit = np.zeros((cfg.S, len(cams), T), dtype=bool)
    for i, a in enumerate(refs.anchors):
        for v, cam in enumerate(cams):
            pix, _, h = project(a, cam)
            refs.anchor_img[i, v] = pixels_to_normalized(pix, cam)
            refs.anchor_hit[i, v] = h
    return refs
