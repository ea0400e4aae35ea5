"""Voxel features from slice pairs, the 3D FCN head, and IoU metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SceneConfig
from .numerics import Conv3d, Module, NumericsError, Rng, Tensor, gather3d, relu, softmax, stack
from .slice_attention import SliceQuerySet


@dataclass
class VoxelGrid:
    """Labels ``[X, Y, Z]`` (integers) or probabilities ``[C, X, Y, Z]``.

    ``class_names[0]`` is always ``"empty"``.
    """

    payload: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            raise NumericsError("VoxelGrid", "class_names required")
        if self.class_names[0] != "empty":
            raise NumericsError("VoxelGrid", "class 0 must be 'empty'", got=self.class_names[0])
        C = len(self.class_names)
        if self.is_probabilities:
            if self.payload.shape[0] != C:
                raise NumericsError("VoxelGrid", "probability channels", expected=C,
                                    got=self.payload.shape[0])
        elif self.payload.size and (self.payload.min() < 0 or self.payload.max() >= C):
            raise NumericsError("VoxelGrid", "class index out of range", expected=f"< {C}",
                                got=int(self.payload.max()))

    @property
    def is_probabilities(self) -> bool:
        return self.payload.ndim == 4 and np.issubdtype(self.payload.dtype, np.floating)

    @property
    def C(self) -> int:
        return len(self.class_names)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.payload.shape[-3:])

    def labels(self) -> np.ndarray:
        if self.is_probabilities:
            return np.argmax(self.payload, axis=0).astype(np.int64)
        return self.payload.astype(np.int64)


def default_class_names(C: int) -> list[str]:
    return ["empty"] + [f"class_{k}" for k in range(1, C)]


def blend_weights(S: int, H_v: int) -> tuple[np.ndarray, np.ndarray]:
    """Slab index and fractional height inside the slab for each voxel layer."""
    if H_v % S:
        raise NumericsError("assemble_voxels", "H_v must be divisible by S", got=(H_v, S))
    frac = (np.arange(H_v) + 0.5) / H_v * S
    slab = np.floor(frac).astype(np.int64)
    return slab, frac - slab


def assemble_voxels(queries: SliceQuerySet, cfg: SceneConfig) -> Tensor:
    """Voxel features ``[D, X, Y, H_v]`` by trilinear interpolation between slice pairs.

    Each slab is a two-layer volume, floor plane at its bottom face and
    ceiling plane at its top face.  A voxel centre reads its slab at the
    centre's (x, y) and at its fractional height within the slab.  Planes are
    clamped at their border cells when the voxel lattice is finer.
    """
    S, D = queries.S, queries.D
    gx, gy, gz = cfg.grid_shape
    slab, blend = blend_weights(S, gz)
    vol = stack([queries.floor.reshape(S, cfg.ny, cfg.nx, D),
                 queries.ceiling.reshape(S, cfg.ny, cfg.nx, D)], axis=1)  # [S, 2, ny, nx, D]
    ix, iy, iz = np.meshgrid(np.arange(gx), np.arange(gy), np.arange(gz), indexing="ij")
    tx = (ix + 0.5) / gx * cfg.nx - 0.5
    ty = (iy + 0.5) / gy * cfg.ny - 0.5
    coords = np.stack([tx.ravel(), ty.ravel(), blend[iz].ravel()], axis=1)
    feats = gather3d(vol, slab[iz].ravel(), Tensor(coords), padding="border")
    return feats.reshape(gx, gy, gz, D).transpose(3, 0, 1, 2)


class FcnHead(Module):
    """Stack of 3x3x3 convolutions with ReLU between them; the last maps to C logits."""

    def __init__(self, dim: int, num_classes: int, rng: Rng, depth: int = 2):
        if depth < 1:
            raise ValueError("head depth must be >= 1")
        self.convs = [Conv3d(dim, dim, rng) for _ in range(depth - 1)]
        self.out = Conv3d(dim, num_classes, rng)

    def __call__(self, voxfeat: Tensor) -> Tensor:
        x = voxfeat
        for conv in self.convs:
            x = relu(conv(x))
        return self.out(x)


def decode_probs(voxfeat: Tensor, head: FcnHead) -> Tensor:
    """Per-voxel class probabilities ``[C, X, Y, Z]``."""
    return softmax(head(voxfeat), axis=0)


def decode(voxfeat: Tensor, head: FcnHead, class_names: list[str] | None = None) -> VoxelGrid:
    probs = decode_probs(voxfeat, head).data
    return VoxelGrid(probs, class_names or default_class_names(probs.shape[0]))


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, C: int) -> np.ndarray:
    """``M[g, p]`` counts voxels with ground truth g predicted as p."""
    pred = np.asarray(pred, dtype=np.int64).ravel()
    gt = np.asarray(gt, dtype=np.int64).ravel()
    return np.bincount(gt * C + pred, minlength=C * C).reshape(C, C)


def miou(pred, gt, C: int) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where a class appears in neither grid) and their mean."""
    pred = pred.labels() if isinstance(pred, VoxelGrid) else np.asarray(pred)
    gt = gt.labels() if isinstance(gt, VoxelGrid) else np.asarray(gt)
    if pred.shape != gt.shape:
        raise NumericsError("miou", "grid dims differ", expected=gt.shape, got=pred.shape)
    cm = confusion_matrix(pred, gt, C)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    iou = np.full(C, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou, float(np.mean(iou[present])) if present.any() else float("nan")


def voxel_accuracy(pred, gt) -> float:
    pred = pred.labels() if isinstance(pred, VoxelGrid) else np.asarray(pred)
    gt = gt.labels() if isinstance(gt, VoxelGrid) else np.asarray(gt)
    return float(np.mean(pred == gt))
