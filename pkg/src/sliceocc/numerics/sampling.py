"""Differentiable bilinear and trilinear sampling.

Two coordinate conventions are used in the package:

* ``align_corners=True`` (the default for the public samplers): a normalized
  coordinate of 0 sits on the centre of the first texel and 1 on the centre of
  the last one, so texel ``i`` of an ``n``-texel axis is at ``i / (n - 1)``.
* ``align_corners=False`` ("extent" coordinates): 0 and 1 are the outer edges
  of the map, texel ``i`` is centred at ``(i + 0.5) / n``.  Attention
  reference points use this convention because it works for single-texel axes.

Samples outside the map pick up zero from every missing corner.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import NumericsError, Tensor, as_tensor, check_finite, make

_PADDING = {"zeros": kernels.ZEROS, "border": kernels.BORDER}


def _padding_code(padding: str) -> int:
    try:
        return _PADDING[padding]
    except KeyError:
        raise NumericsError("sample", f"unknown padding {padding!r}") from None


def gather2d(fm: Tensor, group: np.ndarray, coords: Tensor, padding: str = "zeros") -> Tensor:
    """Sample grouped channels-last maps ``fm[G, H, W, C]`` at texel ``coords[P, 2]`` (x, y).

    ``group[p]`` selects which map point ``p`` reads from.
    """
    fm, coords = as_tensor(fm), as_tensor(coords)
    if fm.ndim != 4 or coords.ndim != 2 or coords.shape[1] != 2:
        raise NumericsError("gather2d", "bad operand ranks", expected="[G,H,W,C] and [P,2]",
                            got=(fm.shape, coords.shape))
    group = np.ascontiguousarray(group, dtype=np.int64)
    if group.shape != (coords.shape[0],):
        raise NumericsError("gather2d", "one group id per point", expected=coords.shape[0],
                            got=group.shape)
    check_finite(coords.data, "gather2d")
    mode = _padding_code(padding)
    fmd = np.ascontiguousarray(fm.data)
    x = np.ascontiguousarray(coords.data[:, 0])
    y = np.ascontiguousarray(coords.data[:, 1])
    out = kernels.bilinear_forward(fmd, group, x, y, mode)

    def bw(g):
        gfm, gx, gy = kernels.bilinear_backward(
            fmd, group, x, y, np.ascontiguousarray(g), mode,
            fm.requires_grad, coords.requires_grad)
        return (gfm if fm.requires_grad else None,
                np.stack([gx, gy], axis=1) if coords.requires_grad else None)

    return make(out, (fm, coords), bw, "gather2d")


def gather3d(fm: Tensor, group: np.ndarray, coords: Tensor, padding: str = "zeros") -> Tensor:
    """Sample grouped maps ``fm[G, D, H, W, C]`` at texel ``coords[P, 3]`` (x, y, z)."""
    fm, coords = as_tensor(fm), as_tensor(coords)
    if fm.ndim != 5 or coords.ndim != 2 or coords.shape[1] != 3:
        raise NumericsError("gather3d", "bad operand ranks", expected="[G,D,H,W,C] and [P,3]",
                            got=(fm.shape, coords.shape))
    group = np.ascontiguousarray(group, dtype=np.int64)
    if group.shape != (coords.shape[0],):
        raise NumericsError("gather3d", "one group id per point", expected=coords.shape[0],
                            got=group.shape)
    check_finite(coords.data, "gather3d")
    mode = _padding_code(padding)
    fmd = np.ascontiguousarray(fm.data)
    x, y, z = (np.ascontiguousarray(coords.data[:, i]) for i in range(3))
    out = kernels.trilinear_forward(fmd, group, x, y, z, mode)

    def bw(g):
        gfm, gx, gy, gz = kernels.trilinear_backward(
            fmd, group, x, y, z, np.ascontiguousarray(g), mode,
            fm.requires_grad, coords.requires_grad)
        return (gfm if fm.requires_grad else None,
                np.stack([gx, gy, gz], axis=1) if coords.requires_grad else None)

    return make(out, (fm, coords), bw, "gather3d")


def weighted_gather2d(fm: Tensor, group: np.ndarray, coords: Tensor, weights: Tensor,
                      padding: str = "zeros") -> Tensor:
    """Weighted sum of bilinear samples: ``out[n] = sum_k weights[n, k] * fm[group[n]](coords[n, k])``.

    ``fm`` is [G, H, W, C], ``coords`` [N, K, 2] texel (x, y), ``weights`` [N, K].
    Returns [N, C].  This is the fused gather of deformable attention.
    """
    fm, coords, weights = as_tensor(fm), as_tensor(coords), as_tensor(weights)
    if fm.ndim != 4 or coords.ndim != 3 or coords.shape[2] != 2 or \
            weights.shape != coords.shape[:2]:
        raise NumericsError("weighted_gather2d", "bad operand shapes",
                            expected="[G,H,W,C], [N,K,2], [N,K]",
                            got=(fm.shape, coords.shape, weights.shape))
    group = np.ascontiguousarray(group, dtype=np.int64)
    if group.shape != (coords.shape[0],):
        raise NumericsError("weighted_gather2d", "one group id per row", expected=coords.shape[0],
                            got=group.shape)
    check_finite(coords.data, "weighted_gather2d")
    mode = _padding_code(padding)
    fmd = np.ascontiguousarray(fm.data)
    x = np.ascontiguousarray(coords.data[..., 0])
    y = np.ascontiguousarray(coords.data[..., 1])
    w = np.ascontiguousarray(weights.data)
    out = kernels.weighted_bilinear_forward(fmd, group, x, y, w, mode)

    def bw(g):
        gfm, gx, gy, gw = kernels.weighted_bilinear_backward(
            fmd, group, x, y, w, np.ascontiguousarray(g), mode,
            fm.requires_grad, coords.requires_grad, weights.requires_grad)
        return (gfm if fm.requires_grad else None,
                np.stack([gx, gy], axis=-1) if coords.requires_grad else None,
                gw if weights.requires_grad else None)

    return make(out, (fm, coords, weights), bw, "weighted_gather2d")


def to_texel(points: Tensor, sizes, align_corners: bool) -> Tensor:
    """Normalized coordinates -> texel coordinates, one size per column."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if align_corners:
        return points * (sizes - 1.0)
    return points * sizes - 0.5


def bilinear_sample(featmap: Tensor, points: Tensor, align_corners: bool = True,
                    padding: str = "zeros") -> Tensor:
    """Sample ``featmap[C, Hf, Wf]`` at normalized ``points[P, 2]`` given as (x, y).

    Returns ``[P, C]``.  With ``align_corners=True`` both spatial dims must be
    at least 2.
    """
    featmap, points = as_tensor(featmap), as_tensor(points)
    if featmap.ndim != 3:
        raise NumericsError("bilinear_sample", "featmap must be [C,Hf,Wf]", got=featmap.shape)
    if points.ndim != 2 or points.shape[1] != 2:
        raise NumericsError("bilinear_sample", "points must be [P,2]", got=points.shape)
    check_finite(featmap.data, "bilinear_sample")
    check_finite(points.data, "bilinear_sample")
    _, H, W = featmap.shape
    if align_corners and (H < 2 or W < 2):
        raise NumericsError("bilinear_sample", "spatial dims must be >= 2",
                            expected=">= 2", got=(H, W))
    fm = featmap.transpose(1, 2, 0).reshape(1, H, W, -1)
    tex = to_texel(points, [W, H], align_corners)
    group = np.zeros(points.shape[0], dtype=np.int64)
    return gather2d(fm, group, tex, padding)


def trilinear_sample(volume: Tensor, points: Tensor, align_corners: bool = True,
                     padding: str = "zeros") -> Tensor:
    """Sample ``volume[C, D, Hf, Wf]`` at normalized ``points[P, 3]`` given as (x, y, z)."""
    volume, points = as_tensor(volume), as_tensor(points)
    if volume.ndim != 4:
        raise NumericsError("trilinear_sample", "volume must be [C,D,Hf,Wf]", got=volume.shape)
    if points.ndim != 2 or points.shape[1] != 3:
        raise NumericsError("trilinear_sample", "points must be [P,3]", got=points.shape)
    check_finite(volume.data, "trilinear_sample")
    check_finite(points.data, "trilinear_sample")
    _, D, H, W = volume.shape
    if align_corners and min(D, H, W) < 2:
        raise NumericsError("trilinear_sample", "spatial dims must be >= 2",
                            expected=">= 2", got=(D, H, W))
    fm = volume.transpose(1, 2, 3, 0).reshape(1, D, H, W, -1)
    tex = to_texel(points, [W, H, D], align_corners)
    group = np.zeros(points.shape[0], dtype=np.int64)
    return gather3d(fm, group, tex, padding)
