"""Compiled bilinear / trilinear gather kernels.

Maps are channels-last and grouped: ``fm[g, y, x, c]`` (2-D) or
``fm[g, z, y, x, c]`` (3-D).  Coordinates are in texel units, texel ``i``
centred at ``i``.  Padding mode 0 treats out-of-range corners as zero, mode 1
clamps the coordinate into ``[0, n-1]`` (zero gradient while clamped).

Backward kernels loop over sample points in ascending order, so scatter-adds
into the map gradient happen in a fixed order and results are reproducible.
"""
import math

import numba
import numpy as np

ZEROS = 0
BORDER = 1


@numba.njit(cache=True, inline="always")
def _prep(c, n, padding):
    active = 1.0
    if padding == BORDER:
        if c <= 0.0:
            c = 0.0
            active = 0.0
        elif c >= n - 1:
            c = float(n - 1)
            active = 0.0
    c0 = math.floor(c)
    return int(c0), c - c0, active


@numba.njit(cache=True)
def bilinear_forward(fm, group, x, y, padding):
    P = x.shape[0]
    H = fm.shape[1]
    W = fm.shape[2]
    C = fm.shape[3]
    out = np.zeros((P, C))
    for p in range(P):
        g = group[p]
        x0, fx, _ = _prep(x[p], W, padding)
        y0, fy, _ = _prep(y[p], H, padding)
        for dy in range(2):
            yi = y0 + dy
            if yi < 0 or yi >= H:
                continue
            wy = fy if dy == 1 else 1.0 - fy
            for dx in range(2):
                xi = x0 + dx
                if xi < 0 or xi >= W:
                    continue
                w = wy * (fx if dx == 1 else 1.0 - fx)
                if w == 0.0:
                    continue
                for c in range(C):
                    out[p, c] += w * fm[g, yi, xi, c]
    return out


@numba.njit(cache=True)
def bilinear_backward(fm, group, x, y, gout, padding, need_map, need_coords):
    P = x.shape[0]
    H = fm.shape[1]
    W = fm.shape[2]
    C = fm.shape[3]
    gfm = np.zeros(fm.shape) if need_map else np.zeros((1, 1, 1, 1))
    gx = np.zeros(P)
    gy = np.zeros(P)
    for p in range(P):
        g = group[p]
        x0, fx, ax = _prep(x[p], W, padding)
        y0, fy, ay = _prep(y[p], H, padding)
        sx = 0.0
        sy = 0.0
        for dy in range(2):
            yi = y0 + dy
            if yi < 0 or yi >= H:
                continue
            wy = fy if dy == 1 else 1.0 - fy
            dwy = 1.0 if dy == 1 else -1.0
            for dx in range(2):
                xi = x0 + dx
                if xi < 0 or xi >= W:
                    continue
                wx = fx if dx == 1 else 1.0 - fx
                dwx = 1.0 if dx == 1 else -1.0
                w = wx * wy
                dot = 0.0
                for c in range(C):
                    gc = gout[p, c]
                    if need_map:
                        gfm[g, yi, xi, c] += w * gc
                    dot += gc * fm[g, yi, xi, c]
                sx += dot * dwx * wy
                sy += dot * wx * dwy
        if need_coords:
            gx[p] = sx * ax
            gy[p] = sy * ay
    return gfm, gx, gy


@numba.njit(cache=True)
def trilinear_forward(fm, group, x, y, z, padding):
    P = x.shape[0]
    D = fm.shape[1]
    H = fm.shape[2]
    W = fm.shape[3]
    C = fm.shape[4]
    out = np.zeros((P, C))
    for p in range(P):
        g = group[p]
        x0, fx, _ = _prep(x[p], W, padding)
        y0, fy, _ = _prep(y[p], H, padding)
        z0, fz, _ = _prep(z[p], D, padding)
        for dz in range(2):
            zi = z0 + dz
            if zi < 0 or zi >= D:
                continue
            wz = fz if dz == 1 else 1.0 - fz
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    w = wz * wy * (fx if dx == 1 else 1.0 - fx)
                    if w == 0.0:
                        continue
                    for c in range(C):
                        out[p, c] += w * fm[g, zi, yi, xi, c]
    return out


@numba.njit(cache=True)
def trilinear_backward(fm, group, x, y, z, gout, padding, need_map, need_coords):
    P = x.shape[0]
    D = fm.shape[1]
    H = fm.shape[2]
    W = fm.shape[3]
    C = fm.shape[4]
    gfm = np.zeros(fm.shape) if need_map else np.zeros((1, 1, 1, 1, 1))
    gx = np.zeros(P)
    gy = np.zeros(P)
    gz = np.zeros(P)
    for p in range(P):
        g = group[p]
        x0, fx, ax = _prep(x[p], W, padding)
        y0, fy, ay = _prep(y[p], H, padding)
        z0, fz, az = _prep(z[p], D, padding)
        sx = 0.0
        sy = 0.0
        sz = 0.0
        for dz in range(2):
            zi = z0 + dz
            if zi < 0 or zi >= D:
                continue
            wz = fz if dz == 1 else 1.0 - fz
            dwz = 1.0 if dz == 1 else -1.0
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                dwy = 1.0 if dy == 1 else -1.0
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    dwx = 1.0 if dx == 1 else -1.0
                    w = wx * wy * wz
                    dot = 0.0
                    for c in range(C):
                        gc = gout[p, c]
                        if need_map:
                            gfm[g, zi, yi, xi, c] += w * gc
                        dot += gc * fm[g, zi, yi, xi, c]
                    sx += dot * dwx * wy * wz
                    sy += dot * wx * dwy * wz
                    sz += dot * wx * wy * dwz
        if need_coords:
            gx[p] = sx * ax
            gy[p] = sy * ay
            gz[p] = sz * az
    return gfm, gx, gy, gz


@numba.njit(cache=True)
def weighted_bilinear_forward(fm, group, x, y, wts, padding):
    """out[n] = sum_k wts[n, k] * bilinear(fm[group[n]], x[n, k], y[n, k])."""
    N, K = x.shape
    H = fm.shape[1]
    W = fm.shape[2]
    C = fm.shape[3]
    out = np.zeros((N, C))
    for n in range(N):
        g = group[n]
        for k in range(K):
            a = wts[n, k]
            if a == 0.0:
                continue
            x0, fx, _ = _prep(x[n, k], W, padding)
            y0, fy, _ = _prep(y[n, k], H, padding)
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    w = a * wy * (fx if dx == 1 else 1.0 - fx)
                    for c in range(C):
                        out[n, c] += w * fm[g, yi, xi, c]
    return out


@numba.njit(cache=True)
def weighted_bilinear_backward(fm, group, x, y, wts, gout, padding, need_map, need_coords,
                               need_wts):
    N, K = x.shape
    H = fm.shape[1]
    W = fm.shape[2]
    C = fm.shape[3]
    gfm = np.zeros(fm.shape) if need_map else np.zeros((1, 1, 1, 1))
    gx = np.zeros((N, K))
    gy = np.zeros((N, K))
    gw = np.zeros((N, K))
    for n in range(N):
        g = group[n]
        for k in range(K):
            a = wts[n, k]
            x0, fx, ax = _prep(x[n, k], W, padding)
            y0, fy, ay = _prep(y[n, k], H, padding)
            sx = 0.0
            sy = 0.0
            sv = 0.0
            for dy in range(2):
                yi = y0 + dy
                if yi < 0 or yi >= H:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                dwy = 1.0 if dy == 1 else -1.0
                for dx in range(2):
                    xi = x0 + dx
                    if xi < 0 or xi >= W:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    dwx = 1.0 if dx == 1 else -1.0
                    cw = wx * wy
                    dot = 0.0
                    for c in range(C):
                        gc = gout[n, c]
                        if need_map and a != 0.0:
                            gfm[g, yi, xi, c] += a * cw * gc
                        dot += gc * fm[g, yi, xi, c]
                    sv += cw * dot
                    sx += dot * dwx * wy
                    sy += dot * wx * dwy
            if need_wts:
                gw[n, k] = sv
            if need_coords:
                gx[n, k] = a * sx * ax
                gy[n, k] = a * sy * ay
    return gfm, gx, gy, gw
