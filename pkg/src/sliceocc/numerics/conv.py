"""Stride-1 'same' convolutions (2-D and 3-D) via im2col."""
from __future__ import annotations

import itertools

import numpy as np

from .tensor import NumericsError, Tensor, as_tensor, make


def _conv_same(x: Tensor, weight: Tensor, bias: Tensor | None, nd: int) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != nd + 1 or weight.ndim != nd + 2:
        raise NumericsError(f"conv{nd}d", "bad operand ranks",
                            expected=f"x rank {nd + 1}, weight rank {nd + 2}",
                            got=(x.shape, weight.shape))
    cout, cin = weight.shape[:2]
    ks = weight.shape[2:]
    if cin != x.shape[0]:
        raise NumericsError(f"conv{nd}d", "channel mismatch", expected=cin, got=x.shape[0])
    if any(k % 2 == 0 for k in ks):
        raise NumericsError(f"conv{nd}d", "kernel sizes must be odd", got=ks)
    spatial = x.shape[1:]
    n = int(np.prod(spatial))
    pads = [k // 2 for k in ks]
    xp = np.pad(x.data, [(0, 0)] + [(p, p) for p in pads])
    offsets = list(itertools.product(*[range(k) for k in ks]))
    nk = len(offsets)

    def window(o):
        return (slice(None),) + tuple(slice(a, a + s) for a, s in zip(o, spatial))

    # cols[c, k, ...] = xp shifted by kernel offset k; rows ordered like weight.reshape(cout, -1)
    cols = np.empty((cin, nk) + spatial)
    for k, o in enumerate(offsets):
        cols[:, k] = xp[window(o)]
    cols = cols.reshape(cin * nk, n)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape((cout,) + spatial)

    def bw(g):
        gm = g.reshape(cout, n)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape((cin, nk) + spatial)
            gxp = np.zeros(xp.shape)
            for k, o in enumerate(offsets):
                gxp[window(o)] += gcols[:, k]
            gx = gxp[(slice(None),) + tuple(slice(p, p + s) for p, s in zip(pads, spatial))]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, bw, f"conv{nd}d")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[Cin, X, Y, Z]`` * ``weight[Cout, Cin, k, k, k]`` with zero 'same' padding."""
    return _conv_same(x, weight, bias, 3)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[Cin, H, W]`` * ``weight[Cout, Cin, k, k]`` with zero 'same' padding."""
    return _conv_same(x, weight, bias, 2)
