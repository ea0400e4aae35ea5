"""Deformable attention starts out as a plain lookup at the reference point.

Offsets are initialised to zero, so before training each query reads the
value map exactly where its reference point lands.

Run: python demos/03_deformable_attention.py
"""
import numpy as np

from sliceocc.numerics import Rng, Tensor
from sliceocc.slice_attention import DeformAttnParams, deformable_attention

rng = Rng(0)
D, H, W = 4, 3, 5
params = DeformAttnParams(D, heads=2, points=4, levels=1, rng=rng)
# identity value and output projections make the read-out easy to check
for lin in (params.value, params.output):
    lin.weight.data = np.eye(D)
    lin.bias.data = np.zeros(D)

value_map = rng.normal(size=(D, H, W))
refs = np.array([[[(2 + 0.5) / W, (1 + 0.5) / H]]])  # centre of texel (x=2, y=1)
out = deformable_attention(Tensor(rng.normal(size=(1, D))), refs, Tensor(value_map), params)
print("attention output:", np.round(out.data[0], 6))
print("texel value:     ", np.round(value_map[:, 1, 2], 6))

# Nudging the offset projection bias moves every sample half a texel to the right.
params.offset.bias.data[0::2] = 0.5
shifted = deformable_attention(Tensor(np.zeros((1, D))), refs, Tensor(value_map), params)
print("half-texel shift:", np.round(shifted.data[0], 6))
print("mean of texels:  ", np.round(value_map[:, 1, 2:4].mean(axis=1), 6))
