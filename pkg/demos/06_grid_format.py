"""Write a voxel grid to the binary .socc format and read it back.

Run: python demos/06_grid_format.py
"""
import json
import tempfile
from pathlib import Path

import numpy as np

from sliceocc.io import GridFormatError, decode_grid, export_grid, load_grid
from sliceocc.occupancy_head import VoxelGrid, default_class_names

grid = VoxelGrid(np.random.default_rng(0).integers(0, 82, (40, 40, 16)), default_class_names(82))
with tempfile.TemporaryDirectory() as tmp:
    path = export_grid(grid, Path(tmp) / "scene.socc", bounds={"z_range": [-1.28, 1.28]})
    data = path.read_bytes()
    print(f"{path.name}: {len(data)} bytes, header {data[:18].hex(' ')}")
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    print("sidecar keys:", sorted(sidecar), "first classes:", sidecar["class_names"][:3])
    back = load_grid(path)
    print("round trip identical:", np.array_equal(back.labels(), grid.labels()))
    try:
        decode_grid(data[:12])
    except GridFormatError as err:
        print("truncated file ->", err)
