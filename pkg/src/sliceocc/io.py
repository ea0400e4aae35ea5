"""Voxel grid files, checkpoints.

Grid file layout (little-endian)::

    offset  size  field
    0       4     magic b"SOCC"
    4       2     u16 version (= 1)
    6       12    u32 X, u32 Y, u32 Z (lattice dims along x, y, z)
    18      X*Y*Z u8 class index per voxel, x-major / y-middle / z-minor

The header is 18 bytes.  Class count, class names, metric bounds and the run
configuration live in a JSON sidecar next to the grid (``<path>.json``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .occupancy_head import VoxelGrid

MAGIC = b"SOCC"
VERSION = 1
_HEADER = struct.Struct("<4sH3I")
HEADER_SIZE = _HEADER.size  # 18


class GridFormatError(ValueError):
    """Malformed grid file; ``section`` names the part that failed."""

    def __init__(self, section: str, message: str):
        self.section = section
        super().__init__(f"{section}: {message}")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_grid(grid: VoxelGrid) -> bytes:
    if grid.C > 255:
        raise GridFormatError("header", f"{grid.C} classes exceed the u8 format limit of 255")
    labels = grid.labels()
    if labels.ndim != 3:
        raise GridFormatError("payload", f"expected a 3-D label grid, got shape {labels.shape}")
    X, Y, Z = labels.shape
    return _HEADER.pack(MAGIC, VERSION, X, Y, Z) + labels.astype(np.uint8).tobytes(order="C")


def decode_grid(buf: bytes, class_names: list[str] | None = None) -> VoxelGrid:
    if len(buf) < 4:
        raise GridFormatError("magic", f"file has {len(buf)} bytes, magic needs 4")
    if buf[:4] != MAGIC:
        raise GridFormatError("magic", f"expected {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < 6:
        raise GridFormatError("version", "truncated before version field")
    if len(buf) < HEADER_SIZE:
        raise GridFormatError("dims", f"truncated header ({len(buf)} of {HEADER_SIZE} bytes)")
    _, version, X, Y, Z = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise GridFormatError("version", f"unsupported version {version}")
    n = X * Y * Z
    payload = buf[HEADER_SIZE:]
    if len(payload) < n:
        raise GridFormatError("payload", f"expected {n} bytes, found {len(payload)}")
    if len(payload) > n:
        raise GridFormatError("payload", f"{len(payload) - n} trailing bytes")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(X, Y, Z).astype(np.int64)
    if class_names is None:
        C = int(labels.max()) + 1 if labels.size else 1
        class_names = ["empty"] + [f"class_{k}" for k in range(1, max(C, 2))]
    return VoxelGrid(labels, list(class_names))


def export_grid(grid: VoxelGrid, path, bounds: dict | None = None,
                run_config: dict | None = None) -> Path:
    """Write the binary grid and its JSON sidecar; returns the grid path."""
    path = Path(path)
    data = encode_grid(grid)
    path.write_bytes(data)
    meta = {
        "format": "SOCC",
        "version": VERSION,
        "dims": list(grid.dims),
        "num_classes": grid.C,
        "class_names": list(grid.class_names),
        "bounds": bounds or {},
        "run_config": run_config or {},
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_grid(path) -> VoxelGrid:
    """Read a grid file, taking class names from the sidecar when present."""
    path = Path(path)
    names = None
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        names = meta.get("class_names")
    grid = decode_grid(path.read_bytes(), names)
    return grid


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def save_checkpoint(path, state: dict[str, np.ndarray], run_config: dict) -> Path:
    """All parameters as named float64 arrays plus the run config (as JSON text)."""
    path = Path(path)
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in state.items()}
    arrays["run_config"] = np.array(json.dumps(run_config, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        state = {k[len("param/"):]: data[k].astype(np.float64) for k in data.files
                 if k.startswith("param/")}
        run_config = json.loads(str(data["run_config"]))
    return state, run_config
