"""Terrain raster file IO and synthetic terrain generation.

File format (little-endian, bit-exact):

====== ======= ===========================
offset type    field
====== ======= ===========================
0      8 bytes magic ``EPMFTER1``
8      u32     n_rows
12     u32     n_cols
16     f64     origin_x
24     f64     origin_y
32     f64     cell_x
40     f64     cell_y
48     f32[]   altitudes, row-major, n_rows * n_cols values
====== ======= ===========================
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import TerrainFormatError
from .models import TerrainMap

__all__ = ["TERRAIN_MAGIC", "load_terrain", "write_terrain", "synthesize_terrain"]

TERRAIN_MAGIC = b"EPMFTER1"
_HEADER = struct.Struct("<IIdddd")
_PAYLOAD_OFFSET = 8 + _HEADER.size


def write_terrain(path, tmap):
    """Serialize a terrain map; altitudes are stored as float32."""
    alt = np.ascontiguousarray(tmap.altitudes, dtype="<f4")
    header = _HEADER.pack(
        alt.shape[0],
        alt.shape[1],
        float(tmap.origin[0]),
        float(tmap.origin[1]),
        float(tmap.cell_size[0]),
        float(tmap.cell_size[1]),
    )
    Path(path).write_bytes(TERRAIN_MAGIC + header + alt.tobytes(order="C"))


def load_terrain(path):
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:8] != TERRAIN_MAGIC:
        raise TerrainFormatError(
            f"bad magic: expected {TERRAIN_MAGIC!r}, got {data[:8]!r}", offset=0
        )
    if len(data) < _PAYLOAD_OFFSET:
        raise TerrainFormatError(
            f"truncated header: need {_PAYLOAD_OFFSET} bytes, file has {len(data)}",
            offset=len(data),
        )
    n_rows, n_cols, ox, oy, cx, cy = _HEADER.unpack_from(data, 8)
    if n_rows < 2 or n_cols < 2:
        raise TerrainFormatError(
            f"field n_rows/n_cols invalid: {n_rows}x{n_cols} (need at least 2x2)",
            offset=8,
        )
    if cx <= 0 or cy <= 0:
        raise TerrainFormatError(f"field cell_x/cell_y invalid: {cx}, {cy}", offset=32)
    expected = _PAYLOAD_OFFSET + 4 * n_rows * n_cols
    if len(data) != expected:
        raise TerrainFormatError(
            f"payload size mismatch: expected {expected} bytes, got {len(data)}",
            offset=min(len(data), _PAYLOAD_OFFSET),
        )
    alt = np.frombuffer(data, dtype="<f4", count=n_rows * n_cols, offset=_PAYLOAD_OFFSET)
    alt = alt.reshape(n_rows, n_cols).astype(float)
    if not np.all(np.isfinite(alt)):
        raise TerrainFormatError("non-finite altitude values", offset=_PAYLOAD_OFFSET)
    return TerrainMap((ox, oy), (cx, cy), alt)


def _smooth_lattice_octave(rng, shape, features):
    """Value noise: uniform lattice values blended with smoothstep weights."""
    lattice = rng.uniform(-1.0, 1.0, (features + 1, features + 1))
    fx = np.linspace(0.0, features, shape[0])[:, None]
    fy = np.linspace(0.0, features, shape[1])[None, :]
    ix = np.minimum(fx.astype(int), features - 1)
    iy = np.minimum(fy.astype(int), features - 1)
    tx = fx - ix
    ty = fy - iy
    sx = tx * tx * (3.0 - 2.0 * tx)
    sy = ty * ty * (3.0 - 2.0 * ty)
    v00 = lattice[ix, iy]
    v10 = lattice[ix + 1, iy]
    v01 = lattice[ix, iy + 1]
    v11 = lattice[ix + 1, iy + 1]
    return (1 - sx) * (1 - sy) * v00 + sx * (1 - sy) * v10 + (1 - sx) * sy * v01 + sx * sy * v11


def synthesize_terrain(
    seed,
    n_rows,
    n_cols,
    cell_size,
    roughness=1.0,
    amplitude=100.0,
    octaves=3,
    base_features=6,
    origin=(0.0, 0.0),
):
    """Deterministic smooth value-noise terrain.

    Heights are bounded by ``amplitude * roughness``; ``roughness`` of zero
    gives a constant (flat) map.  The same seed always yields the same map.
    """
    if n_rows < 2 or n_cols < 2:
        raise ValueError("terrain needs at least 2x2 nodes")
    cell = np.broadcast_to(np.asarray(cell_size, dtype=float), (2,))
    field = np.zeros((n_rows, n_cols))
    if roughness > 0.0:
        rng = np.random.default_rng(seed)
        total = 0.0
        amp = 1.0
        for octave in range(octaves):
            features = base_features * 2**octave
            field += amp * _smooth_lattice_octave(rng, (n_rows, n_cols), features)
            total += amp
            amp *= 0.5
        field *= amplitude * roughness / total
    return TerrainMap(origin, cell, field)
