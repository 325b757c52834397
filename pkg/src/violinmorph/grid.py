"""Regular horizontal height grids sampled by vertical intersection.

Each node of a 1 mm x 1 mm (by default) lattice carries the z of the
mesh face a vertical line through the node hits; nodes that miss the mesh
are invalid. Grid differences give a vertex-placement-insensitive check
of simplification fidelity, and the same grids feed the symmetry offset
and the asymmetry field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GridMismatchError

__all__ = [
    "HeightGrid",
    "interpolate_grid",
    "grid_difference_stats",
    "joint_grid_domain",
    "save_height_grid",
    "load_height_grid",
]


@dataclass(frozen=True)
class HeightGrid:
    """Heights on a regular horizontal lattice.

    ``values[i, j]`` is the height at ``(origin[0] + i * spacing,
    origin[1] + j * spacing)``; NaN marks invalid nodes.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(2)
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError("grid values must be 2-D")
        if not self.spacing > 0:
            raise ContractError("grid spacing must be positive")
        if np.isinf(v).any():
            raise ContractError("grid values contain infinities")
        o.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", v)

    @property
    def valid(self):
        return ~np.isnan(self.values)

    @property
    def shape(self):
        return self.values.shape

    def node_xy(self):
        """Node coordinates as two arrays shaped like ``values``."""
        nx, ny = self.values.shape
        xs = self.origin[0] + self.spacing * np.arange(nx)
        ys = self.origin[1] + self.spacing * np.arange(ny)
        return np.meshgrid(xs, ys, indexing="ij")

    def compatible_with(self, other):
        return (
            self.shape == other.shape
            and abs(self.spacing - other.spacing) <= 1e-12
            and np.all(np.abs(self.origin - other.origin) <= 1e-9)
        )


def joint_grid_domain(meshes, spacing=1.0):
    """Lattice origin and shape covering the xy-footprint of all meshes."""
    lo = np.min([m.vertices[:, :2].min(axis=0) for m in meshes], axis=0)
    hi = np.max([m.vertices[:, :2].max(axis=0) for m in meshes], axis=0)
    origin = np.ceil(lo / spacing) * spacing
    shape = tuple(int(math.floor((hi[k] - origin[k]) / spacing)) + 1 for k in (0, 1))
    if shape[0] < 1 or shape[1] < 1:
        raise ContractError("mesh footprint smaller than one grid cell")
    return origin, shape


def interpolate_grid(mesh, spacing=1.0, side="upper", origin=None, shape=None):
    """Vertically interpolated heights of an oriented mesh.

    For every lattice node, a vertical line is intersected with the mesh
    and the z of the hit face's plane at (x, y) is stored. When several
    faces are hit (overhangs near curled edges), the largest z wins for
    ``side="upper"`` and the smallest for ``side="lower"``. Faces seen
    edge-on (vertical) carry no height and are ignored.

    ``origin``/``shape`` override the default lattice (snapped to spacing
    multiples over the mesh footprint), e.g. to share one lattice between
    two plates.
    """
    if side not in ("upper", "lower"):
        raise ContractError(f"side must be 'upper' or 'lower', got {side!r}")
    if origin is None or shape is None:
        d_origin, d_shape = joint_grid_domain([mesh], spacing)
        origin = d_origin if origin is None else np.asarray(origin, dtype=np.float64)
        shape = d_shape if shape is None else tuple(shape)
    else:
        origin = np.asarray(origin, dtype=np.float64)
        shape = tuple(shape)
    nx, ny = shape

    values = np.full((nx, ny), -np.inf if side == "upper" else np.inf)
    take = np.maximum if side == "upper" else np.minimum

    v = mesh.vertices
    for tri in mesh.faces:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        n = np.cross(b - a, c - a)
        if abs(n[2]) < 1e-12 * np.linalg.norm(n):
            continue  # vertical or degenerate face
        lox, loy = np.minimum(np.minimum(a[:2], b[:2]), c[:2])
        hix, hiy = np.maximum(np.maximum(a[:2], b[:2]), c[:2])
        i0 = max(0, math.ceil((lox - origin[0]) / spacing - 1e-12))
        i1 = min(nx - 1, math.floor((hix - origin[0]) / spacing + 1e-12))
        j0 = max(0, math.ceil((loy - origin[1]) / spacing - 1e-12))
        j1 = min(ny - 1, math.floor((hiy - origin[1]) / spacing + 1e-12))
        if i0 > i1 or j0 > j1:
            continue
        xs = origin[0] + spacing * np.arange(i0, i1 + 1)
        ys = origin[1] + spacing * np.arange(j0, j1 + 1)
        px, py = np.meshgrid(xs, ys, indexing="ij")
        # 2-D barycentric membership in the projected triangle
        d00 = b[:2] - a[:2]
        d01 = c[:2] - a[:2]
        denom = d00[0] * d01[1] - d00[1] * d01[0]
        if abs(denom) < 1e-30:
            continue
        qx = px - a[0]
        qy = py - a[1]
        w1 = (qx * d01[1] - qy * d01[0]) / denom
        w2 = (qy * d00[0] - qx * d00[1]) / denom
        inside = (w1 >= -1e-12) & (w2 >= -1e-12) & (w1 + w2 <= 1 + 1e-12)
        if not inside.any():
            continue
        z = a[2] + ((a[0] - px) * n[0] + (a[1] - py) * n[1]) / n[2]
        block = values[i0:i1 + 1, j0:j1 + 1]
        block[inside] = take(block[inside], z[inside])
        values[i0:i1 + 1, j0:j1 + 1] = block

    values[~np.isfinite(values)] = np.nan
    return HeightGrid(origin, spacing, values)


def grid_difference_stats(a, b):
    """Statistics of |dz| over the nodes valid in both grids.

    Returns a dict with max, mean, median, stddev (population) and the
    number of compared cells. Symmetric in (a, b).
    """
    if not a.compatible_with(b):
        raise GridMismatchError(
            f"grids differ: origin {a.origin.tolist()} vs {b.origin.tolist()}, "
            f"spacing {a.spacing} vs {b.spacing}, shape {a.shape} vs {b.shape}"
        )
    joint = a.valid & b.valid
    count = int(joint.sum())
    if count == 0:
        return {"max": math.nan, "mean": math.nan, "median": math.nan,
                "stddev": math.nan, "count": 0}
    dz = np.abs(a.values[joint] - b.values[joint])
    return {
        "max": float(dz.max()),
        "mean": float(dz.mean()),
        "median": float(np.median(dz)),
        "stddev": float(dz.std()),
        "count": count,
    }


def save_height_grid(grid, csv_path, header_path=None):
    """CSV matrix (rows = x index, NaN sentinels) plus a JSON header."""
    np.savetxt(csv_path, grid.values, delimiter=",", fmt="%.9g")
    if header_path is not None:
        with open(header_path, "w") as fh:
            json.dump(
                {
                    "origin_mm": grid.origin.tolist(),
                    "spacing_mm": grid.spacing,
                    "shape": list(grid.shape),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")


def load_height_grid(csv_path, header_path):
    with open(header_path) as fh:
        header = json.load(fh)
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    return HeightGrid(header["origin_mm"], header["spacing_mm"], values)
