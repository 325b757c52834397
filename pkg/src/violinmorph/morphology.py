"""Shape features measured against the symmetry frame.

Three diagnostics: horizontal contour lines of each plate, the signed
vertical asymmetry between sound board and back on their joint grid, and
the channel of minima, the concave groove running near a plate's outer
contour whose trace relative to the contour flags historical re-cutting.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, splev, splprep

from .errors import ContractError, GridMismatchError
from .grid import HeightGrid, save_height_grid
from .slicing import SectionPlane, cross_section, export_polylines_csv

__all__ = [
    "ContourLineSet",
    "AsymmetryField",
    "ChannelTrace",
    "ChannelParams",
    "contour_lines",
    "asymmetry_field",
    "channel_of_minima",
]


@dataclass(frozen=True)
class ContourLineSet:
    """Per-level section polylines of one plate.

    Sound-board levels are positive (continuous-line convention), back
    levels negative (dashed). ``levels`` is strictly increasing and
    matches ``polylines`` one-to-one.
    """

    levels: tuple
    polylines: tuple  # tuple of lists of SectionPolyline
    spacing: float
    base_level: float
    side: str

    def __post_init__(self):
        if len(self.levels) != len(self.polylines):
            raise ContractError("levels and polylines length mismatch")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ContractError("levels must be strictly increasing")

    def __len__(self):
        return len(self.levels)


def contour_lines(plate, frame=None, spacing=2.0, max_range=24.0, base=None):
    """Horizontal sections of a plate every ``spacing`` mm.

    The plate must sit in the symmetry frame (pass ``frame`` to apply it
    here). Levels run away from the symmetry plane: upward for the sound
    board, downward for the back, starting at the lattice level closest
    to the plane (or the explicit ``base``) and covering at most
    ``max_range`` mm.
    """
    if spacing <= 0:
        raise ContractError("level spacing must be positive")
    if frame is not None:
        plate = frame.apply_plate(plate)
    mesh = plate.mesh
    z_lo = float(mesh.vertices[:, 2].min())
    z_hi = float(mesh.vertices[:, 2].max())

    if plate.side == "sound_board":
        if base is None:
            base = spacing * np.ceil(z_lo / spacing)
        stop = min(z_hi, base + max_range)
        levels = np.arange(base, stop + spacing * 1e-9, spacing)
        levels = levels[(levels > z_lo) & (levels < z_hi)]
    else:
        if base is None:
            base = spacing * np.floor(z_hi / spacing)
        stop = max(z_lo, base - max_range)
        levels = np.arange(base, stop - spacing * 1e-9, -spacing)
        levels = levels[(levels > z_lo) & (levels < z_hi)][::-1]

    kept_levels = []
    kept_polys = []
    for level in levels:
        polys = cross_section(mesh, SectionPlane.orthogonal_to("z", float(level)))
        if polys:
            kept_levels.append(float(level))
            kept_polys.append(polys)
    if not kept_levels:
        warnings.warn(
            f"plate spans less than one level spacing ({spacing} mm), no contour lines",
            stacklevel=2,
        )
    return ContourLineSet(
        levels=tuple(kept_levels),
        polylines=tuple(kept_polys),
        spacing=float(spacing),
        base_level=float(base),
        side=plate.side,
    )


@dataclass(frozen=True)
class AsymmetryField:
    """Signed vertical asymmetry on the joint plate grid.

    Positive values mean the sound board sits further from the symmetry
    plane than the back. ``histogram`` bins the absolute values with a
    0.25 mm pitch.
    """

    grid: HeightGrid
    stats: dict
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    excluded_nodes: int = 0


def asymmetry_field(sound_board_grid, back_grid, z_bar, bin_width=0.25):
    """Per-node difference of the two plates' distances from the plane.

    At each node valid in both grids and satisfying the sign assumption
    (sound board above ``z_bar``, back below), the asymmetry is
    ``(sb - z_bar) - |b - z_bar|``, identically ``2 (midpoint - z_bar)``.
    Nodes violating the assumption are excluded with a warning.
    """
    if not sound_board_grid.compatible_with(back_grid):
        raise GridMismatchError("sound-board and back grids do not share a lattice")
    sb = sound_board_grid.values
    bk = back_grid.values
    joint = sound_board_grid.valid & back_grid.valid
    bad = joint & ~((sb > z_bar) & (bk < z_bar))
    n_bad = int(bad.sum())
    if n_bad:
        warnings.warn(
            f"{n_bad} nodes violate the sign assumption "
            "(plate on the wrong side of the symmetry plane); excluded",
            stacklevel=2,
        )
    ok = joint & ~bad
    values = np.full(sb.shape, np.nan)
    values[ok] = (sb[ok] - z_bar) - np.abs(bk[ok] - z_bar)
    a = values[ok]
    if a.size:
        stats = {
            "count": int(a.size),
            "mean": float(a.mean()),
            "min": float(a.min()),
            "max": float(a.max()),
            "mean_abs": float(np.abs(a).mean()),
            "max_abs": float(np.abs(a).max()),
            "stddev": float(a.std()),
        }
        top = max(np.abs(a).max(), bin_width)
        edges = np.arange(0.0, top + bin_width, bin_width)
        counts, edges = np.histogram(np.abs(a), bins=edges)
    else:
        stats = {"count": 0}
        edges = np.array([0.0, bin_width])
        counts = np.array([0])
    return AsymmetryField(
        grid=HeightGrid(sound_board_grid.origin, sound_board_grid.spacing, values),
        stats=stats,
        histogram_edges=edges,
        histogram_counts=counts,
        excluded_nodes=n_bad,
    )


@dataclass(frozen=True)
class ChannelParams:
    """Channel search knobs.

    ``window_mm`` bounds the inward search from the contour tangent
    point; stations whose minimum lands at either window boundary count
    toward the no-channel verdict. ``smoothing_rms_mm`` caps the rms
    deviation of the smoothed trace from the raw minima.
    """

    window_mm: float = 15.0
    stations: int = 400
    smoothing_rms_mm: float = 0.5


@dataclass(frozen=True)
class ChannelTrace:
    """Raw channel minima and their smoothed spline approximation."""

    points: np.ndarray           # raw minima, one per detected station
    arc_lengths: np.ndarray      # station position along the contour spline
    inward_offsets: np.ndarray   # distance from the tangent point, in [0, w]
    smoothed_points: np.ndarray
    contour_points: np.ndarray   # tangent points of the detected stations
    no_channel: bool
    stations_total: int
    stations_skipped: int

    def __post_init__(self):
        for name in ("points", "arc_lengths", "inward_offsets",
                     "smoothed_points", "contour_points"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def _periodic_spline(points):
    """Chord-length periodic cubic spline through a closed 3D polygon."""
    pts = np.asarray(points, dtype=np.float64)
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    pts = pts[keep]
    if len(pts) < 4:
        raise ContractError("contour too short for a cubic spline")
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    t = np.concatenate([[0.0], np.cumsum(seg)])
    return CubicSpline(t, closed, axis=0, bc_type="periodic"), t[-1]


def channel_of_minima(plate, frame=None, params=None):
    """Trace the groove of extremal height running near the plate contour.

    At ``params.stations`` equally spaced arc-length stations of the
    contour spline, a vertical section perpendicular to the contour
    tangent is cut and searched inward over ``params.window_mm`` for the
    lowest point (highest for the back). A station is skipped, with a
    warning, when its section is empty. The trace is declared
    ``no_channel`` when more than half of the minima sit at the search
    window's boundary (nothing concave to find).
    """
    params = params or ChannelParams()
    if params.window_mm <= 0 or params.stations < 8:
        raise ContractError("window must be positive and stations >= 8")
    if frame is not None:
        plate = frame.apply_plate(plate)
    mesh = plate.mesh
    spline, total_len = _periodic_spline(plate.contour_points())
    centroid_xy = mesh.vertices[:, :2].mean(axis=0)
    mean_edge = float(mesh.edge_lengths.mean())
    edge_tol = max(mean_edge, 0.05 * params.window_mm)
    pick = np.argmin if plate.side == "sound_board" else np.argmax

    # equal arc-length stations via dense resampling of the spline
    dense_t = np.linspace(0.0, total_len, 10 * params.stations + 1)
    dense = spline(dense_t)
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    arc_total = float(arc[-1])
    targets = np.linspace(0.0, arc_total, params.stations, endpoint=False)
    station_t = np.interp(targets, arc, dense_t)

    minima = []
    arcs = []
    offsets = []
    tangents_pts = []
    skipped = 0
    at_edge = 0
    for s_arc, t in zip(targets, station_t):
        c = spline(t)
        deriv = spline(t, 1)
        tau = deriv[:2]
        norm = np.linalg.norm(tau)
        if norm < 1e-12:
            skipped += 1
            continue
        tau = tau / norm
        inward = np.array([-tau[1], tau[0]])
        if inward @ (centroid_xy - c[:2]) < 0:
            inward = -inward
        plane = SectionPlane((tau[0], tau[1], 0.0), float(tau @ c[:2]))
        polys = cross_section(mesh, plane)
        if not polys:
            skipped += 1
            warnings.warn(f"empty channel section at arc length {s_arc:.1f}", stacklevel=2)
            continue
        pts = np.concatenate([p.points for p in polys], axis=0)
        s = (pts[:, :2] - c[:2]) @ inward
        window = (s >= 0.0) & (s <= params.window_mm)
        if not window.any():
            skipped += 1
            warnings.warn(
                f"no interior points in window at arc length {s_arc:.1f}", stacklevel=2
            )
            continue
        cand = pts[window]
        cand_s = s[window]
        best = int(pick(cand[:, 2]))
        minima.append(cand[best])
        arcs.append(s_arc)
        offsets.append(float(cand_s[best]))
        tangents_pts.append(c)
        if cand_s[best] < edge_tol or cand_s[best] > params.window_mm - edge_tol:
            at_edge += 1

    if len(minima) < 4:
        raise ContractError(
            f"only {len(minima)} channel stations detected out of {params.stations}"
        )
    minima = np.asarray(minima)
    no_channel = at_edge * 2 > len(minima)

    smooth_cap = len(minima) * params.smoothing_rms_mm ** 2
    closed = np.vstack([minima, minima[:1]])
    u = np.asarray(arcs + [arc_total])
    u = (u - u[0]) / (u[-1] - u[0])
    tck, _ = splprep(closed.T, u=u, s=smooth_cap, per=1)
    smoothed = np.asarray(splev(u[:-1], tck)).T

    return ChannelTrace(
        points=minima,
        arc_lengths=np.asarray(arcs),
        inward_offsets=np.asarray(offsets),
        smoothed_points=smoothed,
        contour_points=np.asarray(tangents_pts),
        no_channel=bool(no_channel),
        stations_total=params.stations,
        stations_skipped=skipped,
    )


# ---------------------------------------------------------------------------
# artifact export

def save_contour_lines(lineset, out_dir, stem):
    """Layered CSVs (one per level) plus a JSON index mapping level to file."""
    index = {"side": lineset.side, "spacing_mm": lineset.spacing,
             "base_level_mm": lineset.base_level, "levels": []}
    for level, polys in zip(lineset.levels, lineset.polylines):
        fname = f"{stem}_level_{level:+.3f}.csv".replace("+", "p").replace("-", "m")
        export_polylines_csv(polys, out_dir / fname)
        index["levels"].append({"level_mm": level, "file": fname})
    with open(out_dir / f"{stem}_index.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_asymmetry(field, out_dir, stem):
    save_height_grid(field.grid, out_dir / f"{stem}_grid.csv",
                     out_dir / f"{stem}_grid.json")
    with open(out_dir / f"{stem}_stats.json", "w") as fh:
        json.dump({"stats_mm": field.stats, "excluded_nodes": field.excluded_nodes},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / f"{stem}_histogram.csv", "w", newline="\n") as fh:
        fh.write("bin_lo_mm,bin_hi_mm,count\n")
        for lo, hi, n in zip(field.histogram_edges[:-1], field.histogram_edges[1:],
                             field.histogram_counts):
            fh.write(f"{lo:.9g},{hi:.9g},{int(n)}\n")


def save_channel(trace, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("arc_length_mm,x,y,z,smoothed_x,smoothed_y,smoothed_z,inward_offset_mm\n")
        for arc, p, q, off in zip(trace.arc_lengths, trace.points,
                                  trace.smoothed_points, trace.inward_offsets):
            fh.write(
                f"{arc:.9g},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
                f"{q[0]:.9g},{q[1]:.9g},{q[2]:.9g},{off:.9g}\n"
            )
