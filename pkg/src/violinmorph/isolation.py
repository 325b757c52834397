"""Plate contour isolation.

From a roughly delineated plate mesh that still overhangs the ribs, build
the closed loop of mesh vertices delimiting the actual plate and extract
the inner mesh: seed extreme points on regular cross-sections, snap them
to mesh vertices, order them into a tour, join consecutive anchors with
shortest paths, then cut the loop out of the edge graph and keep the
component holding the plate's apex.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, DisconnectedError, FragmentationError
from .mesh import TriangleMesh, VertexMask, connected_components, shortest_path
from .slicing import extreme_points

__all__ = [
    "ClosedContour",
    "PlateMesh",
    "IsolationParams",
    "map_to_vertices",
    "order_loop",
    "close_contour",
    "isolate_plate",
    "rough_split",
    "save_plate",
    "load_plate",
]

ANCHOR = "nearest-neighbour"
INSERTED = "inserted-intermediate"


@dataclass(frozen=True)
class ClosedContour:
    """Cyclic loop of mesh vertex indices; consecutive entries share an edge.

    ``source`` records, per entry, whether it is a snapped extreme point
    (``nearest-neighbour``) or a shortest-path filler
    (``inserted-intermediate``). The first entry is NOT repeated at the
    end; the loop closes implicitly.
    """

    vertex_indices: tuple
    source: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.vertex_indices)
        src = tuple(self.source)
        if len(idx) < 3:
            raise ContractError("closed contour needs at least 3 vertices")
        if len(src) != len(idx):
            raise ContractError("provenance length mismatch")
        for a, b in zip(idx, idx[1:] + idx[:1]):
            if a == b:
                raise ContractError("contour has an immediate repetition")
        object.__setattr__(self, "vertex_indices", idx)
        object.__setattr__(self, "source", src)

    def __len__(self):
        return len(self.vertex_indices)

    def validate_against(self, mesh):
        """Check every consecutive pair (cyclically) shares a mesh edge."""
        edge_set = {tuple(e) for e in mesh.edges.tolist()}
        idx = self.vertex_indices
        for a, b in zip(idx, idx[1:] + idx[:1]):
            key = (a, b) if a < b else (b, a)
            if key not in edge_set:
                raise ContractError(f"contour vertices {a}, {b} are not adjacent")

    def remapped(self, remap):
        return ClosedContour(tuple(int(remap[i]) for i in self.vertex_indices), self.source)


@dataclass(frozen=True)
class PlateMesh:
    """Isolated plate: the inner mesh with its contour ring re-attached.

    ``orig_vertex_ids`` maps each plate-mesh vertex back to the input
    mesh; ``inner_ids`` lists the plate-mesh indices that are not on the
    contour.
    """

    mesh: TriangleMesh
    contour: ClosedContour
    side: str
    orig_vertex_ids: np.ndarray
    inner_ids: np.ndarray

    def __post_init__(self):
        if self.side not in ("sound_board", "back"):
            raise ContractError(f"side must be 'sound_board' or 'back', got {self.side!r}")
        for i in self.contour.vertex_indices:
            if not 0 <= i < self.mesh.n_vertices:
                raise ContractError("contour index out of range for plate mesh")
        comps = connected_components(self.mesh)
        if len(comps) != 1:
            raise ContractError(f"plate mesh has {len(comps)} components, expected 1")
        oid = np.asarray(self.orig_vertex_ids, dtype=np.int64)
        iid = np.asarray(self.inner_ids, dtype=np.int64)
        oid.flags.writeable = False
        iid.flags.writeable = False
        object.__setattr__(self, "orig_vertex_ids", oid)
        object.__setattr__(self, "inner_ids", iid)

    def contour_points(self):
        return self.mesh.vertices[list(self.contour.vertex_indices)]

    def transformed(self, rotation=None, translation=None, scale=None):
        return PlateMesh(
            self.mesh.transformed(rotation, translation, scale),
            self.contour,
            self.side,
            self.orig_vertex_ids,
            self.inner_ids,
        )


@dataclass(frozen=True)
class IsolationParams:
    """Knobs for :func:`isolate_plate`.

    ``section_axis`` is the horizontal axis the cutting planes march
    along (the long axis after PCA orientation). ``keep_interval`` and
    ``keep_count`` implement the exception region where more than two
    extreme points are retained per section (e.g. around a removed neck).
    ``tie_tol`` > 0 makes extreme-point selection prefer the chosen
    side's surface when both rims of a body reach equally far out.
    """

    section_axis: str = "x"
    spacing: float = 1.0
    keep_interval: tuple = None
    keep_count: int = 4
    exclude: VertexMask = None
    tie_tol: float = 0.0


def map_to_vertices(mesh, points):
    """Nearest mesh vertex for each query point, duplicates collapsed.

    Equidistant candidates resolve to the lowest vertex index; the first
    occurrence wins when several query points snap to one vertex.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tree = cKDTree(mesh.vertices)
    dist, idx = tree.query(pts, k=1, workers=-1)
    # exact-tie cleanup: take the lowest index within the winning distance
    for i in range(len(pts)):
        ball = tree.query_ball_point(pts[i], dist[i] * (1 + 1e-12) + 1e-300)
        if len(ball) > 1:
            idx[i] = min(ball)
    seen = set()
    out = []
    for v in idx:
        v = int(v)
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def _tour_length(dist, tour):
    return float(dist[tour, np.roll(tour, -1)].sum())


def order_loop(mesh, anchors):
    """Cyclic anchor order approximately minimizing the Euclidean tour.

    Nearest-neighbour construction from the lowest-index anchor, then
    best-improvement 2-opt until no move improves (or 10 n^2 move
    evaluations). Returned cycle starts at the lowest anchor index, with
    the direction fixed by comparing its two neighbours.
    """
    anchors = [int(a) for a in anchors]
    if len(set(anchors)) != len(anchors):
        raise ContractError("anchors contain duplicates")
    n = len(anchors)
    if n < 3:
        raise ContractError("need at least 3 anchors")
    pts = mesh.vertices[anchors]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    # greedy construction, ties to the lowest vertex index
    start = int(np.argmin(anchors))
    order = np.argsort(anchors, kind="stable")
    unvisited = set(range(n))
    unvisited.remove(start)
    tour = [start]
    while unvisited:
        here = tour[-1]
        cand = sorted(unvisited, key=lambda j: (dist[here, j], anchors[j]))
        tour.append(cand[0])
        unvisited.remove(cand[0])
    tour = np.asarray(tour)

    budget = 10 * n * n
    spent = 0
    while spent < budget:
        # delta[i, j] of reversing tour[i+1 .. j], vectorized over all pairs
        nxt = np.roll(tour, -1)
        a = pts[tour]
        b = pts[nxt]
        d_edge = dist[tour, nxt]
        i_idx, j_idx = np.triu_indices(n, k=1)
        keep = j_idx - i_idx < n - 1  # reversing the whole cycle is a no-op
        i_idx, j_idx = i_idx[keep], j_idx[keep]
        spent += len(i_idx)
        new1 = np.linalg.norm(a[i_idx] - a[j_idx], axis=1)
        new2 = np.linalg.norm(b[i_idx] - b[j_idx], axis=1)
        delta = new1 + new2 - d_edge[i_idx] - d_edge[j_idx]
        best = int(np.argmin(delta))
        if delta[best] >= -1e-12:
            break
        i, j = int(i_idx[best]), int(j_idx[best])
        tour[i + 1:j + 1] = tour[i + 1:j + 1][::-1]

    # canonical rotation and direction
    pos = int(np.argmin([anchors[t] for t in tour]))
    tour = np.roll(tour, -pos)
    if anchors[tour[1]] > anchors[tour[-1]]:
        tour = np.concatenate([tour[:1], tour[1:][::-1]])
    return [anchors[t] for t in tour]


def close_contour(mesh, ordered_anchors):
    """Join consecutive anchors (cyclically) with shortest paths.

    Immediate back-and-forth artefacts ``v, w, v`` left by path
    concatenation are collapsed; any vertex still appearing twice is
    reported as a warning, not an error.
    """
    anchors = [int(a) for a in ordered_anchors]
    if len(anchors) < 3:
        raise ContractError("need at least 3 anchors")
    loop = []
    src = []
    for a, b in zip(anchors, anchors[1:] + anchors[:1]):
        try:
            path = shortest_path(mesh, a, b)
        except DisconnectedError as exc:
            raise DisconnectedError(
                f"anchors {a} and {b} lie in different components"
            ) from exc
        loop.extend(path[:-1])
        src.extend([ANCHOR] + [INSERTED] * (len(path) - 2))

    changed = True
    while changed:
        changed = False
        n = len(loop)
        if n < 3:
            raise ContractError("contour collapsed during cleanup")
        for i in range(n):
            if loop[i] == loop[(i + 1) % n]:
                drop = [(i + 1) % n]
            elif loop[(i - 1) % n] == loop[(i + 1) % n]:
                drop = sorted(((i, (i + 1) % n)), reverse=True)
            else:
                continue
            for d in drop:
                loop.pop(d)
                src.pop(d)
            changed = True
            break

    dupes = {v for v in loop if loop.count(v) > 1}
    if dupes:
        warnings.warn(
            f"contour visits {len(dupes)} vertices more than once", stacklevel=2
        )
    contour = ClosedContour(tuple(loop), tuple(src))
    contour.validate_against(mesh)
    return contour


def isolate_plate(mesh, side, params=None):
    """Isolate the sound board or back from a roughly delineated mesh.

    The mesh must be PCA-oriented (long axis x, thin axis z). ``side``
    selects which surface the apex is sought on: +z for the sound board,
    -z for the back. Returns a :class:`PlateMesh` whose vertices index
    back into the input mesh via ``orig_vertex_ids``.

    Raises
    ------
    FragmentationError
        When cutting the contour out of the graph leaves the apex
        component with less than half of the remaining vertices (a failed
        contour), or the apex component is not the largest.
    """
    params = params or IsolationParams()
    if side not in ("sound_board", "back"):
        raise ContractError(f"side must be 'sound_board' or 'back', got {side!r}")

    work = mesh
    work_to_orig = np.arange(mesh.n_vertices)
    if params.exclude is not None and len(params.exclude):
        params.exclude.validate(mesh)
        keep = np.setdiff1d(np.arange(mesh.n_vertices), params.exclude.as_array())
        work, work_to_orig = mesh.submesh(keep)

    seeds = extreme_points(
        work,
        axis=params.section_axis,
        spacing=params.spacing,
        keep_interval=params.keep_interval,
        keep_count=params.keep_count,
        prefer_z="max" if side == "sound_board" else "min",
        tie_tol=params.tie_tol,
    )
    anchors = map_to_vertices(work, seeds)
    if len(anchors) < 3:
        raise ContractError("fewer than 3 distinct anchor vertices")
    ordered = order_loop(work, anchors)
    contour = close_contour(work, ordered)

    contour_ids = np.asarray(sorted(set(contour.vertex_indices)), dtype=np.int64)
    comps = connected_components(work, VertexMask(contour_ids))
    if not comps:
        raise FragmentationError("contour removal left no vertices")

    z = work.vertices[:, 2].copy()
    on_contour = np.zeros(work.n_vertices, dtype=bool)
    on_contour[contour_ids] = True
    z[on_contour] = -np.inf if side == "sound_board" else np.inf
    apex = int(np.argmax(z)) if side == "sound_board" else int(np.argmin(z))

    inner = None
    for comp in comps:
        if apex in comp:
            inner = comp
            break
    remaining = work.n_vertices - len(contour_ids)
    if inner is None or len(inner) < len(comps[0]):
        raise FragmentationError("apex component is not the largest after the cut")
    if len(inner) * 2 < remaining:
        raise FragmentationError(
            f"largest component holds {len(inner)}/{remaining} vertices (< 50%)"
        )

    keep = np.union1d(inner, contour_ids)
    plate, kept_ids = work.submesh(keep)
    remap = np.full(work.n_vertices, -1, dtype=np.int64)
    remap[kept_ids] = np.arange(len(kept_ids))
    new_contour = contour.remapped(remap)
    new_contour.validate_against(plate)
    inner_new = remap[inner]
    return PlateMesh(
        mesh=plate,
        contour=new_contour,
        side=side,
        orig_vertex_ids=work_to_orig[kept_ids],
        inner_ids=np.sort(inner_new),
    )


def save_plate(plate, mesh_path, contour_path, format="ply-binary-le"):
    """Persist a plate as a mesh file plus a contour index file.

    The contour file is mask-format (one index per line) with the
    provenance recorded as a trailing comment.
    """
    from .fileio import save_mesh

    save_mesh(plate.mesh, mesh_path, format)
    with open(contour_path, "w", newline="\n") as fh:
        fh.write(f"# side={plate.side}\n")
        for idx, src in zip(plate.contour.vertex_indices, plate.contour.source):
            fh.write(f"{idx} # {src}\n")


def load_plate(mesh_path, contour_path, side=None):
    """Rebuild a PlateMesh from the files written by :func:`save_plate`."""
    from .fileio import load_mesh

    mesh = load_mesh(mesh_path)
    indices = []
    sources = []
    with open(contour_path) as fh:
        for line in fh:
            body, _, comment = line.partition("#")
            body = body.strip()
            comment = comment.strip()
            if not body:
                if comment.startswith("side=") and side is None:
                    side = comment[5:]
                continue
            indices.append(int(body))
            sources.append(comment if comment else ANCHOR)
    if side is None:
        raise ContractError(f"plate side missing from {contour_path} and not provided")
    contour = ClosedContour(tuple(indices), tuple(sources))
    contour.validate_against(mesh)
    inner = np.setdiff1d(np.arange(mesh.n_vertices),
                         np.asarray(contour.vertex_indices, dtype=np.int64))
    return PlateMesh(
        mesh=mesh,
        contour=contour,
        side=side,
        orig_vertex_ids=np.arange(mesh.n_vertices),
        inner_ids=inner,
    )


def rough_split(body, side, margin=0.2):
    """Rough one-side mesh from a whole oriented body.

    Keeps the vertices of the chosen half plus a generous band of the
    ribs (``margin`` of the z-extent past the middle), then the largest
    connected component: the manual rough delineation step, automated
    just enough for :func:`isolate_plate` to take over. Returns the rough
    mesh and its vertex map into the body.
    """
    if side not in ("sound_board", "back"):
        raise ContractError(f"side must be 'sound_board' or 'back', got {side!r}")
    z = body.vertices[:, 2]
    z0, z1 = float(z.min()), float(z.max())
    cut = z0 + (0.5 - margin) * (z1 - z0)
    if side == "back":
        cut = z0 + (0.5 + margin) * (z1 - z0)
    keep = z >= cut if side == "sound_board" else z <= cut
    half, half_to_body = body.submesh(np.flatnonzero(keep))
    comps = connected_components(half)
    if not comps:
        raise ContractError("rough split removed every vertex")
    rough, ids = half.submesh(comps[0])
    return rough, half_to_body[ids]
