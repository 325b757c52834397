"""Mesh and mask file I/O.

Supported carriers: PLY (ascii and binary little-endian; ``vertex`` element
with x/y/z floating-point properties, ``face`` element with a
``vertex_indices`` list) and Wavefront OBJ (``v``/``f`` records only).
Vertex masks are plain text, one decimal index per line, ``#`` comments.

Ascii floats are emitted with 9 significant digits, which round-trips
32-bit inputs exactly; binary PLY stores doubles and is bit-exact.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import InputError, MeshFormatError
from .mesh import TriangleMesh, VertexMask

__all__ = ["load_mesh", "save_mesh", "load_vertex_mask", "save_vertex_mask"]

FORMATS = ("ply-ascii", "ply-binary-le", "obj")

_PLY_SCALAR = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def load_mesh(path, format=None, scale=None):
    """Read a triangle mesh, preserving vertex order from the file.

    Parameters
    ----------
    path : str or Path
    format : {"ply-ascii", "ply-binary-le", "obj"}, optional
        Auto-detected from the extension and PLY header when omitted.
    scale : float, optional
        Uniform scale hint (mm per file unit) applied to all coordinates.
        Replaces ad-hoc manual rescaling of photogrammetric exports.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"mesh file not found: {path}")
    if format is not None and format not in FORMATS:
        raise InputError(f"unknown mesh format {format!r}, expected one of {FORMATS}")
    if format is None:
        ext = path.suffix.lower()
        if ext == ".obj":
            format = "obj"
        elif ext == ".ply":
            format = None  # ascii vs binary resolved from the header
        else:
            raise InputError(f"cannot infer format from extension {ext!r}: {path}")

    if format == "obj":
        mesh = _load_obj(path)
    else:
        mesh = _load_ply(path, format)
    if scale is not None:
        if not (scale > 0):
            raise InputError(f"scale hint must be positive, got {scale}")
        mesh = TriangleMesh(mesh.vertices * float(scale), mesh.faces)
    return mesh


def save_mesh(mesh, path, format):
    """Write ``mesh`` to ``path`` in the given format."""
    path = Path(path)
    if format == "ply-ascii":
        _save_ply_ascii(mesh, path)
    elif format == "ply-binary-le":
        _save_ply_binary(mesh, path)
    elif format == "obj":
        _save_obj(mesh, path)
    else:
        raise InputError(f"unknown mesh format {format!r}, expected one of {FORMATS}")


# ---------------------------------------------------------------------------
# PLY

def _load_ply(path, declared):
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic.strip() != b"ply":
            raise MeshFormatError("not a PLY file (missing 'ply' magic)", path, line=1)
        fmt = None
        elements = []  # (name, count, [(prop_name, code, list_index_code or None)])
        lineno = 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError("unexpected EOF in PLY header", path, line=lineno)
            tokens = raw.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                if tokens[1] == "ascii":
                    fmt = "ply-ascii"
                elif tokens[1] == "binary_little_endian":
                    fmt = "ply-binary-le"
                else:
                    raise MeshFormatError(
                        f"unsupported PLY format {tokens[1]!r}", path, line=lineno
                    )
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise MeshFormatError("property before element", path, line=lineno)
                props = elements[-1][2]
                if tokens[1] == "list":
                    idx_code = _PLY_SCALAR.get(tokens[2])
                    val_code = _PLY_SCALAR.get(tokens[3])
                    if idx_code is None or val_code is None:
                        raise MeshFormatError(
                            f"unsupported list types {tokens[2]}/{tokens[3]}",
                            path, line=lineno,
                        )
                    props.append((tokens[4], val_code, idx_code))
                else:
                    code = _PLY_SCALAR.get(tokens[1])
                    if code is None:
                        raise MeshFormatError(
                            f"unsupported property type {tokens[1]!r}", path, line=lineno
                        )
                    props.append((tokens[2], code, None))
            elif tokens[0] == "end_header":
                break
            else:
                raise MeshFormatError(
                    f"unknown PLY header record {tokens[0]!r}", path, line=lineno
                )
        if fmt is None:
            raise MeshFormatError("PLY header lacks a format record", path)
        if declared is not None and declared != fmt:
            raise MeshFormatError(
                f"declared format {declared!r} but header says {fmt!r}", path
            )
        if fmt == "ply-ascii":
            vertices, faces = _read_ply_ascii_body(fh, elements, path, lineno)
        else:
            vertices, faces = _read_ply_binary_body(fh, elements, path)
    return TriangleMesh(vertices, faces)


def _vertex_face_layout(elements, path):
    names = [e[0] for e in elements]
    if "vertex" not in names or "face" not in names:
        raise MeshFormatError("PLY must declare 'vertex' and 'face' elements", path)
    vprops = dict((e[0], e[2]) for e in elements)["vertex"]
    pnames = [p[0] for p in vprops]
    for axis in ("x", "y", "z"):
        if axis not in pnames:
            raise MeshFormatError(f"vertex element lacks property {axis!r}", path)
    return pnames.index("x"), pnames.index("y"), pnames.index("z")


def _read_ply_ascii_body(fh, elements, path, lineno):
    xi = yi = zi = 0
    vertices, faces = [], []
    for name, count, props in elements:
        if name == "vertex":
            xi, yi, zi = _vertex_face_layout(elements, path)
        for _ in range(count):
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshFormatError("unexpected EOF in PLY body", path, line=lineno)
            tokens = raw.split()
            if name == "vertex":
                try:
                    vertices.append(
                        (float(tokens[xi]), float(tokens[yi]), float(tokens[zi]))
                    )
                except (ValueError, IndexError):
                    raise MeshFormatError("bad vertex record", path, line=lineno) from None
            elif name == "face":
                try:
                    k = int(tokens[0])
                    idx = [int(t) for t in tokens[1:1 + k]]
                except (ValueError, IndexError):
                    raise MeshFormatError("bad face record", path, line=lineno) from None
                if len(idx) != k:
                    raise MeshFormatError("face list shorter than declared", path, line=lineno)
                faces.extend(_triangulate(idx, path, lineno))
            # other elements are skipped line-by-line
    return vertices, faces


def _read_ply_binary_body(fh, elements, path):
    vertices, faces = [], []
    for name, count, props in elements:
        if name == "vertex":
            xi, yi, zi = _vertex_face_layout(elements, path)
            fmt = "<" + "".join(code for _, code, _ in props)
            size = struct.calcsize(fmt)
            blob = fh.read(size * count)
            if len(blob) != size * count:
                raise MeshFormatError("truncated vertex data", path, offset=fh.tell())
            for rec in struct.iter_unpack(fmt, blob):
                vertices.append((rec[xi], rec[yi], rec[zi]))
        else:
            for _ in range(count):
                for pname, code, idx_code in props:
                    if idx_code is None:
                        blob = fh.read(struct.calcsize(code))
                        if len(blob) < struct.calcsize(code):
                            raise MeshFormatError("truncated data", path, offset=fh.tell())
                        continue
                    nraw = fh.read(struct.calcsize(idx_code))
                    if not nraw:
                        raise MeshFormatError("truncated list count", path, offset=fh.tell())
                    (k,) = struct.unpack("<" + idx_code, nraw)
                    body = fh.read(struct.calcsize(code) * k)
                    if len(body) < struct.calcsize(code) * k:
                        raise MeshFormatError("truncated list data", path, offset=fh.tell())
                    if name == "face" and pname in ("vertex_indices", "vertex_index"):
                        idx = list(struct.unpack("<" + code * k, body))
                        faces.extend(_triangulate(idx, path, None))
    return vertices, faces


def _triangulate(indices, path, lineno):
    if len(indices) < 3:
        raise MeshFormatError("face with fewer than 3 vertices", path, line=lineno)
    # fan triangulation for quads and larger polygons
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _format_float(x):
    return format(float(x), ".9g")


def _save_ply_ascii(mesh, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for v in mesh.vertices:
            fh.write(f"{_format_float(v[0])} {_format_float(v[1])} {_format_float(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def _save_ply_binary(mesh, path):
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(
            np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes()
        )
        if mesh.n_faces:
            counts = np.full((mesh.n_faces, 1), 3, dtype=np.uint8)
            idx = np.ascontiguousarray(mesh.faces, dtype="<i4")
            rec = np.empty(mesh.n_faces, dtype=[("n", "u1"), ("v", "<i4", (3,))])
            rec["n"] = counts[:, 0]
            rec["v"] = idx
            fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# OBJ

def _load_obj(path):
    vertices, faces = [], []
    skipped = set()
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            rec = tokens[0]
            if rec == "v":
                try:
                    vertices.append(tuple(float(t) for t in tokens[1:4]))
                except ValueError:
                    raise MeshFormatError("bad vertex record", path, line=lineno) from None
                if len(vertices[-1]) != 3:
                    raise MeshFormatError("vertex needs 3 coordinates", path, line=lineno)
            elif rec == "f":
                idx = []
                for tok in tokens[1:]:
                    ref = tok.split("/")[0]
                    try:
                        i = int(ref)
                    except ValueError:
                        raise MeshFormatError(
                            f"bad face reference {tok!r}", path, line=lineno
                        ) from None
                    if i == 0:
                        raise MeshFormatError(
                            "face index 0 (OBJ indices are 1-based)", path, line=lineno
                        )
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.extend(_triangulate(idx, path, lineno))
            else:
                skipped.add(rec)
    if skipped:
        warnings.warn(
            f"ignored OBJ records: {', '.join(sorted(skipped))}", stacklevel=3
        )
    return TriangleMesh(vertices, faces)


def _save_obj(mesh, path):
    with open(path, "w", newline="\n") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_format_float(v[0])} {_format_float(v[1])} {_format_float(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# Vertex masks

def load_vertex_mask(path):
    """Read a vertex mask: one decimal index per line, ``#`` comments allowed."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"mask file not found: {path}")
    indices = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            try:
                indices.append(int(body))
            except ValueError:
                raise MeshFormatError("bad mask index", path, line=lineno) from None
    return VertexMask(indices)


def save_vertex_mask(mask, path):
    with open(path, "w", newline="\n") as fh:
        for i in sorted(mask.indices):
            fh.write(f"{i}\n")
