"""Readers and writers for every on-disk format the pipeline touches.

Point clouds: ASCII XYZ (``x y z [nx ny nz]`` per line) and PLY (ascii or
binary little-endian).  Meshes: OBJ and PLY.  Scalar grids: raw float32
little-endian, x fastest, plus a ``<path>.json`` sidecar.  Constraints: JSON.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, VadError

log = logging.getLogger(__name__)


class ParseError(VadError):
    pass


class IndexOutOfRange(VadError):
    pass


class DuplicateIndex(VadError):
    pass


class VadIoError(VadError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def triangle_areas(self):
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def drop_degenerate(self, tol=1e-14):
        keep = self.triangle_areas() > tol
        if keep.all():
            return self
        log.warning("dropped %d degenerate triangles", int((~keep).sum()))
        return TriangleMesh(self.vertices, self.triangles[keep])


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    indices: np.ndarray
    directions: np.ndarray
    hard: np.ndarray

    def __len__(self):
        return len(self.indices)

    @classmethod
    def from_entries(cls, entries):
        """Build from ``(index, direction, hard)`` triples."""
        idx = np.array([int(e[0]) for e in entries], dtype=np.int64)
        dirs = np.array([e[1] for e in entries], dtype=np.float64).reshape(-1, 3)
        hard = np.array([bool(e[2]) for e in entries], dtype=bool)
        if len(np.unique(idx)) != len(idx):
            raise DuplicateIndex("constraint indices must be unique")
        if len(idx) and np.any(idx < 0):
            raise IndexOutOfRange("negative constraint index")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise ParseError("constraint direction has zero length")
        return cls(idx, dirs / norms[:, None], hard)

    def check_bounds(self, n_points):
        if len(self.indices) and self.indices.max() >= n_points:
            raise IndexOutOfRange(f"constraint index {int(self.indices.max())} out of range for {n_points} points")


# point clouds ---------------------------------------------------------------

def _guess_format(path, fmt):
    if fmt:
        return fmt.lower()
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    return {"txt": "xyz", "pts": "xyz"}.get(ext, ext)


def read_point_cloud(path, fmt=None):
    fmt = _guess_format(path, fmt)
    if fmt == "xyz":
        return _read_xyz(path)
    if fmt == "ply":
        ply = read_ply(path)
        vert = ply.get("vertex")
        if vert is None or not all(k in vert for k in ("x", "y", "z")):
            raise ParseError(f"{path}: PLY has no vertex x/y/z properties")
        pts = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
        normals = None
        if all(k in vert for k in ("nx", "ny", "nz")):
            normals = np.stack([vert["nx"], vert["ny"], vert["nz"]], axis=1).astype(np.float64)
            normals = _renormalize(normals)
        return PointCloud(pts, normals)
    raise ParseError(f"unsupported point cloud format {fmt!r}")


def _renormalize(normals):
    nrm = np.linalg.norm(normals, axis=1, keepdims=True)
    if np.any(nrm == 0):
        raise ParseError("zero-length normal in input")
    return normals / nrm


def _read_xyz(path):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.replace(",", " ").split()
            if len(parts) not in (3, 6) or (width is not None and len(parts) != width):
                raise ParseError(f"{path}:{lineno}: expected 3 or 6 values, got {len(parts)}")
            width = len(parts)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, width or 3)
    normals = _renormalize(data[:, 3:6]) if width == 6 else None
    return PointCloud(data[:, :3], normals)


def write_point_cloud(path, cloud, normals=None, fmt=None, binary=False):
    """Write positions (and normals, if given or present) as XYZ or PLY."""
    fmt = _guess_format(path, fmt)
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if normals is None and isinstance(cloud, PointCloud):
        normals = cloud.gt_normals
    if fmt == "xyz":
        data = pts if normals is None else np.hstack([pts, normals])
        np.savetxt(path, data, fmt="%.17g")
        return
    if fmt != "ply":
        raise VadIoError(f"unsupported point cloud format {fmt!r}")
    props = [("x", pts[:, 0]), ("y", pts[:, 1]), ("z", pts[:, 2])]
    if normals is not None:
        props += [("nx", normals[:, 0]), ("ny", normals[:, 1]), ("nz", normals[:, 2])]
    write_ply(path, {"vertex": props}, binary=binary)


# PLY ------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise ParseError(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        raw = fh.readline()
        if not raw:
            raise ParseError(f"{path}: header not terminated by end_header")
        parts = raw.decode("ascii", "replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", _PLY_TYPES.get(parts[2]), _PLY_TYPES.get(parts[3])))
            else:
                elements[-1][2].append((parts[2], "scalar", _PLY_TYPES.get(parts[1]), None))
        elif parts[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Parse a PLY file into ``{element: {property: array or list}}``."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        body = fh.read()
    out = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            cols = {p[0]: [] for p in props}
            for _ in range(count):
                for pname, kind, t, it in props:
                    try:
                        if kind == "list":
                            k = int(tokens[pos]); pos += 1
                            cols[pname].append([float(v) for v in tokens[pos:pos + k]])
                            if len(tokens[pos:pos + k]) != k:
                                raise IndexError
                            pos += k
                        else:
                            cols[pname].append(float(tokens[pos])); pos += 1
                    except (IndexError, ValueError):
                        raise ParseError(f"{path}: malformed ascii body near token {pos}") from None
            out[name] = {k: (np.array(v) if props_kind(props, k) == "scalar" else v) for k, v in cols.items()}
        return out
    offset = 0
    for name, count, props in elements:
        if all(p[1] == "scalar" for p in props):
            unknown = [p[0] for p in props if p[2] is None]
            if unknown:
                raise ParseError(f"{path}: unknown property type for {unknown}")
            dt = np.dtype([(p[0], "<" + p[2]) for p in props])
            need = dt.itemsize * count
            if offset + need > len(body):
                raise ParseError(f"{path}: truncated binary body at byte {offset}")
            arr = np.frombuffer(body, dtype=dt, count=count, offset=offset)
            offset += need
            out[name] = {p[0]: arr[p[0]].astype(np.float64 if p[2][0] == "f" else np.int64) for p in props}
        else:
            cols = {p[0]: [] for p in props}
            for _ in range(count):
                for pname, kind, t, it in props:
                    if kind == "list":
                        cdt, vdt = np.dtype("<" + t), np.dtype("<" + it)
                        if offset + cdt.itemsize > len(body):
                            raise ParseError(f"{path}: truncated binary body at byte {offset}")
                        k = int(np.frombuffer(body, cdt, 1, offset)[0]); offset += cdt.itemsize
                        if offset + k * vdt.itemsize > len(body):
                            raise ParseError(f"{path}: truncated binary body at byte {offset}")
                        cols[pname].append(np.frombuffer(body, vdt, k, offset).tolist()); offset += k * vdt.itemsize
                    else:
                        sdt = np.dtype("<" + t)
                        if offset + sdt.itemsize > len(body):
                            raise ParseError(f"{path}: truncated binary body at byte {offset}")
                        cols[pname].append(float(np.frombuffer(body, sdt, 1, offset)[0])); offset += sdt.itemsize
            out[name] = {k: (np.array(v) if props_kind(props, k) == "scalar" else v) for k, v in cols.items()}
    return out


def props_kind(props, name):
    for p in props:
        if p[0] == name:
            return p[1]
    return None


def write_ply(path, elements, binary=False, dtype="double"):
    """Write PLY elements given as ``{name: [(prop, values), ...]}``.

    A property whose values is a list of index lists is written as
    ``list uchar int``.
    """
    npdt = {"double": "<f8", "float": "<f4"}[dtype]
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0"]
    for name, props in elements.items():
        count = len(props[0][1]) if props else 0
        header.append(f"element {name} {count}")
        for pname, vals in props:
            if _is_list_prop(vals):
                header.append(f"property list uchar int {pname}")
            else:
                header.append(f"property {dtype} {pname}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        for name, props in elements.items():
            if not props:
                continue
            if all(not _is_list_prop(v) for _, v in props):
                cols = np.stack([np.asarray(v, dtype=np.float64) for _, v in props], axis=1)
                if binary:
                    fh.write(cols.astype(npdt).tobytes())
                else:
                    np.savetxt(fh, cols, fmt="%.17g")
            elif len(props) == 1:
                lists = props[0][1]
                if binary:
                    for lst in lists:
                        fh.write(np.uint8(len(lst)).tobytes() + np.asarray(lst, "<i4").tobytes())
                else:
                    for lst in lists:
                        fh.write((f"{len(lst)} " + " ".join(str(int(i)) for i in lst) + "\n").encode())
            else:
                raise VadIoError("mixed list/scalar elements are not supported for writing")


def _is_list_prop(vals):
    return isinstance(vals, np.ndarray) and vals.ndim == 2 or isinstance(vals, list) and vals and hasattr(vals[0], "__len__")


# meshes ---------------------------------------------------------------------

def read_mesh(path, fmt=None):
    fmt = _guess_format(path, fmt)
    if fmt == "obj":
        verts, tris = [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    if parts[0] == "v":
                        verts.append([float(x) for x in parts[1:4]])
                        if len(verts[-1]) != 3:
                            raise ValueError("vertex needs 3 coordinates")
                    elif parts[0] == "f":
                        idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                        idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                        if len(idx) < 3:
                            raise ValueError("face needs at least 3 vertices")
                        for k in range(1, len(idx) - 1):
                            tris.append([idx[0], idx[k], idx[k + 1]])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from None
        mesh_v, mesh_t = np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3)
    elif fmt == "ply":
        ply = read_ply(path)
        vert = ply.get("vertex", {})
        faces = ply.get("face", {})
        try:
            mesh_v = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
        except KeyError:
            raise ParseError(f"{path}: PLY has no vertex x/y/z") from None
        lists = faces.get("vertex_indices", faces.get("vertex_index", []))
        tris = []
        for f in lists:
            f = [int(i) for i in f]
            for k in range(1, len(f) - 1):
                tris.append([f[0], f[k], f[k + 1]])
        mesh_t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    else:
        raise ParseError(f"unsupported mesh format {fmt!r}")
    if len(mesh_t) and (mesh_t.min() < 0 or mesh_t.max() >= len(mesh_v)):
        raise ParseError(f"{path}: face index out of range")
    return TriangleMesh(mesh_v, mesh_t).drop_degenerate()


def write_mesh(path, mesh, fmt=None, binary=False):
    fmt = _guess_format(path, fmt)
    if fmt == "obj":
        with open(path, "w") as fh:
            for v in mesh.vertices:
                fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            for t in mesh.triangles + 1:
                fh.write(f"f {t[0]} {t[1]} {t[2]}\n")
    elif fmt == "ply":
        v = mesh.vertices
        write_ply(path, {
            "vertex": [("x", v[:, 0]), ("y", v[:, 1]), ("z", v[:, 2])],
            "face": [("vertex_indices", mesh.triangles)],
        }, binary=binary)
    else:
        raise VadIoError(f"unsupported mesh format {fmt!r}")


# grids ----------------------------------------------------------------------

def write_grid(grid, path, transform=None):
    """Raw little-endian float32 payload (x fastest) plus JSON sidecar.

    ``transform`` is ``(scale, translation)`` mapping original coordinates to
    grid coordinates; identity when omitted.
    """
    data = np.asarray(grid.data)
    if data.size == 0:
        raise VadIoError("grid is empty")
    if data.ndim != 3:
        raise VadIoError("only scalar grids can be written")
    scale, translation = transform if transform is not None else (1.0, np.zeros(3))
    # data is indexed [i, j, k] with i along x; Fortran order puts x fastest
    payload = np.asarray(data, dtype="<f4").ravel(order="F").tobytes()
    meta = {
        "dims": [int(d) for d in data.shape],
        "origin": [float(o) for o in grid.origin],
        "spacing": float(grid.spacing),
        "transform": {"scale": float(scale), "translation": [float(t) for t in translation]},
    }
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2)
    except OSError as exc:
        raise VadIoError(str(exc)) from exc


def read_grid(path):
    """Inverse of :func:`write_grid`; returns ``(grid, transform)``."""
    from .grid import VoxelGrid

    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        raw = np.fromfile(path, dtype="<f4")
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    dims = tuple(meta["dims"])
    if raw.size != int(np.prod(dims)):
        raise ParseError(f"{path}: payload has {raw.size} values, sidecar expects {int(np.prod(dims))}")
    data = raw.reshape(dims, order="F").astype(np.float32)
    tr = meta.get("transform", {})
    return VoxelGrid(data, np.array(meta["origin"]), float(meta["spacing"])), (
        float(tr.get("scale", 1.0)), np.array(tr.get("translation", [0.0, 0.0, 0.0])))


def write_vtk(grid, path):
    """Legacy VTK structured-points ASCII export of a scalar grid."""
    data = np.asarray(grid.data)
    nx, ny, nz = data.shape
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nvad grid\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN {} {} {}\n".format(*map(float, grid.origin)))
        s = float(grid.spacing)
        fh.write(f"SPACING {s} {s} {s}\nPOINT_DATA {data.size}\nSCALARS value float 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, data.ravel(order="F")[:, None], fmt="%.9g")


# constraints ----------------------------------------------------------------

def read_constraints(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("constraints"), list):
        raise ParseError(f"{path}: expected an object with a 'constraints' list")
    entries = []
    for k, e in enumerate(doc["constraints"]):
        try:
            d = [float(x) for x in e["direction"]]
            if len(d) != 3:
                raise ValueError("direction needs 3 components")
            entries.append((int(e["index"]), d, bool(e.get("hard", True))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: constraint #{k}: {exc}") from None
    return ConstraintSet.from_entries(entries)


def write_constraints(path, constraints):
    doc = {"constraints": [
        {"index": int(i), "direction": [float(x) for x in d], "hard": bool(h)}
        for i, d, h in zip(constraints.indices, constraints.directions, constraints.hard)
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
