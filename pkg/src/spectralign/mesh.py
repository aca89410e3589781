"""Triangle-mesh container, OBJ/PLY I/O, and combinatorial primitives.

The mesh is immutable after construction: derived topology (unique edge
list, boundary flags) is computed once and the underlying arrays are
marked read-only, so instances are safe to share across threads.
"""

import os
import struct

import numpy as np
from scipy import sparse

from .errors import InputError, MeshError

__all__ = ["TriMesh", "load_mesh", "save_mesh"]

# Faces whose area falls below this fraction of the squared bbox diagonal
# poison cotangent weights and are rejected at construction.
DEGENERATE_AREA_FRACTION = 1e-12


class TriMesh:
    """Immutable triangle mesh with derived topology.

    Parameters
    ----------
    vertices : array_like
        (n, 3) float coordinates. All meshes in a pipeline run must share
        units; no conversion is performed.
    faces : array_like
        (m, 3) zero-based vertex indices, consistently oriented.
    colors : array_like, optional
        (n, 3) per-vertex RGB in [0, 1].

    Attributes
    ----------
    vertices : ndarray
        (n, 3) float64, read-only.
    faces : ndarray
        (m, 3) int64, read-only.
    colors : ndarray or None
        (n, 3) float64 in [0, 1], read-only.
    edges : ndarray
        (ne, 2) unique undirected edges, each row (i, j) with i < j,
        sorted lexicographically. This canonical ordering makes per-edge
        arrays comparable across meshes with identical face lists.
    boundary_vertex : ndarray
        (n,) bool, True iff the vertex touches an edge with exactly one
        incident face.
    boundary_edge : ndarray
        (ne,) bool, True iff the edge has exactly one incident face.
    """

    def __init__(self, vertices, faces, colors=None, check_degenerate=True):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {f.shape}")
        if v.shape[0] == 0:
            raise MeshError("empty mesh: no vertices")
        if not np.isfinite(v).all():
            raise MeshError("vertices contain non-finite coordinates")
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            bad = np.argwhere((f < 0) | (f >= v.shape[0]))[0]
            raise MeshError(
                f"face {bad[0]} references vertex {f[bad[0], bad[1]]} "
                f"but the mesh has {v.shape[0]} vertices"
            )
        repeated = (
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        )
        if repeated.any():
            raise MeshError(f"face {np.flatnonzero(repeated)[0]} repeats a vertex index")

        self.vertices = v
        self.faces = f
        if check_degenerate:
            self._check_degenerate_faces()

        if colors is not None:
            c = np.ascontiguousarray(colors, dtype=np.float64)
            if c.shape != v.shape:
                raise MeshError(f"colors must match vertices, got {c.shape}")
            c.flags.writeable = False
            self.colors = c
        else:
            self.colors = None

        self.edges, self.boundary_edge = self._build_edges()
        self.boundary_vertex = np.zeros(self.n_vertices, dtype=bool)
        self.boundary_vertex[self.edges[self.boundary_edge].ravel()] = True

        v.flags.writeable = False
        f.flags.writeable = False
        self.edges.flags.writeable = False
        self.boundary_edge.flags.writeable = False
        self.boundary_vertex.flags.writeable = False
        self._laplacian = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def _check_degenerate_faces(self):
        if self.n_faces == 0:
            return
        p0 = self.vertices[self.faces[:, 0]]
        cr = np.cross(self.vertices[self.faces[:, 1]] - p0,
                      self.vertices[self.faces[:, 2]] - p0)
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        limit = DEGENERATE_AREA_FRACTION * self.bbox_diagonal() ** 2
        if (areas < limit).any():
            idx = int(np.argmin(areas))
            raise MeshError(
                f"face {idx} is degenerate (area {areas[idx]:.3e} below "
                f"{limit:.3e}); repair the mesh before loading"
            )

    def _build_edges(self):
        f = self.faces
        halfedges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        halfedges.sort(axis=1)
        edges, counts = np.unique(halfedges, axis=0, return_counts=True)
        if (counts > 2).any():
            i, j = edges[np.argmax(counts > 2)]
            raise MeshError(
                f"non-manifold edge ({i}, {j}) has {counts.max()} incident "
                f"faces; only manifold-with-boundary surfaces are supported"
            )
        return edges, counts == 1

    def edge_lengths(self):
        """Euclidean length of each edge, in canonical edge order.

        Because the edge list is ordered lexicographically, the returned
        array is index-aligned across meshes with identical face lists,
        which makes differences of rest and deformed lengths meaningful.

        Returns
        -------
        ndarray
            (ne,) lengths.
        """
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    def uniform_laplacian(self):
        """Graph Laplacian: degree on the diagonal, -1 per edge.

        Rows sum to zero, the matrix is symmetric positive semidefinite,
        and it annihilates constant vectors. Cached after the first call.

        Returns
        -------
        csr_matrix
            (n, n) sparse matrix.
        """
        if self._laplacian is None:
            n = self.n_vertices
            i, j = self.edges[:, 0], self.edges[:, 1]
            deg = np.bincount(self.edges.ravel(), minlength=n).astype(np.float64)
            rows = np.concatenate([i, j, np.arange(n)])
            cols = np.concatenate([j, i, np.arange(n)])
            vals = np.concatenate([-np.ones(2 * len(i)), deg])
            self._laplacian = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._laplacian

    def vertex_normals(self):
        """Area-weighted unit vertex normals.

        Face normals are accumulated per incident vertex weighted by face
        area (via the raw cross product) and normalized. Vertices with a
        zero accumulated normal (isolated or fully cancelled one-rings)
        get a zero row; metric code excludes them.

        Returns
        -------
        ndarray
            (n, 3) unit vectors, zero rows where undefined.
        """
        p0 = self.vertices[self.faces[:, 0]]
        cr = np.cross(self.vertices[self.faces[:, 1]] - p0,
                      self.vertices[self.faces[:, 2]] - p0)
        normals = np.zeros((self.n_vertices, 3))
        for k in range(3):
            np.add.at(normals, self.faces[:, k], cr)
        lens = np.linalg.norm(normals, axis=1)
        ok = lens > 0
        normals[ok] /= lens[ok, None]
        return normals

    def face_areas(self):
        """Per-face triangle areas."""
        p0 = self.vertices[self.faces[:, 0]]
        cr = np.cross(self.vertices[self.faces[:, 1]] - p0,
                      self.vertices[self.faces[:, 2]] - p0)
        return 0.5 * np.linalg.norm(cr, axis=1)

    def bbox_diagonal(self):
        """Length of the axis-aligned bounding-box diagonal."""
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices, colors="keep"):
        """New mesh sharing this face list with replaced vertex positions.

        Solver outputs may contain near-degenerate triangles; those are
        reported by quality guards rather than rejected here, so the
        degeneracy check is skipped.
        """
        if isinstance(colors, str) and colors == "keep":
            colors = self.colors
        return TriMesh(vertices, self.faces, colors=colors, check_degenerate=False)

    def content_hash(self):
        """SHA-256 of vertex and face bytes, used to key eigenbasis caches."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.hexdigest()

    def __repr__(self):
        c = ", colors" if self.colors is not None else ""
        return f"TriMesh({self.n_vertices} vertices, {self.n_faces} faces{c})"


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("obj", "ply"):
            raise InputError(f"unsupported mesh format {fmt!r}")
        return fmt
    ext = os.path.splitext(path)[1].lower().lstrip(".")
    if ext in ("obj", "ply"):
        return ext
    raise InputError(f"cannot infer mesh format from {path!r}; pass format=")


def load_mesh(path, fmt=None):
    """Load a triangle mesh from an OBJ or PLY file.

    Parameters
    ----------
    path : str
        File to read.
    fmt : {"obj", "ply"}, optional
        Forced format; inferred from the extension when omitted.

    Returns
    -------
    TriMesh
        Mesh with derived topology computed and colors populated when the
        file carries them.

    Raises
    ------
    InputError
        Unreadable file or parse failure (with line/offset context).
    MeshError
        Structurally invalid mesh (bad indices, non-manifold, degenerate).
    """
    fmt = _infer_format(path, fmt)
    if not os.path.exists(path):
        raise InputError(f"mesh file not found: {path}")
    if fmt == "obj":
        return _load_obj(path)
    return _load_ply(path)


def save_mesh(mesh, path, fmt=None):
    """Write a mesh as OBJ (text) or PLY (binary little-endian).

    Coordinates are written in full double precision so that a save/load
    round trip reproduces them to at least 9 significant digits.
    """
    fmt = _infer_format(path, fmt)
    try:
        if fmt == "obj":
            _save_obj(mesh, path)
        else:
            _save_ply(mesh, path)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- OBJ

def _load_obj(path):
    verts, colors, faces = [], [], []
    any_color = False
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) not in (4, 7):
                    raise InputError(
                        f"{path}:{lineno}: vertex line needs 3 or 6 floats"
                    )
                try:
                    vals = [float(x) for x in parts[1:]]
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from exc
                verts.append(vals[:3])
                if len(vals) == 6:
                    colors.append(vals[3:])
                    any_color = True
                else:
                    colors.append(None)
            elif tag == "f":
                if len(parts) != 4:
                    raise InputError(
                        f"{path}:{lineno}: only triangular faces are supported"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        k = int(head)
                    except ValueError as exc:
                        raise InputError(f"{path}:{lineno}: {exc}") from exc
                    if k == 0:
                        raise InputError(f"{path}:{lineno}: OBJ indices are 1-based")
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                faces.append(idx)
            # vn/vt/usemtl/etc. are ignored
    if not verts:
        raise MeshError(f"{path}: empty mesh (no vertices)")
    col = None
    if any_color:
        if any(c is None for c in colors):
            raise InputError(f"{path}: colors present on some vertices only")
        col = np.array(colors, dtype=np.float64)
    try:
        return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3), colors=col)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def _save_obj(mesh, path):
    with open(path, "w") as fh:
        if mesh.colors is None:
            for p in mesh.vertices:
                fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        else:
            for p, c in zip(mesh.vertices, mesh.colors):
                fh.write(
                    f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                    f"{c[0]:.17g} {c[1]:.17g} {c[2]:.17g}\n"
                )
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _load_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise InputError(f"{path}: not a PLY file (missing magic)")
    try:
        header_end = data.index(b"end_header\n") + len(b"end_header\n")
    except ValueError:
        raise InputError(f"{path}: PLY header not terminated") from None
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    body = data[header_end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype, is_list, count_dtype)])
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise InputError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                cnt_t, val_t, name = parts[2], parts[3], parts[4]
                elements[-1][2].append((name, _PLY_TYPES[val_t], True, _PLY_TYPES[cnt_t]))
            else:
                typ, name = parts[1], parts[2]
                if typ not in _PLY_TYPES:
                    raise InputError(f"{path}:{lineno}: unknown type {typ!r}")
                elements[-1][2].append((name, _PLY_TYPES[typ], False, None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise InputError(f"{path}: unsupported PLY format {fmt!r}")

    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").split()
        parsed = _parse_ply_ascii(path, elements, rows)
    else:
        parsed = _parse_ply_binary(path, elements, body)

    if "vertex" not in parsed:
        raise MeshError(f"{path}: empty mesh (no vertex element)")
    vdata = parsed["vertex"]
    try:
        verts = np.column_stack([vdata["x"], vdata["y"], vdata["z"]])
    except KeyError as exc:
        raise InputError(f"{path}: vertex element lacks {exc} property") from exc
    colors = None
    if all(k in vdata for k in ("red", "green", "blue")):
        colors = np.column_stack([vdata["red"], vdata["green"], vdata["blue"]])
        if vdata["red"].dtype.kind == "u":
            colors = colors / 255.0
    faces = parsed.get("face", {}).get("__lists__", np.zeros((0, 3), dtype=np.int64))
    try:
        return TriMesh(verts, faces, colors=colors)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from exc


def _parse_ply_ascii(path, elements, tokens):
    parsed = {}
    pos = 0
    for name, count, props in elements:
        cols = {p[0]: [] for p in props if not p[2]}
        dtypes = {p[0]: p[1] for p in props if not p[2]}
        lists = []
        for _ in range(count):
            for pname, dt, is_list, _cnt in props:
                if is_list:
                    if pos >= len(tokens):
                        raise InputError(f"{path}: truncated ASCII body")
                    n = int(tokens[pos]); pos += 1
                    if name == "face" and n != 3:
                        raise InputError(f"{path}: face with {n} vertices; only triangles supported")
                    lists.append([int(tokens[pos + i]) for i in range(n)])
                    pos += n
                else:
                    if pos >= len(tokens):
                        raise InputError(f"{path}: truncated ASCII body")
                    cols[pname].append(float(tokens[pos])); pos += 1
        out = {k: np.array(v).astype(dtypes[k]) for k, v in cols.items()}
        if lists:
            out["__lists__"] = np.array(lists, dtype=np.int64)
        parsed[name] = out
    return parsed


def _parse_ply_binary(path, elements, body):
    parsed = {}
    off = 0
    for name, count, props in elements:
        has_list = any(p[2] for p in props)
        if not has_list:
            dt = np.dtype([(p[0], "<" + p[1]) for p in props])
            need = dt.itemsize * count
            if off + need > len(body):
                raise InputError(f"{path}: truncated binary body at offset {off}")
            rec = np.frombuffer(body, dtype=dt, count=count, offset=off)
            off += need
            parsed[name] = {p[0]: rec[p[0]].astype(np.float64) if p[1][0] == "f"
                            else np.asarray(rec[p[0]]) for p in props}
        else:
            # list elements (faces) are read row by row; counts may vary
            lists = []
            scalars = {p[0]: [] for p in props if not p[2]}
            for _ in range(count):
                for pname, dt, is_list, cnt_dt in props:
                    if is_list:
                        cdt = np.dtype("<" + cnt_dt)
                        n = int(np.frombuffer(body, dtype=cdt, count=1, offset=off)[0])
                        off += cdt.itemsize
                        if name == "face" and n != 3:
                            raise InputError(
                                f"{path}: face with {n} vertices at offset {off}; "
                                "only triangles supported"
                            )
                        vdt = np.dtype("<" + dt)
                        vals = np.frombuffer(body, dtype=vdt, count=n, offset=off)
                        off += vdt.itemsize * n
                        lists.append(vals.astype(np.int64))
                    else:
                        vdt = np.dtype("<" + dt)
                        scalars[pname].append(
                            np.frombuffer(body, dtype=vdt, count=1, offset=off)[0]
                        )
                        off += vdt.itemsize
            out = {k: np.array(v) for k, v in scalars.items()}
            if lists:
                out["__lists__"] = np.array(lists, dtype=np.int64)
            parsed[name] = out
    return parsed


def _save_ply(mesh, path):
    n, m = mesh.n_vertices, mesh.n_faces
    has_col = mesh.colors is not None
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_col:
        lines += ["property float red", "property float green", "property float blue"]
    lines += [
        f"element face {m}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        if has_col:
            dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                           ("r", "<f4"), ("g", "<f4"), ("b", "<f4")])
            rec = np.empty(n, dtype=dt)
            rec["x"], rec["y"], rec["z"] = mesh.vertices.T
            rec["r"], rec["g"], rec["b"] = mesh.colors.T.astype(np.float32)
        else:
            dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
            rec = np.empty(n, dtype=dt)
            rec["x"], rec["y"], rec["z"] = mesh.vertices.T
        fh.write(rec.tobytes())
        for f in mesh.faces:
            fh.write(struct.pack("<Biii", 3, int(f[0]), int(f[1]), int(f[2])))
