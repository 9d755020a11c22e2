"""Triangle meshes: loading, area normalization, uniform surface sampling,
field transfer, and nearest-neighbour map-back."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

SAMPLES_MAGIC = b"ZNSMPL\x00\x00"
SAMPLES_VERSION = 1


class MeshParseError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class DegenerateMeshError(ValueError):
    def __init__(self, message: str, faces=()):
        super().__init__(message)
        self.faces = list(faces)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _face_vectors(vertices, faces):
    p = vertices[faces]
    return p, np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])


def _angle_weighted_normals(vertices, faces, face_normals):
    p = vertices[faces]
    normals = np.zeros_like(vertices)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        angle = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(normals, faces[:, k], angle[:, None] * face_normals)
    length = np.linalg.norm(normals, axis=1)
    # isolated vertices get an arbitrary but valid unit normal
    bad = length < 1e-300
    normals[bad] = (0.0, 0.0, 1.0)
    length[bad] = 1.0
    return normals / length[:, None]


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh with cached face areas and vertex normals.

    Construction rejects out-of-range indices and zero-area faces.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_areas: np.ndarray = field(init=False, repr=False)
    face_normals: np.ndarray = field(init=False, repr=False)
    vertex_normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise ValueError("face index out of range")
        _, cross = _face_vectors(vertices, faces)
        doubled = np.linalg.norm(cross, axis=1)
        scale = max(np.ptp(vertices, axis=0).max(), 1e-300) if len(vertices) else 1.0
        degenerate = np.flatnonzero(doubled <= 1e-14 * scale**2)
        if degenerate.size:
            raise DegenerateMeshError(
                f"{degenerate.size} zero-area face(s): {degenerate[:20].tolist()}",
                degenerate,
            )
        fn = cross / doubled[:, None]
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "face_areas", 0.5 * doubled)
        object.__setattr__(self, "face_normals", fn)
        object.__setattr__(
            self, "vertex_normals", _angle_weighted_normals(vertices, faces, fn)
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())


def _parse_obj(path, text):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "v":
                if len(rest) < 3:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in rest[:3]])
            elif tag == "f":
                idx = [int(tok.split("/")[0]) for tok in rest]
                if len(idx) < 3:
                    raise ValueError("face needs at least 3 vertices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan-triangulate polygons
                faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
        except ValueError as exc:
            raise MeshParseError(path, lineno, str(exc)) from None
    return verts, faces


def _parse_off(path, text):
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line))
    if not rows or not rows[0][1].startswith("OFF"):
        raise MeshParseError(path, rows[0][0] if rows else 1, "missing OFF header")
    head = rows[0][1][3:].split()
    pos = 1
    if not head:
        if len(rows) < 2:
            raise MeshParseError(path, None, "missing element counts")
        head = rows[1][1].split()
        pos = 2
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError):
        raise MeshParseError(path, rows[pos - 1][0], "bad element counts") from None
    if len(rows) < pos + nv + nf:
        raise MeshParseError(path, None, "file truncated")
    verts, faces = [], []
    for lineno, line in rows[pos : pos + nv]:
        try:
            verts.append([float(x) for x in line.split()[:3]])
        except ValueError:
            raise MeshParseError(path, lineno, "bad vertex record") from None
        if len(verts[-1]) != 3:
            raise MeshParseError(path, lineno, "vertex needs 3 coordinates")
    for lineno, line in rows[pos + nv : pos + nv + nf]:
        try:
            toks = [int(x) for x in line.split()]
            k = toks[0]
            idx = toks[1 : 1 + k]
            if k < 3 or len(idx) != k:
                raise ValueError
        except (ValueError, IndexError):
            raise MeshParseError(path, lineno, "bad face record") from None
        faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    return verts, faces


def load_mesh(path) -> TriangleMesh:
    """Read an ASCII OBJ or OFF file, preserving vertex and face order."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".off" or text.lstrip().startswith("OFF"):
        verts, faces = _parse_off(path, text)
    else:
        verts, faces = _parse_obj(path, text)
    if not verts or not faces:
        raise MeshParseError(path, None, "no vertices or faces")
    faces = np.asarray(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= len(verts):
        raise MeshParseError(path, None, "face index out of range")
    return TriangleMesh(np.asarray(verts, dtype=float), faces)


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def save_ply(path, mesh: TriangleMesh, quality=None, colors=None) -> None:
    """Binary little-endian PLY with optional per-vertex ``float quality`` and RGB."""
    V = mesh.n_vertices
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {V}",
              "property float x", "property float y", "property float z"]
    fields = [("xyz", "<f4", (3,))]
    if quality is not None:
        header.append("property float quality")
        fields.append(("q", "<f4"))
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        fields.append(("rgb", "u1", (3,)))
    header += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices",
               "end_header"]
    vrec = np.zeros(V, dtype=fields)
    vrec["xyz"] = mesh.vertices
    if quality is not None:
        vrec["q"] = np.asarray(quality, dtype=float).reshape(V)
    if colors is not None:
        vrec["rgb"] = np.asarray(colors, dtype=np.uint8).reshape(V, 3)
    frec = np.zeros(mesh.n_faces, dtype=[("k", "u1"), ("idx", "<i4", (3,))])
    frec["k"] = 3
    frec["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vrec.tobytes())
        fh.write(frec.tobytes())


def read_ply_quality(path) -> tuple[np.ndarray, np.ndarray]:
    """Return (vertex positions, quality) from a PLY written by :func:`save_ply`."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    V = next(int(h.split()[2]) for h in header if h.startswith("element vertex"))
    props = [h.split()[-1] for h in header if h.startswith("property") and "list" not in h]
    fields = [("xyz", "<f4", (3,))]
    if "quality" in props:
        fields.append(("q", "<f4"))
    if "red" in props:
        fields.append(("rgb", "u1", (3,)))
    vrec = np.frombuffer(data, dtype=fields, count=V, offset=end)
    q = vrec["q"].astype(float) if "quality" in props else None
    return vrec["xyz"].astype(float), q


def normalize_area(mesh: TriangleMesh, target_area: float = 1.0):
    """Scale uniformly about the vertex centroid to the target total area.

    Returns
    -------
    (TriangleMesh, float)
        The scaled mesh and the linear scale factor applied.
    """
    area = mesh.area
    if not area > 0:
        raise DegenerateMeshError("mesh has zero total area")
    scale = float(np.sqrt(target_area / area))
    centroid = mesh.vertices.mean(axis=0)
    verts = centroid + (mesh.vertices - centroid) * scale
    return TriangleMesh(verts, mesh.faces), scale


@dataclass(frozen=True, eq=False)
class SamplePointSet:
    positions: np.ndarray
    face_index: np.ndarray
    barycentric: np.ndarray
    normals: np.ndarray
    fields: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.positions)


def sample_uniform(mesh: TriangleMesh, count: int, rng_seed: int) -> SamplePointSet:
    """Draw ``count`` area-uniform points on the surface.

    Faces are chosen by inverting the cumulative area distribution, then a
    point is drawn uniformly inside the face with the square-root trick.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = make_rng(rng_seed)
    u = rng.random((count, 3))
    cdf = np.cumsum(mesh.face_areas)
    cdf /= cdf[-1]
    face = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), mesh.n_faces - 1)
    s = np.sqrt(u[:, 1])
    bary = np.stack([1.0 - s, s * (1.0 - u[:, 2]), s * u[:, 2]], axis=1)
    tri = mesh.faces[face]
    positions = np.einsum("sk,skd->sd", bary, mesh.vertices[tri])
    normals = np.einsum("sk,skd->sd", bary, mesh.vertex_normals[tri])
    length = np.linalg.norm(normals, axis=1)
    # interpolated normals can cancel on folded regions; fall back to the face normal
    weak = length < 1e-12
    normals[weak] = mesh.face_normals[face[weak]]
    length[weak] = 1.0
    normals /= length[:, None]
    return SamplePointSet(positions, face.astype(np.int64), bary, normals)


def transfer_field(mesh: TriangleMesh, vertex_values, points: SamplePointSet) -> np.ndarray:
    """Barycentric interpolation of per-vertex values onto sample points."""
    values = np.asarray(vertex_values, dtype=float)
    if values.shape[0] != mesh.n_vertices:
        raise ValueError(f"{values.shape[0]} values for {mesh.n_vertices} vertices")
    squeeze = values.ndim == 1
    values = values.reshape(mesh.n_vertices, -1)
    tri = mesh.faces[points.face_index]
    out = np.einsum("sk,skc->sc", points.barycentric, values[tri])
    return out[:, 0] if squeeze else out


def nearest_sample(sample_positions, queries) -> np.ndarray:
    """Index of the nearest sample for each query; ties go to the lowest index."""
    sample_positions = np.asarray(sample_positions, dtype=float)
    queries = np.asarray(queries, dtype=float)
    if len(sample_positions) == 0:
        raise ValueError("empty point set")
    tree = cKDTree(sample_positions)
    dist, idx = tree.query(queries)
    # re-check every candidate within the minimal distance to enforce the tie-break
    slack = 1e-12 * (1.0 + dist)
    for q in range(len(queries)):
        cand = tree.query_ball_point(queries[q], dist[q] + slack[q])
        if len(cand) > 1:
            cand = np.asarray(cand)
            d2 = ((sample_positions[cand] - queries[q]) ** 2).sum(axis=1)
            idx[q] = cand[d2 == d2.min()].min()
    return idx


def map_back_to_vertices(points: SamplePointSet, values, mesh: TriangleMesh) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(points) == 0:
        raise ValueError("empty point set")
    if values.shape[0] != len(points):
        raise ValueError(f"{values.shape[0]} values for {len(points)} samples")
    return values[nearest_sample(points.positions, mesh.vertices)]


def save_samples(points: SamplePointSet, path) -> None:
    """Versioned binary sample set: header then little-endian payload."""
    S = len(points)
    with open(path, "wb") as fh:
        fh.write(SAMPLES_MAGIC)
        fh.write(struct.pack("<IQ", SAMPLES_VERSION, S))
        fh.write(np.ascontiguousarray(points.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(points.face_index, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(points.barycentric, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(points.normals, dtype="<f8").tobytes())


def load_samples(path) -> SamplePointSet:
    data = Path(path).read_bytes()
    if data[:8] != SAMPLES_MAGIC:
        raise ValueError(f"{path}: not a sample-set file")
    version, S = struct.unpack_from("<IQ", data, 8)
    if version != SAMPLES_VERSION:
        raise ValueError(f"{path}: unsupported sample-set version {version}")
    off = 8 + struct.calcsize("<IQ")

    def take(dtype, shape):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=off)
        off += arr.nbytes
        return arr.reshape(shape).astype(dtype[1:]).copy()

    positions = take("<f8", (S, 3))
    face = take("<i8", (S,))
    bary = take("<f8", (S, 3))
    normals = take("<f8", (S, 3))
    return SamplePointSet(positions, face, bary, normals)


def read_scalar_field(path) -> np.ndarray:
    """Per-vertex scalars: one value per line, or CSV with ``vertex_id,value``."""
    text = Path(path).read_text().strip().splitlines()
    if text and text[0].replace(" ", "").lower() == "vertex_id,value":
        rows = [line.split(",") for line in text[1:] if line.strip()]
        ids = np.array([int(r[0]) for r in rows])
        vals = np.array([float(r[1]) for r in rows])
        out = np.empty(len(rows))
        if sorted(ids.tolist()) != list(range(len(rows))):
            raise ValueError(f"{path}: vertex ids must cover 0..{len(rows) - 1}")
        out[ids] = vals
        return out
    return np.array([float(line) for line in text if line.strip()])


def write_scalar_field(path, values, csv: bool = False) -> None:
    values = np.asarray(values, dtype=float).ravel()
    if csv:
        lines = ["vertex_id,value"] + [f"{i},{v!r}" for i, v in enumerate(values.tolist())]
    else:
        lines = [repr(v) for v in values.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def mean_curvature(mesh: TriangleMesh, signed: bool = True) -> np.ndarray:
    """Per-vertex discrete mean curvature from the cotangent Laplacian.

    ``H_i = |L x|_i / (2 A_i)`` with barycentric vertex areas ``A_i``; when
    ``signed`` the sign is taken from the vertex normal so that convex
    regions of an outward-oriented surface are positive.
    """
    V, F = mesh.vertices, mesh.faces
    p = V[F]
    lap = np.zeros_like(V)
    for k in range(3):
        i, j = F[:, k], F[:, (k + 1) % 3]
        a = p[:, k] - p[:, (k + 2) % 3]
        b = p[:, (k + 1) % 3] - p[:, (k + 2) % 3]
        cot = np.einsum("ij,ij->i", a, b) / np.linalg.norm(np.cross(a, b), axis=1)
        # edge (i, j) is opposite vertex o
        diff = (V[j] - V[i]) * (0.5 * cot)[:, None]
        np.add.at(lap, i, diff)
        np.add.at(lap, j, -diff)
    area = np.zeros(len(V))
    for k in range(3):
        np.add.at(area, F[:, k], mesh.face_areas / 3.0)
    vec = lap / area[:, None]
    H = 0.5 * np.linalg.norm(vec, axis=1)
    if signed:
        # the Laplacian of position points against the outward normal on convex parts
        H = np.where(np.einsum("ij,ij->i", vec, mesh.vertex_normals) > 0.0, -H, H)
    return H
