"""Geodesic-ball patches over a sampled surface and their Zernike fit operators.

Each sample point owns a patch: the samples within graph-geodesic distance
``r0`` of it, mapped to polar disk coordinates ``(d / r0, theta)``. The fit
operator of a patch is the pseudoinverse of the basis evaluation matrix at
those coordinates, so applying it to member values yields Zernike
coefficients. All patch operators together form one sparse linear map from
a per-sample field to per-sample coefficient vectors.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .mesh import SamplePointSet
from .zernike import RANK_RTOL, RankDeficiencyWarning, ZernikeBasis

log = logging.getLogger(__name__)

CACHE_MAGIC = b"ZNPTCH\x00\x00"
CACHE_VERSION = 1
_AXIS_TOL = 1e-6


class PatchError(ValueError):
    def __init__(self, center: int, message: str):
        super().__init__(f"patch {center}: {message}")
        self.center = center


class SparsePatchWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PatchConfig:
    area_fraction: float = 0.01
    neighbor_k: int = 8
    min_patch_points: int | None = None  # None means 2N

    def __post_init__(self):
        if not 0.0 < self.area_fraction < 1.0:
            raise ValueError(f"area_fraction must lie in (0, 1), got {self.area_fraction}")
        if self.neighbor_k < 1:
            raise ValueError("neighbor_k must be positive")

    def radius(self, total_area: float) -> float:
        """Flat-disk radius enclosing ``area_fraction`` of the surface."""
        r0 = math.sqrt(self.area_fraction * total_area / math.pi)
        if not r0 > 0:
            raise ValueError("patch radius must be positive")
        return r0

    def min_points(self, n_basis: int) -> int:
        m = 2 * n_basis if self.min_patch_points is None else self.min_patch_points
        if m < n_basis:
            raise ValueError(f"min_patch_points {m} below basis size {n_basis}")
        return m


@dataclass(frozen=True, eq=False)
class LocalPatch:
    center: int
    members: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    frame: np.ndarray  # rows e1, e2, normal

    def __len__(self) -> int:
        return len(self.members)


def knn_graph(positions, k: int = 8) -> sparse.csr_matrix:
    """Symmetric k-nearest-neighbour graph weighted by Euclidean edge length."""
    positions = np.asarray(positions, dtype=float)
    S = len(positions)
    k = min(k, S - 1)
    if k < 1:
        return sparse.csr_matrix((S, S))
    dist, idx = cKDTree(positions).query(positions, k=k + 1)
    rows = np.repeat(np.arange(S), k)
    cols = idx[:, 1:].ravel()
    w = dist[:, 1:].ravel()
    # zero-length edges would vanish from the sparse structure
    w = np.maximum(w, 1e-300)
    g = sparse.csr_matrix((w, (rows, cols)), shape=(S, S))
    return g.maximum(g.T).tocsr()


def geodesic_distances(graph, center: int, r0: float, min_points: int = 0):
    """Dijkstra distances from ``center``, truncated at ``r0``.

    Returns
    -------
    (indices, distances)
        Reached samples in increasing index order and their graph distances.
    """
    d = dijkstra(graph, directed=False, indices=[center], limit=r0)[0]
    reached = np.flatnonzero(d <= r0)
    if len(reached) < min_points:
        warnings.warn(
            f"patch {center} reached only {len(reached)} points (< {min_points})",
            SparsePatchWarning,
            stacklevel=2,
        )
    return reached, d[reached]


def tangent_frame(normal) -> np.ndarray:
    """Right-handed frame (e1, e2, n) with e1 the projection of global +X.

    Global +Y is used instead when the normal is within 1e-6 of +-X.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    axis = np.array([1.0, 0.0, 0.0])
    if abs(abs(n[0]) - 1.0) < _AXIS_TOL:
        axis = np.array([0.0, 1.0, 0.0])
    e1 = axis - (axis @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2, n])


def build_patch(points: SamplePointSet, center: int, members, distances, r0: float) -> LocalPatch:
    """Map geodesic-ball members to polar disk coordinates around ``center``."""
    members = np.asarray(members, dtype=np.int64)
    distances = np.asarray(distances, dtype=float)
    frame = tangent_frame(points.normals[center])
    offset = points.positions[members] - points.positions[center]
    theta = np.mod(np.arctan2(offset @ frame[1], offset @ frame[0]), 2.0 * np.pi)
    r = np.clip(distances / r0, 0.0, 1.0)
    at_center = members == center
    theta[at_center] = 0.0
    r[at_center] = 0.0
    return LocalPatch(center, members, r, theta, frame)


def build_patch_operator(patch: LocalPatch, basis: ZernikeBasis) -> np.ndarray:
    """Pseudoinverse fit matrix (N x members) of one patch."""
    if len(patch) < basis.size:
        raise PatchError(patch.center, f"{len(patch)} members < {basis.size} basis functions")
    E = basis.eval_matrix(patch.r, patch.theta)
    U, sv, Vt = np.linalg.svd(E, full_matrices=False)
    keep = sv > RANK_RTOL * sv[0]
    if not keep.all():
        warnings.warn(
            f"patch {patch.center}: rank {keep.sum()} < {basis.size}",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return (Vt[keep].T / sv[keep]) @ U[:, keep].T


def normalize_and_align(features, patch: LocalPatch) -> np.ndarray:
    """Center-subtracted member positions expressed in the patch frame."""
    features = np.asarray(features, dtype=float)
    offset = features[patch.members] - features[patch.center]
    return offset @ patch.frame.T


class PatchSet:
    """All patches and fit operators for one sample set, stored flat.

    ``offsets[x]:offsets[x+1]`` slices the member arrays of patch ``x``; the
    fit matrix of patch ``x`` occupies ``fit[N*offsets[x]:N*offsets[x+1]]``
    in row-major ``(N, members)`` layout.
    """

    def __init__(self, counts, members, r, theta, frames, fit, r0, max_order):
        self.counts = np.asarray(counts, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])
        self.members = np.asarray(members, dtype=np.int64)
        self.r = np.asarray(r, dtype=float)
        self.theta = np.asarray(theta, dtype=float)
        self.frames = np.asarray(frames, dtype=float).reshape(-1, 3, 3)
        self.fit = np.asarray(fit, dtype=float)
        self.r0 = float(r0)
        self.max_order = int(max_order)
        self.n_basis = (self.max_order + 1) * (self.max_order + 2) // 2
        self._operators = {}

    def __len__(self) -> int:
        return len(self.counts)

    def patch(self, x: int) -> LocalPatch:
        sl = slice(self.offsets[x], self.offsets[x + 1])
        return LocalPatch(x, self.members[sl], self.r[sl], self.theta[sl], self.frames[x])

    def fit_matrix(self, x: int) -> np.ndarray:
        N = self.n_basis
        return self.fit[N * self.offsets[x] : N * self.offsets[x + 1]].reshape(N, -1)

    def extraction_operator(self, normalize: bool = True) -> sparse.csr_matrix:
        """Sparse ``(S*N, S)`` map from a field to stacked patch coefficients.

        With ``normalize`` every patch first subtracts its center value.
        """
        if normalize in self._operators:
            return self._operators[normalize]
        S, N = len(self), self.n_basis
        rows, cols, vals = [], [], []
        for x in range(S):
            F = self.fit_matrix(x)
            m = self.members[self.offsets[x] : self.offsets[x + 1]]
            rows.append(np.repeat(x * N + np.arange(N), len(m)))
            cols.append(np.tile(m, N))
            vals.append(F.ravel())
            if normalize:
                rows.append(x * N + np.arange(N))
                cols.append(np.full(N, x))
                vals.append(-F.sum(axis=1))
        op = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(S * N, S),
        )
        op.sum_duplicates()
        self._operators[normalize] = op
        return op

    def extract(self, field, normalize: bool = True) -> np.ndarray:
        """Zernike coefficients of every patch, shape ``(S, C, N)``."""
        field = np.asarray(field, dtype=float)
        squeeze = field.ndim == 1
        field = field.reshape(len(self), -1)
        out = self.extraction_operator(normalize) @ field
        out = out.reshape(len(self), self.n_basis, -1).transpose(0, 2, 1)
        return out[:, 0, :] if squeeze else np.ascontiguousarray(out)

    def input_coefficients(self, positions) -> np.ndarray:
        """Coefficients of frame-aligned, center-subtracted XYZ, shape ``(S, 3, N)``."""
        positions = np.asarray(positions, dtype=float)
        out = np.empty((len(self), 3, self.n_basis))
        for x in range(len(self)):
            aligned = normalize_and_align(positions, self.patch(x))
            out[x] = (self.fit_matrix(x) @ aligned).T
        return out

    def save(self, path) -> None:
        S, N = len(self), self.n_basis
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<IQIId", CACHE_VERSION, S, N, self.max_order, self.r0))
            fh.write(self.counts.astype("<u4").tobytes())
            fh.write(self.members.astype("<i8").tobytes())
            for arr in (self.r, self.theta, self.frames.ravel(), self.fit):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PatchSet":
        data = Path(path).read_bytes()
        if data[:8] != CACHE_MAGIC:
            raise ValueError(f"{path}: not a patch cache file")
        head = "<IQIId"
        version, S, N, max_order, r0 = struct.unpack_from(head, data, 8)
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported patch cache version {version}")
        off = 8 + struct.calcsize(head)
        counts = np.frombuffer(data, "<u4", S, off).astype(np.int64)
        off += 4 * S
        total = int(counts.sum())
        members = np.frombuffer(data, "<i8", total, off).astype(np.int64)
        off += 8 * total
        floats = np.frombuffer(data, "<f8", offset=off).astype(float)
        if floats.size != 2 * total + 9 * S + N * total:
            raise ValueError(f"{path}: truncated patch cache")
        r, theta = floats[:total], floats[total : 2 * total]
        frames = floats[2 * total : 2 * total + 9 * S]
        fit = floats[2 * total + 9 * S :]
        ps = cls(counts, members, r, theta, frames, fit, r0, max_order)
        if ps.n_basis != N:
            raise ValueError(f"{path}: basis size {N} inconsistent with order {max_order}")
        return ps

    def summary(self) -> dict:
        return {
            "patches": len(self),
            "r0": self.r0,
            "n_basis": self.n_basis,
            "mean_members": float(self.counts.mean()),
            "min_members": int(self.counts.min()),
            "max_members": int(self.counts.max()),
        }


def build_patches(
    points: SamplePointSet,
    config: PatchConfig,
    basis: ZernikeBasis,
    total_area: float,
    chunk: int = 256,
) -> PatchSet:
    """Build every patch and fit operator of a sample set.

    Patches with fewer than ``N`` members raise :class:`PatchError`; patches
    between ``N`` and ``min_patch_points`` are kept and counted in a single
    :class:`SparsePatchWarning`.
    """
    S, N = len(points), basis.size
    r0 = config.radius(total_area)
    min_points = config.min_points(N)
    graph = knn_graph(points.positions, config.neighbor_k)
    counts = np.empty(S, dtype=np.int64)
    members, rs, thetas, fits = [], [], [], []
    frames = np.empty((S, 3, 3))
    sparse_count = 0
    rank_def = 0
    for start in range(0, S, chunk):
        centers = np.arange(start, min(start + chunk, S))
        dist = dijkstra(graph, directed=False, indices=centers, limit=r0)
        for row, x in enumerate(centers):
            reached = np.flatnonzero(dist[row] <= r0)
            if len(reached) < N:
                raise PatchError(int(x), f"{len(reached)} members < {N} basis functions")
            if len(reached) < min_points:
                sparse_count += 1
            patch = build_patch(points, int(x), reached, dist[row, reached], r0)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", RankDeficiencyWarning)
                F = build_patch_operator(patch, basis)
            rank_def += len(caught)
            counts[x] = len(reached)
            members.append(patch.members)
            rs.append(patch.r)
            thetas.append(patch.theta)
            frames[x] = patch.frame
            fits.append(F.ravel())
    if sparse_count:
        warnings.warn(
            f"{sparse_count} of {S} patches have fewer than {min_points} members",
            SparsePatchWarning,
            stacklevel=2,
        )
    if rank_def:
        warnings.warn(
            f"{rank_def} of {S} patch fits are rank deficient",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    ps = PatchSet(
        counts,
        np.concatenate(members),
        np.concatenate(rs),
        np.concatenate(thetas),
        frames,
        np.concatenate(fits),
        r0,
        basis.max_order,
    )
    ps.sparse_count = sparse_count
    ps.rank_deficient_count = rank_def
    log.info("built %d patches: %s", S, ps.summary())
    return ps


def extract_all(points: SamplePointSet, field, patches: PatchSet, normalize: bool = True):
    """Per-point, per-channel Zernike coefficients of a field, shape ``(S, C, N)``."""
    field = np.asarray(field, dtype=float)
    if field.shape[0] != len(points) or len(patches) != len(points):
        raise ValueError("field, points and patches must share the sample count")
    return patches.extract(field.reshape(len(points), -1), normalize=normalize)
