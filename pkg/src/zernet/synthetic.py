"""Synthetic bumpy-sphere meshes with mean-curvature targets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import sph_harm_y

from .mesh import TriangleMesh, make_rng, mean_curvature, normalize_area, save_obj, write_scalar_field


def icosphere(level: int = 4, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere (``10*4**level + 2`` vertices)."""
    t = (1.0 + 5**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                v = verts[a] + verts[b]
                verts.append(v / np.linalg.norm(v))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(radius * np.array(verts), np.array(faces))


def real_sph_harm(l: int, m: int, polar, azimuth):
    y = sph_harm_y(l, abs(m), polar, azimuth)
    if m > 0:
        return np.sqrt(2.0) * (-1) ** m * y.real
    if m < 0:
        return np.sqrt(2.0) * (-1) ** m * y.imag
    return y.real


@dataclass(frozen=True)
class SyntheticConfig:
    level: int = 4
    min_degree: int = 2
    max_degree: int = 4
    amplitude: float = 0.05
    decay: float = 1.5  # coefficient std falls as degree**-decay
    curvature_offset: float = 0.0


def bumpy_sphere(rng: np.random.Generator, config: SyntheticConfig) -> TriangleMesh:
    """Unit sphere with radius modulated by a random low-order harmonic field."""
    base = icosphere(config.level)
    v = base.vertices
    polar = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    azimuth = np.arctan2(v[:, 1], v[:, 0])
    bump = np.zeros(len(v))
    for l in range(config.min_degree, config.max_degree + 1):
        std = config.amplitude * (l / config.min_degree) ** -config.decay
        for m in range(-l, l + 1):
            bump += rng.normal(0.0, std) * real_sph_harm(l, m, polar, azimuth)
    radius = np.maximum(1.0 + bump, 0.2)
    return TriangleMesh(v * radius[:, None], base.faces)


def curvature_target(mesh: TriangleMesh, offset: float = 0.0) -> np.ndarray:
    """Signed mean curvature plus a constant offset; must come out positive."""
    H = mean_curvature(mesh, signed=True) + offset
    if H.min() <= 0:
        raise ValueError(
            f"curvature target not positive (min {H.min():.3g}); raise curvature_offset"
        )
    return H


def synthetic_meshes(count: int, seed: int, config: SyntheticConfig | None = None):
    """In-memory list of ``(area-normalized mesh, curvature target)`` pairs."""
    if count < 2:
        raise ValueError("need at least 2 meshes for leave-one-out")
    config = config or SyntheticConfig()
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        mesh, _ = normalize_area(bumpy_sphere(rng, config))
        out.append((mesh, curvature_target(mesh, config.curvature_offset)))
    return out


def generate_synthetic(count: int, seed: int, out_dir, config: SyntheticConfig | None = None):
    """Write ``count`` area-normalized bumpy spheres and targets plus a manifest.

    Returns the manifest path. Output bytes depend only on ``(count, seed, config)``.
    """
    config = config or SyntheticConfig()
    meshes = synthetic_meshes(count, seed, config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (mesh, target) in enumerate(meshes):
        mesh_path = out_dir / f"mesh_{k:03d}.obj"
        field_path = out_dir / f"mesh_{k:03d}.txt"
        save_obj(mesh, mesh_path)
        write_scalar_field(field_path, target)
        entries.append({"mesh": mesh_path.name, "field": field_path.name})
    manifest = {
        "version": 1,
        "entries": entries,
        "folds": list(range(count)),
        "generator": {"seed": seed, **asdict(config)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
