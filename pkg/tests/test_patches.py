import math
import warnings

import numpy as np
import pytest

from zernet.mesh import SamplePointSet, make_rng, normalize_area, sample_uniform
from zernet.patches import (
    PatchConfig,
    PatchError,
    PatchSet,
    SparsePatchWarning,
    build_patch,
    build_patch_operator,
    build_patches,
    extract_all,
    geodesic_distances,
    knn_graph,
    normalize_and_align,
    tangent_frame,
)
from zernet.synthetic import SyntheticConfig, bumpy_sphere, icosphere
from zernet.zernike import ZernikeBasis, ZernikeIndex, eval_basis, norm_factor

BASIS = ZernikeBasis(5)


def point_set(positions, normals=None):
    positions = np.asarray(positions, dtype=float)
    S = len(positions)
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (S, 1))
    return SamplePointSet(positions, np.zeros(S, int), np.tile([1.0, 0, 0], (S, 1)),
                          np.asarray(normals, dtype=float))


def plane_grid(n=21, spacing=1.0):
    ax = (np.arange(n) - n // 2) * spacing
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), np.zeros(n * n)])


def dense_disk(radius=1.0, seed=0, count=600):
    """Random points in a flat disk, center first."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.random(count))
    t = rng.random(count) * 2 * np.pi
    pos = np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(count)])
    pos[0] = 0.0
    return point_set(pos)


def full_patch(points, center, r0, k=8):
    g = knn_graph(points.positions, k)
    members, d = geodesic_distances(g, center, r0)
    return build_patch(points, center, members, d, r0)


@pytest.fixture(scope="module")
def sphere_samples():
    mesh, _ = normalize_area(bumpy_sphere(make_rng(3), SyntheticConfig(amplitude=0.05)))
    return mesh, sample_uniform(mesh, 2000, 4)


@pytest.fixture(scope="module")
def sphere_patches(sphere_samples):
    mesh, pts = sphere_samples
    return build_patches(pts, PatchConfig(area_fraction=0.05), BASIS, mesh.area)


class TestGeodesic:
    def test_center_zero(self):
        g = knn_graph(plane_grid(5), 8)
        members, d = geodesic_distances(g, 12, 10.0)
        assert d[members == 12][0] == 0.0

    def test_plane_close_to_euclidean(self):
        pos = plane_grid(41)
        g = knn_graph(pos, 8)
        center = len(pos) // 2
        members, d = geodesic_distances(g, center, 15.0)
        eucl = np.linalg.norm(pos[members] - pos[center], axis=1)
        far = eucl > 3
        assert np.all(d >= eucl - 1e-12)
        assert np.max(d[far] / eucl[far]) < 1.10

    def test_truncation_on_sphere(self):
        pts = icosphere(3).vertices
        g = knn_graph(pts, 8)
        members, d = geodesic_distances(g, 0, 0.5)
        assert d.max() <= 0.5
        assert len(members) < len(pts)
        assert np.all(d >= np.linalg.norm(pts[members] - pts[0], axis=1) - 1e-12)

    def test_sparse_warning(self):
        g = knn_graph(plane_grid(5), 8)
        with pytest.warns(SparsePatchWarning):
            geodesic_distances(g, 12, 0.5, min_points=5)


class TestFrame:
    @pytest.mark.parametrize("n", [[0, 0, 1], [1, 0, 0], [-1, 0, 0], [0.3, -0.5, 0.8]])
    def test_right_handed_orthonormal(self, n):
        F = tangent_frame(n)
        np.testing.assert_allclose(F @ F.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(np.cross(F[0], F[1]), F[2], atol=1e-12)

    def test_x_reference(self):
        np.testing.assert_allclose(tangent_frame([0, 0, 1])[0], [1, 0, 0])
        np.testing.assert_allclose(tangent_frame([1, 0, 0])[0], [0, 1, 0])


class TestBuildPatch:
    def test_center_and_axis(self):
        pts = point_set(plane_grid(11, 0.1))
        center = 60
        patch = full_patch(pts, center, 0.45)
        k = np.flatnonzero(patch.members == center)[0]
        assert patch.r[k] == 0 and patch.theta[k] == 0
        k = np.flatnonzero(patch.members == center + 11)[0]  # offset (+0.1, 0, 0)
        assert patch.theta[k] == pytest.approx(0.0, abs=1e-12)
        assert patch.r[k] == pytest.approx(0.1 / 0.45)
        assert patch.r.max() <= 1.0

    def test_rotation_about_normal_shifts_angles(self):
        pts = dense_disk()
        base = full_patch(pts, 0, 0.5)
        phi = 0.83
        c, s = math.cos(phi), math.sin(phi)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        turned = full_patch(point_set(pts.positions @ rot.T), 0, 0.5)
        np.testing.assert_array_equal(turned.members, base.members)
        off = base.members != 0
        delta = np.mod(turned.theta[off] - base.theta[off], 2 * np.pi)
        wrapped = np.angle(np.exp(1j * (delta - phi)))
        assert np.abs(wrapped).max() < 1e-6


@pytest.fixture(scope="module")
def patch():
    return full_patch(dense_disk(), 0, 0.8)


@pytest.fixture(scope="module")
def setup(sphere_samples, sphere_patches):
    return sphere_samples[1], sphere_patches


class TestOperator:
    def test_recovers_basis(self, patch):
        F = build_patch_operator(patch, BASIS)
        for j in range(BASIS.size):
            coeffs = F @ eval_basis(BASIS.indices[j], patch.r, patch.theta)
            assert np.abs(coeffs - np.eye(21)[j]).max() < 1e-6

    def test_zero(self, patch):
        F = build_patch_operator(patch, BASIS)
        assert np.all(F @ np.zeros(len(patch)) == 0)

    def test_ramp(self, patch):
        F = build_patch_operator(patch, BASIS)
        alpha = 1.7
        coeffs = F @ (alpha * patch.r * np.cos(patch.theta))
        j = ZernikeIndex(1, 1).j
        assert coeffs[j] == pytest.approx(alpha / norm_factor(1, 1), abs=1e-6)
        assert np.abs(np.delete(coeffs, j)).max() < 1e-6

    def test_refit_residual(self, patch):
        F = build_patch_operator(patch, BASIS)
        E = BASIS.eval_matrix(patch.r, patch.theta)
        a = np.random.default_rng(0).normal(size=21)
        assert np.abs(F @ (E @ a) - a).max() < 1e-8

    def test_too_few_members(self):
        pts = dense_disk(count=30)
        patch = full_patch(pts, 0, 0.1)
        with pytest.raises(PatchError):
            build_patch_operator(patch, BASIS)


class TestAlign:
    def test_center_zero(self, setup):
        pts, ps = setup
        patch = ps.patch(10)
        out = normalize_and_align(pts.positions, patch)
        k = np.flatnonzero(patch.members == 10)[0]
        np.testing.assert_array_equal(out[k], 0.0)

    def test_translation_invariant(self, setup):
        pts, ps = setup
        patch = ps.patch(5)
        a = normalize_and_align(pts.positions, patch)
        b = normalize_and_align(pts.positions + [3.0, -1.0, 2.0], patch)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rigid_rotation(self, setup):
        pts, ps = setup
        rot = _random_rotation(1)
        patch = ps.patch(7)
        rotated = build_patch(point_set(pts.positions @ rot.T, pts.normals @ rot.T), 7,
                              patch.members, patch.r * ps.r0, ps.r0)
        a = normalize_and_align(pts.positions, patch)
        b = normalize_and_align(pts.positions @ rot.T, rotated)
        np.testing.assert_allclose(a[:, 2], b[:, 2], atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(a[:, :2], axis=1),
                                   np.linalg.norm(b[:, :2], axis=1), atol=1e-6)
        ang = np.angle((b[:, 0] + 1j * b[:, 1]) / (a[:, 0] + 1j * a[:, 1] + 1e-300))
        big = np.linalg.norm(a[:, :2], axis=1) > 1e-3
        assert np.ptp(np.unwrap(ang[big])) < 1e-6


def _random_rotation(seed):
    q, r = np.linalg.qr(np.random.default_rng(seed).normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


class TestExtraction:
    def test_constant_field(self, sphere_samples, sphere_patches):
        _, pts = sphere_samples
        field = np.full(len(pts), 2.0)
        assert np.abs(extract_all(pts, field, sphere_patches, normalize=True)).max() < 1e-9
        coeffs = extract_all(pts, field, sphere_patches, normalize=False)
        assert coeffs.shape == (len(pts), 1, 21)
        np.testing.assert_allclose(coeffs[:, 0, 0], 2.0 * math.sqrt(math.pi), rtol=1e-8)
        assert np.abs(coeffs[:, 0, 1:]).max() < 1e-8

    def test_sparse_matches_loop(self, sphere_samples, sphere_patches):
        _, pts = sphere_samples
        field = np.random.default_rng(0).normal(size=(len(pts), 4))
        fast = extract_all(pts, field, sphere_patches, normalize=True)
        for x in (0, 17, 999, 1999):
            F = sphere_patches.fit_matrix(x)
            m = sphere_patches.patch(x).members
            expected = (F @ (field[m] - field[x])).T
            np.testing.assert_allclose(fast[x], expected, atol=1e-12)

    def test_flat_plane_normal_channel(self):
        pts = dense_disk(count=2000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SparsePatchWarning)  # rim patches are half disks
            ps = build_patches(pts, PatchConfig(area_fraction=0.05), BASIS, math.pi)
        coeffs = ps.input_coefficients(pts.positions)
        assert np.abs(coeffs[:, 2, :]).max() < 1e-12
        assert np.abs(coeffs[:, :2, :]).max() > 1e-3

    def test_rigid_motion_equals_coefficient_rotation(self, sphere_samples, sphere_patches):
        _, pts = sphere_samples
        rot = _random_rotation(5)
        shift = np.array([0.4, -2.0, 1.0])
        moved = point_set(pts.positions @ rot.T + shift, pts.normals @ rot.T)
        ps2 = build_patches(moved, PatchConfig(area_fraction=0.05), BASIS, 1.0)
        np.testing.assert_array_equal(ps2.members, sphere_patches.members)
        a = sphere_patches.input_coefficients(pts.positions)
        b = ps2.input_coefficients(moved.positions)
        for x in range(0, len(pts), 97):
            e1 = rot @ sphere_patches.frames[x, 0]
            F2 = ps2.frames[x]
            phi = math.atan2(e1 @ F2[1], e1 @ F2[0])
            R = BASIS.rotation_matrix(-phi)
            c, s = math.cos(phi), math.sin(phi)
            expected = np.stack([c * a[x, 0] - s * a[x, 1], s * a[x, 0] + c * a[x, 1], a[x, 2]])
            np.testing.assert_allclose(b[x], expected @ R.T, atol=1e-6)


class TestPatchSet:
    def test_cache_round_trip(self, sphere_patches, tmp_path):
        sphere_patches.save(tmp_path / "p.bin")
        again = PatchSet.load(tmp_path / "p.bin")
        again.save(tmp_path / "q.bin")
        assert (tmp_path / "p.bin").read_bytes() == (tmp_path / "q.bin").read_bytes()
        np.testing.assert_array_equal(again.fit, sphere_patches.fit)
        assert again.r0 == sphere_patches.r0

    def test_deterministic_build(self, sphere_samples, sphere_patches, tmp_path):
        mesh, pts = sphere_samples
        again = build_patches(pts, PatchConfig(area_fraction=0.05), BASIS, mesh.area)
        sphere_patches.save(tmp_path / "a.bin")
        again.save(tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_refit_invariant_every_patch(self, sphere_patches):
        a = np.random.default_rng(2).normal(size=21)
        worst = 0.0
        for x in range(len(sphere_patches)):
            p = sphere_patches.patch(x)
            E = BASIS.eval_matrix(p.r, p.theta)
            worst = max(worst, np.abs(sphere_patches.fit_matrix(x) @ (E @ a) - a).max())
        assert worst < 1e-8

    def test_member_count_error(self):
        pts = dense_disk(count=60)
        with pytest.raises(PatchError):
            build_patches(pts, PatchConfig(area_fraction=0.02), BASIS, math.pi)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PatchConfig(area_fraction=1.5)
        with pytest.raises(ValueError):
            PatchConfig(min_patch_points=5).min_points(21)
        assert PatchConfig().min_points(21) == 42
        assert PatchConfig(area_fraction=0.01).radius(1.0) == pytest.approx(math.sqrt(0.01 / math.pi))
