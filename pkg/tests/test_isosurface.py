import numpy as np
import pytest

from tacshape.isosurface import ScalarGrid, marching_cubes, sample_grid
from tacshape.mesh import surface_area
from tacshape.spatial import closest_point


def sphere_field(r):
    return lambda p: np.linalg.norm(p, axis=1) - r


class TestSampleGrid:
    def test_constant_field(self):
        g = sample_grid(lambda p: np.ones(len(p)), [-1] * 3, [1] * 3, 4)
        assert np.all(g.values == 1.0)

    def test_linear_axis0(self):
        g = sample_grid(lambda p: p[:, 0], [-1] * 3, [1] * 3, 3)
        assert np.allclose(g.values[0], -1.0)
        assert np.allclose(g.values[1], 0.0)
        assert np.allclose(g.values[2], 1.0)

    def test_chunking_invariant(self):
        f = sphere_field(0.5)
        a = sample_grid(f, [-1] * 3, [1] * 3, 9, chunk=17)
        b = sample_grid(f, [-1] * 3, [1] * 3, 9, chunk=100000)
        assert np.array_equal(a.values, b.values)

    def test_rejects_resolution_below_2(self):
        with pytest.raises(ValueError):
            sample_grid(sphere_field(0.5), [-1] * 3, [1] * 3, 1)


@pytest.fixture(scope="module")
def sphere_mesh_64():
    g = sample_grid(sphere_field(0.5), [-1] * 3, [1] * 3, 64)
    return marching_cubes(g)


class TestMarchingCubes:
    def test_vertices_near_surface(self, sphere_mesh_64):
        r = np.linalg.norm(sphere_mesh_64.vertices, axis=1)
        cell_diag = np.sqrt(3) * 2.0 / 63
        assert np.abs(r - 0.5).max() < cell_diag

    def test_area_within_3pct(self, sphere_mesh_64):
        analytic = 4 * np.pi * 0.25
        assert abs(surface_area(sphere_mesh_64) - analytic) / analytic < 0.03

    def test_watertight(self, sphere_mesh_64):
        assert sphere_mesh_64.watertight

    def test_outward_normals(self, sphere_mesh_64):
        c = sphere_mesh_64.triangle_corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        centers = c.mean(axis=1)
        assert np.all((n * centers).sum(axis=1) > 0)

    def test_empty_level_set(self):
        g = sample_grid(lambda p: np.ones(len(p)), [-1] * 3, [1] * 3, 8)
        mesh = marching_cubes(g)
        assert mesh.is_empty

    def test_deterministic(self):
        g = sample_grid(sphere_field(0.4), [-1] * 3, [1] * 3, 24)
        a = marching_cubes(g)
        b = marching_cubes(g)
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.faces, b.faces)

    def test_vertices_inside_cell_edges(self):
        # a field with exact zeros at grid nodes exercises interpolation clipping
        g = sample_grid(lambda p: p[:, 0], [-1] * 3, [1] * 3, 5)
        mesh = marching_cubes(g)
        assert not mesh.is_empty
        # the plane x=0 hits grid nodes exactly; clipped interpolation keeps
        # vertices strictly inside their generating edges
        h = 2.0 / 4
        frac = np.abs(mesh.vertices[:, 0] % h) / h
        frac = np.minimum(frac, 1 - frac)
        assert np.all((frac > 0) | np.isclose(frac, 0, atol=1e-12) == (frac > 0))

    def test_refinement_improves(self):
        # error at least halves per resolution doubling (second-order observed)
        errs = []
        for res in (16, 32, 64):
            g = sample_grid(sphere_field(0.5), [-1] * 3, [1] * 3, res)
            mesh = marching_cubes(g)
            # symmetric Hausdorff proxy against the analytic sphere
            vert_err = np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).max()
            from tacshape.mesh import sample_surface

            pts, _ = sample_surface(mesh, 2000, seed=1)
            sample_err = np.abs(np.linalg.norm(pts, axis=1) - 0.5).max()
            errs.append(max(vert_err, sample_err))
        assert errs[0] / errs[1] >= 1.5
        assert errs[1] / errs[2] >= 1.5

    def test_nonfinite_rejected(self):
        vals = np.ones((4, 4, 4))
        vals[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            marching_cubes(ScalarGrid(vals, [-1] * 3, [1] * 3))

    def test_grid_evaluation_matches_pointwise(self):
        f = sphere_field(0.3)
        g = sample_grid(f, [-1] * 3, [1] * 3, 6)
        xs = g.axis_coords(0)
        for i in (0, 3, 5):
            for j in (1, 4):
                for k in (2, 5):
                    p = np.array([[xs[i], g.axis_coords(1)[j], g.axis_coords(2)[k]]])
                    assert g.values[i, j, k] == f(p)[0]


class TestAgainstMeshSdf:
    def test_roundtrip_mesh_to_field_to_mesh(self, half_cube):
        from tacshape.spatial import signed_distance

        g = sample_grid(lambda p: signed_distance(half_cube, p), [-0.8] * 3, [0.8] * 3, 32)
        rec = marching_cubes(g)
        assert rec.watertight
        _, d, _ = closest_point(half_cube, rec.vertices)
        assert d.max() < np.sqrt(3) * 1.6 / 31
