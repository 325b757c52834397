import numpy as np
import pytest

from violinmorph.errors import ContractError
from violinmorph.mesh import TriangleMesh
from violinmorph.slicing import (
    SectionPlane,
    cross_section,
    extreme_points,
    section_offsets,
)
from violinmorph.synthetic import disc_plate, icosphere

from conftest import grid_mesh


class TestSectionPlane:
    def test_normal_is_normalized(self):
        plane = SectionPlane((0, 0, 2.0), 1.0)
        assert np.linalg.norm(plane.normal) == pytest.approx(1.0, abs=1e-15)

    def test_zero_normal_rejected(self):
        with pytest.raises(ContractError):
            SectionPlane((0, 0, 0), 0.0)


class TestCrossSection:
    def test_cube_mid_plane_square(self, cube):
        polys = cross_section(cube, SectionPlane((0, 0, 1.0), 0.5))
        assert len(polys) == 1
        assert polys[0].closed
        assert polys[0].length == pytest.approx(4.0, abs=1e-9)

    def test_sphere_circumference_analytic(self):
        sphere = icosphere(10.0, 4)  # 5120 faces
        polys = cross_section(sphere, SectionPlane((0, 0, 1.0), 0.0))
        assert len(polys) == 1
        assert polys[0].closed
        assert polys[0].length == pytest.approx(2 * np.pi * 10.0, rel=0.01)

    def test_plane_misses_mesh(self, cube):
        assert cross_section(cube, SectionPlane((0, 0, 1.0), 5.0)) == []

    def test_points_lie_on_plane(self, cube):
        sphere = icosphere(7.0, 3)
        for mesh, plane in [
            (cube, SectionPlane((1, 1, 1), 0.8)),
            (sphere, SectionPlane((0.3, -0.5, 0.81), 1.2)),
        ]:
            for poly in cross_section(mesh, plane):
                resid = poly.points @ plane.normal - plane.offset
                assert np.abs(resid).max() < 1e-9

    def test_watertight_sections_closed(self):
        sphere = icosphere(5.0, 3)
        for z in (-3.0, 0.0, 2.5):
            for poly in cross_section(sphere, SectionPlane((0, 0, 1.0), z)):
                assert poly.closed

    def test_open_surface_section_is_open(self):
        plate = disc_plate(rings=20, sectors=60)
        polys = cross_section(plate.mesh, SectionPlane((1, 0, 0), 0.0))
        assert polys
        assert not any(p.closed for p in polys)

    def test_vertex_on_plane_is_handled(self, cube):
        # plane through 4 cube vertices exactly
        polys = cross_section(cube, SectionPlane((0, 0, 1.0), 0.0))
        assert polys == [] or all(len(p) >= 2 for p in polys)

    def test_rigid_motion_invariance_of_length(self):
        sphere = icosphere(6.0, 3)
        plane = SectionPlane((0.2, 0.3, 0.95), 1.1)
        total = sum(p.length for p in cross_section(sphere, plane))

        ang = np.deg2rad(33.0)
        rot = np.array([
            [np.cos(ang), -np.sin(ang), 0],
            [np.sin(ang), np.cos(ang), 0],
            [0, 0, 1],
        ])
        shift = np.array([3.0, -8.0, 2.0])
        moved = sphere.transformed(rotation=rot, translation=shift)
        n2 = rot @ plane.normal
        plane2 = SectionPlane(n2, plane.offset + n2 @ shift)
        total2 = sum(p.length for p in cross_section(moved, plane2))
        assert total2 == pytest.approx(total, rel=1e-9)

    def test_consecutive_points_distinct(self):
        plate = disc_plate(rings=25, sectors=70)
        for poly in cross_section(plate.mesh, SectionPlane((0, 1, 0), 3.3)):
            gaps = np.linalg.norm(np.diff(poly.points, axis=0), axis=1)
            assert gaps.min() > 1e-9


class TestSectionOffsets:
    def test_regular_lattice(self):
        offs = section_offsets(-2.5, 2.5, 1.0)
        np.testing.assert_allclose(offs, [-2, -1, 0, 1, 2])

    def test_spacing_larger_than_extent_gives_midpoint(self):
        offs = section_offsets(3.0, 4.0, 10.0)
        np.testing.assert_allclose(offs, [3.5])

    def test_bad_spacing(self):
        with pytest.raises(ContractError):
            section_offsets(0, 1, 0)


class TestExtremePoints:
    def test_rectangular_plate_extremes_on_long_edges(self):
        mesh = grid_mesh(12, 6)  # x in [0,11], y in [0,5]
        pts = extreme_points(mesh, axis="x", spacing=1.0)
        ys = pts[:, 1]
        assert set(np.round(ys, 9)) <= {0.0, 5.0}

    def test_elliptical_shell_matches_analytic_boundary(self):
        plate = disc_plate(radius=30.0, minor=18.0, rings=40, sectors=160)
        mean_edge = float(plate.mesh.edge_lengths.mean())
        pts = extreme_points(plate.mesh, axis="x", spacing=2.0)
        for x, y, _ in pts:
            expected = 18.0 * np.sqrt(max(1 - (x / 30.0) ** 2, 0.0))
            assert abs(abs(y) - expected) <= mean_edge

    def test_spacing_larger_than_extent_still_sections(self):
        mesh = grid_mesh(5, 5)
        pts = extreme_points(mesh, axis="x", spacing=100.0)
        assert len(pts) >= 2

    def test_keep_interval_retains_more_points(self):
        mesh = grid_mesh(12, 8)
        base = extreme_points(mesh, axis="x", spacing=1.0)
        more = extreme_points(mesh, axis="x", spacing=1.0,
                              keep_interval=(4.5, 6.5), keep_count=4)
        assert len(more) > len(base)

    def test_prefer_z_breaks_ties(self):
        # two stacked rows of identical xy: prefer_z selects the surface
        verts = [
            [0, 0, 0], [1, 0, 0], [2, 0, 0],
            [0, 5, 0], [1, 5, 0], [2, 5, 0],
            [0, 0, 3], [1, 0, 3], [2, 0, 3],
            [0, 5, 3], [1, 5, 3], [2, 5, 3],
        ]
        faces = [[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4],
                 [6, 7, 10], [6, 10, 9], [7, 8, 11], [7, 11, 10],
                 [0, 1, 7], [0, 7, 6], [3, 4, 10], [3, 10, 9]]
        mesh = TriangleMesh(verts, faces)
        hi = extreme_points(mesh, axis="x", spacing=1.0, prefer_z="max", tie_tol=0.5)
        lo = extreme_points(mesh, axis="x", spacing=1.0, prefer_z="min", tie_tol=0.5)
        assert np.all(hi[:, 2] == 3.0)
        assert np.all(lo[:, 2] == 0.0)

    def test_bad_axis(self):
        with pytest.raises(ContractError):
            extreme_points(grid_mesh(4, 4), axis="z")
