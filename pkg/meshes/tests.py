import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from .models import NodeTag, RegionMask
from .serializers import MeshParametersSerializer, MeshTextSerializer
from .services.mesh_builder import (
    build_disk_mesh,
    label_regions_by_disks,
    region_mask_from_annulus,
    region_mask_from_disk,
    region_mask_from_labels,
    tag_gamma,
)


class DiskMeshTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.coarse = build_disk_mesh(radius=1.0, h=0.2)
        cls.fine = build_disk_mesh(radius=1.0, h=0.1)
        cls.annulus = build_disk_mesh(radius=1.0, cavity=((0.0, 0.0), 0.3), h=0.1)

    def test_disk_boundary_on_unit_circle(self):
        mesh = self.coarse
        radii = np.hypot(*mesh.vertices[mesh.boundary_edges.ravel()].T)
        np.testing.assert_allclose(radii, 1.0, atol=1e-12)
        self.assertTrue(np.all(mesh.areas > 0))
        self.assertTrue(np.all(mesh.edge_tags == NodeTag.OUTER))

    def test_max_edge_length(self):
        self.assertLessEqual(self.coarse.max_edge_length, 1.5 * 0.2)
        self.assertLessEqual(self.fine.max_edge_length, 1.5 * 0.1)

    def test_annulus_area(self):
        area = self.annulus.areas.sum()
        self.assertAlmostEqual(area / (math.pi * 0.91), 1.0, delta=0.02)
        self.assertTrue(self.annulus.has_cavity)

    def test_cavity_nodes_disjoint_from_outer(self):
        tags = self.annulus.node_tags
        cavity = np.flatnonzero(tags == NodeTag.CAVITY)
        self.assertGreater(len(cavity), 0)
        np.testing.assert_allclose(np.hypot(*self.annulus.vertices[cavity].T), 0.3, atol=1e-12)

    def test_euler_relation(self):
        self.assertEqual(self.coarse.euler_characteristic(), 1)
        self.assertEqual(self.fine.euler_characteristic(), 1)
        self.assertEqual(self.annulus.euler_characteristic(), 0)

    def test_refinement_monotonicity(self):
        self.assertGreaterEqual(self.fine.n_triangles, 2 * self.coarse.n_triangles)
        self.assertLessEqual(self.fine.max_edge_length, self.coarse.max_edge_length)

    def test_outer_ring_independent_of_cavity(self):
        outer = self.fine.vertices[self.fine.boundary_nodes]
        annulus_outer = self.annulus.vertices[self.annulus.node_tags == NodeTag.OUTER]
        np.testing.assert_array_equal(outer, annulus_outer)

    def test_cavity_too_close(self):
        with self.assertRaises(ValidationError) as ctx:
            build_disk_mesh(radius=1.0, cavity=((0.9, 0.0), 0.3), h=0.1)
        self.assertEqual(ctx.exception.code, 'cavity_too_close')

    def test_degenerate_parameters(self):
        for h in (0.0, -0.1, 1.5):
            with self.assertRaises(ValidationError) as ctx:
                build_disk_mesh(radius=1.0, h=h)
            self.assertEqual(ctx.exception.code, 'degenerate_parameters')


class GammaTaggingTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = build_disk_mesh(radius=1.0, h=0.2)

    def test_full_arc(self):
        tagged = tag_gamma(self.mesh, (0.0, 2.0 * math.pi))
        self.assertTrue(np.all(tagged.edge_tags == NodeTag.GAMMA))
        self.assertEqual(len(tagged.gamma_nodes), len(self.mesh.boundary_nodes))

    def test_quarter_arc(self):
        tagged = tag_gamma(self.mesh, (0.0, math.pi / 2))
        n_gamma = int(np.sum(tagged.edge_tags == NodeTag.GAMMA))
        self.assertLessEqual(abs(n_gamma - len(tagged.edge_tags) / 4), 1)

    def test_mixed_nodes_resolve_to_gamma(self):
        tagged = tag_gamma(self.mesh, (0.0, math.pi))
        n_gamma_edges = int(np.sum(tagged.edge_tags == NodeTag.GAMMA))
        self.assertEqual(len(tagged.gamma_nodes), n_gamma_edges + 1)

    def test_empty_gamma(self):
        spacing = 2.0 * math.pi / len(self.mesh.boundary_edges)
        between = spacing / 2
        with self.assertRaises(ValidationError) as ctx:
            tag_gamma(self.mesh, (between - 0.01, between + 0.01))
        self.assertEqual(ctx.exception.code, 'empty_gamma')

    def test_original_mesh_unchanged(self):
        tag_gamma(self.mesh, (0.0, math.pi))
        self.assertTrue(np.all(self.mesh.edge_tags == NodeTag.OUTER))


class RegionMaskTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = build_disk_mesh(radius=1.0, h=0.1)

    def test_covering_disk(self):
        mask = region_mask_from_disk(self.mesh, (0.0, 0.0), 2.0)
        self.assertEqual(len(mask), self.mesh.n_triangles)

    def test_disjoint_disk(self):
        with self.assertRaises(ValidationError) as ctx:
            region_mask_from_disk(self.mesh, (5.0, 5.0), 0.5)
        self.assertEqual(ctx.exception.code, 'empty_mask')

    def test_central_disk_area(self):
        mask = region_mask_from_disk(self.mesh, (0.0, 0.0), 0.5)
        self.assertAlmostEqual(mask.area(self.mesh) / (math.pi * 0.25), 1.0, delta=0.05)

    def test_set_operations(self):
        inner = region_mask_from_disk(self.mesh, (0.0, 0.0), 0.5)
        outer = region_mask_from_annulus(self.mesh, 0.7, 1.0)
        self.assertFalse(inner.intersects(outer))
        self.assertTrue(inner.intersects(inner.union(outer)))
        self.assertEqual(len(inner) + len(inner.complement()), self.mesh.n_triangles)
        self.assertTrue(RegionMask.empty(self.mesh).is_empty)
        self.assertAlmostEqual(RegionMask.full(self.mesh).area(self.mesh), self.mesh.areas.sum())

    def test_labels_and_connectivity(self):
        labelled = label_regions_by_disks(self.mesh, [((0.0, 0.0), 0.5)])
        self.assertEqual(set(np.unique(labelled.cell_regions)), {0, 1})
        inside = region_mask_from_labels(labelled, [1])
        outside = region_mask_from_labels(labelled, [0])
        self.assertTrue(self.mesh.is_connected(inside.triangles))
        self.assertTrue(self.mesh.is_connected(outside.triangles))
        self.assertFalse(self.mesh.is_connected([]))

    def test_annulus_disconnects_disk(self):
        ring = region_mask_from_annulus(self.mesh, 0.4, 0.6)
        self.assertFalse(self.mesh.is_connected(ring.complement().triangles))


class MeshTextSerializerTests(SimpleTestCase):
    def test_round_trip(self):
        mesh = tag_gamma(build_disk_mesh(radius=1.0, cavity=((0.1, 0.0), 0.25), h=0.2), (0.0, math.pi))
        mesh = label_regions_by_disks(mesh, [((0.0, 0.5), 0.3)])
        serializer = MeshTextSerializer()
        text = serializer.dumps(mesh)
        self.assertTrue(text.startswith('MESH2D v1\n'))
        loaded = serializer.loads(text)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.triangles, mesh.triangles)
        np.testing.assert_array_equal(loaded.cell_regions, mesh.cell_regions)
        np.testing.assert_array_equal(loaded.node_tags, mesh.node_tags)
        self.assertEqual(serializer.dumps(loaded), text)

    def test_rejects_bad_header(self):
        with self.assertRaises(ValidationError) as ctx:
            MeshTextSerializer().loads('MESH3D v1\nV 0\n')
        self.assertEqual(ctx.exception.code, 'invalid_mesh_file')

    def test_rejects_truncated_block(self):
        text = MeshTextSerializer().dumps(build_disk_mesh(radius=1.0, h=0.25))
        with self.assertRaises(ValidationError):
            MeshTextSerializer().loads('\n'.join(text.splitlines()[:10]))


class MeshParametersSerializerTests(SimpleTestCase):
    def test_defaults(self):
        serializer = MeshParametersSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data['h'], 0.1)
        self.assertAlmostEqual(serializer.validated_data['gamma'][1], 2.0 * math.pi)

    def test_cavity_clearance(self):
        serializer = MeshParametersSerializer(data={
            'h': 0.1, 'cavity': {'center': [0.9, 0.0], 'radius': 0.3},
        })
        self.assertFalse(serializer.is_valid())
