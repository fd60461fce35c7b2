import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from coefficients.models import PiecewiseCoefficient
from forward.services.boundary_data import random_data, trig_family
from forward.services.solver import get_problem, solve_linear
from meshes.models import NodeTag, RegionMask
from meshes.services.mesh_builder import (
    build_disk_mesh,
    region_mask_from_annulus,
    region_mask_from_disk,
    tag_gamma,
)
from semilinear_recovery.exceptions import SolverError

from .services.localization import (
    RegularizedPencil,
    build_energy_operators,
    energy_on_region,
    localized_potential_sequence,
)


class EnergyOnRegionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(radius=1.0, h=0.1), (0.0, 2.0 * math.pi))

    def test_constant_field_gives_area(self):
        mask = region_mask_from_disk(self.mesh, (0.2, 0.1), 0.4)
        self.assertAlmostEqual(energy_on_region(self.mesh, np.ones(self.mesh.n_vertices), mask), mask.area(self.mesh))

    def test_zero_field(self):
        self.assertEqual(energy_on_region(self.mesh, np.zeros(self.mesh.n_vertices), RegionMask.full(self.mesh)), 0.0)

    def test_x_squared_over_disk(self):
        energy = energy_on_region(self.mesh, self.mesh.vertices[:, 0], RegionMask.full(self.mesh))
        self.assertAlmostEqual(energy, math.pi / 4.0, delta=0.02)

    def test_empty_mask(self):
        self.assertEqual(energy_on_region(self.mesh, np.ones(self.mesh.n_vertices), RegionMask.empty(self.mesh)), 0.0)


class EnergyOperatorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(radius=1.0, h=0.1), (0.0, 2.0 * math.pi))
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.d1 = region_mask_from_annulus(cls.mesh, 0.75, 1.0, label='D1')
        cls.d2 = region_mask_from_disk(cls.mesh, (0.0, 0.0), 0.3, label='D2')
        cls.pair = build_energy_operators(cls.mesh, cls.sigma, cls.d1, cls.d2)

    def test_shapes_and_psd(self):
        n = len(self.mesh.gamma_nodes)
        self.assertEqual(self.pair.m1.shape, (n, n))
        self.assertEqual(self.pair.n.shape, (n, n))
        self.assertTrue(self.pair.is_psd())

    def test_quadratic_form_identity(self):
        rng = np.random.Generator(np.random.Philox(3))
        for _ in range(3):
            f = random_data(self.mesh, rng, 1.0)
            v = solve_linear(self.mesh, self.sigma, bdry=f)
            e1, e2 = self.pair.energies(f.values)
            self.assertAlmostEqual(e1, energy_on_region(self.mesh, v, self.d1), delta=1e-8 * max(e1, 1.0))
            self.assertAlmostEqual(e2, energy_on_region(self.mesh, v, self.d2), delta=1e-8 * max(e2, 1.0))

    def test_ratio_grows_with_frequency(self):
        family = trig_family(self.mesh, 8)
        ratios = []
        for f in family[0::2]:
            e1, e2 = self.pair.energies(f.values)
            ratios.append(e1 / e2)
        self.assertTrue(all(b > a for a, b in zip(ratios, ratios[1:])))

    def test_identical_regions(self):
        with self.assertRaises(ValidationError) as ctx:
            build_energy_operators(self.mesh, self.sigma, self.d1, self.d1)
        self.assertEqual(ctx.exception.code, 'regions_not_disjoint')

    def test_empty_d1(self):
        with self.assertRaises(ValidationError) as ctx:
            build_energy_operators(self.mesh, self.sigma, RegionMask.empty(self.mesh), self.d2)
        self.assertEqual(ctx.exception.code, 'empty_mask')

    def test_d2_disconnects_domain(self):
        ring = region_mask_from_annulus(self.mesh, 0.4, 0.6)
        with self.assertRaises(ValidationError) as ctx:
            build_energy_operators(self.mesh, self.sigma, region_mask_from_disk(self.mesh, (0.0, 0.0), 0.2), ring)
        self.assertEqual(ctx.exception.code, 'd2_disconnects_domain')

    def test_gamma_covered(self):
        outer = region_mask_from_annulus(self.mesh, 0.85, 1.0)
        with self.assertRaises(ValidationError) as ctx:
            build_energy_operators(self.mesh, self.sigma, self.d2, outer)
        self.assertEqual(ctx.exception.code, 'gamma_covered')


class PotentialSequenceTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(radius=1.0, h=0.1), (0.0, math.pi))
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.near = region_mask_from_disk(cls.mesh, (0.0, 0.55), 0.3, label='near')
        cls.far = region_mask_from_disk(cls.mesh, (0.0, -0.55), 0.3, label='far')
        cls.pair = build_energy_operators(cls.mesh, cls.sigma, cls.near, cls.far)
        cls.sequence = localized_potential_sequence(cls.pair, steps=8, min_growth=2.0)

    def test_ratio_at_least_doubles_per_step(self):
        ratios = self.sequence.ratios
        factors = [b / a for a, b in zip(ratios, ratios[1:])]
        self.assertEqual(len(factors), 7)
        self.assertGreaterEqual(min(factors), 2.0)
        self.assertGreaterEqual(ratios[-1] / ratios[0], 2.0 ** 7)

    def test_d1_energy_increases(self):
        energies = self.sequence.energies_d1
        self.assertTrue(all(b > a for a, b in zip(energies, energies[1:])))

    def test_d2_energy_nonincreasing(self):
        energies = self.sequence.energies_d2
        self.assertTrue(all(b <= a for a, b in zip(energies, energies[1:])))
        np.testing.assert_allclose(energies, np.sqrt(self.sequence.deltas), rtol=1e-10)

    def test_deltas_on_halving_grid(self):
        deltas = np.array(self.sequence.deltas)
        self.assertTrue(np.all(np.diff(deltas) < 0))
        exponents = -np.log2(deltas / 1e-2)
        np.testing.assert_allclose(exponents, np.round(exponents), atol=1e-9)
        self.assertGreaterEqual(exponents[0], -1e-9)

    def test_directions_normalized_on_gamma(self):
        rest = self.mesh.boundary_nodes[self.mesh.node_tags[self.mesh.boundary_nodes] != NodeTag.GAMMA]
        for step in self.sequence:
            self.assertAlmostEqual(step.direction.sup_norm, 1.0)
            np.testing.assert_array_equal(step.potential.to_nodal()[rest], 0.0)
            self.assertGreater(step.eigenvalue, 0.0)

    def test_energies_match_solutions(self):
        step = self.sequence[len(self.sequence) // 2]
        v = solve_linear(self.mesh, self.sigma, bdry=step.potential)
        self.assertAlmostEqual(energy_on_region(self.mesh, v, self.near) / step.energy_d1, 1.0, places=6)
        self.assertAlmostEqual(energy_on_region(self.mesh, v, self.far) / step.energy_d2, 1.0, places=4)

    def test_eigenvalue_matches_rayleigh_quotient(self):
        pencil = RegularizedPencil(self.pair)
        step = self.sequence[2]
        value, x = pencil.leading(step.delta)
        quotient = (x @ self.pair.m1 @ x) / (x @ (self.pair.m2 + step.delta * pencil.scale * self.pair.n) @ x)
        self.assertAlmostEqual(quotient / value, 1.0, delta=1e-8)
        self.assertAlmostEqual(value, step.eigenvalue, delta=1e-10 * value)

    def test_swapped_regions_reverse_the_trend(self):
        swapped = self.pair.swapped()
        ratios = []
        for step in self.sequence:
            e_far, e_near = swapped.energies(step.potential.values)
            ratios.append(e_far / e_near)
            self.assertAlmostEqual(ratios[-1] * step.ratio, 1.0, delta=1e-4)
        self.assertTrue(all(b < a for a, b in zip(ratios, ratios[1:])))
        self.assertLessEqual(ratios[-1] / ratios[0], 1.001 * 2.0 ** -7)

    def test_weighted_energies_match_quadrature(self):
        problem = get_problem(self.mesh, self.sigma)
        weight = problem.quadrature.interpolate(1.0 + 0.5 * self.mesh.vertices[:, 1]) ** 2
        pair = build_energy_operators(self.mesh, self.sigma, self.near, self.far, weight)
        f = random_data(self.mesh, np.random.Generator(np.random.Philox(5)), 1.0)
        w = problem.quadrature.interpolate(problem.solve_linear(bdry=f))
        per_triangle = problem.quadrature.integrate_per_triangle(w ** 2 * weight)
        e1, e2 = pair.energies(f.values)
        self.assertAlmostEqual(e1 / per_triangle[self.near.triangles].sum(), 1.0, places=6)
        self.assertAlmostEqual(e2 / per_triangle[self.far.triangles].sum(), 1.0, places=6)
        sequence = localized_potential_sequence(pair, steps=5, min_growth=1.0)
        self.assertTrue(all(b > a for a, b in zip(sequence.energies_d1, sequence.energies_d1[1:])))

    def test_negative_weight(self):
        with self.assertRaises(ValidationError) as ctx:
            build_energy_operators(self.mesh, self.sigma, self.near, self.far, -np.ones(self.mesh.n_triangles))
        self.assertEqual(ctx.exception.code, 'negative_data')

    def test_empty_d2(self):
        pair = build_energy_operators(self.mesh, self.sigma, self.near, RegionMask.empty(self.mesh))
        sequence = localized_potential_sequence(pair, steps=5)
        energies = sequence.energies_d1
        self.assertTrue(all(b > a for a, b in zip(energies, energies[1:])))
        self.assertEqual(sequence.energies_d2, [0.0] * 5)
        self.assertTrue(math.isinf(sequence[0].ratio))

    def test_unreachable_sequence_length(self):
        with self.assertRaises(SolverError) as ctx:
            localized_potential_sequence(self.pair, steps=8, min_growth=1e6, halvings=10)
        self.assertEqual(ctx.exception.code, 'no_localization')
        self.assertLess(ctx.exception.params['longest'], 8)

    def test_invalid_steps(self):
        for kwargs in ({'steps': 1}, {'min_growth': 0.5}, {'delta0': 0.0}, {'steps': 8, 'halvings': 4}):
            with self.subTest(**kwargs), self.assertRaises(ValidationError) as ctx:
                localized_potential_sequence(self.pair, **kwargs)
            self.assertEqual(ctx.exception.code, 'invalid_steps')

    def test_rows(self):
        rows = self.sequence.as_rows()
        self.assertEqual(len(rows), 8)
        self.assertEqual(set(rows[0]), {'step', 'delta', 'scale', 'energy_d1', 'energy_d2', 'ratio', 'eigenvalue'})
