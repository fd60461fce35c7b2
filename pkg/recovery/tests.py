import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from coefficients.models import NonlinearitySeries, PiecewiseCoefficient
from forward.services.boundary_data import positive_family, trig_family
from forward.services.solver import get_problem, solve_linear
from meshes.services.mesh_builder import (
    build_disk_mesh,
    label_regions_by_disks,
    region_mask_from_annulus,
    region_mask_from_disk,
    tag_gamma,
)
from potentials.services.localization import build_energy_operators, localized_potential_sequence
from semilinear_recovery.exceptions import SolverError

from .models import CavityStatus, MeasurementSet, region_array
from .services.cavity import detect_cavity, transfer_coefficient
from .services.measurements import simulate_measurements
from .services.nonlinearity import recover_am_step, recover_nonlinearity, solve_stage_system
from .services.sigma import recover_sigma_linearized
from .services.sign_regions import piecewise_sign_regions
from .services.witness import contradiction_functional


def linear_data(mesh, sigma, family, noise_level=0.0, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    return simulate_measurements(
        mesh, sigma, NonlinearitySeries.zero(mesh.n_triangles), [(f, f) for f in family], [(1, 0)],
        noise_level=noise_level, rng=rng,
    )


class MeasurementTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(h=0.25), (0.0, 2.0 * math.pi))
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.family = trig_family(cls.mesh, 3)

    def test_same_seed_same_values(self):
        first = linear_data(self.mesh, self.sigma, self.family, 0.01, seed=4)
        second = linear_data(self.mesh, self.sigma, self.family, 0.01, seed=4)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.measurement.values, b.measurement.values)

    def test_noise_changes_values_only(self):
        clean = linear_data(self.mesh, self.sigma, self.family)
        noisy = linear_data(self.mesh, self.sigma, self.family, 0.01, seed=1)
        self.assertEqual([e.order for e in clean], [e.order for e in noisy])
        for a, b in zip(clean, noisy):
            self.assertFalse(np.array_equal(a.measurement.values, b.measurement.values))
            self.assertLess(b.measurement.relative_error(a.measurement), 0.05)

    def test_orders_and_validation(self):
        series = NonlinearitySeries.from_terms(self.mesh.n_triangles, {2: 1.0})
        measurements = simulate_measurements(
            self.mesh, self.sigma, series, [(self.family[0], self.family[1])], [(1, 0), (2, 0), (1, 1)],
        )
        self.assertEqual(measurements.orders, [(1, 0), (1, 1), (2, 0)])
        with self.assertRaises(ValidationError) as ctx:
            measurements.validate(max_order=1)
        self.assertEqual(ctx.exception.code, 'invalid_order')

    def test_noise_needs_generator(self):
        with self.assertRaises(ValidationError):
            simulate_measurements(
                self.mesh, self.sigma, NonlinearitySeries.zero(self.mesh.n_triangles),
                [(self.family[0], self.family[0])], [(1, 0)], noise_level=0.01,
            )


class SigmaRecoveryTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        mesh = tag_gamma(build_disk_mesh(h=0.1), (0.0, 2.0 * math.pi))
        cls.mesh = label_regions_by_disks(mesh, [((0.0, 0.0), 0.5)])
        cls.labels = cls.mesh.cell_regions
        cls.family = trig_family(cls.mesh, 8)
        cls.two_valued = PiecewiseCoefficient.from_regions(cls.mesh, {0: 1.0, 1: 2.0})

    def test_truth_is_fixed_point(self):
        data = linear_data(self.mesh, PiecewiseCoefficient.constant(self.mesh), self.family)
        estimate = recover_sigma_linearized(self.mesh, self.labels, data)
        self.assertAlmostEqual(estimate.values[0], 1.0, delta=1e-6)
        self.assertAlmostEqual(estimate.values[1], 1.0, delta=1e-6)

    def test_two_region_inclusion(self):
        data = linear_data(self.mesh, self.two_valued, self.family)
        estimate = recover_sigma_linearized(self.mesh, self.labels, data)
        self.assertAlmostEqual(estimate.values[0], 1.0, delta=0.01)
        self.assertAlmostEqual(estimate.values[1], 2.0, delta=0.02)
        self.assertLess(estimate.misfit, estimate.initial_misfit)
        np.testing.assert_allclose(estimate.coefficient.values, region_array(self.labels, estimate.values))

    def test_coarser_model_fits_worse(self):
        data = linear_data(self.mesh, self.two_valued, self.family)
        fine = recover_sigma_linearized(self.mesh, self.labels, data)
        coarse = recover_sigma_linearized(self.mesh, np.zeros(self.mesh.n_triangles, dtype=np.int64), data)
        self.assertGreater(coarse.misfit, 0.0)
        self.assertGreater(coarse.misfit, fine.misfit)

    def test_small_noise_degrades_gracefully(self):
        data = linear_data(self.mesh, self.two_valued, self.family, noise_level=1e-3, seed=7)
        estimate = recover_sigma_linearized(self.mesh, self.labels, data)
        self.assertAlmostEqual(estimate.values[1], 2.0, delta=0.1)

    def test_error_grows_linearly_with_noise(self):
        levels = [1e-4, 1e-3, 1e-2]
        errors = []
        for level in levels:
            data = linear_data(self.mesh, self.two_valued, self.family, noise_level=level, seed=11)
            estimate = recover_sigma_linearized(self.mesh, self.labels, data)
            errors.append(max(abs(estimate.values[0] - 1.0), abs(estimate.values[1] - 2.0)) / 2.0)
        for level, error in zip(levels, errors):
            self.assertGreater(error, 0.0)
            self.assertLess(error, 50.0 * level)
        for a, b in zip(errors, errors[1:]):
            self.assertGreater(b / a, 5.0)
            self.assertLess(b / a, 20.0)

    def test_insufficient_data(self):
        data = linear_data(self.mesh, self.two_valued, self.family[:1])
        with self.assertRaises(SolverError) as ctx:
            recover_sigma_linearized(self.mesh, self.labels, data)
        self.assertEqual(ctx.exception.code, 'insufficient_data')

    def test_too_many_regions(self):
        data = linear_data(self.mesh, self.two_valued, self.family[:2])
        labels = np.arange(self.mesh.n_triangles) % 13
        with self.assertRaises(ValidationError) as ctx:
            recover_sigma_linearized(self.mesh, labels, data)
        self.assertEqual(ctx.exception.code, 'too_many_regions')


class NonlinearityRecoveryTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        mesh = tag_gamma(build_disk_mesh(h=0.125), (0.0, 2.0 * math.pi))
        cls.mesh = label_regions_by_disks(mesh, [((0.0, 0.0), 0.5)])
        cls.labels = cls.mesh.cell_regions
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.family = positive_family(cls.mesh, 6)
        cls.pairs = [(f, cls.family[(i + 1) % 6]) for i, f in enumerate(cls.family)]
        a2 = region_array(cls.labels, {0: 0.0, 1: 1.0})
        a3 = region_array(cls.labels, {0: 0.5, 1: 1.0})
        cls.series = NonlinearitySeries.from_terms(cls.mesh.n_triangles, {2: a2, 3: a3})
        cls.measurements = simulate_measurements(cls.mesh, cls.sigma, cls.series, cls.pairs, [(2, 0), (2, 1)])
        cls.start = NonlinearitySeries.zero(cls.mesh.n_triangles)

    def test_second_order_inclusion(self):
        stage = recover_am_step(self.mesh, self.sigma, self.start, self.measurements, 2, self.labels, self.family)
        self.assertAlmostEqual(stage.values[0], 0.0, delta=1e-4)
        self.assertAlmostEqual(stage.values[1], 1.0, delta=1e-4)
        self.assertLess(stage.residual_after, stage.residual_before)

    def test_zero_coefficient(self):
        measurements = simulate_measurements(
            self.mesh, self.sigma, self.start, self.pairs[:3], [(2, 0)],
        )
        stage = recover_am_step(self.mesh, self.sigma, self.start, measurements, 2, self.labels, self.family)
        for value in stage.values.values():
            self.assertAlmostEqual(value, 0.0, delta=1e-8)

    def test_sequential_stages(self):
        stages = recover_nonlinearity(
            self.mesh, self.sigma, self.measurements, {2: self.labels, 3: self.labels}, self.family, 3,
        )
        self.assertEqual([stage.m for stage in stages], [2, 3])
        np.testing.assert_array_equal(stages[1].series.coefficient(2), stages[0].series.coefficient(2))
        self.assertAlmostEqual(stages[0].values[1], 1.0, delta=1e-4)
        self.assertAlmostEqual(stages[1].values[0], 0.5, delta=1e-4)
        self.assertAlmostEqual(stages[1].values[1], 1.0, delta=1e-4)

    def test_stage_map_is_linear(self):
        rng = np.random.Generator(np.random.Philox(2))
        matrix = rng.standard_normal((12, 3))
        rhs = rng.standard_normal(12)
        single, _ = solve_stage_system(matrix, rhs, 1e-8)
        double, _ = solve_stage_system(matrix, 2.0 * rhs, 1e-8)
        np.testing.assert_allclose(double, 2.0 * single, rtol=1e-10)

    def test_ill_conditioned_system(self):
        with self.assertRaises(SolverError) as ctx:
            solve_stage_system(np.ones((4, 2)), np.ones(4), 1e-8)
        self.assertEqual(ctx.exception.code, 'ill_conditioned_system')

    def test_missing_stage_data(self):
        measurements = MeasurementSet(self.mesh)
        with self.assertRaises(SolverError) as ctx:
            recover_am_step(self.mesh, self.sigma, self.start, measurements, 2, self.labels, self.family)
        self.assertEqual(ctx.exception.code, 'insufficient_data')

    def test_positive_data_give_positive_solutions(self):
        for f in self.family:
            u = solve_linear(self.mesh, self.sigma, bdry=f)
            self.assertGreaterEqual(u.min(), -1e-3 * u.max())


class QuarterGammaRecoveryTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        mesh = tag_gamma(build_disk_mesh(h=0.125), (0.0, 0.5 * math.pi))
        cls.mesh = label_regions_by_disks(mesh, [((0.0, 0.0), 0.5)])
        cls.labels = cls.mesh.cell_regions
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.family = positive_family(cls.mesh, 6)
        cls.pairs = [(f, cls.family[(i + 1) % 6]) for i, f in enumerate(cls.family)]
        a2 = region_array(cls.labels, {0: 0.0, 1: 1.0})
        cls.series = NonlinearitySeries.from_terms(cls.mesh.n_triangles, {2: a2})
        cls.start = NonlinearitySeries.zero(cls.mesh.n_triangles)

    def recover(self, noise_level=0.0):
        rng = np.random.Generator(np.random.Philox(3)) if noise_level else None
        measurements = simulate_measurements(
            self.mesh, self.sigma, self.series, self.pairs, [(2, 0)], noise_level=noise_level, rng=rng,
        )
        return recover_am_step(self.mesh, self.sigma, self.start, measurements, 2, self.labels, self.family)

    def test_noiseless_data_are_reproduced(self):
        stage = self.recover()
        self.assertAlmostEqual(stage.values[0], 0.0, delta=1e-4)
        self.assertAlmostEqual(stage.values[1], 1.0, delta=1e-4)

    def test_noisy_data(self):
        stage = self.recover(noise_level=1e-4)
        self.assertAlmostEqual(stage.values[0], 0.0, delta=0.15)
        self.assertAlmostEqual(stage.values[1], 1.0, delta=0.15)
        self.assertGreater(stage.regularization, 1e-8)


class CavityDetectionTests(SimpleTestCase):
    arc = (0.0, math.pi)
    h = 0.1

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(h=cls.h), cls.arc)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)

    def cavity_data(self, radius):
        mesh = tag_gamma(build_disk_mesh(cavity=((0.0, 0.0), radius), h=self.h), self.arc)
        return linear_data(mesh, PiecewiseCoefficient.constant(mesh), positive_family(mesh, 4))

    def test_no_cavity(self):
        data = linear_data(self.mesh, self.sigma, positive_family(self.mesh, 4))
        verdict = detect_cavity(self.mesh, self.sigma, data, self.arc, self.h, localize=False)
        self.assertEqual(verdict.status, CavityStatus.NONE)
        self.assertLessEqual(verdict.residual, verdict.noise_floor)
        self.assertIsNone(verdict.center)

    def test_disk_cavity_is_found(self):
        verdict = detect_cavity(self.mesh, self.sigma, self.cavity_data(0.3), self.arc, self.h, rounds=1)
        self.assertEqual(verdict.status, CavityStatus.DETECTED)
        self.assertLessEqual(math.hypot(*verdict.center), self.h)
        self.assertLessEqual(abs(verdict.radius - 0.3), 2 * self.h)
        self.assertGreater(len(verdict.landscape), 10)
        self.assertFalse(verdict.mask.is_empty)

    def test_residual_grows_with_radius(self):
        small = detect_cavity(self.mesh, self.sigma, self.cavity_data(0.25), self.arc, self.h, localize=False)
        large = detect_cavity(self.mesh, self.sigma, self.cavity_data(0.35), self.arc, self.h, localize=False)
        self.assertTrue(small.detected and large.detected)
        self.assertLess(small.residual, large.residual)

    def test_signed_data_rejected(self):
        data = linear_data(self.mesh, self.sigma, trig_family(self.mesh, 3))
        with self.assertRaises(ValidationError) as ctx:
            detect_cavity(self.mesh, self.sigma, data, self.arc, self.h, localize=False)
        self.assertEqual(ctx.exception.code, 'negative_data')

    def test_transfer_coefficient(self):
        other = build_disk_mesh(cavity=((0.2, 0.0), 0.2), h=self.h)
        constant = transfer_coefficient(PiecewiseCoefficient.constant(self.mesh, 1.5), self.mesh, other)
        np.testing.assert_array_equal(constant.values, 1.5)
        stepped = PiecewiseCoefficient.from_function(self.mesh, lambda c: np.where(c[:, 1] > 0, 2.0, 1.0))
        moved = transfer_coefficient(stepped, self.mesh, other)
        far = np.abs(other.barycenters[:, 1]) > 0.2
        np.testing.assert_array_equal(moved.values[far], np.where(other.barycenters[far, 1] > 0, 2.0, 1.0))


class SignRegionTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(h=0.2), (0.0, 2.0 * math.pi))
        cls.halves = (cls.mesh.barycenters[:, 0] > 0.2).astype(np.int64)

    def test_opposite_halves(self):
        split = piecewise_sign_regions(self.mesh, self.halves, {0: 1.0, 1: 0.0}, {0: 0.0, 1: 1.0})
        self.assertEqual(split.orientation, 'i')
        np.testing.assert_array_equal(split.d1.triangles, np.flatnonzero(self.halves == 0))
        np.testing.assert_array_equal(split.d2.triangles, np.flatnonzero(self.halves == 1))
        self.assertTrue(self.mesh.is_connected(split.d2.complement().triangles))

    def test_one_signed_difference(self):
        split = piecewise_sign_regions(self.mesh, self.halves, {0: 2.0, 1: 3.0}, {0: 1.0, 1: 1.0})
        self.assertEqual(split.orientation, 'i')
        self.assertTrue(split.d2.is_empty)
        self.assertEqual(len(split.d1), self.mesh.n_triangles)

    def test_equal_fields(self):
        with self.assertRaises(ValidationError) as ctx:
            piecewise_sign_regions(self.mesh, self.halves, {0: 1.0, 1: 2.0}, {0: 1.0, 1: 2.0})
        self.assertEqual(ctx.exception.code, 'fields_equal')

    def test_larger_d1_wins(self):
        split = piecewise_sign_regions(self.mesh, self.halves, {0: 0.0, 1: 1.0}, {0: 1.0, 1: 0.0})
        self.assertEqual(split.orientation, 'ii')
        np.testing.assert_array_equal(split.d1.triangles, np.flatnonzero(self.halves == 0))
        self.assertEqual(split.sign, -1.0)

    def test_no_valid_split(self):
        mesh = tag_gamma(build_disk_mesh(h=0.1), (0.0, 2.0 * math.pi))
        radius = np.hypot(*mesh.barycenters.T)
        labels = np.where(radius < 0.4, 0, np.where(radius <= 0.6, 1, 2))
        with self.assertRaises(ValidationError) as ctx:
            piecewise_sign_regions(mesh, labels, {0: 1.0, 1: -1.0, 2: 1.0}, {0: 0.0, 1: 0.0, 2: 0.0})
        self.assertEqual(ctx.exception.code, 'no_valid_split')


class ContradictionWitnessTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = tag_gamma(build_disk_mesh(h=0.1), (0.0, math.pi))
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.d1 = region_mask_from_disk(cls.mesh, (0.0, 0.55), 0.3)
        cls.d2 = region_mask_from_disk(cls.mesh, (0.0, -0.55), 0.3)
        cls.psi = positive_family(cls.mesh, 1)[0]
        problem = get_problem(cls.mesh, cls.sigma)
        w_psi = problem.quadrature.interpolate(problem.solve_linear(bdry=cls.psi)) / cls.psi.sup_norm
        pair = build_energy_operators(cls.mesh, cls.sigma, cls.d1, cls.d2, np.clip(w_psi, 0.0, None) ** 2)
        cls.sequence = localized_potential_sequence(pair, steps=8, min_growth=1.0)
        cls.difference = cls.d1.indicator.astype(float)

    def rows(self, difference, psi=None, m=3):
        return contradiction_functional(
            self.mesh, self.sigma, difference, m, self.d1, self.d2, self.sequence,
            self.psi if psi is None else psi,
        )

    def test_d1_part_increases_along_sequence(self):
        rows = self.rows(self.difference)
        d1 = [row['d1_part'] for row in rows]
        bounds = [row['d2_bound'] for row in rows]
        self.assertTrue(all(b > a for a, b in zip(d1, d1[1:])))
        self.assertTrue(all(b < a for a, b in zip(bounds, bounds[1:])))
        for row in rows:
            self.assertGreater(row['d1_part'], 0.0)
            self.assertEqual(row['d2_part'], 0.0)
            self.assertAlmostEqual(row['total'] / row['d1_part'], 1.0, places=10)

    def test_parts_are_weighted_sequence_energies(self):
        scale = self.psi.sup_norm ** 2
        for row, step in zip(self.rows(self.difference), self.sequence):
            self.assertAlmostEqual(row['d1_part'] / (scale * step.energy_d1), 1.0, places=5)
            self.assertAlmostEqual(row['d2_bound'] / (scale * step.energy_d2), 1.0, places=3)

    def test_equal_coefficients_vanish(self):
        for row in self.rows(np.zeros(self.mesh.n_triangles)):
            self.assertEqual(row['total'], 0.0)

    def test_homogeneous_in_psi(self):
        base = self.rows(self.difference)
        doubled = self.rows(self.difference, self.psi * 2.0)
        for a, b in zip(base, doubled):
            self.assertAlmostEqual(b['total'] / a['total'], 4.0, places=8)

    def test_signed_psi_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            self.rows(self.difference, -self.psi)
        self.assertEqual(ctx.exception.code, 'negative_data')

    def test_overlapping_regions(self):
        ring = region_mask_from_annulus(self.mesh, 0.0, 1.0)
        with self.assertRaises(ValidationError) as ctx:
            contradiction_functional(self.mesh, self.sigma, self.difference, 3, self.d1, ring, self.sequence, self.psi)
        self.assertEqual(ctx.exception.code, 'regions_not_disjoint')
