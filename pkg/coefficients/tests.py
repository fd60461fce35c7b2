import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from numpy.polynomial import Polynomial

from meshes.services.mesh_builder import build_disk_mesh, label_regions_by_disks

from .models import (
    NonlinearitySeries,
    PiecewiseCoefficient,
    choose_order,
    eval_a,
    eval_a_deriv,
    truncation_tail_bound,
)
from .serializers import CoefficientTextSerializer, PhantomSerializer
from .services.phantoms import build_phantom


def uniform_series(n_triangles, *values):
    return NonlinearitySeries(np.tile(np.asarray(values, dtype=float), (n_triangles, 1)))


class SeriesEvaluationTests(SimpleTestCase):
    def test_eval_a(self):
        self.assertAlmostEqual(eval_a(uniform_series(4, 1.0), 2, 2.0), 2.0)
        self.assertEqual(eval_a(NonlinearitySeries.zero(4, order=5), 0, 0.7), 0.0)
        self.assertAlmostEqual(eval_a(uniform_series(4, 1.0, 6.0), 1, 1.0), 1.5)

    def test_eval_a_deriv(self):
        series = uniform_series(3, 1.0)
        self.assertEqual(eval_a_deriv(series, 0, 0.0, 1), 0.0)
        self.assertAlmostEqual(eval_a_deriv(series, 0, 0.0, 2), 1.0)
        self.assertEqual(eval_a_deriv(series, 0, 0.3, 3), 0.0)
        self.assertAlmostEqual(eval_a_deriv(uniform_series(3, 1.0, 6.0), 2, 0.5, 1), 1.25)

    def test_order_zero_matches_eval_a(self):
        series = uniform_series(2, 1.0, 2.0, -1.0, 0.5)
        for y in (-0.4, 0.0, 0.3):
            self.assertEqual(eval_a_deriv(series, 1, y, 0), eval_a(series, 1, y))

    def test_central_difference_is_second_order(self):
        series = uniform_series(1, 1.0, 2.0, -1.0, 0.5)
        y = 0.3
        exact = eval_a_deriv(series, 0, y, 1)
        errors = [
            abs((eval_a(series, 0, y + d) - eval_a(series, 0, y - d)) / (2 * d) - exact)
            for d in (1e-3, 1e-4)
        ]
        self.assertGreater(errors[0] / errors[1], 50.0)

    def test_shift_identity_against_polynomial_derivatives(self):
        rng = np.random.Generator(np.random.Philox(7))
        series = NonlinearitySeries(rng.uniform(-1.0, 1.0, size=(5, 5)))
        for t in range(series.n_triangles):
            coefficients = np.zeros(series.order + 1)
            for k in range(2, series.order + 1):
                coefficients[k] = series.coefficient(k)[t] / math.factorial(k)
            polynomial = Polynomial(coefficients)
            for l in range(series.order + 2):
                for y in (-0.5, 0.2, 0.9):
                    self.assertAlmostEqual(eval_a_deriv(series, t, y, l), polynomial.deriv(l)(y), places=12)

    def test_vectorized_evaluation(self):
        series = NonlinearitySeries(np.array([[1.0, 0.0], [2.0, 6.0]]))
        y = np.array([[1.0, 2.0, 0.0], [1.0, 0.5, -1.0]])
        values = series.evaluate(y)
        self.assertEqual(values.shape, (2, 3))
        np.testing.assert_allclose(values, [[0.5, 2.0, 0.0], [2.0, 0.25 + 0.125, 1.0 - 1.0]])
        np.testing.assert_allclose(series.evaluate(0.5, l=1), [0.5, 1.0 + 0.75])


class TruncationTests(SimpleTestCase):
    def test_tail_bound_holds(self):
        rho = 0.5
        full = uniform_series(1, *([1.0] * 19))
        for order in (2, 3, 4, 6):
            gap = abs(eval_a(full, 0, rho) - eval_a(full.truncated(order), 0, rho))
            self.assertLessEqual(gap, truncation_tail_bound(1.0, rho, order))

    def test_choose_order(self):
        order = choose_order(1.0, 0.5, 1e-6)
        self.assertLessEqual(truncation_tail_bound(1.0, 0.5, order), 1e-6)
        self.assertGreater(truncation_tail_bound(1.0, 0.5, order - 1), 1e-6)

    def test_choose_order_fails(self):
        with self.assertRaises(ValidationError) as ctx:
            choose_order(1.0, 5.0, 1e-30, max_order=6)
        self.assertEqual(ctx.exception.code, 'order_not_found')


class CoefficientModelTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = label_regions_by_disks(build_disk_mesh(radius=1.0, h=0.25), [((0.0, 0.0), 0.5)])

    def test_sigma_lower_bound(self):
        with self.assertRaises(ValidationError) as ctx:
            PiecewiseCoefficient([1.0, 0.5], sigma_min=0.8)
        self.assertEqual(ctx.exception.code, 'invalid_coefficient')
        with self.assertRaises(ValidationError):
            PiecewiseCoefficient([1.0, 2.0], sigma_min=0.0)

    def test_sigma_from_regions(self):
        sigma = PiecewiseCoefficient.from_regions(self.mesh, {0: 2.0, 1: 1.0})
        self.assertEqual(sigma.sigma_min, 1.0)
        np.testing.assert_array_equal(sigma.values[self.mesh.cell_regions == 1], 1.0)
        self.assertEqual(sigma.region_values(self.mesh.cell_regions), {0: 2.0, 1: 1.0})
        with self.assertRaises(ValidationError):
            PiecewiseCoefficient.from_regions(self.mesh, {0: 2.0})

    def test_series_construction(self):
        series = NonlinearitySeries.from_terms(self.mesh.n_triangles, {2: 1.0, 4: 3.0})
        self.assertEqual(series.order, 4)
        np.testing.assert_array_equal(series.coefficient(3), 0.0)
        np.testing.assert_array_equal(series.coefficient(7), 0.0)
        self.assertEqual(series.sup_norm, 3.0)
        extended = series.with_coefficient(6, 2.0)
        self.assertEqual(extended.order, 6)
        np.testing.assert_array_equal(extended.coefficient(4), 3.0)
        with self.assertRaises(ValidationError):
            NonlinearitySeries.from_terms(self.mesh.n_triangles, {1: 1.0})

    def test_series_is_immutable(self):
        series = NonlinearitySeries.zero(3)
        with self.assertRaises(ValueError):
            series.coefficients[0, 0] = 1.0


class CoefficientTextSerializerTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = label_regions_by_disks(build_disk_mesh(radius=1.0, h=0.25), [((0.0, 0.0), 0.5)])

    def test_round_trip(self):
        rng = np.random.Generator(np.random.Philox(3))
        sigma = PiecewiseCoefficient(rng.uniform(1.0, 2.0, self.mesh.n_triangles), sigma_min=0.5)
        series = NonlinearitySeries(rng.normal(size=(self.mesh.n_triangles, 3)))
        serializer = CoefficientTextSerializer()
        loaded_sigma, loaded_series = serializer.loads(serializer.dumps(sigma, series), self.mesh)
        np.testing.assert_array_equal(loaded_sigma.values, sigma.values)
        self.assertEqual(loaded_sigma.sigma_min, 0.5)
        np.testing.assert_array_equal(loaded_series.coefficients, series.coefficients)

    def test_sigma_regions_shorthand(self):
        rows = '\n'.join('0.0' for _ in range(self.mesh.n_triangles))
        text = f"COEF v1\nSIGMA_REGIONS 2 1.0\n0 1.0\n1 3.0\nA 2\n{rows}\n"
        sigma, series = CoefficientTextSerializer().loads(text, self.mesh)
        np.testing.assert_array_equal(sigma.values[self.mesh.cell_regions == 1], 3.0)
        self.assertTrue(series.is_zero)

    def test_rejects_wrong_row_count(self):
        text = "COEF v1\nSIGMA 2\n1.0\n1.0\nA 3\n0 0\n"
        with self.assertRaises(ValidationError) as ctx:
            CoefficientTextSerializer().loads(text)
        self.assertEqual(ctx.exception.code, 'dimension_mismatch')


class PhantomTests(SimpleTestCase):
    def test_mismatched_partitions(self):
        mesh = build_disk_mesh(radius=1.0, h=0.2)
        serializer = PhantomSerializer(data={
            'sigma': {'background': 1.0, 'inclusions': [{'center': [0.3, 0.0], 'radius': 0.4, 'value': 2.0}]},
            'nonlinearity': [
                {'order': 2, 'background': 0.0,
                 'inclusions': [{'center': [0.0, 0.0], 'radius': 0.5, 'value': 1.0}]},
            ],
            'order': 3,
        })
        self.assertTrue(serializer.is_valid(), serializer.errors)
        phantom = build_phantom(mesh, serializer.validated_data)
        self.assertEqual(phantom.series.order, 3)
        self.assertEqual(set(np.unique(phantom.sigma.values)), {1.0, 2.0})
        self.assertEqual(set(np.unique(phantom.series.coefficient(2))), {0.0, 1.0})
        self.assertFalse(np.array_equal(phantom.sigma_labels, phantom.labels_for(2)))
        np.testing.assert_array_equal(phantom.labels_for(3), 0)

    def test_overlapping_inclusions_follow_mesh_labels(self):
        mesh = build_disk_mesh(radius=1.0, h=0.2)
        inclusions = [
            {'center': [0.0, 0.0], 'radius': 0.6, 'value': 2.0},
            {'center': [0.3, 0.0], 'radius': 0.3, 'value': 4.0},
        ]
        serializer = PhantomSerializer(data={'sigma': {'background': 1.0, 'inclusions': inclusions}})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        phantom = build_phantom(mesh, serializer.validated_data)
        expected = label_regions_by_disks(mesh, [((0.0, 0.0), 0.6), ((0.3, 0.0), 0.3)]).cell_regions
        np.testing.assert_array_equal(phantom.sigma_labels, expected)
        np.testing.assert_array_equal(phantom.sigma.values[expected == 2], 4.0)
        self.assertTrue(np.any(expected == 1))

    def test_rejects_non_positive_sigma(self):
        serializer = PhantomSerializer(data={'sigma': {'background': 0.0}})
        self.assertFalse(serializer.is_valid())
