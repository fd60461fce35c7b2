import math

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from coefficients.models import NonlinearitySeries, PiecewiseCoefficient
from coefficients.services.phantoms import random_series
from forward.models import BoundaryData
from forward.services.boundary_data import trig_family
from forward.services.solver import dn_measure, get_problem, solve_linear, solve_semilinear
from meshes.services.mesh_builder import build_disk_mesh, tag_gamma
from semilinear_recovery.exceptions import SolverError

from .models import DerivativeLattice
from .services.cascade import (
    FiniteDifferenceOracle,
    build_lattice,
    chain_rule_fd_check,
    dn_derivative,
    first_linearization,
    lattice_oracle_discrepancies,
    max_discrepancy,
    richardson_ratio,
    stencil_weights,
)
from .services.chain_rule import (
    bell_number,
    brute_force_partitions,
    chain_rule_multiplicity,
    chain_rule_source,
    chain_rule_terms,
    multiset_partitions,
    set_partitions,
    term_count,
)


def full_disk(h):
    return tag_gamma(build_disk_mesh(radius=1.0, h=h), (0.0, 2.0 * math.pi))


def seeded_series(mesh, order=4, seed=5):
    return random_series(mesh.n_triangles, order, np.random.Generator(np.random.Philox(seed)))


class ChainRuleTests(SimpleTestCase):
    def test_partition_counts_match_brute_force(self):
        for n in range(6):
            partitions = list(set_partitions(n))
            self.assertEqual(len(partitions), bell_number(n))
            self.assertEqual(len(set(partitions)), len(partitions))
            if n:
                self.assertEqual(len(brute_force_partitions(n)), bell_number(n))

    def test_bell_numbers(self):
        self.assertEqual([bell_number(n) for n in range(7)], [1, 1, 2, 5, 15, 52, 203])

    def test_second_order_term(self):
        terms = chain_rule_terms(2, 0)
        self.assertEqual(len(terms), 1)
        self.assertEqual((terms[0].order, terms[0].blocks, terms[0].count), (2, ((1, 0), (1, 0)), 1))

    def test_mixed_third_order_terms(self):
        terms = {(term.order, term.blocks): term.count for term in chain_rule_terms(2, 1)}
        self.assertEqual(terms, {
            (2, ((1, 1), (1, 0))): 2,
            (2, ((2, 0), (0, 1))): 1,
            (3, ((1, 0), (1, 0), (0, 1))): 1,
        })

    def test_counts_cover_every_partition(self):
        for p, q in [(2, 0), (1, 1), (3, 0), (2, 1), (2, 2), (4, 1)]:
            self.assertEqual(term_count(p, q), bell_number(p + q))

    def test_shapes_match_multiset_partitions(self):
        for p, q in [(2, 1), (2, 2), (3, 1)]:
            shapes = {term.blocks for term in chain_rule_terms(p, q)} | {((p, q),)}
            self.assertEqual(shapes, multiset_partitions(p, q))

    def test_multiplicities_in_closed_form(self):
        for p, q in [(2, 1), (2, 2), (4, 0), (3, 2)]:
            for term in chain_rule_terms(p, q):
                self.assertEqual(term.count, chain_rule_multiplicity(term.blocks))

    def test_single_block_excluded(self):
        for p, q in [(2, 0), (1, 2), (3, 1)]:
            for term in chain_rule_terms(p, q):
                self.assertGreaterEqual(term.order, 2)
                self.assertEqual(term.total_order, p + q)

    def test_negative_order(self):
        with self.assertRaises(ValidationError) as ctx:
            chain_rule_terms(-1, 2)
        self.assertEqual(ctx.exception.code, 'invalid_order')

    def test_stencil_order(self):
        with self.assertRaises(ValidationError) as ctx:
            stencil_weights(5)
        self.assertEqual(ctx.exception.code, 'invalid_order')


class FirstLinearizationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.1)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)

    def test_linear_trace_reproduced(self):
        f = BoundaryData.from_function(self.mesh, lambda x, y: x)
        u = first_linearization(self.mesh, self.sigma, f)
        np.testing.assert_allclose(u, self.mesh.vertices[:, 0], atol=1e-10)

    def test_zero_data(self):
        u = first_linearization(self.mesh, self.sigma, BoundaryData.zero(self.mesh))
        np.testing.assert_array_equal(u, 0.0)

    def test_matches_central_difference(self):
        series = NonlinearitySeries.from_terms(self.mesh.n_triangles, {2: 1.0, 3: -0.5})
        f = trig_family(self.mesh, 3)[2]
        delta = 1e-3
        plus, _ = solve_semilinear(self.mesh, self.sigma, series, f * delta)
        minus, _ = solve_semilinear(self.mesh, self.sigma, series, f * -delta)
        u = first_linearization(self.mesh, self.sigma, f)
        numeric = (plus - minus) / (2.0 * delta)
        self.assertLessEqual(np.linalg.norm(numeric - u) / np.linalg.norm(u), 1e-4)


class LatticeTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.25)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.series = seeded_series(cls.mesh)
        cls.f1, cls.f2 = trig_family(cls.mesh, 2)
        cls.quadrature = get_problem(cls.mesh, cls.sigma).quadrature

    def test_quadratic_source(self):
        lattice = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 2)
        u10 = self.quadrature.interpolate(lattice[1, 0])
        expected = self.series.coefficient(2)[:, None] * u10 ** 2
        source = chain_rule_source(self.series, lattice, 2, 0, self.quadrature)
        np.testing.assert_allclose(source, expected, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(lattice.source((2, 0)), source)

    def test_zero_nonlinearity_gives_zero_entries(self):
        series = NonlinearitySeries.zero(self.mesh.n_triangles, order=4)
        lattice = build_lattice(self.mesh, self.sigma, series, self.f1, self.f2, 4)
        for index in lattice.indices():
            if sum(index) >= 2:
                np.testing.assert_array_equal(lattice[index], 0.0)
        self.assertEqual(len(lattice.indices()), 14)

    def test_symmetric_in_equal_data(self):
        lattice = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f1, 3)
        for order in (2, 3):
            entries = [lattice[index] for index in lattice.indices(order)]
            for u in entries[1:]:
                np.testing.assert_allclose(u, entries[0], rtol=1e-12, atol=1e-14)

    def test_order_above_truncation(self):
        with self.assertRaises(ValidationError) as ctx:
            build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 5)
        self.assertEqual(ctx.exception.code, 'invalid_order')

    def test_missing_entry(self):
        lattice = DerivativeLattice(self.f1, self.f2, 3)
        with self.assertRaises(ValidationError) as ctx:
            chain_rule_source(self.series, lattice, 2, 0, self.quadrature)
        self.assertEqual(ctx.exception.code, 'missing_lattice_entry')

    def test_threads_match_serial(self):
        serial = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 3)
        threaded = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 3, jobs=2)
        for index in serial.indices():
            np.testing.assert_array_equal(threaded[index], serial[index])

    def test_second_entry_matches_nodal_difference(self):
        series = NonlinearitySeries.from_terms(self.mesh.n_triangles, {2: 1.0})
        f = BoundaryData.from_function(self.mesh, lambda x, y: x)
        delta = 1e-2
        plus, _ = solve_semilinear(self.mesh, self.sigma, series, f * delta)
        minus, _ = solve_semilinear(self.mesh, self.sigma, series, f * -delta)
        numeric = (plus + minus) / delta ** 2
        lattice = build_lattice(self.mesh, self.sigma, series, f, f, 2)
        u20 = lattice[2, 0]
        self.assertLessEqual(np.linalg.norm(numeric - u20) / np.linalg.norm(u20), 1e-3)


class DNDerivativeTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.25)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.series = seeded_series(cls.mesh)
        cls.f1, cls.f2 = trig_family(cls.mesh, 2)

    def derivative(self, f1, f2, p, q):
        lattice = build_lattice(self.mesh, self.sigma, self.series, f1, f2, p + q)
        return dn_derivative(self.mesh, self.sigma, self.series, lattice, p, q)

    def test_first_order_is_linear_measurement(self):
        lattice = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 1)
        expected = dn_measure(self.mesh, self.sigma, None, solve_linear(self.mesh, self.sigma, bdry=self.f1), self.f1)
        np.testing.assert_allclose(
            dn_derivative(self.mesh, self.sigma, self.series, lattice, 1, 0).values, expected.values, atol=1e-14,
        )

    def test_zero_first_datum(self):
        zero = BoundaryData.zero(self.mesh)
        for p, q in [(2, 0), (1, 1), (2, 1)]:
            np.testing.assert_allclose(self.derivative(zero, self.f2, p, q).values, 0.0, atol=1e-14)

    def test_homogeneity(self):
        base = self.derivative(self.f1, self.f2, 2, 1)
        scaled = self.derivative(self.f1 * 2.0, self.f2 * -0.5, 2, 1)
        np.testing.assert_allclose(scaled.values, 4.0 * -0.5 * base.values, rtol=1e-10, atol=1e-14)
        base = self.derivative(self.f1, self.f2, 2, 0)
        scaled = self.derivative(self.f1 * 3.0, self.f2, 2, 0)
        np.testing.assert_allclose(scaled.values, 9.0 * base.values, rtol=1e-10, atol=1e-14)


class OracleTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.25)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.series = seeded_series(cls.mesh)
        cls.f1, cls.f2 = trig_family(cls.mesh, 2)

    def test_lattice_agrees_with_finite_differences(self):
        rows = lattice_oracle_discrepancies(self.mesh, self.sigma, self.series, self.f1, self.f2, 4)
        self.assertEqual(len(rows), 14)
        self.assertLessEqual(max_discrepancy(rows), 1e-2)

    def test_zero_nonlinearity_is_exact(self):
        series = NonlinearitySeries.zero(self.mesh.n_triangles, order=4)
        rows = lattice_oracle_discrepancies(self.mesh, self.sigma, series, self.f1, self.f2, 4)
        self.assertLessEqual(max_discrepancy(rows), 1e-9)

    def test_chain_rule_source_matches_differences(self):
        lattice = build_lattice(self.mesh, self.sigma, self.series, self.f1, self.f2, 3)
        quadrature = get_problem(self.mesh, self.sigma).quadrature
        for p, q in [(2, 0), (1, 1), (2, 1)]:
            analytic = chain_rule_source(self.series, lattice, p, q, quadrature)
            numeric = chain_rule_fd_check(self.mesh, self.sigma, self.series, self.f1, self.f2, p, q)
            self.assertLessEqual(np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic), 1e-2)

    def test_second_order_convergence(self):
        ratio = richardson_ratio(self.mesh, self.sigma, self.series, self.f1, self.f2, 2, 0, 0.02)
        self.assertGreater(ratio, 3.5)
        self.assertLess(ratio, 4.5)

    def test_measurements_are_cached(self):
        oracle = FiniteDifferenceOracle(self.mesh, self.sigma, self.series, self.f1, self.f2)
        oracle.derivative(1, 1)
        cached = dict(oracle._measurements)
        oracle.derivative(1, 1)
        self.assertEqual(set(oracle._measurements), set(cached))
        self.assertEqual(len(cached), 4)

    def test_stencil_outside_neighborhood(self):
        oracle = FiniteDifferenceOracle(self.mesh, self.sigma, self.series, self.f1 * 20.0, self.f2)
        with self.assertRaises(SolverError) as ctx:
            oracle.derivative(2, 0)
        self.assertEqual(ctx.exception.code, 'stencil_outside_neighborhood')
