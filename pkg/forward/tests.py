import math
from unittest import mock

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy.sparse import csc_matrix, identity

from coefficients.models import NonlinearitySeries, PiecewiseCoefficient
from meshes.models import Mesh, NodeTag
from meshes.services.mesh_builder import build_disk_mesh, tag_gamma
from semilinear_recovery.exceptions import SolverError

from .models import BoundaryData, NewtonOptions
from .services.assembly import Quadrature, assemble_stiffness, boundary_mass, element_stiffness
from .services.boundary_data import gamma_parameter, positive_family, random_data, trig_family
from .services.solver import ForwardProblem, LinearSolver, dn_measure, solve_linear, solve_semilinear


def full_disk(h):
    return tag_gamma(build_disk_mesh(radius=1.0, h=h), (0.0, 2.0 * math.pi))


def quadratic_series(mesh, a2=1.0):
    return NonlinearitySeries.from_terms(mesh.n_triangles, {2: a2})


class AssemblyTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.25)

    def test_reference_triangle(self):
        mesh = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [NodeTag.OUTER] * 3)
        expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
        np.testing.assert_allclose(element_stiffness(mesh)[0], expected, atol=1e-15)

    def test_linear_in_sigma(self):
        rng = np.random.Generator(np.random.Philox(11))
        sigma = PiecewiseCoefficient(rng.uniform(1.0, 3.0, self.mesh.n_triangles))
        single = assemble_stiffness(self.mesh, sigma).full
        double = assemble_stiffness(self.mesh, sigma.scaled(2.0)).full
        np.testing.assert_allclose(double.toarray(), 2.0 * single.toarray(), rtol=1e-14, atol=1e-14)

    def test_row_sums_vanish(self):
        stiffness = assemble_stiffness(self.mesh, PiecewiseCoefficient.constant(self.mesh, 1.5))
        np.testing.assert_allclose(np.asarray(stiffness.full.sum(axis=1)).ravel(), 0.0, atol=1e-12)

    def test_free_block_is_spd(self):
        free = assemble_stiffness(self.mesh, PiecewiseCoefficient.constant(self.mesh)).free.toarray()
        np.testing.assert_allclose(free, free.T, atol=1e-14)
        self.assertGreater(np.linalg.eigvalsh(free).min(), 0.0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValidationError) as ctx:
            assemble_stiffness(self.mesh, PiecewiseCoefficient([1.0, 1.0]))
        self.assertEqual(ctx.exception.code, 'dimension_mismatch')

    def test_quadrature_rules(self):
        interior = Quadrature(self.mesh, 'interior')
        lumped = Quadrature(self.mesh, 'lumped')
        self.assertAlmostEqual(interior.integrate(1.0), self.mesh.areas.sum())
        np.testing.assert_allclose(interior.load(2.0), lumped.load(2.0), atol=1e-14)
        u = self.mesh.vertices[:, 0]
        self.assertAlmostEqual(interior.integrate(interior.interpolate(u) ** 2),
                               float(u @ (interior.weighted_mass(1.0) @ u)))

    def test_boundary_mass_length(self):
        mass = boundary_mass(self.mesh)
        outer = self.mesh.boundary_edges
        d = self.mesh.vertices[outer[:, 0]] - self.mesh.vertices[outer[:, 1]]
        self.assertAlmostEqual(mass.sum(), np.hypot(d[:, 0], d[:, 1]).sum())


class LinearSolveTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.1)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)

    def test_reproduces_linear_harmonic(self):
        f = BoundaryData.from_function(self.mesh, lambda x, y: x)
        u = solve_linear(self.mesh, self.sigma, bdry=f)
        np.testing.assert_allclose(u, self.mesh.vertices[:, 0], atol=1e-10)

    def test_reproduces_constants(self):
        f = BoundaryData.from_function(self.mesh, lambda x, y: 0.7)
        np.testing.assert_allclose(solve_linear(self.mesh, self.sigma, bdry=f), 0.7, atol=1e-10)

    def test_manufactured_solution_converges_quadratically(self):
        errors = []
        for h in (0.2, 0.1):
            mesh = full_disk(h)
            problem = ForwardProblem(mesh, PiecewiseCoefficient.constant(mesh))
            f = BoundaryData.from_function(mesh, lambda x, y: x ** 2 + y ** 2)
            u = problem.solve_linear(source=4.0, bdry=f)
            errors.append(problem.l2_error(u, lambda x, y: x ** 2 + y ** 2))
        self.assertLess(errors[1], 1e-2)
        self.assertGreater(errors[0] / errors[1], 3.0)

    def test_l2_error_of_exact_field(self):
        problem = ForwardProblem(self.mesh, self.sigma)
        self.assertLess(problem.l2_error(self.mesh.vertices[:, 0], lambda x, y: x), 1e-14)

    def test_cavity_zero_trace(self):
        mesh = tag_gamma(build_disk_mesh(radius=1.0, cavity=((0.0, 0.0), 0.3), h=0.1), (0.0, math.pi))
        f = positive_family(mesh, 1, amplitude=0.05)[0]
        u, _ = solve_semilinear(mesh, PiecewiseCoefficient.constant(mesh), quadratic_series(mesh), f)
        cavity = mesh.node_tags == NodeTag.CAVITY
        self.assertTrue(np.all(u[cavity] == 0.0))
        outer_rest = mesh.node_tags == NodeTag.OUTER
        self.assertTrue(np.all(u[outer_rest] == 0.0))

    def test_discrete_maximum_principle(self):
        mesh = tag_gamma(build_disk_mesh(radius=1.0, h=0.1), (0.0, math.pi))
        f = positive_family(mesh, 2, amplitude=1.0)[0]
        u = solve_linear(mesh, PiecewiseCoefficient.constant(mesh, 2.0), bdry=f)
        self.assertGreaterEqual(u.min(), -1e-12)
        self.assertTrue(np.all(u[mesh.free_nodes] > 0.0))

    def test_cg_fallback_matches_lu(self):
        matrix = assemble_stiffness(self.mesh, self.sigma).free
        rng = np.random.Generator(np.random.Philox(5))
        b = rng.standard_normal(matrix.shape[0])
        direct = LinearSolver(matrix).solve(b)
        fallback = LinearSolver(matrix)
        fallback._lu = None
        np.testing.assert_allclose(fallback.solve(b), direct, rtol=1e-6, atol=1e-8)

    def test_solver_breakdown(self):
        solver = LinearSolver(csc_matrix(np.array([[1.0, 0.0], [0.0, -1.0]])))
        solver._lu = None
        with self.assertRaises(SolverError) as ctx:
            solver.solve(np.ones(2))
        self.assertEqual(ctx.exception.code, 'solver_breakdown')


class NewtonTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.1)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.series = quadratic_series(cls.mesh)

    def data(self, amplitude):
        return BoundaryData.from_function(self.mesh, lambda x, y: amplitude * x)

    def test_linear_case(self):
        f = self.data(0.08)
        u, report = solve_semilinear(self.mesh, self.sigma, NonlinearitySeries.zero(self.mesh.n_triangles), f)
        self.assertTrue(report.converged)
        self.assertLessEqual(report.iterations, 1)
        np.testing.assert_array_equal(u, solve_linear(self.mesh, self.sigma, bdry=f))

    def test_zero_data(self):
        u, report = solve_semilinear(self.mesh, self.sigma, self.series, BoundaryData.zero(self.mesh))
        self.assertTrue(report.converged)
        np.testing.assert_array_equal(u, 0.0)

    def test_quadratic_smallness(self):
        gaps = []
        for amplitude in (0.05, 0.025):
            f = self.data(amplitude)
            u, report = solve_semilinear(self.mesh, self.sigma, self.series, f)
            self.assertTrue(report.converged)
            self.assertLessEqual(report.residual, 1e-10)
            gaps.append(np.max(np.abs(u - solve_linear(self.mesh, self.sigma, bdry=f))))
        self.assertGreater(gaps[0] / gaps[1], 3.6)
        self.assertLess(gaps[0] / gaps[1], 4.4)

    def test_residuals_decrease(self):
        _, report = solve_semilinear(self.mesh, self.sigma, self.series, self.data(0.1))
        self.assertTrue(all(b < a for a, b in zip(report.residual_norms, report.residual_norms[1:])))
        self.assertEqual(len(report.step_norms), report.iterations)

    def test_data_too_large(self):
        with self.assertRaises(ValidationError) as ctx:
            solve_semilinear(self.mesh, self.sigma, self.series, self.data(0.5))
        self.assertEqual(ctx.exception.code, 'data_too_large')

    def test_max_iterations(self):
        options = NewtonOptions.from_settings(max_iterations=1, tolerance=1e-30)
        with self.assertRaises(SolverError) as ctx:
            solve_semilinear(self.mesh, self.sigma, self.series, self.data(0.05), options)
        self.assertEqual(ctx.exception.code, 'max_iterations')
        self.assertFalse(ctx.exception.params['report'].converged)

    def test_divergence_is_reported(self):
        problem = ForwardProblem(self.mesh, self.sigma)
        tiny = 1e-3 * identity(len(self.mesh.free_nodes), format='csc')
        with mock.patch.object(problem, 'jacobian', return_value=tiny):
            with self.assertRaises(SolverError) as ctx:
                problem.solve_semilinear(self.series, self.data(0.05))
        self.assertEqual(ctx.exception.code, 'newton_diverged')

    def test_options_from_settings(self):
        options = NewtonOptions.from_settings(eps_max=None)
        self.assertEqual(options.max_iterations, 25)
        self.assertEqual(options.tolerance, 1e-10)
        self.assertIsNone(options.eps_max)


class DNMeasureTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.mesh = full_disk(0.1)
        cls.sigma = PiecewiseCoefficient.constant(cls.mesh)
        cls.zero = NonlinearitySeries.zero(cls.mesh.n_triangles)

    def test_dirichlet_energy_of_x(self):
        f = BoundaryData.from_function(self.mesh, lambda x, y: x)
        u = solve_linear(self.mesh, self.sigma, bdry=f)
        energy = dn_measure(self.mesh, self.sigma, self.zero, u, f).pair(f)
        self.assertAlmostEqual(energy / math.pi, 1.0, delta=1e-2)

    def test_zero_field(self):
        f = BoundaryData.zero(self.mesh)
        measurement = dn_measure(self.mesh, self.sigma, self.zero, np.zeros(self.mesh.n_vertices), f)
        np.testing.assert_array_equal(measurement.values, 0.0)

    def test_linear_in_sigma(self):
        f = trig_family(self.mesh, 3)[2]
        doubled = self.sigma.scaled(2.0)
        u = solve_linear(self.mesh, self.sigma, bdry=f)
        single = dn_measure(self.mesh, self.sigma, self.zero, u, f)
        double = dn_measure(self.mesh, doubled, self.zero, solve_linear(self.mesh, doubled, bdry=f), f)
        np.testing.assert_allclose(double.values, 2.0 * single.values, rtol=1e-9, atol=1e-12)

    def test_energy_identity_on_random_data(self):
        rng = np.random.Generator(np.random.Philox(21))
        sigma = PiecewiseCoefficient(rng.uniform(1.0, 2.0, self.mesh.n_triangles))
        stiffness = assemble_stiffness(self.mesh, sigma).full
        for _ in range(3):
            f = random_data(self.mesh, rng, 0.1)
            u = solve_linear(self.mesh, sigma, bdry=f)
            energy = dn_measure(self.mesh, sigma, self.zero, u, f).pair(f)
            self.assertAlmostEqual(energy, float(u @ (stiffness @ u)), places=12)
            self.assertGreater(energy, 0.0)

    def test_extension_independence(self):
        series = quadratic_series(self.mesh)
        f = trig_family(self.mesh, 2, amplitude=0.05)[1]
        problem = ForwardProblem(self.mesh, self.sigma)
        u, _ = problem.solve_semilinear(series, f)
        residual = problem.residual(u, series)
        rng = np.random.Generator(np.random.Philox(8))
        extension = np.zeros(self.mesh.n_vertices)
        extension[self.mesh.free_nodes] = rng.uniform(0.0, 1.0, len(self.mesh.free_nodes))
        self.assertLess(abs(residual @ extension), len(self.mesh.free_nodes) * 1e-10)

    def test_not_a_solution(self):
        f = BoundaryData.from_function(self.mesh, lambda x, y: x)
        u = solve_linear(self.mesh, self.sigma, bdry=f)
        u[self.mesh.free_nodes] += 0.1
        with self.assertRaises(SolverError) as ctx:
            dn_measure(self.mesh, self.sigma, self.zero, u, f)
        self.assertEqual(ctx.exception.code, 'not_a_solution')


class BoundaryDataTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.full = full_disk(0.1)
        cls.half = tag_gamma(build_disk_mesh(radius=1.0, h=0.1), (0.0, math.pi))

    def test_full_circle_modes(self):
        family = trig_family(self.full, 4, amplitude=0.1)
        x = self.full.vertices[self.full.gamma_nodes, 0]
        np.testing.assert_allclose(family[0].values, 0.1 * x, atol=1e-12)
        for datum in family:
            self.assertAlmostEqual(datum.sup_norm, 0.1)

    def test_arc_parameter(self):
        s, width, full = gamma_parameter(self.half)
        self.assertFalse(full)
        self.assertAlmostEqual(width, math.pi, delta=0.1)
        self.assertAlmostEqual(s.min(), 0.0)
        self.assertAlmostEqual(s.max(), 1.0)

    def test_arc_data_vanish_at_ends(self):
        s, _, _ = gamma_parameter(self.half)
        ends = (s == s.min()) | (s == s.max())
        for datum in trig_family(self.half, 5) + positive_family(self.half, 3):
            np.testing.assert_array_equal(datum.values[ends], 0.0)
        for datum in positive_family(self.half, 3):
            self.assertTrue(datum.is_nonnegative)
            self.assertFalse(datum.is_zero)

    def test_random_data(self):
        rng = np.random.Generator(np.random.Philox(2))
        self.assertAlmostEqual(random_data(self.half, rng, 0.05).sup_norm, 0.05)

    def test_support_in_gamma(self):
        nodal = np.zeros(self.half.n_vertices)
        nodal[self.half.boundary_nodes] = 1.0
        with self.assertRaises(ValidationError):
            BoundaryData.from_nodal(self.half, nodal)
        nodal[self.half.boundary_nodes] = 0.0
        nodal[self.half.gamma_nodes] = 1.0
        self.assertEqual(BoundaryData.from_nodal(self.half, nodal).sup_norm, 1.0)

    def test_transfer_between_meshes(self):
        cavity = tag_gamma(build_disk_mesh(radius=1.0, cavity=((0.0, 0.0), 0.3), h=0.1), (0.0, math.pi))
        datum = positive_family(self.half, 1)[0]
        moved = datum.transfer(cavity)
        np.testing.assert_array_equal(moved.values, datum.values)
        with self.assertRaises(ValidationError):
            datum.transfer(self.full)
