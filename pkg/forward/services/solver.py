"""
Linear and semilinear Dirichlet solves and the variational DN measurement.

Sign convention: the linear solver returns v with ∇·(σ∇v) = s, i.e. the
discrete residual K v + ∫ s φ_i vanishes on interior nodes; the semilinear
residual is R(u) = K u + ∫ a(x, u) φ_i (+ ∫ s φ_i for an inhomogeneous
cascade equation).
"""
import logging
import threading
from functools import cached_property, lru_cache

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.sparse.linalg import LinearOperator, cg, splu

from semilinear_recovery.exceptions import SolverError

from ..models import DNMeasurement, NewtonOptions, NewtonReport
from .assembly import Quadrature, assemble_stiffness

logger = logging.getLogger(__name__)


def _config(key, default):
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get(key, default)


class LinearSolver:
    """
    SPD solve on the free nodes: sparse LU by default, Jacobi-preconditioned
    CG as fallback. Both must meet the relative residual ``rtol``.
    """

    def __init__(self, matrix, rtol=None):
        self.matrix = matrix.tocsc()
        self.rtol = rtol if rtol is not None else _config('LINEAR_RTOL', 1e-10)
        self._lu = None
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as exc:
            logger.warning("Sparse LU failed (%s); falling back to conjugate gradients", exc)

    def _residual_ok(self, x, b):
        scale = np.linalg.norm(b)
        return np.linalg.norm(self.matrix @ x - b) <= self.rtol * max(scale, np.finfo(float).tiny)

    def _cg(self, b):
        diagonal = self.matrix.diagonal()
        if np.any(diagonal <= 0):
            raise SolverError(
                "Matrix has a non-positive diagonal entry",
                code='solver_breakdown',
            )
        preconditioner = LinearOperator(self.matrix.shape, matvec=lambda r: r / diagonal)
        x, info = cg(self.matrix, b, rtol=self.rtol * 1e-2, atol=0.0,
                     maxiter=10 * self.matrix.shape[0], M=preconditioner)
        if info != 0 or not self._residual_ok(x, b):
            raise SolverError(
                f"Conjugate gradients failed (info={info})",
                code='solver_breakdown',
            )
        return x

    def solve(self, b):
        """Solve for one right-hand side or for each column of a 2-D array."""
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(column) for column in b.T]) if b.shape[1] else b.copy()
        if not np.any(b):
            return np.zeros_like(b)
        if self._lu is not None:
            x = self._lu.solve(b)
            if np.all(np.isfinite(x)) and self._residual_ok(x, b):
                return x
            logger.warning("LU solve missed rtol=%g; retrying with conjugate gradients", self.rtol)
        return self._cg(b)


class ForwardProblem:
    """
    Discretization of ∇·(σ∇u) - a(x, u) on one mesh for one σ.

    The stiffness matrix and the free-node factorization are built once,
    under a lock, and shared by every solve afterwards.
    """

    def __init__(self, mesh, sigma, quadrature=None):
        if len(sigma) != mesh.n_triangles:
            raise ValidationError(
                f"Diffusion has {len(sigma)} values for {mesh.n_triangles} triangles",
                code='dimension_mismatch',
            )
        self.mesh = mesh
        self.sigma = sigma
        self.quadrature = quadrature or Quadrature(mesh)
        self._lock = threading.Lock()
        self._solver = None

    def __str__(self):
        return f"ForwardProblem({self.mesh}, {self.sigma})"

    @cached_property
    def stiffness(self):
        return assemble_stiffness(self.mesh, self.sigma)

    @property
    def solver(self):
        with self._lock:
            if self._solver is None:
                self._solver = LinearSolver(self.stiffness.free)
                logger.debug("Factorized %d free nodes for %s", len(self.mesh.free_nodes), self.mesh)
            return self._solver

    def _check_data(self, data):
        if data is not None and data.mesh is not self.mesh:
            data = data.transfer(self.mesh)
        return data

    def lift(self, bdry):
        """Nodal field carrying the Dirichlet data and zero on interior nodes."""
        bdry = self._check_data(bdry)
        return bdry.to_nodal() if bdry is not None else np.zeros(self.mesh.n_vertices)

    def source_load(self, source):
        if source is None:
            return np.zeros(self.mesh.n_vertices)
        return self.quadrature.load(source)

    def solve_linear(self, source=None, bdry=None):
        """v with ∇·(σ∇v) = source in the interior and v = bdry on the boundary."""
        u = self.lift(bdry)
        free, boundary = self.mesh.free_nodes, self.mesh.boundary_nodes
        rhs = -self.stiffness.coupling @ u[boundary] - self.source_load(source)[free]
        u[free] = self.solver.solve(rhs)
        return u

    def harmonic_basis(self):
        """Columns: linear solutions for the hat function of each Γ node."""
        free, gamma = self.mesh.free_nodes, self.mesh.gamma_nodes
        columns = np.zeros((self.mesh.n_vertices, len(gamma)))
        columns[gamma, np.arange(len(gamma))] = 1.0
        boundary_position = np.searchsorted(self.mesh.boundary_nodes, gamma)
        coupling = self.stiffness.coupling[:, boundary_position]
        columns[free] = self.solver.solve(-coupling.toarray())
        return columns

    def residual(self, u, series=None, source=None):
        """Full nodal residual K u + ∫ a(x, u) φ_i + ∫ source φ_i."""
        r = self.stiffness.full @ u
        if series is not None and not series.is_zero:
            r = r + self.quadrature.load(series.evaluate(self.quadrature.interpolate(u)))
        if source is not None:
            r = r + self.quadrature.load(source)
        return r

    def jacobian(self, u, series):
        """Free block of K + ∫ a'(x, u) φ_i φ_j."""
        free = self.mesh.free_nodes
        matrix = self.stiffness.full + self.quadrature.weighted_mass(
            series.evaluate(self.quadrature.interpolate(u), l=1)
        )
        return matrix[free][:, free].tocsc()

    def newton(self, series, f, options=None):
        """
        Newton's method for ∇·(σ∇u) = a(x, u), u = f on the boundary,
        started from the linear solution. Returns the linear solution, the
        accumulated Newton correction (zero on the boundary) and the report.
        """
        options = options or NewtonOptions.from_settings()
        f = self._check_data(f)
        if options.eps_max is not None and f.sup_norm > options.eps_max:
            raise ValidationError(
                f"Dirichlet data sup norm {f.sup_norm:g} exceeds eps_max={options.eps_max:g}",
                code='data_too_large',
            )
        if series.n_triangles != self.mesh.n_triangles:
            raise ValidationError("Nonlinearity does not match the mesh", code='dimension_mismatch')

        free = self.mesh.free_nodes
        u_linear = self.solve_linear(bdry=f)
        correction = np.zeros_like(u_linear)
        report = NewtonReport()
        while True:
            u = u_linear + correction
            r = self.residual(u, series)[free]
            norm = float(np.max(np.abs(r))) if len(r) else 0.0
            if not np.isfinite(norm) or (report.residual_norms and norm > report.residual_norms[-1]):
                report.residual_norms.append(norm)
                logger.info("Newton diverged after %d iterations (residual %g)", report.iterations, norm)
                raise SolverError(
                    f"Newton residual grew to {norm:g}; data outside the well-posedness neighborhood",
                    code='newton_diverged',
                    params={'report': report},
                )
            report.residual_norms.append(norm)
            if norm <= options.tolerance:
                report.converged = True
                break
            if report.iterations >= options.max_iterations:
                raise SolverError(
                    f"Newton did not reach {options.tolerance:g} in {options.max_iterations} iterations",
                    code='max_iterations',
                    params={'report': report},
                )
            step = LinearSolver(self.jacobian(u, series)).solve(-r)
            correction[free] += options.damping * step
            report.step_norms.append(float(np.max(np.abs(step))))
            report.iterations += 1
            logger.debug("Newton %d: residual %.3e, step %.3e", report.iterations, norm, report.step_norms[-1])
        return u_linear, correction, report

    def solve_semilinear(self, series, f, options=None):
        u_linear, correction, report = self.newton(series, f, options)
        return u_linear + correction, report

    def dn_measure(self, series, u, f, source=None, tolerance=None):
        """
        Variational flux on Γ: component i is the full residual tested with
        the Γ hat function of node i. ``u`` must be a discrete solution.
        """
        tolerance = tolerance if tolerance is not None else _config('SOLUTION_TOLERANCE', 1e-8)
        f = self._check_data(f)
        residual = self.residual(u, series, source)
        interior = float(np.max(np.abs(residual[self.mesh.free_nodes]))) if len(self.mesh.free_nodes) else 0.0
        boundary_gap = float(np.max(np.abs(u[self.mesh.boundary_nodes] - self.lift(f)[self.mesh.boundary_nodes])))
        if interior > tolerance or boundary_gap > 1e-14:
            raise SolverError(
                f"Field is not a discrete solution (interior residual {interior:g}, boundary gap {boundary_gap:g})",
                code='not_a_solution',
                params={'interior_residual': interior, 'boundary_gap': boundary_gap},
            )
        return DNMeasurement(self.mesh, residual[self.mesh.gamma_nodes])

    def l2_error(self, u, exact):
        """||u_h - exact||_{L²} with ``exact(x, y)`` sampled at the quadrature points."""
        rule = Quadrature(self.mesh, 'interior') if self.quadrature.rule != 'interior' else self.quadrature
        lam = rule.points
        p = self.mesh.vertices[self.mesh.triangles]
        x = np.einsum('qk,tk->tq', lam, p[:, :, 0])
        y = np.einsum('qk,tk->tq', lam, p[:, :, 1])
        diff = rule.interpolate(u) - exact(x, y)
        return float(np.sqrt(rule.integrate(diff ** 2)))


@lru_cache(maxsize=32)
def get_problem(mesh, sigma):
    """Shared ForwardProblem per (mesh, σ) object pair."""
    return ForwardProblem(mesh, sigma)


def solve_linear(mesh, sigma, source=None, bdry=None):
    return get_problem(mesh, sigma).solve_linear(source, bdry)


def solve_semilinear(mesh, sigma, series, f, options=None):
    return get_problem(mesh, sigma).solve_semilinear(series, f, options)


def dn_measure(mesh, sigma, series, u, f):
    return get_problem(mesh, sigma).dn_measure(series, u, f)