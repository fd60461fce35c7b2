"""
Higher-order linearization cascade and its finite-difference oracle.

u_{p,q} for p + q >= 2 solves ∇·(σ∇u) = ∂^{p,q}[a(x, F)] with zero boundary
data; the source is evaluated at the quadrature points of the semilinear
residual, so the lattice is the exact mixed derivative of the discrete
solution map.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from forward.models import DNMeasurement, NewtonOptions
from forward.services.solver import get_problem
from semilinear_recovery.exceptions import SolverError

from ..models import DerivativeLattice
from .chain_rule import chain_rule_source

logger = logging.getLogger(__name__)

# Central-difference weights (second-order accurate) by derivative order.
STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
    4: {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0},
}


def _config(key, default):
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get(key, default)


def stencil_weights(order):
    if order not in STENCILS:
        raise ValidationError(
            f"No central-difference stencil for order {order} (supported: 0-4)",
            code='invalid_order',
        )
    return STENCILS[order]


def noise_floor(tolerance, step, p, q):
    """Newton-tolerance contribution tol / step^(p+q) to the oracle error."""
    return tolerance / step ** (p + q)


def first_linearization(mesh, sigma, f):
    """∂_t S(t f) at 0: the linear solution with data f."""
    return get_problem(mesh, sigma).solve_linear(bdry=f)


def build_lattice(mesh, sigma, series, f1, f2, max_order, jobs=1):
    """
    All u_{p,q} with 1 <= p + q <= max_order, in increasing total order.
    Entries of one total order are independent and run on ``jobs`` threads.
    """
    if not 1 <= max_order <= series.order:
        raise ValidationError(
            f"Lattice order must satisfy 1 <= M <= K={series.order}, got {max_order}",
            code='invalid_order',
        )
    problem = get_problem(mesh, sigma)
    lattice = DerivativeLattice(f1, f2, max_order)
    lattice.entries[(1, 0)] = problem.solve_linear(bdry=f1)
    lattice.entries[(0, 1)] = problem.solve_linear(bdry=f2)

    def solve(index):
        source = chain_rule_source(series, lattice, index[0], index[1], problem.quadrature)
        return index, source, problem.solve_linear(source=source)

    for order in range(2, max_order + 1):
        indices = [(p, order - p) for p in range(order, -1, -1)]
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(solve, indices))
        else:
            results = [solve(index) for index in indices]
        for index, source, u in results:
            lattice.sources[index] = source
            lattice.entries[index] = u
    logger.debug("Built %s on %s", lattice, mesh)
    return lattice


def dn_derivative(mesh, sigma, series, lattice, p, q):
    """Variational flux of u_{p,q} including its chain-rule source."""
    problem = get_problem(mesh, sigma)
    index = (p, q)
    return problem.dn_measure(None, lattice[index], lattice.boundary_data(index), source=lattice.source(index))


class FiniteDifferenceOracle:
    """
    Tensor-product central differences of (t1, t2) -> DN(S(t1 f1 + t2 f2)).
    Measurements at stencil points are cached, so one oracle serves every
    (p, q) of a lattice.

    Each measurement is split into the flux of the linear solution and the
    flux carried by the Newton correction and a(x, u). Stencils of order >= 2
    annihilate the linear part exactly, so only the remainder is differenced
    there.
    """

    def __init__(self, mesh, sigma, series, f1, f2, step=None, options=None):
        self.problem = get_problem(mesh, sigma)
        self.series = series
        self.f1 = f1
        self.f2 = f2
        self.step = step if step is not None else _config('FD_STEP', 1e-2)
        self.options = options or NewtonOptions.from_settings(
            tolerance=_config('FD_NEWTON_TOLERANCE', 1e-14),
        )
        self._measurements = {}

    def data(self, i, j):
        return self.f1 * (i * self.step) + self.f2 * (j * self.step)

    def solve(self, i, j):
        """Linear solution and Newton correction at stencil point (i, j)."""
        f = self.data(i, j)
        if self.series.is_zero:
            u_linear = self.problem.solve_linear(bdry=f)
            return u_linear, np.zeros_like(u_linear)
        u_linear, correction, _ = self.problem.newton(self.series, f, self.options)
        return u_linear, correction

    def measurement(self, i, j):
        """(linear flux, remainder flux) at stencil point (i, j)."""
        key = (i, j)
        if key not in self._measurements:
            f = self.data(i, j)
            try:
                u_linear, correction = self.solve(i, j)
                u = u_linear + correction
                tolerance = max(10 * self.options.tolerance, 1e-14)
                full = self.problem.dn_measure(self.series, u, f, tolerance=tolerance)
            except (SolverError, ValidationError) as exc:
                raise SolverError(
                    f"Stencil point t=({i * self.step:g}, {j * self.step:g}) failed: {exc}",
                    code='stencil_outside_neighborhood',
                    params={'point': key},
                ) from exc
            gamma = self.problem.mesh.gamma_nodes
            remainder = self.problem.stiffness.full @ correction
            if not self.series.is_zero:
                quadrature = self.problem.quadrature
                remainder = remainder + quadrature.load(self.series.evaluate(quadrature.interpolate(u)))
            remainder = DNMeasurement(full.mesh, remainder[gamma])
            linear = DNMeasurement(full.mesh, (self.problem.stiffness.full @ u_linear)[gamma])
            self._measurements[key] = (linear, remainder)
        return self._measurements[key]

    def derivative(self, p, q):
        weights_1, weights_2 = stencil_weights(p), stencil_weights(q)
        total = None
        for i, wi in weights_1.items():
            for j, wj in weights_2.items():
                linear, remainder = self.measurement(i, j)
                value = remainder + linear if p + q <= 1 else remainder
                term = value * (wi * wj)
                total = term if total is None else total + term
        return total * (1.0 / self.step ** (p + q))

    def noise_floor(self, p, q):
        return noise_floor(self.options.tolerance, self.step, p, q)


def fd_dn_derivative(mesh, sigma, series, f1, f2, p, q, step=None, options=None):
    return FiniteDifferenceOracle(mesh, sigma, series, f1, f2, step, options).derivative(p, q)


def chain_rule_fd_check(mesh, sigma, series, f1, f2, p, q, step=None, options=None):
    """
    Central differences of t -> a(x, S(t1 f1 + t2 f2)) at the quadrature
    points; the reference for :func:`chain_rule_source`.
    """
    oracle = FiniteDifferenceOracle(mesh, sigma, series, f1, f2, step, options)
    quadrature = oracle.problem.quadrature
    total = None
    for i, wi in stencil_weights(p).items():
        for j, wj in stencil_weights(q).items():
            u = sum(oracle.solve(i, j))
            term = (wi * wj) * series.evaluate(quadrature.interpolate(u))
            total = term if total is None else total + term
    return total / oracle.step ** (p + q)


def lattice_oracle_discrepancies(mesh, sigma, series, f1, f2, max_order, step=None, options=None):
    """
    Relative gap between dn_derivative and the oracle for every lattice
    index; absolute gap where the analytic derivative vanishes.
    """
    lattice = build_lattice(mesh, sigma, series, f1, f2, max_order)
    oracle = FiniteDifferenceOracle(mesh, sigma, series, f1, f2, step, options)
    rows = []
    for index in lattice.indices():
        analytic = dn_derivative(mesh, sigma, series, lattice, *index)
        numeric = oracle.derivative(*index)
        rows.append({
            'p': index[0],
            'q': index[1],
            'analytic_norm': analytic.norm,
            'discrepancy': numeric.relative_error(analytic),
            'noise_floor': oracle.noise_floor(*index),
        })
    return rows


def max_discrepancy(rows):
    return max((row['discrepancy'] for row in rows), default=0.0)


def richardson_ratio(mesh, sigma, series, f1, f2, p, q, step, lattice=None):
    """Error ratio of the oracle at ``step`` and ``step / 2`` against dn_derivative."""
    lattice = lattice or build_lattice(mesh, sigma, series, f1, f2, max(p + q, 1))
    analytic = dn_derivative(mesh, sigma, series, lattice, p, q)
    errors = [
        np.linalg.norm(fd_dn_derivative(mesh, sigma, series, f1, f2, p, q, s).values - analytic.values)
        for s in (step, step / 2)
    ]
    return errors[0] / errors[1] if errors[1] > 0 else float('inf')
