"""
Stage-wise recovery of the series coefficients a_2, a_3, ...

At stage m every lower coefficient is known. The order-(p, q) DN derivative
with p + q = m then depends on a_m only through its all-singleton chain-rule
term, so the data residual tested against g is linear in a_m:

    ⟨data - simulated(a_m = 0), g⟩ = Σ_R a_m(R) ∫_R u10^p u01^q v_g.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.linalg import lstsq, svdvals

from coefficients.models import NonlinearitySeries
from forward.services.solver import get_problem
from linearization.services.cascade import build_lattice, dn_derivative
from semilinear_recovery.exceptions import SolverError

from ..models import StageEstimate, region_array

logger = logging.getLogger(__name__)


def _config(key, default):
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get(key, default)


def default_regularization(noise_level=0.0):
    """Tikhonov weight: the noiseless value plus a fixed amount per percent of noise."""
    return _config('TIKHONOV', 1e-8) + _config('TIKHONOV_PER_PERCENT_NOISE', 1e-4) * noise_level / 0.01


def stage_series(series, m):
    """The current estimate truncated to order m with a_m set to zero."""
    return series.truncated(m).with_coefficient(m, 0.0)


def stage_rows(mesh, sigma, series, experiment, tests, labels):
    """
    Rows of the stage system for one experiment: the residual pairings with
    every test datum and the region integrals multiplying a_m.
    """
    p, q = experiment.order
    m = p + q
    problem = get_problem(mesh, sigma)
    quadrature = problem.quadrature
    lattice = build_lattice(mesh, sigma, series, experiment.f1, experiment.f2, m)
    simulated = dn_derivative(mesh, sigma, series, lattice, p, q)
    difference = experiment.measurement - simulated

    product = quadrature.interpolate(lattice[1, 0]) ** p * quadrature.interpolate(lattice[0, 1]) ** q
    regions, index = np.unique(labels, return_inverse=True)
    residual = np.empty(len(tests))
    rows = np.empty((len(tests), len(regions)))
    for i, g in enumerate(tests):
        v = quadrature.interpolate(problem.solve_linear(bdry=g))
        per_triangle = quadrature.integrate_per_triangle(product * v)
        rows[i] = np.bincount(index, weights=per_triangle, minlength=len(regions))
        residual[i] = difference.pair(g)
    return rows, residual


def solve_stage_system(matrix, rhs, regularization):
    """
    Tikhonov least squares min |A x - r|² + λ s_max² |x|², where s_max is
    the largest singular value of A. Returns (x, condition of A).
    """
    singular = svdvals(matrix)
    condition = float(singular[0] / singular[-1]) if singular[-1] > 0 else float('inf')
    limit = _config('MAX_CONDITION', 1e14)
    if condition > limit:
        raise SolverError(
            f"Stage system condition number {condition:.3e} exceeds {limit:.1e}; "
            "use nonnegative boundary data",
            code='ill_conditioned_system',
            params={'condition': condition},
        )
    n = matrix.shape[1]
    stacked = np.vstack([matrix, np.sqrt(regularization) * singular[0] * np.eye(n)])
    solution, *_ = lstsq(stacked, np.concatenate([rhs, np.zeros(n)]))
    return solution, condition


def _assemble(mesh, sigma, series, experiments, tests, labels, jobs):
    def rows(experiment):
        return stage_rows(mesh, sigma, series, experiment, tests, labels)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(rows, experiments))
    else:
        blocks = [rows(experiment) for experiment in experiments]
    return np.vstack([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def recover_am_step(mesh, sigma, series, measurements, m, labels, tests,
                    regularization=None, refine=True, jobs=1):
    """
    Recover a_m on the partition ``labels`` from the order-(2, m - 2)
    experiments, keeping a_2 .. a_{m-1} of ``series`` fixed.
    """
    if m < 2:
        raise ValidationError("Series coefficients start at a_2", code='invalid_order')
    experiments = measurements.of_order(2, m - 2)
    if not experiments or not tests:
        raise SolverError(
            f"Stage {m} needs order-(2, {m - 2}) experiments and test data",
            code='insufficient_data',
        )
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != mesh.n_triangles:
        raise ValidationError("One region label per triangle is required", code='dimension_mismatch')
    if regularization is None:
        regularization = default_regularization(measurements.noise_level)

    base = stage_series(series, m)
    matrix, rhs = _assemble(mesh, sigma, base, experiments, tests, labels, jobs)
    solution, condition = solve_stage_system(matrix, rhs, regularization)
    regions = np.unique(labels)

    def with_values(x):
        return base.with_coefficient(m, region_array(labels, dict(zip(regions, x))))

    estimate = with_values(solution)
    _, remaining = _assemble(mesh, sigma, estimate, experiments, tests, labels, jobs)
    if refine:
        correction, _ = solve_stage_system(matrix, remaining, regularization)
        solution = solution + correction
        estimate = with_values(solution)
        _, remaining = _assemble(mesh, sigma, estimate, experiments, tests, labels, jobs)

    values = {int(region): float(value) for region, value in zip(regions, solution)}
    logger.info("Stage %d: a_%d = %s (condition %.2e, residual %.3e -> %.3e)",
                m, m, values, condition, np.linalg.norm(rhs), np.linalg.norm(remaining))
    return StageEstimate(
        m=m,
        values=values,
        series=estimate,
        residual_before=float(np.linalg.norm(rhs)),
        residual_after=float(np.linalg.norm(remaining)),
        condition=condition,
        regularization=regularization,
    )


def recover_nonlinearity(mesh, sigma, measurements, partitions, tests, max_order,
                         regularization=None, refine=True, jobs=1):
    """
    a_2 .. a_K in order; stage m starts from the estimate of stage m - 1.
    ``partitions`` maps m to the region labels carrying a_m.
    """
    series = NonlinearitySeries.zero(mesh.n_triangles, 2)
    stages = []
    for m in range(2, max_order + 1):
        labels = partitions.get(m, np.zeros(mesh.n_triangles, dtype=np.int64))
        stage = recover_am_step(mesh, sigma, series, measurements, m, labels, tests,
                                regularization, refine, jobs)
        stages.append(stage)
        series = stage.series
    return stages
