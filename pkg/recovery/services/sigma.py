"""
Piecewise-constant σ on a known partition from first-order DN data.

The model pairing ⟨Λ_σ f_i, f_j⟩ = u_jᵀ K_σ u_i is fitted to the measured
pairings over all i <= j; its derivative with respect to the value on
region R is u_jᵀ K_R u_i.
"""
import logging

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.optimize import least_squares

from coefficients.models import PiecewiseCoefficient
from forward.services.assembly import assemble_weighted_stiffness
from forward.services.solver import ForwardProblem
from semilinear_recovery.exceptions import SolverError

from ..models import SigmaEstimate

logger = logging.getLogger(__name__)

MAX_REGIONS = 12


def _config(key, default):
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get(key, default)


class SigmaModel:
    """Pairing matrix and its region sensitivities for one partition and data basis."""

    def __init__(self, mesh, labels, data):
        self.mesh = mesh
        self.labels = np.asarray(labels, dtype=np.int64)
        self.regions, self.index = np.unique(self.labels, return_inverse=True)
        self.data = data
        self.upper = np.triu_indices(len(data))
        self.region_stiffness = [
            assemble_weighted_stiffness(mesh, (self.index == r).astype(float))
            for r in range(len(self.regions))
        ]
        self._cache = (None, None)

    def solutions(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if self._cache[0] != key:
            problem = ForwardProblem(self.mesh, PiecewiseCoefficient(np.asarray(x)[self.index]))
            columns = np.column_stack([problem.solve_linear(bdry=f) for f in self.data])
            self._cache = (key, columns)
        return self._cache[1]

    def pairings(self, x):
        u = self.solutions(x)
        stiffness = sum(value * k for value, k in zip(x, self.region_stiffness))
        return (u.T @ (stiffness @ u))[self.upper]

    def jacobian(self, x):
        u = self.solutions(x)
        return np.column_stack([(u.T @ (k @ u))[self.upper] for k in self.region_stiffness])


def measured_pairings(experiments):
    """Symmetrized ⟨measurement_i, f_j⟩ for i <= j."""
    values = np.array([[e.measurement.pair(other.f1) for other in experiments] for e in experiments])
    values = 0.5 * (values + values.T)
    return values[np.triu_indices(len(experiments))]


def recover_sigma_linearized(mesh, labels, measurements, sigma_min=None, initial=None):
    """
    Least-squares fit of one σ value per region label to the order-(1, 0)
    experiments of ``measurements``, with the bound σ >= sigma_min.
    """
    experiments = measurements.of_order(1, 0)
    sigma_min = sigma_min if sigma_min is not None else _config('SIGMA_MIN', 1e-2)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != mesh.n_triangles:
        raise ValidationError("One region label per triangle is required", code='dimension_mismatch')
    model = SigmaModel(mesh, labels, [e.f1 for e in experiments])
    n_regions = len(model.regions)
    if n_regions > MAX_REGIONS:
        raise ValidationError(
            f"Partition has {n_regions} regions; at most {MAX_REGIONS} are supported",
            code='too_many_regions',
        )
    data = measured_pairings(experiments)
    if len(data) < n_regions:
        raise SolverError(
            f"{len(data)} pairings cannot determine {n_regions} region values",
            code='insufficient_data',
        )
    scale = float(np.linalg.norm(data)) or 1.0

    x0 = np.full(n_regions, max(1.0, 2.0 * sigma_min)) if initial is None else np.maximum(initial, sigma_min)
    if np.linalg.matrix_rank(model.jacobian(x0)) < n_regions:
        raise SolverError(
            "Sensitivity matrix is rank deficient; add boundary data",
            code='insufficient_data',
        )

    def residual(x):
        return (model.pairings(x) - data) / scale

    def jacobian(x):
        return model.jacobian(x) / scale

    initial_misfit = float(np.linalg.norm(residual(x0)))
    result = least_squares(
        residual, x0, jac=jacobian, bounds=(sigma_min, np.inf), method='trf',
        x_scale='jac', ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=100,
    )
    misfit = float(np.linalg.norm(result.fun))
    if misfit >= initial_misfit and initial_misfit > 1e-12:
        raise SolverError(
            f"Fit did not reduce the misfit ({initial_misfit:g} -> {misfit:g})",
            code='misfit_not_reduced',
            params={'result': result},
        )
    values = {int(region): float(value) for region, value in zip(model.regions, result.x)}
    logger.info("Recovered sigma %s, relative misfit %.3e after %d evaluations", values, misfit, result.nfev)
    return SigmaEstimate(
        values=values,
        coefficient=PiecewiseCoefficient(result.x[model.index], sigma_min),
        misfit=misfit,
        initial_misfit=initial_misfit,
        evaluations=int(result.nfev),
    )
