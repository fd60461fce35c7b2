"""
Blow-up functional along a localized-potential sequence.

With u1 = ε φ_k / (2|φ_k|), u2 = w_ψ and v1 = (2|φ_k| / ε)² w_ψ the
integrand (a_m - ã_m) u1² u2^(m-2) v1 reduces to (a_m - ã_m) w_k² w_ψ^(m-1),
where w_k and w_ψ are the linear solutions for φ_k and ψ.
"""
import logging

import numpy as np
from django.core.exceptions import ValidationError

from forward.services.solver import get_problem

logger = logging.getLogger(__name__)


def contradiction_functional(mesh, sigma, difference, m, d1, d2, sequence, psi):
    """
    Per-step D1 part, D2 part, remainder and total of
    ∫ (a_m - ã_m) w_k² w_ψ^(m-1), plus the bound sup|a_m - ã_m| ∫_D2 w_k² w_ψ^(m-1).
    ``difference`` is a per-triangle array.
    """
    if m < 2:
        raise ValidationError("Series coefficients start at a_2", code='invalid_order')
    if not psi.is_nonnegative or psi.is_zero:
        raise ValidationError("psi must be nonnegative and not identically zero", code='negative_data')
    difference = np.asarray(difference, dtype=float)
    if difference.shape != (mesh.n_triangles,):
        raise ValidationError("One coefficient difference per triangle is required", code='dimension_mismatch')
    if d1.intersects(d2):
        raise ValidationError("D1 and D2 share triangles", code='regions_not_disjoint')

    problem = get_problem(mesh, sigma)
    quadrature = problem.quadrature
    weight = quadrature.interpolate(problem.solve_linear(bdry=psi)) ** (m - 1)
    bound = float(np.max(np.abs(difference)))

    rows = []
    for k, step in enumerate(sequence):
        w = quadrature.interpolate(problem.solve_linear(bdry=step.potential))
        energy = w ** 2 * weight
        per_triangle = quadrature.integrate_per_triangle(difference[:, None] * energy)
        d1_part = float(per_triangle[d1.triangles].sum())
        d2_part = float(per_triangle[d2.triangles].sum())
        total = float(per_triangle.sum())
        rows.append({
            'step': k,
            'delta': step.delta,
            'd1_part': d1_part,
            'd2_part': d2_part,
            'rest': total - d1_part - d2_part,
            'total': total,
            'd2_bound': bound * float(quadrature.integrate_per_triangle(np.abs(energy))[d2.triangles].sum()),
        })
    logger.debug("Contradiction functional over %d steps: D1 part %.3e -> %.3e",
                 len(rows), rows[0]['d1_part'] if rows else 0.0, rows[-1]['d1_part'] if rows else 0.0)
    return rows
