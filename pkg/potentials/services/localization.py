"""
Localized potentials: Γ data whose linear solutions carry large energy on
D1 and vanishing energy on D2.

The sequence is built from regularized Rayleigh-quotient maximizers of
φᵀM1φ / φᵀ(M2 + δN)φ along the halving grid δ_j = δ0 · 2^-j.
"""
import logging

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.linalg import LinAlgError, eigh

from forward.models import BoundaryData
from forward.services.assembly import assemble_mass, boundary_mass
from forward.services.solver import get_problem
from semilinear_recovery.exceptions import SolverError

from ..models import EnergyOperatorPair, PotentialSequence, PotentialStep

logger = logging.getLogger(__name__)

# Relative D1-energy gain one member must show over the previous one.
ENERGY_MARGIN = 1e-6
# D2 energy per unit Γ mass, relative to the pencil scale, below which it is rounding noise.
NOISE_FLOOR = 1e-10


def _config(key, default):
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get(key, default)


def energy_on_region(mesh, v, mask):
    """∫_mask v² with the exact P1 element mass matrix."""
    values = np.asarray(v, dtype=float)[mesh.triangles[mask.triangles]]
    local = (values ** 2).sum(axis=1) + values.sum(axis=1) ** 2
    return float(np.dot(mesh.areas[mask.triangles], local) / 12.0)


def region_gram(mesh, basis, mask, weight=None, quadrature=None):
    """
    basisᵀ Mass_mask basis, symmetrized. Unweighted Grams use the exact P1
    mass matrix; weighted ones use ``quadrature`` with ``weight`` at its points.
    """
    if mask.is_empty:
        return np.zeros((basis.shape[1], basis.shape[1]))
    if weight is None:
        mass = assemble_mass(mesh, mask)
    else:
        mass = quadrature.weighted_mass(np.where(mask.indicator[:, None], weight, 0.0))
    gram = basis.T @ (mass @ basis)
    return 0.5 * (gram + gram.T)


def check_regions(mesh, d1, d2):
    for mask in (d1, d2):
        if mask.n_triangles != mesh.n_triangles:
            raise ValidationError("Region mask belongs to another mesh", code='dimension_mismatch')
    if d1.is_empty:
        raise ValidationError("D1 must contain at least one triangle", code='empty_mask')
    if d1.intersects(d2):
        raise ValidationError("D1 and D2 share triangles", code='regions_not_disjoint')
    if d2.is_empty:
        return
    if not mesh.is_connected(d2.complement().triangles):
        raise ValidationError(
            "The complement of D2 is not connected",
            code='d2_disconnects_domain',
        )
    if np.all(d2.indicator[mesh.gamma_triangles]):
        raise ValidationError("D2 covers every triangle along Gamma", code='gamma_covered')


def build_energy_operators(mesh, sigma, d1, d2, weight=None):
    """
    Gram matrices on D1 and D2 of the Γ-hat-function solutions. All columns
    share one factorization of the stiffness matrix.

    ``weight`` (per triangle or per quadrature point, nonnegative) turns the
    energies into ∫_Dj w v², integrated with the forward quadrature rule.
    """
    if len(mesh.gamma_nodes) == 0:
        raise ValidationError("Mesh has no Gamma nodes", code='empty_gamma')
    check_regions(mesh, d1, d2)
    problem = get_problem(mesh, sigma)
    quadrature = None
    if weight is not None:
        quadrature = problem.quadrature
        weight = np.array(quadrature.as_points(weight))
        if np.any(weight < 0) or not np.all(np.isfinite(weight)):
            raise ValidationError("Energy weight must be finite and nonnegative", code='negative_data')
    basis = problem.harmonic_basis()
    pair = EnergyOperatorPair(
        mesh=mesh,
        d1=d1,
        d2=d2,
        m1=region_gram(mesh, basis, d1, weight, quadrature),
        m2=region_gram(mesh, basis, d2, weight, quadrature),
        n=boundary_mass(mesh),
        basis=basis,
        weight=weight,
    )
    logger.debug("Built %s", pair)
    return pair


class RegularizedPencil:
    """
    M1 x = λ (M2 + δ s N) x, solved in the N-orthonormal eigenbasis of M2 so
    that small δ never needs a Cholesky factor of a nearly singular matrix.
    ``s`` is the largest D2 energy per unit boundary mass (the largest D1
    energy when D2 is empty), which makes δ dimensionless.
    """

    def __init__(self, pair, rtol=None):
        self.rtol = rtol if rtol is not None else _config('POTENTIAL_RAYLEIGH_RTOL', 1e-8)
        n_values, n_vectors = eigh(pair.n)
        if not n_values.min() > 0:
            raise SolverError("Gamma boundary mass matrix is not positive definite", code='eigensolver_failure')
        whitening = n_vectors / np.sqrt(n_values)
        c2 = whitening.T @ pair.m2 @ whitening
        d, q = eigh(0.5 * (c2 + c2.T))
        self.d = np.clip(d, 0.0, None)
        self.transform = whitening @ q
        c1 = self.transform.T @ pair.m1 @ self.transform
        self.c1 = 0.5 * (c1 + c1.T)
        self.scale = self.d.max() if self.d.max() > 0 else float(np.linalg.eigvalsh(self.c1).max())
        if not self.scale > 0:
            raise SolverError("Energy operators vanish on D1 and D2", code='eigensolver_failure')

    def leading(self, delta):
        """Leading eigenvalue and Γ vector for regularization ``delta``."""
        shift = self.d + delta * self.scale
        t = 1.0 / np.sqrt(shift)
        size = len(shift)
        try:
            values, vectors = eigh(t[:, None] * self.c1 * t[None, :], subset_by_index=[size - 1, size - 1])
        except (LinAlgError, ValueError) as exc:
            raise SolverError(
                f"Generalized eigensolve failed at delta={delta:g}: {exc}",
                code='eigensolver_failure',
            ) from exc
        value = float(values[-1])
        z = t * vectors[:, -1]
        quotient = float(z @ self.c1 @ z) / float(shift @ z ** 2)
        if not value > 0 or abs(quotient - value) > self.rtol * abs(value):
            raise SolverError(
                f"Leading eigenvalue {value:g} does not match its Rayleigh quotient {quotient:g}",
                code='eigensolver_failure',
            )
        return value, self.transform @ z


def _candidate(pair, pencil, delta):
    """The scaled potential for δ, or None once D2 energy is lost to rounding."""
    eigenvalue, vector = pencil.leading(delta)
    vector = vector / np.max(np.abs(vector))
    if vector[np.argmax(np.abs(vector))] < 0:
        vector = -vector
    e1, e2 = pair.energies(vector)
    boundary = float(vector @ pair.n @ vector)
    if pair.d2_empty:
        scale = np.sqrt(1.0 / (delta * boundary))
    elif e2 > NOISE_FLOOR * pencil.scale * boundary:
        scale = np.sqrt(np.sqrt(delta) / e2)
    else:
        return None
    return PotentialStep(
        direction=BoundaryData(pair.mesh, vector),
        scale=float(scale),
        energy_d1=float(scale ** 2 * e1),
        energy_d2=float(scale ** 2 * e2),
        delta=delta,
        eigenvalue=eigenvalue,
    )


def _scan(pair, pencil, delta0, halvings):
    candidates = []
    for j in range(halvings + 1):
        delta = delta0 * 2.0 ** (-j)
        try:
            candidate = _candidate(pair, pencil, delta)
        except SolverError as exc:
            if not candidates:
                raise
            logger.debug("Scan stops at delta=%.3e: %s", delta, exc.message)
            break
        if candidate is None:
            if not candidates:
                raise SolverError(f"Potential at delta={delta:g} has no energy on D2", code='eigensolver_failure')
            break
        candidates.append(candidate)
    return candidates


def _follows(previous, step, growth, d2_empty):
    if step.energy_d1 <= previous.energy_d1 * (1.0 + ENERGY_MARGIN):
        return False
    return d2_empty or step.ratio >= growth * previous.ratio


def _widest_chain(candidates, steps, growth, d2_empty):
    """
    Longest-span chain of candidates in which every member follows the
    previous one, among chains with at least ``steps`` members.
    Returns (chain, longest chain length found).
    """
    n = len(candidates)
    best, best_key, longest = None, None, 0
    for start in range(n):
        length = [0] * n
        parent = [None] * n
        length[start] = 1
        for b in range(start + 1, n):
            for a in range(start, b):
                if length[a] and length[a] + 1 > length[b] and _follows(
                        candidates[a], candidates[b], growth, d2_empty):
                    length[b] = length[a] + 1
                    parent[b] = a
        longest = max(longest, max(length))
        for end in range(n - 1, start - 1, -1):
            if length[end] >= steps:
                key = (end - start, length[end])
                if best_key is None or key > best_key:
                    chain = [end]
                    while parent[chain[-1]] is not None:
                        chain.append(parent[chain[-1]])
                    best, best_key = chain[::-1], key
                break
    return best, longest


def localized_potential_sequence(pair, steps=None, delta0=None, min_growth=None, halvings=None):
    """
    ``steps`` potentials chosen from the leading eigenvectors of
    M1 x = λ (M2 + δ_j s N) x on the grid δ_j = δ0 · 2^-j, j = 0 .. halvings.

    Each potential is scaled so that its D2 energy equals δ_j^(1/2), or so
    that φᵀNφ = 1/δ_j when D2 is empty. Consecutive members have strictly
    increasing D1 energy and an energy ratio E(D1)/E(D2) at least
    ``min_growth`` times the previous one; grid points that do not qualify
    are skipped, and the chain spanning the widest δ range is kept.
    Raises ``no_localization`` when no such chain of ``steps`` members exists.
    """
    steps = steps if steps is not None else _config('POTENTIAL_STEPS', 6)
    delta0 = delta0 if delta0 is not None else _config('POTENTIAL_DELTA0', 1e-2)
    min_growth = min_growth if min_growth is not None else _config('POTENTIAL_MIN_GROWTH', 2.0)
    halvings = halvings if halvings is not None else _config('POTENTIAL_HALVINGS', 40)
    if steps < 2:
        raise ValidationError("A potential sequence needs at least two steps", code='invalid_steps')
    if not delta0 > 0:
        raise ValidationError("The initial regularization must be positive", code='invalid_steps')
    if min_growth < 1.0:
        raise ValidationError("The per-step ratio growth must be at least 1", code='invalid_steps')
    if halvings < steps - 1:
        raise ValidationError("The regularization grid is shorter than the sequence", code='invalid_steps')

    candidates = _scan(pair, RegularizedPencil(pair), delta0, halvings)
    chain, longest = _widest_chain(candidates, steps, min_growth, pair.d2_empty)
    if chain is None:
        raise SolverError(
            f"Only {longest} of {steps} potentials localize on D1 over {len(candidates)} regularization "
            "levels; D1 may be unreachable from Gamma without crossing D2",
            code='no_localization',
            params={'candidates': candidates, 'longest': longest},
        )
    picks = np.round(np.linspace(0, len(chain) - 1, steps)).astype(int)
    sequence = PotentialSequence(pair, [candidates[chain[i]] for i in picks])
    for k, step in enumerate(sequence):
        logger.debug("Potential %d: delta=%.3e E1=%.4e E2=%.4e", k, step.delta, step.energy_d1, step.energy_d2)
    logger.info(
        "Localized %d potentials from %d regularization levels, delta %.3e -> %.3e, final ratio %.4e",
        steps, len(candidates), sequence[0].delta, sequence[-1].delta,
        sequence.energies_d1[-1] if pair.d2_empty else sequence.ratios[-1],
    )
    return sequence
