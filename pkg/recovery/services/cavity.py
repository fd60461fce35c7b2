"""
Cavity detection from first-order DN data for nonnegative Γ data.

Stage 1 compares the data with the cavity-free simulation; by the maximum
principle a cavity lowers every solution, so a residual above the noise
floor signals its existence. Stage 2 localizes it by scanning disk-shaped
candidate cavities coarse to fine.
"""
import itertools
import logging

import numpy as np
from django.core.exceptions import ValidationError
from scipy.spatial import cKDTree

from coefficients.models import PiecewiseCoefficient
from forward.services.solver import ForwardProblem
from meshes.services.mesh_builder import build_disk_mesh, region_mask_from_disk, tag_gamma

from ..models import CavityStatus, CavityVerdict

logger = logging.getLogger(__name__)

# Relative residual left by the discrete solves in noiseless data.
NUMERICAL_FLOOR = 1e-8


def transfer_coefficient(coefficient, source, target):
    """Piecewise-constant coefficient on ``target`` from the nearest ``source`` barycenter."""
    values = np.asarray(coefficient.values)
    if np.all(values == values[0]):
        return PiecewiseCoefficient(np.full(target.n_triangles, values[0]), coefficient.sigma_min)
    _, nearest = cKDTree(source.barycenters).query(target.barycenters)
    return PiecewiseCoefficient(values[nearest], coefficient.sigma_min)


def linear_measurements(mesh, sigma, data):
    problem = ForwardProblem(mesh, sigma)
    return [problem.dn_measure(None, problem.solve_linear(bdry=f), f) for f in data]


def relative_misfit(measured, simulated):
    stacked = np.concatenate([m.values for m in measured])
    difference = np.concatenate([m.values - s.values for m, s in zip(measured, simulated)])
    scale = float(np.linalg.norm(stacked))
    return float(np.linalg.norm(difference)) / scale if scale > 0 else 0.0


class CavityScan:
    """
    Misfit of candidate disk cavities. Candidate meshes are built with the
    data mesh's radius and h so that their Γ nodes coincide.
    """

    def __init__(self, mesh, sigma, experiments, arc, h, radius=1.0):
        self.mesh = mesh
        self.sigma = sigma
        self.experiments = experiments
        self.arc = arc
        self.h = h
        self.radius = radius
        self.landscape = []

    def misfit(self, center, cavity_radius, stage=0):
        try:
            candidate = tag_gamma(
                build_disk_mesh(radius=self.radius, cavity=(center, cavity_radius), h=self.h), self.arc,
            )
        except ValidationError:
            return None
        sigma = transfer_coefficient(self.sigma, self.mesh, candidate)
        data = [e.f1.transfer(candidate) for e in self.experiments]
        simulated = linear_measurements(candidate, sigma, data)
        misfit = relative_misfit([e.measurement for e in self.experiments], simulated)
        self.landscape.append({
            'stage': stage,
            'center_x': float(center[0]),
            'center_y': float(center[1]),
            'radius': float(cavity_radius),
            'misfit': misfit,
        })
        return misfit

    def search(self, candidates, stage):
        best = None
        for center, cavity_radius in candidates:
            misfit = self.misfit(center, cavity_radius, stage)
            if misfit is not None and (best is None or misfit < best[2]):
                best = (center, cavity_radius, misfit)
        return best

    def run(self, radii, spacing, rounds):
        ticks = np.arange(-self.radius, self.radius + 1e-9, spacing)
        coarse = [
            ((x, y), r) for r in radii for x, y in itertools.product(ticks, ticks)
            if np.hypot(x, y) + r < self.radius
        ]
        best = self.search(coarse, 0)
        if best is None:
            return None
        step = spacing
        radius_step = (radii[1] - radii[0]) if len(radii) > 1 else spacing
        for stage in range(1, rounds + 1):
            step, radius_step = step / 2.0, radius_step / 2.0
            (cx, cy), r, _ = best
            local = [
                ((cx + dx * step, cy + dy * step), r + dr * radius_step)
                for dx, dy, dr in itertools.product((-1, 0, 1), repeat=3)
                if (dx, dy, dr) != (0, 0, 0) and r + dr * radius_step > 0
            ]
            found = self.search(local, stage)
            if found is not None and found[2] < best[2]:
                best = found
            logger.debug("Cavity scan round %d: best %s", stage, best)
        return best


def detect_cavity(mesh, sigma, measurements, arc, h, radius=1.0, noise_level=None,
                  radii=(0.2, 0.3, 0.4), spacing=0.2, rounds=2, threshold=3.0, localize=True):
    """
    Two-stage cavity test on the order-(1, 0) experiments, whose data must be
    nonnegative and not identically zero.

    ``mesh`` and ``sigma`` describe the cavity-free hypothesis. The verdict
    is 'detected' when the relative residual exceeds ``threshold`` times the
    noise floor, 'inconclusive' when it does not but a candidate cavity
    explains the data clearly better, and 'none' otherwise.
    """
    experiments = measurements.of_order(1, 0)
    if not experiments:
        raise ValidationError("Cavity detection needs order-(1, 0) experiments", code='insufficient_data')
    for experiment in experiments:
        if not experiment.f1.is_nonnegative or experiment.f1.is_zero:
            raise ValidationError(
                "Cavity detection needs nonnegative, nonzero boundary data",
                code='negative_data',
            )
    if noise_level is None:
        noise_level = measurements.noise_level
    floor = max(noise_level, NUMERICAL_FLOOR)

    simulated = linear_measurements(mesh, sigma, [e.f1 for e in experiments])
    residual = relative_misfit([e.measurement for e in experiments], simulated)
    detected = residual > threshold * floor
    logger.info("Cavity stage 1: residual %.3e, noise floor %.3e", residual, floor)

    best, landscape = None, []
    if localize:
        scan = CavityScan(mesh, sigma, experiments, arc, h, radius)
        best = scan.run(radii, spacing, rounds)
        landscape = scan.landscape

    if detected:
        status = CavityStatus.DETECTED
    elif best is not None and residual > floor and best[2] < 0.5 * residual:
        status = CavityStatus.INCONCLUSIVE
    else:
        status = CavityStatus.NONE

    center = cavity_radius = misfit = mask = None
    if best is not None and status != CavityStatus.NONE:
        center, cavity_radius, misfit = (float(best[0][0]), float(best[0][1])), float(best[1]), float(best[2])
        try:
            mask = region_mask_from_disk(mesh, center, cavity_radius, label='cavity')
        except ValidationError:
            mask = None
    if status == CavityStatus.INCONCLUSIVE:
        logger.warning("Cavity verdict inconclusive: residual within noise but candidate misfit %.3e", misfit)
    return CavityVerdict(
        status=status,
        residual=residual,
        noise_floor=floor,
        center=center,
        radius=cavity_radius,
        misfit=misfit,
        mask=mask,
        landscape=landscape,
    )
