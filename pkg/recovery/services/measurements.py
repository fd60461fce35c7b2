"""
Simulated measurement sets: mixed DN derivatives of the forward map for
pairs of Γ data, with optional relative Gaussian noise.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.core.exceptions import ValidationError

from forward.models import DNMeasurement
from linearization.services.cascade import build_lattice, dn_derivative

from ..models import Experiment, MeasurementSet

logger = logging.getLogger(__name__)


def _series_for(series, order):
    return series if series.order >= order else series.truncated(order)


def simulate_derivatives(mesh, sigma, series, f1, f2, orders):
    """DN derivatives of every order in ``orders`` from one lattice."""
    top = max(sum(order) for order in orders)
    series = _series_for(series, max(top, 2))
    lattice = build_lattice(mesh, sigma, series, f1, f2, top)
    return {tuple(order): dn_derivative(mesh, sigma, series, lattice, *order) for order in orders}


def add_noise(measurement, level, rng):
    """Relative i.i.d. Gaussian noise, scaled by the RMS of the measurement."""
    if level <= 0:
        return measurement
    values = measurement.values
    rms = float(np.sqrt(np.mean(values ** 2))) if len(values) else 0.0
    return DNMeasurement(measurement.mesh, values + level * rms * rng.standard_normal(len(values)))


def simulate_measurements(mesh, sigma, series, pairs, orders, noise_level=0.0, rng=None, jobs=1):
    """
    One experiment per (data pair, order). Pairs are simulated independently
    on ``jobs`` threads; noise is drawn afterwards in experiment order, so the
    result does not depend on scheduling.
    """
    if not orders:
        raise ValidationError("At least one derivative order is required", code='invalid_order')
    for order in orders:
        if min(order) < 0 or sum(order) < 1:
            raise ValidationError(f"Invalid derivative order {order}", code='invalid_order')
    if noise_level > 0 and rng is None:
        raise ValidationError("Noisy measurements need a random generator", code='config_invalid')

    def simulate(pair):
        return simulate_derivatives(mesh, sigma, series, pair[0], pair[1], orders)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(simulate, pairs))
    else:
        results = [simulate(pair) for pair in pairs]

    measurements = MeasurementSet(mesh, noise_level=noise_level)
    for (f1, f2), derivatives in zip(pairs, results):
        for order in orders:
            measured = add_noise(derivatives[tuple(order)], noise_level, rng)
            measurements.add(Experiment(f1, f2, order, measured))
    logger.info("Simulated %s", measurements)
    return measurements
