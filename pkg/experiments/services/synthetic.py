"""
Synthetic measurement files: the phantom's mixed DN derivatives for the
configured data family, written next to the mesh and coefficient files.
"""
import logging
from pathlib import Path

from django.core.exceptions import ValidationError

from coefficients.serializers import CoefficientTextSerializer
from coefficients.services.phantoms import build_phantom
from forward.models import NewtonOptions
from forward.services.solver import get_problem
from meshes.serializers import MeshTextSerializer
from recovery.serializers import MeasurementTextSerializer
from recovery.services.measurements import simulate_measurements
from semilinear_recovery.exceptions import SolverError

from .builders import boundary_family, build_mesh, data_pairs, derivative_orders, make_rng

logger = logging.getLogger(__name__)

MESH_FILE = 'mesh.txt'
COEFFICIENT_FILE = 'coefficients.txt'
MEASUREMENT_FILE = 'measurements.txt'


def check_wellposedness(mesh, phantom, family, eps_max):
    """
    Solve the semilinear problem for every datum of the family; any Newton
    failure means the phantom and amplitude leave the small-data regime.
    """
    problem = get_problem(mesh, phantom.sigma)
    options = NewtonOptions.from_settings(eps_max=eps_max)
    for i, f in enumerate(family):
        try:
            problem.solve_semilinear(phantom.series, f, options)
        except ValidationError as exc:
            if exc.code != 'data_too_large':
                raise
            raise SolverError(
                f"Datum {i}: {exc.message}",
                code='phantom_outside_wellposedness',
                params={'datum': i},
            )
        except SolverError as exc:
            raise SolverError(
                f"Datum {i}: Newton failed ({exc.code}) while generating data",
                code='phantom_outside_wellposedness',
                params={'datum': i, **exc.params},
            )


def generate_synthetic_data(config, out=None, jobs=None):
    """
    Simulate the configured experiments for the phantom and write the mesh,
    coefficient and measurement files to ``out``. Returns the measurement
    set and the written paths.
    """
    mesh = build_mesh(config['mesh'])
    phantom = build_phantom(mesh, config['phantom'])
    family = boundary_family(mesh, config['data'])
    check_wellposedness(mesh, phantom, family, config['eps_max'])

    max_order = config['recovery']['max_order']
    measurements = simulate_measurements(
        mesh, phantom.sigma, phantom.series, data_pairs(family),
        derivative_orders(max_order, config['orders']),
        noise_level=config['noise'], rng=make_rng(config['seed']), jobs=jobs or config['jobs'],
    )

    paths = {}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths['mesh'] = out / MESH_FILE
        paths['coefficients'] = out / COEFFICIENT_FILE
        paths['measurements'] = out / MEASUREMENT_FILE
        MeshTextSerializer().write(mesh, paths['mesh'])
        CoefficientTextSerializer().write(phantom.sigma, phantom.series, paths['coefficients'])
        MeasurementTextSerializer().write(measurements, paths['measurements'])
        logger.info("Wrote %s to %s", measurements, out)
    return measurements, paths
