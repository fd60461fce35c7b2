import logging

import numpy as np
from django.conf import settings

from meshes.services.mesh_builder import label_regions_by_disks

from ..models import NonlinearitySeries, Phantom, PiecewiseCoefficient

logger = logging.getLogger(__name__)


def inclusion_labels(mesh, inclusions):
    disks = [(inclusion['center'], inclusion['radius']) for inclusion in inclusions]
    return label_regions_by_disks(mesh, disks).cell_regions


def region_field(labels, field_data):
    values = np.array(
        [field_data['background']] + [inc['value'] for inc in field_data['inclusions']],
        dtype=float,
    )
    return values[labels]


def build_phantom(mesh, phantom_data):
    """
    Cell fields of a validated :class:`PhantomSerializer` payload on ``mesh``.

    σ and every a_k carry their own inclusion partition; nothing forces them
    to agree.
    """
    config = getattr(settings, 'SEMILINEAR_RECOVERY', {})
    terms = phantom_data.get('nonlinearity', [])
    order = phantom_data.get('order') or max(
        [term['order'] for term in terms] + [config.get('NONLINEARITY_ORDER', 5)]
    )

    sigma_data = phantom_data.get('sigma') or {'background': 1.0, 'inclusions': []}
    sigma_labels = inclusion_labels(mesh, sigma_data.get('inclusions', []))
    sigma = PiecewiseCoefficient(region_field(sigma_labels, sigma_data), phantom_data.get('sigma_min'))

    coefficients = np.zeros((mesh.n_triangles, order - 1))
    series_labels = {}
    for term in terms:
        labels = inclusion_labels(mesh, term.get('inclusions', []))
        series_labels[term['order']] = labels
        coefficients[:, term['order'] - 2] = region_field(labels, term)
    series = NonlinearitySeries(coefficients)

    logger.debug("Phantom on %s: %s, %s", mesh, sigma, series)
    return Phantom(sigma, series, sigma_labels, series_labels)


def random_series(n_triangles, order, rng, low=0.5, high=1.0):
    """Series with every a_k drawn per triangle from U(low, high)."""
    return NonlinearitySeries(rng.uniform(low, high, (n_triangles, order - 1)))
