"""Mesh, data and random-stream construction shared by the scenarios."""
import numpy as np

from forward.services.boundary_data import positive_family, trig_family
from meshes.services.mesh_builder import (
    build_disk_mesh,
    region_mask_from_annulus,
    region_mask_from_disk,
    tag_gamma,
)

FAMILIES = {
    'trig': trig_family,
    'positive': positive_family,
}


def make_rng(seed):
    """Counter-based generator; the whole run draws from this one stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def build_mesh(mesh_config, with_cavity=True):
    """Tagged mesh from a validated mesh section, optionally without its cavity."""
    cavity = mesh_config.get('cavity') if with_cavity else None
    if cavity:
        cavity = (tuple(cavity['center']), cavity['radius'])
    mesh = build_disk_mesh(radius=mesh_config['radius'], cavity=cavity, h=mesh_config['h'])
    return tag_gamma(mesh, tuple(mesh_config['gamma']))


def boundary_family(mesh, data_config):
    return FAMILIES[data_config['family']](mesh, data_config['modes'], data_config['amplitude'])


def data_pairs(family):
    """(f_i, f_{i+1}) with wrap-around, so first-order data use every f_i once."""
    n = len(family)
    return [(f, family[(i + 1) % n]) for i, f in enumerate(family)]


def derivative_orders(max_order, orders=None):
    """Configured orders, or (1, 0) plus the (2, m - 2) stage orders up to ``max_order``."""
    if orders:
        return [tuple(order) for order in orders]
    return [(1, 0)] + [(2, m - 2) for m in range(2, max_order + 1)]


def region_mask(mesh, region_config, label=''):
    if region_config is None:
        return None
    if region_config['radius'] is not None:
        return region_mask_from_disk(mesh, region_config['center'], region_config['radius'], label)
    return region_mask_from_annulus(
        mesh, region_config['inner'], region_config['outer'], region_config['center'], label,
    )
