"""
Disk and annulus triangulations, Γ tagging and disk-shaped region masks.

Nodes are laid out on concentric rings and triangulated with
``scipy.spatial.Delaunay``; a cavity is cut out by removing the triangles
spanned by its ring, whose edges are always Delaunay edges because the
cavity disk contains no other node.
"""
import logging
import math

import numpy as np
from django.core.exceptions import ValidationError
from scipy.spatial import Delaunay

from ..models import Mesh, NodeTag, RegionMask

logger = logging.getLogger(__name__)

# Clearance between a cavity and the outer circle, in units of h.
CAVITY_CLEARANCE = 2.0


def _ring(center, radius, h, phase=0.0):
    n = max(6, math.ceil(2.0 * math.pi * radius / h))
    theta = phase * (2.0 * math.pi / n) + 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])


def _disk_nodes(radius, h):
    n_rings = math.ceil(radius / h)
    rings = [np.zeros((1, 2))]
    for i in range(1, n_rings + 1):
        rings.append(_ring((0.0, 0.0), radius * i / n_rings, h, phase=0.5 * (i % 2)))
    return rings


def build_disk_mesh(radius=1.0, cavity=None, h=0.1):
    """
    Triangulate the disk of the given radius centred at the origin, or the
    region between it and a disk-shaped cavity ``(center, cavity_radius)``.

    Outer edges are tagged OUTER and cavity edges CAVITY; Γ is tagged
    afterwards with :func:`tag_gamma`. The outer ring depends only on
    ``radius`` and ``h``, so meshes with and without a cavity share their
    outer boundary nodes.
    """
    if h <= 0 or radius <= 0 or h >= radius:
        raise ValidationError(
            f"Need 0 < h < radius, got h={h}, radius={radius}",
            code='degenerate_parameters',
        )

    rings = _disk_nodes(radius, h)
    outer = rings[-1]
    interior = np.vstack(rings[:-1])

    cavity_rings = []
    if cavity is not None:
        center, cavity_radius = np.asarray(cavity[0], dtype=float), float(cavity[1])
        if cavity_radius <= 0:
            raise ValidationError("Cavity radius must be positive", code='degenerate_parameters')
        if np.hypot(*center) + cavity_radius + CAVITY_CLEARANCE * h > radius:
            raise ValidationError(
                f"Cavity ({center[0]:g}, {center[1]:g}; r={cavity_radius:g}) needs a clearance "
                f"of {CAVITY_CLEARANCE:g}h to the outer boundary",
                code='cavity_too_close',
            )
        buffer_radius = cavity_radius + 0.8 * h
        cavity_rings = [_ring(center, cavity_radius, h), _ring(center, buffer_radius, h, phase=0.5)]
        keep = np.hypot(*(interior - center).T) >= buffer_radius + 0.45 * h
        interior = interior[keep]

    points = np.vstack([interior, *cavity_rings, outer])
    n_cavity = len(cavity_rings[0]) if cavity_rings else 0
    cavity_ids = np.arange(len(interior), len(interior) + n_cavity)
    outer_ids = np.arange(len(points) - len(outer), len(points))

    triangles = Delaunay(points).simplices.astype(np.int64)
    if n_cavity:
        on_cavity = np.isin(triangles, cavity_ids)
        triangles = triangles[~np.all(on_cavity, axis=1)]

    # Orient counter-clockwise and drop degenerate slivers from cocircular nodes.
    p = points[triangles]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    triangles[signed < 0] = triangles[signed < 0][:, [0, 2, 1]]
    triangles = triangles[np.abs(signed) > 1e-12 * h * h]

    # Deterministic node order: lexicographic by coordinates, ties by construction order.
    order = np.lexsort((points[:, 1], points[:, 0]))
    relabel = np.empty(len(points), dtype=np.int64)
    relabel[order] = np.arange(len(points))
    vertices = points[order]
    triangles = relabel[triangles]
    cavity_ids = relabel[cavity_ids]
    outer_ids = relabel[outer_ids]

    local = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    unique, counts = np.unique(local, axis=0, return_counts=True)
    boundary = unique[counts == 1]
    is_cavity = np.all(np.isin(boundary, cavity_ids), axis=1)
    is_outer = np.all(np.isin(boundary, outer_ids), axis=1)
    if not np.all(is_cavity | is_outer):
        raise ValidationError(
            "Triangulation produced a boundary edge off both circles",
            code='invalid_mesh',
        )
    edge_tags = np.where(is_cavity, NodeTag.CAVITY, NodeTag.OUTER)

    mesh = Mesh(vertices, triangles, boundary, edge_tags).validate()
    logger.debug("Built %s with h=%g", mesh, h)
    return mesh


def tag_gamma(mesh, arc):
    """
    Tag outer edges whose midpoint angle lies in the closed arc
    ``(start, end)`` (radians, measured about the origin) as GAMMA and the
    remaining outer edges as OUTER. Arcs of width >= 2π select everything.
    """
    start, end = float(arc[0]), float(arc[1])
    width = end - start
    if width < 0:
        raise ValidationError("Arc end must not precede its start", code='empty_gamma')

    tags = mesh.edge_tags.copy()
    outer = tags != NodeTag.CAVITY
    mid = mesh.vertices[mesh.boundary_edges].mean(axis=1)
    theta = np.arctan2(mid[:, 1], mid[:, 0])
    if width >= 2.0 * np.pi - 1e-12:
        inside = np.ones(len(tags), dtype=bool)
    else:
        inside = np.mod(theta - start, 2.0 * np.pi) <= width + 1e-12
    tags[outer] = np.where(inside[outer], NodeTag.GAMMA, NodeTag.OUTER)
    if not np.any(tags == NodeTag.GAMMA):
        raise ValidationError(
            f"Arc [{start:g}, {end:g}] contains no boundary edge midpoint; refine the mesh",
            code='empty_gamma',
        )
    return mesh.with_edge_tags(tags)


def region_mask_from_disk(mesh, center, radius, label=''):
    """All triangles whose barycenter lies in the closed disk."""
    d = np.hypot(*(mesh.barycenters - np.asarray(center, dtype=float)).T)
    triangles = np.flatnonzero(d <= radius)
    if len(triangles) == 0:
        raise ValidationError(
            f"Disk at {tuple(center)} with radius {radius:g} contains no triangle",
            code='empty_mask',
        )
    return RegionMask(triangles, mesh.n_triangles, label)


def region_mask_from_annulus(mesh, inner_radius, outer_radius, center=(0.0, 0.0), label=''):
    """Triangles whose barycenter distance to ``center`` lies in [inner, outer]."""
    d = np.hypot(*(mesh.barycenters - np.asarray(center, dtype=float)).T)
    triangles = np.flatnonzero((d >= inner_radius) & (d <= outer_radius))
    if len(triangles) == 0:
        raise ValidationError("Annulus contains no triangle", code='empty_mask')
    return RegionMask(triangles, mesh.n_triangles, label)


def region_mask_from_labels(mesh, labels, label=''):
    """Triangles whose region label is in ``labels`` (may be empty)."""
    triangles = np.flatnonzero(np.isin(mesh.cell_regions, list(labels)))
    return RegionMask(triangles, mesh.n_triangles, label)


def label_regions_by_disks(mesh, disks):
    """
    Region labels from a list of ``(center, radius)`` disks: 0 outside all
    disks, i + 1 inside disk i (later disks win on overlap).
    """
    labels = np.zeros(mesh.n_triangles, dtype=np.int64)
    for i, (center, radius) in enumerate(disks):
        d = np.hypot(*(mesh.barycenters - np.asarray(center, dtype=float)).T)
        labels[d <= radius] = i + 1
    return mesh.with_regions(labels)
