"""
P1 finite element assembly: stiffness, mass, Γ boundary mass and the
quadrature operators used for the nonlinear term.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from scipy.sparse import coo_matrix, diags

from meshes.models import NodeTag

# Barycentric coordinates of the quadrature points.
QUADRATURE_RULES = {
    'interior': np.array([
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]),
    'lumped': np.eye(3),
}

LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _scatter(mesh, local):
    """Sum per-triangle (T, 3, 3) blocks into a sparse (V, V) matrix."""
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def element_stiffness(mesh):
    """Unit-coefficient local stiffness matrices area * G G^T, shape (T, 3, 3)."""
    grads = mesh.basis_gradients
    return mesh.areas[:, None, None] * np.einsum('tid,tjd->tij', grads, grads)


def assemble_weighted_stiffness(mesh, weights):
    """Full stiffness matrix sum_T weights_T * K_T for any per-triangle weights."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (mesh.n_triangles,):
        raise ValidationError(
            f"Need one coefficient per triangle ({mesh.n_triangles}), got {weights.shape}",
            code='dimension_mismatch',
        )
    return _scatter(mesh, weights[:, None, None] * element_stiffness(mesh))


@dataclass(frozen=True, eq=False)
class StiffnessSystem:
    """Full stiffness matrix split into the free block and the free-to-boundary coupling."""

    full: object
    free_nodes: np.ndarray
    boundary_nodes: np.ndarray

    @cached_property
    def free(self):
        return self.full[self.free_nodes][:, self.free_nodes].tocsc()

    @cached_property
    def coupling(self):
        return self.full[self.free_nodes][:, self.boundary_nodes].tocsr()


def assemble_stiffness(mesh, sigma):
    """
    Stiffness matrix with entries sum_T σ_T ∫_T ∇φ_i·∇φ_j.

    Free nodes are the interior nodes; every boundary node (Γ, outer rest,
    cavity) carries a Dirichlet value.
    """
    values = getattr(sigma, 'values', sigma)
    full = assemble_weighted_stiffness(mesh, values)
    return StiffnessSystem(full, mesh.free_nodes, mesh.boundary_nodes)


def assemble_mass(mesh, mask=None):
    """P1 mass matrix over the triangles of ``mask`` (all triangles if None)."""
    weights = mesh.areas.copy()
    if mask is not None:
        weights = np.where(mask.indicator, weights, 0.0)
    return _scatter(mesh, weights[:, None, None] * LOCAL_MASS)


def boundary_mass(mesh, tag=NodeTag.GAMMA):
    """
    1-D P1 mass matrix of the boundary edges carrying ``tag``, restricted to
    the Γ nodes (rows and columns in ``mesh.gamma_nodes`` order).
    """
    edges = mesh.boundary_edges[mesh.edge_tags == tag]
    d = mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]]
    lengths = np.hypot(d[:, 0], d[:, 1])
    local = lengths[:, None, None] * (np.ones((2, 2)) + np.eye(2)) / 6.0
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    n = mesh.n_vertices
    full = coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    nodes = mesh.gamma_nodes
    return full[nodes][:, nodes].toarray()


class Quadrature:
    """
    Per-triangle quadrature for ∫ a(x, u) φ_i: ``B`` interpolates nodal
    values to the points, ``weights`` has shape (T, Q).
    """

    def __init__(self, mesh, rule=None):
        if rule is None:
            rule = getattr(settings, 'SEMILINEAR_RECOVERY', {}).get('QUADRATURE', 'interior')
        if rule not in QUADRATURE_RULES:
            raise ValidationError(f"Unknown quadrature rule '{rule}'", code='invalid_quadrature')
        self.mesh = mesh
        self.rule = rule
        self.points = QUADRATURE_RULES[rule]
        self.n_points = len(self.points)
        self.weights = np.repeat(mesh.areas[:, None] / self.n_points, self.n_points, axis=1)

        n_rows = mesh.n_triangles * self.n_points
        rows = np.repeat(np.arange(n_rows), 3)
        cols = np.repeat(mesh.triangles, self.n_points, axis=0).ravel()
        data = np.tile(self.points.ravel(), mesh.n_triangles)
        self.B = coo_matrix((data, (rows, cols)), shape=(n_rows, mesh.n_vertices)).tocsr()

    def __str__(self):
        return f"Quadrature({self.rule}, {self.n_points} points per triangle)"

    def interpolate(self, u):
        """Nodal field -> values at the quadrature points, shape (T, Q)."""
        return (self.B @ u).reshape(self.mesh.n_triangles, self.n_points)

    def as_points(self, values):
        """Broadcast a per-triangle or per-point field to shape (T, Q)."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 0:
            values = np.full(self.mesh.n_triangles, float(values))
        if values.ndim == 1:
            values = values[:, None]
        return np.broadcast_to(values, (self.mesh.n_triangles, self.n_points))

    def load(self, values):
        """Nodal vector of ∫ values · φ_i."""
        return self.B.T @ (self.weights * self.as_points(values)).ravel()

    def integrate(self, values, triangles=None):
        """∫ values over all triangles or the given subset."""
        weighted = self.weights * self.as_points(values)
        if triangles is not None:
            weighted = weighted[triangles]
        return float(weighted.sum())

    def integrate_per_triangle(self, values):
        return (self.weights * self.as_points(values)).sum(axis=1)

    def weighted_mass(self, values):
        """Sparse matrix of ∫ values · φ_i φ_j."""
        scale = (self.weights * self.as_points(values)).ravel()
        return (self.B.T @ diags(scale) @ self.B).tocsr()
