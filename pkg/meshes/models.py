from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from django.core.exceptions import ValidationError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class NodeTag:
    """Node and boundary edge classification."""

    INTERIOR = 0
    GAMMA = 1
    OUTER = 2
    CAVITY = 3

    CHOICES = [
        (INTERIOR, 'INTERIOR'),
        (GAMMA, 'GAMMA'),
        (OUTER, 'OUTER'),
        (CAVITY, 'CAVITY'),
    ]

    @classmethod
    def label(cls, tag):
        return dict(cls.CHOICES)[int(tag)]

    @classmethod
    def from_label(cls, label):
        lookup = {name: value for value, name in cls.CHOICES}
        try:
            return lookup[label]
        except KeyError:
            raise ValidationError(f"Unknown tag '{label}'", code='invalid_tag')


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming triangulation of the disk or of an annular region.

    Immutable: arrays are read-only and derived geometry is cached on first
    use, so a mesh can be shared between worker threads.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    cell_regions: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, 'vertices', _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, 'triangles', _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, 'boundary_edges', _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, 'edge_tags', _frozen(self.edge_tags, np.int64))
        regions = self.cell_regions
        if regions is None:
            regions = np.zeros(len(self.triangles), dtype=np.int64)
        object.__setattr__(self, 'cell_regions', _frozen(regions, np.int64))
        if len(self.cell_regions) != len(self.triangles):
            raise ValidationError(
                "One region label per triangle is required",
                code='dimension_mismatch',
            )
        if len(self.edge_tags) != len(self.boundary_edges):
            raise ValidationError(
                "One tag per boundary edge is required",
                code='dimension_mismatch',
            )

    def __str__(self):
        return f"Mesh({self.n_vertices} vertices, {self.n_triangles} triangles, {self.n_holes} holes)"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self):
        """Gradients of the three barycentric hat functions, shape (T, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[:, :, 0], p[:, :, 1]
        twice_area = 2.0 * self.signed_areas
        grads = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (y[:, j] - y[:, k]) / twice_area
            grads[:, i, 1] = (x[:, k] - x[:, j]) / twice_area
        return grads

    @cached_property
    def edges(self):
        """Unique undirected edges (sorted vertex pairs) and their triangle counts."""
        local = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        local = np.sort(local, axis=1)
        unique, counts = np.unique(local, axis=0, return_counts=True)
        return unique, counts

    @cached_property
    def node_tags(self):
        """
        Per-vertex tag. A node touching both GAMMA and OUTER edges is GAMMA
        (discrete closure of the accessible arc).
        """
        tags = np.full(self.n_vertices, NodeTag.INTERIOR, dtype=np.int64)
        for tag in (NodeTag.CAVITY, NodeTag.OUTER, NodeTag.GAMMA):
            nodes = self.boundary_edges[self.edge_tags == tag].ravel()
            tags[nodes] = tag
        tags.setflags(write=False)
        return tags

    @cached_property
    def gamma_nodes(self):
        return np.flatnonzero(self.node_tags == NodeTag.GAMMA)

    @cached_property
    def free_nodes(self):
        return np.flatnonzero(self.node_tags == NodeTag.INTERIOR)

    @cached_property
    def boundary_nodes(self):
        return np.flatnonzero(self.node_tags != NodeTag.INTERIOR)

    @property
    def has_cavity(self):
        return bool(np.any(self.edge_tags == NodeTag.CAVITY))

    @property
    def n_holes(self):
        return 1 if self.has_cavity else 0

    @cached_property
    def max_edge_length(self):
        unique, _ = self.edges
        d = self.vertices[unique[:, 0]] - self.vertices[unique[:, 1]]
        return float(np.max(np.hypot(d[:, 0], d[:, 1])))

    @cached_property
    def triangle_adjacency(self):
        """Sparse symmetric triangle-to-triangle adjacency through shared edges."""
        local = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        owner = np.repeat(np.arange(self.n_triangles), 3)
        order = np.lexsort((local[:, 1], local[:, 0]))
        local, owner = local[order], owner[order]
        same = np.all(local[1:] == local[:-1], axis=1)
        a, b = owner[:-1][same], owner[1:][same]
        data = np.ones(2 * len(a))
        return coo_matrix(
            (data, (np.concatenate([a, b]), np.concatenate([b, a]))),
            shape=(self.n_triangles, self.n_triangles),
        ).tocsr()

    @cached_property
    def gamma_triangles(self):
        """Triangles owning at least one GAMMA boundary edge."""
        gamma_edges = np.sort(self.boundary_edges[self.edge_tags == NodeTag.GAMMA], axis=1)
        wanted = {tuple(e) for e in gamma_edges}
        local = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2), axis=2)
        hits = [
            t for t in range(self.n_triangles)
            if any(tuple(local[t, i]) in wanted for i in range(3))
        ]
        return np.array(hits, dtype=np.int64)

    def is_connected(self, triangles):
        """Whether the given triangle set is edge-connected."""
        triangles = np.asarray(triangles, dtype=np.int64)
        if len(triangles) == 0:
            return False
        sub = self.triangle_adjacency[triangles][:, triangles]
        n_components, _ = connected_components(sub, directed=False)
        return n_components == 1

    def euler_characteristic(self):
        """V - E + T, which equals 1 - holes for a triangulated disk or annulus."""
        unique, _ = self.edges
        return self.n_vertices - len(unique) + self.n_triangles

    def validate(self):
        """Check the conformity, orientation and tagging invariants."""
        if np.any(self.triangles < 0) or np.any(self.triangles >= self.n_vertices):
            raise ValidationError("Triangle refers to a missing vertex", code='invalid_mesh')
        if np.any(self.signed_areas <= 0.0):
            raise ValidationError(
                "Triangles must be counter-clockwise with positive area",
                code='invalid_mesh',
            )
        unique, counts = self.edges
        if np.any(counts > 2):
            raise ValidationError("Edge shared by more than two triangles", code='invalid_mesh')
        topological = {tuple(e) for e in unique[counts == 1]}
        tagged = {tuple(e) for e in np.sort(self.boundary_edges, axis=1)}
        if topological != tagged or len(tagged) != len(self.boundary_edges):
            raise ValidationError(
                "Tagged boundary edges must equal the topological boundary",
                code='invalid_mesh',
            )
        cavity_nodes = set(self.boundary_edges[self.edge_tags == NodeTag.CAVITY].ravel())
        outer_nodes = set(self.boundary_edges[self.edge_tags != NodeTag.CAVITY].ravel())
        if cavity_nodes & outer_nodes:
            raise ValidationError("Cavity and outer boundary share nodes", code='invalid_mesh')
        return self

    def with_edge_tags(self, edge_tags):
        return Mesh(self.vertices, self.triangles, self.boundary_edges, edge_tags, self.cell_regions)

    def with_regions(self, cell_regions):
        return Mesh(self.vertices, self.triangles, self.boundary_edges, self.edge_tags, cell_regions)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """A set of triangles of one mesh (used for D1, D2 and cavity estimates)."""

    triangles: np.ndarray
    n_triangles: int
    label: str = field(default='')

    def __post_init__(self):
        triangles = np.unique(np.asarray(self.triangles, dtype=np.int64))
        if len(triangles) and (triangles[0] < 0 or triangles[-1] >= self.n_triangles):
            raise ValidationError("Mask index outside the mesh", code='invalid_mask')
        triangles.setflags(write=False)
        object.__setattr__(self, 'triangles', triangles)

    def __len__(self):
        return len(self.triangles)

    def __str__(self):
        return f"RegionMask({self.label or 'unnamed'}: {len(self)} triangles)"

    @classmethod
    def empty(cls, mesh, label=''):
        return cls(np.empty(0, dtype=np.int64), mesh.n_triangles, label)

    @classmethod
    def full(cls, mesh, label=''):
        return cls(np.arange(mesh.n_triangles), mesh.n_triangles, label)

    @property
    def is_empty(self):
        return len(self.triangles) == 0

    @cached_property
    def indicator(self):
        values = np.zeros(self.n_triangles, dtype=bool)
        values[self.triangles] = True
        values.setflags(write=False)
        return values

    def area(self, mesh):
        return float(mesh.areas[self.triangles].sum())

    def intersects(self, other):
        return bool(np.any(self.indicator & other.indicator))

    def union(self, other, label=''):
        return RegionMask(np.union1d(self.triangles, other.triangles), self.n_triangles, label)

    def complement(self, label=''):
        return RegionMask(np.flatnonzero(~self.indicator), self.n_triangles, label)
