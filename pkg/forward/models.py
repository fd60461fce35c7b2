from dataclasses import dataclass, field, replace

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from meshes.models import NodeTag


def _values(values, size):
    values = np.array(values, dtype=float, copy=True).ravel()
    if len(values) != size:
        raise ValidationError(
            f"Expected {size} values on the Gamma nodes, got {len(values)}",
            code='dimension_mismatch',
        )
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """
    Dirichlet data supported on Γ: one value per GAMMA node of ``mesh``
    (in ``mesh.gamma_nodes`` order), zero on every other boundary node.
    """

    mesh: object
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _values(self.values, len(self.mesh.gamma_nodes)))

    def __str__(self):
        return f"BoundaryData({len(self.values)} Gamma nodes, sup={self.sup_norm:g})"

    @classmethod
    def zero(cls, mesh):
        return cls(mesh, np.zeros(len(mesh.gamma_nodes)))

    @classmethod
    def from_function(cls, mesh, function):
        """Values ``function(x, y)`` at the Γ nodes."""
        x, y = mesh.vertices[mesh.gamma_nodes].T
        return cls(mesh, np.broadcast_to(np.asarray(function(x, y), dtype=float), x.shape))

    @classmethod
    def from_nodal(cls, mesh, nodal):
        """Restrict a nodal field to Γ; it must vanish on the rest of the boundary."""
        nodal = np.asarray(nodal, dtype=float)
        rest = mesh.boundary_nodes[mesh.node_tags[mesh.boundary_nodes] != NodeTag.GAMMA]
        if np.any(nodal[rest] != 0.0):
            raise ValidationError(
                "Boundary data must vanish outside Gamma",
                code='unsupported_data',
            )
        return cls(mesh, nodal[mesh.gamma_nodes])

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    @property
    def is_zero(self):
        return not np.any(self.values)

    @property
    def is_nonnegative(self):
        return bool(np.all(self.values >= 0.0))

    def to_nodal(self):
        nodal = np.zeros(self.mesh.n_vertices)
        nodal[self.mesh.gamma_nodes] = self.values
        return nodal

    def transfer(self, mesh):
        """The same Γ values on another mesh sharing this mesh's Γ nodes."""
        source = self.mesh.vertices[self.mesh.gamma_nodes]
        target = mesh.vertices[mesh.gamma_nodes]
        if source.shape != target.shape or not np.allclose(source, target, atol=1e-12):
            raise ValidationError(
                "Meshes do not share their Gamma nodes",
                code='dimension_mismatch',
            )
        return BoundaryData(mesh, self.values)

    def __add__(self, other):
        return BoundaryData(self.mesh, self.values + other.values)

    def __sub__(self, other):
        return BoundaryData(self.mesh, self.values - other.values)

    def __mul__(self, factor):
        return BoundaryData(self.mesh, float(factor) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return BoundaryData(self.mesh, -self.values)


@dataclass(frozen=True, eq=False)
class DNMeasurement:
    """
    Discrete flux functional on Γ: ``values[i]`` is the variational flux
    tested against the hat function of the i-th Γ node.
    """

    mesh: object
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _values(self.values, len(self.mesh.gamma_nodes)))

    def __str__(self):
        return f"DNMeasurement({len(self.values)} Gamma nodes, norm={self.norm:g})"

    @property
    def norm(self):
        return float(np.linalg.norm(self.values))

    def pair(self, g):
        """<measurement, g> as a finite sum over the Γ nodes."""
        values = g.values if isinstance(g, BoundaryData) else np.asarray(g, dtype=float)
        return float(np.dot(self.values, values))

    def relative_error(self, reference):
        scale = reference.norm
        diff = float(np.linalg.norm(self.values - reference.values))
        return diff / scale if scale > 0 else diff

    def __add__(self, other):
        return DNMeasurement(self.mesh, self.values + other.values)

    def __sub__(self, other):
        return DNMeasurement(self.mesh, self.values - other.values)

    def __mul__(self, factor):
        return DNMeasurement(self.mesh, float(factor) * self.values)

    __rmul__ = __mul__


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    converged: bool = False

    @property
    def residual(self):
        return self.residual_norms[-1] if self.residual_norms else float('nan')

    def as_dict(self):
        return {
            'iterations': self.iterations,
            'residual': self.residual,
            'residual_norms': list(self.residual_norms),
            'step_norms': list(self.step_norms),
            'converged': self.converged,
        }


@dataclass(frozen=True)
class NewtonOptions:
    max_iterations: int = 25
    tolerance: float = 1e-10
    damping: float = 1.0
    # Sup-norm bound on the Dirichlet data; None disables the check.
    eps_max: float = 0.1

    @classmethod
    def from_settings(cls, **overrides):
        config = getattr(settings, 'SEMILINEAR_RECOVERY', {})
        options = cls(
            max_iterations=config.get('NEWTON_MAX_ITERATIONS', cls.max_iterations),
            tolerance=config.get('NEWTON_TOLERANCE', cls.tolerance),
            eps_max=config.get('EPS_MAX', cls.eps_max),
        )
        return replace(options, **overrides)
