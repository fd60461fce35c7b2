from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError


@dataclass(frozen=True)
class ChainRuleTerm:
    """
    One group of set partitions in the mixed derivative of a(x, F(t1, t2)):
    ``count`` partitions with ``order`` blocks whose (t1, t2) multiplicities
    are ``blocks``. Contributes count * a_order * prod(u_block).
    """

    order: int
    blocks: tuple
    count: int

    def __str__(self):
        factors = ' * '.join(f"u{p}{q}" for p, q in self.blocks)
        return f"{self.count} * a_{self.order} * {factors}"

    @property
    def total_order(self):
        return sum(p + q for p, q in self.blocks)


@dataclass(eq=False)
class DerivativeLattice:
    """
    Mixed derivatives u_{p,q} = ∂_{t1}^p ∂_{t2}^q S(t1 f1 + t2 f2) at 0 for
    1 <= p + q <= max_order, with the quadrature-point sources that produced
    the entries of order >= 2.
    """

    f1: object
    f2: object
    max_order: int
    entries: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def __str__(self):
        return f"DerivativeLattice(M={self.max_order}, {len(self.entries)} entries)"

    def __contains__(self, index):
        return tuple(index) in self.entries

    def __getitem__(self, index):
        index = tuple(index)
        if index not in self.entries:
            raise ValidationError(
                f"Lattice entry u_{index} has not been computed",
                code='missing_lattice_entry',
                params={'index': index},
            )
        return self.entries[index]

    @property
    def mesh(self):
        return self.f1.mesh

    def indices(self, order=None):
        """Lattice indices, all of them or those of one total order."""
        if order is None:
            return sorted(self.entries, key=lambda pq: (pq[0] + pq[1], -pq[0]))
        return [(p, order - p) for p in range(order, -1, -1) if (p, order - p) in self.entries]

    def boundary_data(self, index):
        """Dirichlet data carried by u_{p,q}: f1, f2 at order one, zero above."""
        from forward.models import BoundaryData

        if tuple(index) == (1, 0):
            return self.f1
        if tuple(index) == (0, 1):
            return self.f2
        return BoundaryData.zero(self.mesh)

    def source(self, index):
        return self.sources.get(tuple(index))

    def max_abs(self):
        return {index: float(np.max(np.abs(u))) for index, u in self.entries.items()}
