from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class EnergyOperatorPair:
    """
    Gram matrices of the region restrictions of the Γ-data-to-solution map.

    ``m1[i, j] = ∫_{D1} v_i v_j`` and ``m2`` likewise on D2, where ``basis``
    holds the linear solutions v_i for the hat function of each Γ node.
    ``n`` is the Γ boundary mass matrix used as regularizer. A ``weight`` at
    the quadrature points, when present, multiplies the integrands.
    """

    mesh: object
    d1: object
    d2: object
    m1: np.ndarray
    m2: np.ndarray
    n: np.ndarray
    basis: np.ndarray
    weight: object = None

    def __str__(self):
        return f"EnergyOperatorPair({self.n_gamma} Gamma nodes, D1={len(self.d1)}, D2={len(self.d2)})"

    @property
    def n_gamma(self):
        return self.m1.shape[0]

    @property
    def d2_empty(self):
        return self.d2.is_empty

    def energies(self, values):
        """(∫_{D1} v², ∫_{D2} v²) for the solution with Γ values ``values``."""
        values = np.asarray(values, dtype=float)
        return float(values @ self.m1 @ values), float(values @ self.m2 @ values)

    def is_psd(self, tolerance=1e-10):
        for matrix in (self.m1, self.m2):
            if not np.allclose(matrix, matrix.T, rtol=0.0, atol=tolerance * max(np.abs(matrix).max(), 1.0)):
                return False
            eigenvalues = np.linalg.eigvalsh(matrix)
            if eigenvalues.min() < -tolerance * max(eigenvalues.max(), 1.0):
                return False
        return True

    def swapped(self):
        return EnergyOperatorPair(self.mesh, self.d2, self.d1, self.m2, self.m1, self.n, self.basis, self.weight)


@dataclass(frozen=True, eq=False)
class PotentialStep:
    """
    One member of a localized-potential sequence. ``direction`` has sup norm
    one; the potential itself is ``scale * direction`` and the energies are
    those of its solution.
    """

    direction: object
    scale: float
    energy_d1: float
    energy_d2: float
    delta: float
    eigenvalue: float

    @property
    def potential(self):
        return self.direction * self.scale

    @property
    def ratio(self):
        if self.energy_d2 == 0.0:
            return float('inf')
        return self.energy_d1 / self.energy_d2


@dataclass(eq=False)
class PotentialSequence:
    pair: object
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, k):
        return self.steps[k]

    @property
    def deltas(self):
        return [step.delta for step in self.steps]

    @property
    def ratios(self):
        return [step.ratio for step in self.steps]

    @property
    def energies_d1(self):
        return [step.energy_d1 for step in self.steps]

    @property
    def energies_d2(self):
        return [step.energy_d2 for step in self.steps]

    def potentials(self):
        return [step.potential for step in self.steps]

    def as_rows(self):
        return [
            {
                'step': k,
                'delta': step.delta,
                'scale': step.scale,
                'energy_d1': step.energy_d1,
                'energy_d2': step.energy_d2,
                'ratio': step.ratio,
                'eigenvalue': step.eigenvalue,
            }
            for k, step in enumerate(self.steps)
        ]
