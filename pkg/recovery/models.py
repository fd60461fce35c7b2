from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class Experiment:
    """One measured mixed DN derivative of order (p, q) for the data pair (f1, f2)."""

    f1: object
    f2: object
    order: tuple
    measurement: object

    def __post_init__(self):
        object.__setattr__(self, 'order', tuple(int(k) for k in self.order))

    @property
    def total_order(self):
        return sum(self.order)


@dataclass(eq=False)
class MeasurementSet:
    mesh: object
    experiments: list = field(default_factory=list)
    noise_level: float = 0.0

    def __len__(self):
        return len(self.experiments)

    def __iter__(self):
        return iter(self.experiments)

    def __str__(self):
        return f"MeasurementSet({len(self)} experiments, orders {self.orders}, noise {self.noise_level:g})"

    @property
    def orders(self):
        return sorted({experiment.order for experiment in self.experiments})

    def of_order(self, p, q):
        return [experiment for experiment in self.experiments if experiment.order == (p, q)]

    def add(self, experiment):
        self.experiments.append(experiment)
        return experiment

    def transfer(self, mesh):
        """The same experiments on another mesh sharing this mesh's Γ nodes."""
        if mesh is self.mesh:
            return self
        moved = MeasurementSet(mesh, noise_level=self.noise_level)
        for e in self.experiments:
            moved.add(Experiment(
                e.f1.transfer(mesh), e.f2.transfer(mesh), e.order,
                type(e.measurement)(mesh, e.measurement.values),
            ))
        return moved

    def validate(self, max_order=None):
        """Every datum lives on this mesh's Γ and no order exceeds ``max_order``."""
        n_gamma = len(self.mesh.gamma_nodes)
        for experiment in self.experiments:
            for data in (experiment.f1, experiment.f2, experiment.measurement):
                if len(data.values) != n_gamma:
                    raise ValidationError(
                        "Experiment data do not match the Gamma nodes of the mesh",
                        code='dimension_mismatch',
                    )
            if max_order is not None and experiment.total_order > max_order:
                raise ValidationError(
                    f"Experiment order {experiment.order} exceeds K={max_order}",
                    code='invalid_order',
                )
        return self


@dataclass(frozen=True, eq=False)
class SigmaEstimate:
    values: dict
    coefficient: object
    misfit: float
    initial_misfit: float
    evaluations: int

    def as_dict(self):
        return {
            'values': {str(k): v for k, v in self.values.items()},
            'misfit': self.misfit,
            'initial_misfit': self.initial_misfit,
            'evaluations': self.evaluations,
        }


@dataclass(frozen=True, eq=False)
class StageEstimate:
    """Recovered a_m on its partition, with the stage residuals and system diagnostics."""

    m: int
    values: dict
    series: object
    residual_before: float
    residual_after: float
    condition: float
    regularization: float

    def as_dict(self):
        return {
            'm': self.m,
            'values': {str(k): v for k, v in self.values.items()},
            'residual_before': self.residual_before,
            'residual_after': self.residual_after,
            'condition': self.condition,
            'regularization': self.regularization,
        }


class CavityStatus:
    NONE = 'none'
    DETECTED = 'detected'
    INCONCLUSIVE = 'inconclusive'

    CHOICES = [
        (NONE, 'No cavity'),
        (DETECTED, 'Cavity detected'),
        (INCONCLUSIVE, 'Inconclusive'),
    ]


@dataclass(frozen=True, eq=False)
class CavityVerdict:
    status: str
    residual: float
    noise_floor: float
    center: tuple = None
    radius: float = None
    misfit: float = None
    mask: object = None
    landscape: list = field(default_factory=list)

    @property
    def detected(self):
        return self.status == CavityStatus.DETECTED

    def as_dict(self):
        return {
            'status': self.status,
            'residual': self.residual,
            'noise_floor': self.noise_floor,
            'center': list(self.center) if self.center is not None else None,
            'radius': self.radius,
            'misfit': self.misfit,
        }


@dataclass(frozen=True, eq=False)
class SignSplit:
    """
    D1, D2 for a pair of piecewise-constant fields: ``orientation`` 'i' means
    a >= ã off D2 and a > ã on D1, 'ii' the same with the roles swapped.
    """

    d1: object
    d2: object
    orientation: str
    difference: dict

    @property
    def sign(self):
        return 1.0 if self.orientation == 'i' else -1.0


@dataclass(eq=False)
class RecoveryResult:
    sigma: SigmaEstimate = None
    stages: list = field(default_factory=list)
    cavity: CavityVerdict = None

    @property
    def series(self):
        return self.stages[-1].series if self.stages else None

    def coefficient_values(self, m):
        for stage in self.stages:
            if stage.m == m:
                return stage.values
        raise ValidationError(f"a_{m} has not been recovered", code='invalid_order')

    def residuals(self):
        rows = []
        if self.sigma is not None:
            rows.append({'stage': 'sigma', 'residual': self.sigma.misfit})
        rows.extend({'stage': f'a_{stage.m}', 'residual': stage.residual_after} for stage in self.stages)
        if self.cavity is not None:
            rows.append({'stage': 'cavity', 'residual': self.cavity.residual})
        return rows

    def as_dict(self):
        return {
            'sigma': self.sigma.as_dict() if self.sigma else None,
            'stages': [stage.as_dict() for stage in self.stages],
            'cavity': self.cavity.as_dict() if self.cavity else None,
        }


def region_array(labels, values):
    """Per-triangle array from a region -> value mapping."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(len(labels))
    for region, value in values.items():
        out[labels == int(region)] = value
    return out
