import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from django.core.exceptions import ValidationError


def _read_only(values):
    values = np.array(values, dtype=float, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class PiecewiseCoefficient:
    """Diffusion coefficient σ, one value per triangle, bounded below by ``sigma_min``."""

    values: np.ndarray
    sigma_min: float = None

    def __post_init__(self):
        values = _read_only(self.values).ravel()
        object.__setattr__(self, 'values', values)
        if self.sigma_min is None:
            object.__setattr__(self, 'sigma_min', float(values.min()) if len(values) else 1.0)
        if self.sigma_min <= 0:
            raise ValidationError("sigma_min must be positive", code='invalid_coefficient')
        if np.any(~np.isfinite(values)) or np.any(values < self.sigma_min):
            raise ValidationError(
                f"Diffusion values must be finite and >= sigma_min={self.sigma_min:g}",
                code='invalid_coefficient',
            )

    def __len__(self):
        return len(self.values)

    def __str__(self):
        return f"PiecewiseCoefficient({len(self)} cells, range [{self.values.min():g}, {self.values.max():g}])"

    @classmethod
    def constant(cls, mesh, value=1.0, sigma_min=None):
        return cls(np.full(mesh.n_triangles, float(value)), sigma_min)

    @classmethod
    def from_regions(cls, mesh, region_values, sigma_min=None, default=None):
        """Values per region label of ``mesh.cell_regions``."""
        values = np.empty(mesh.n_triangles)
        for label in np.unique(mesh.cell_regions):
            value = region_values.get(int(label), default)
            if value is None:
                raise ValidationError(f"No value for region {label}", code='missing_region')
            values[mesh.cell_regions == label] = value
        return cls(values, sigma_min)

    @classmethod
    def from_function(cls, mesh, function, sigma_min=None):
        """Values of ``function(barycenters)`` per triangle."""
        return cls(np.asarray(function(mesh.barycenters), dtype=float), sigma_min)

    def scaled(self, factor):
        return PiecewiseCoefficient(self.values * factor, self.sigma_min * factor)

    def region_values(self, labels):
        """Mean value per region label (exact for region-constant fields)."""
        return {int(r): float(self.values[labels == r].mean()) for r in np.unique(labels)}


@dataclass(frozen=True, eq=False)
class NonlinearitySeries:
    """
    Truncated power series a(x, y) = sum_{k=2}^{K} a_k(x) y^k / k!.

    ``coefficients`` has shape (triangles, K - 1) and holds a_2 .. a_K;
    a_0 = a_1 = 0 are implicit.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        coefficients = _read_only(self.coefficients)
        if coefficients.ndim != 2 or coefficients.shape[1] < 1:
            raise ValidationError(
                "Coefficients must have shape (triangles, K - 1) with K >= 2",
                code='dimension_mismatch',
            )
        if not np.all(np.isfinite(coefficients)):
            raise ValidationError("Series coefficients must be finite", code='invalid_coefficient')
        object.__setattr__(self, 'coefficients', coefficients)

    def __str__(self):
        return f"NonlinearitySeries(K={self.order}, {self.n_triangles} cells, sup={self.sup_norm:g})"

    @property
    def order(self):
        return self.coefficients.shape[1] + 1

    @property
    def n_triangles(self):
        return self.coefficients.shape[0]

    @cached_property
    def sup_norm(self):
        """max over k and cells of |a_k|."""
        return float(np.max(np.abs(self.coefficients))) if self.coefficients.size else 0.0

    @property
    def is_zero(self):
        return self.sup_norm == 0.0

    @classmethod
    def zero(cls, n_triangles, order=2):
        return cls(np.zeros((n_triangles, order - 1)))

    @classmethod
    def from_terms(cls, n_triangles, terms, order=None):
        """``terms`` maps k -> scalar or per-triangle array for a_k."""
        order = order or max(max(terms, default=2), 2)
        coefficients = np.zeros((n_triangles, order - 1))
        for k, value in terms.items():
            if k < 2:
                raise ValidationError("a_0 and a_1 are fixed to zero", code='invalid_coefficient')
            if k > order:
                raise ValidationError(f"a_{k} exceeds the truncation order {order}", code='invalid_coefficient')
            coefficients[:, k - 2] = value
        return cls(coefficients)

    def coefficient(self, k):
        """Per-triangle a_k (zero outside 2..K)."""
        if 2 <= k <= self.order:
            return self.coefficients[:, k - 2]
        return np.zeros(self.n_triangles)

    def with_coefficient(self, k, values, order=None):
        """Copy with a_k replaced, extending the truncation order if needed."""
        order = max(order or self.order, self.order, k)
        coefficients = np.zeros((self.n_triangles, order - 1))
        coefficients[:, :self.order - 1] = self.coefficients
        coefficients[:, k - 2] = values
        return NonlinearitySeries(coefficients)

    def truncated(self, order):
        """Copy keeping a_2 .. a_order (zero padded if order > K)."""
        coefficients = np.zeros((self.n_triangles, order - 1))
        keep = min(order, self.order) - 1
        coefficients[:, :keep] = self.coefficients[:, :keep]
        return NonlinearitySeries(coefficients)

    def taylor_table(self, l=0):
        """
        Kernel coefficients of the l-th y-derivative: column k holds a_{k+l}
        for k = 0 .. K - l (including the implicit zeros a_0, a_1).
        """
        full = np.zeros((self.n_triangles, self.order + 1))
        full[:, 2:] = self.coefficients
        if l > self.order:
            return np.zeros((self.n_triangles, 1))
        return full[:, l:]

    def evaluate(self, y, l=0, triangles=None):
        """
        d^l/dy^l a(x_T, y) = sum_{k=0}^{K-l} a_{k+l}(T) y^k / k!.

        ``y`` is broadcast against the selected triangles: a scalar, one value
        per triangle, or an array of shape (triangles, points).
        """
        table = self.taylor_table(l)
        if triangles is not None:
            table = table[np.atleast_1d(triangles)]
        return taylor_sum(table, y)


def taylor_sum(table, y):
    """sum_k table[..., k] y^k / k! with Horner's scheme."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        table = table[:, None, :]
    n_terms = table.shape[-1]
    result = table[..., n_terms - 1] * np.ones_like(y)
    for k in range(n_terms - 2, -1, -1):
        result = table[..., k] + result * y / (k + 1)
    return result


def eval_a(series, triangle, y):
    """a(x_T, y) for a single triangle and scalar y."""
    return float(series.evaluate(y, 0, triangles=triangle)[0])


def eval_a_deriv(series, triangle, y, l):
    """l-th y-derivative of a at (x_T, y); zero when l > K."""
    if l > series.order:
        return 0.0
    return float(series.evaluate(y, l, triangles=triangle)[0])


def truncation_tail_bound(bound, rho, order):
    """Upper bound of |full series - truncated series| for |a_k| <= bound, |y| <= rho."""
    partial = sum(rho ** k / math.factorial(k) for k in range(order + 1))
    return bound * max(math.exp(rho) - partial, 0.0)


def choose_order(bound, rho, tolerance, max_order=30):
    """Smallest K >= 2 whose truncation tail bound is below ``tolerance``."""
    for order in range(2, max_order + 1):
        if truncation_tail_bound(bound, rho, order) <= tolerance:
            return order
    raise ValidationError(
        f"No truncation order up to {max_order} meets tolerance {tolerance:g}",
        code='order_not_found',
    )


@dataclass(frozen=True, eq=False)
class Phantom:
    """
    Ground-truth coefficients of a synthetic experiment together with the
    coarse partitions they are piecewise constant on.
    """

    sigma: PiecewiseCoefficient
    series: NonlinearitySeries
    sigma_labels: np.ndarray
    series_labels: dict = field(default_factory=dict)

    def labels_for(self, k):
        """Partition carrying a_k (the background-only partition if a_k is absent)."""
        if k in self.series_labels:
            return self.series_labels[k]
        return np.zeros(self.series.n_triangles, dtype=np.int64)
