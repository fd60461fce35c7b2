import numpy as np
from django.core.exceptions import ValidationError as ModelValidationError
from rest_framework import serializers

from .models import NonlinearitySeries, PiecewiseCoefficient


class CoefficientTextSerializer:
    """
    Line-oriented coefficient format::

        COEF v1
        SIGMA <n> <sigma_min>        (one value per triangle follows)
        SIGMA_REGIONS <r> <sigma_min> (or: one 'label value' line per region)
        A <K>
        a_2 ... a_K                  (one row per triangle)

    ``SIGMA_REGIONS`` needs the mesh to expand region labels into cells.
    """

    HEADER = 'COEF v1'

    def dumps(self, sigma, series):
        if len(sigma) != series.n_triangles:
            raise ModelValidationError(
                "Diffusion and nonlinearity must cover the same triangles",
                code='dimension_mismatch',
            )
        lines = [self.HEADER, f"SIGMA {len(sigma)} {sigma.sigma_min!r}"]
        lines.extend(repr(float(v)) for v in sigma.values)
        lines.append(f"A {series.order}")
        for row in series.coefficients:
            lines.append(' '.join(repr(float(v)) for v in row))
        return '\n'.join(lines) + '\n'

    def loads(self, text, mesh=None):
        lines = [line.strip() for line in text.splitlines() if line.strip()]
        if not lines or lines[0] != self.HEADER:
            raise ModelValidationError("Missing 'COEF v1' header", code='invalid_coefficient_file')
        try:
            key, *fields = lines[1].split()
            count = int(fields[0])
            sigma_min = float(fields[1]) if len(fields) > 1 else None
            body = lines[2:2 + count]
            if key == 'SIGMA':
                sigma = PiecewiseCoefficient([float(v) for v in body], sigma_min)
            elif key == 'SIGMA_REGIONS':
                if mesh is None:
                    raise ModelValidationError(
                        "SIGMA_REGIONS needs the mesh carrying the region labels",
                        code='invalid_coefficient_file',
                    )
                regions = {int(label): float(value) for label, value in (row.split() for row in body)}
                sigma = PiecewiseCoefficient.from_regions(mesh, regions, sigma_min)
            else:
                raise ModelValidationError(f"Unexpected block '{key}'", code='invalid_coefficient_file')

            a_key, order = lines[2 + count].split()
            if a_key != 'A':
                raise ModelValidationError(f"Expected block 'A', found '{a_key}'", code='invalid_coefficient_file')
            rows = [[float(v) for v in row.split()] for row in lines[3 + count:]]
        except (IndexError, ValueError) as exc:
            raise ModelValidationError(f"Malformed coefficient file: {exc}", code='invalid_coefficient_file')

        coefficients = np.array(rows, dtype=float).reshape(len(rows), -1)
        if coefficients.shape != (len(sigma), int(order) - 1):
            raise ModelValidationError(
                f"A block must hold {len(sigma)} rows of {int(order) - 1} values",
                code='dimension_mismatch',
            )
        if mesh is not None and len(sigma) != mesh.n_triangles:
            raise ModelValidationError("Coefficient file does not match the mesh", code='dimension_mismatch')
        return sigma, NonlinearitySeries(coefficients)

    def write(self, sigma, series, path):
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.dumps(sigma, series))

    def read(self, path, mesh=None):
        with open(path, encoding='utf-8') as handle:
            return self.loads(handle.read(), mesh)


class InclusionSerializer(serializers.Serializer):
    center = serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2)
    radius = serializers.FloatField(min_value=0.0)
    value = serializers.FloatField()


class RegionFieldSerializer(serializers.Serializer):
    """A background value with disk-shaped inclusions (later inclusions win)."""

    background = serializers.FloatField(default=0.0)
    inclusions = InclusionSerializer(many=True, default=list)


class SeriesTermSerializer(RegionFieldSerializer):
    order = serializers.IntegerField(min_value=2)


class PhantomSerializer(serializers.Serializer):
    """Coefficient section of a scenario configuration."""

    sigma = RegionFieldSerializer(default=lambda: {'background': 1.0, 'inclusions': []})
    sigma_min = serializers.FloatField(default=None, allow_null=True, min_value=0.0)
    nonlinearity = SeriesTermSerializer(many=True, default=list)
    order = serializers.IntegerField(min_value=2, max_value=12, default=None, allow_null=True)

    def validate(self, data):
        orders = [term['order'] for term in data['nonlinearity']]
        if len(orders) != len(set(orders)):
            raise serializers.ValidationError("Each nonlinearity order may appear once")
        if data['order'] is not None and orders and max(orders) > data['order']:
            raise serializers.ValidationError("Nonlinearity term exceeds the truncation order")
        sigma = data['sigma']
        values = [sigma['background']] + [inc['value'] for inc in sigma['inclusions']]
        if min(values) <= 0:
            raise serializers.ValidationError("Diffusion values must be positive")
        return data
