import json
import math

from django.conf import settings
from django.core.exceptions import ValidationError
from rest_framework import serializers

from coefficients.serializers import PhantomSerializer
from meshes.serializers import MeshParametersSerializer

from .models import SCHEMA_VERSION

SCENARIOS = (
    'forward_convergence',
    'well_posedness',
    'linearization_check',
    'localized_potentials',
    'recover_coefficients',
    'detect_cavity',
    'full_pipeline',
    'contradiction_witness',
)

# Sections filled from their own defaults when a config omits them.
SECTIONS = (
    'mesh', 'phantom', 'data', 'convergence', 'well_posedness', 'linearization',
    'potentials', 'recovery', 'cavity_search', 'witness',
)


def _default_eps_max():
    return getattr(settings, 'SEMILINEAR_RECOVERY', {}).get('EPS_MAX', 0.1)


def _pair(**kwargs):
    return serializers.ListField(child=serializers.FloatField(), min_length=2, max_length=2, **kwargs)


class DataFamilySerializer(serializers.Serializer):
    """Boundary data on Γ: trigonometric modes or nonnegative bumps."""

    family = serializers.ChoiceField(choices=['trig', 'positive'], default='positive')
    modes = serializers.IntegerField(min_value=1, max_value=32, default=6)
    amplitude = serializers.FloatField(default=0.05)

    def validate_amplitude(self, value):
        if value <= 0:
            raise serializers.ValidationError("Amplitude must be positive")
        return value


class RegionSerializer(serializers.Serializer):
    """A disk (``radius``) or an annulus (``inner`` and ``outer``) of triangles."""

    center = _pair(default=lambda: [0.0, 0.0])
    radius = serializers.FloatField(min_value=0.0, default=None, allow_null=True)
    inner = serializers.FloatField(min_value=0.0, default=None, allow_null=True)
    outer = serializers.FloatField(min_value=0.0, default=None, allow_null=True)

    def validate(self, data):
        disk = data['radius'] is not None
        annulus = data['inner'] is not None and data['outer'] is not None
        if disk == annulus:
            raise serializers.ValidationError("Give either a radius or an inner and outer radius")
        if annulus and data['inner'] >= data['outer']:
            raise serializers.ValidationError("Annulus inner radius must be below the outer one")
        return data


class ConvergenceSerializer(serializers.Serializer):
    h_values = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), min_length=2,
        default=lambda: [0.2, 0.1, 0.05, 0.025],
    )


class WellPosednessSerializer(serializers.Serializer):
    trials = serializers.IntegerField(min_value=1, default=20)
    max_iterations = serializers.IntegerField(min_value=1, default=8)
    growth = serializers.FloatField(min_value=0.0, default=3.0)
    bracket = _pair(default=lambda: [1e-3, 10.0])
    bisection_steps = serializers.IntegerField(min_value=1, max_value=60, default=12)

    def validate_bracket(self, value):
        if not 0 < value[0] < value[1]:
            raise serializers.ValidationError("Bracket must satisfy 0 < low < high")
        return value


class LinearizationSerializer(serializers.Serializer):
    configurations = serializers.IntegerField(min_value=1, default=10)
    max_order = serializers.IntegerField(min_value=1, max_value=4, default=4)
    step = serializers.FloatField(min_value=0.0, default=None, allow_null=True)


class PotentialsSerializer(serializers.Serializer):
    d1 = RegionSerializer(default=lambda: {'center': [0.0, 0.55], 'radius': 0.3, 'inner': None, 'outer': None})
    d2 = RegionSerializer(
        allow_null=True,
        default=lambda: {'center': [0.0, -0.55], 'radius': 0.3, 'inner': None, 'outer': None},
    )
    steps = serializers.IntegerField(min_value=2, max_value=60, default=8)
    delta0 = serializers.FloatField(min_value=0.0, default=None, allow_null=True)
    min_growth = serializers.FloatField(min_value=1.0, default=None, allow_null=True)


class RecoverySerializer(serializers.Serializer):
    max_order = serializers.IntegerField(min_value=2, max_value=8, default=2)
    regularization = serializers.FloatField(min_value=0.0, default=None, allow_null=True)
    refine = serializers.BooleanField(default=True)


class CavitySearchSerializer(serializers.Serializer):
    radii = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), min_length=1,
        default=lambda: [0.2, 0.3, 0.4],
    )
    spacing = serializers.FloatField(min_value=0.0, default=0.2)
    rounds = serializers.IntegerField(min_value=0, max_value=6, default=2)
    threshold = serializers.FloatField(min_value=1.0, default=3.0)


class WitnessSerializer(serializers.Serializer):
    m = serializers.IntegerField(min_value=2, max_value=8, default=3)
    steps = serializers.IntegerField(min_value=2, max_value=60, default=8)
    min_growth = serializers.FloatField(min_value=1.0, default=1.0)


class ScenarioConfigSerializer(serializers.Serializer):
    """
    Scenario configuration. Every section is optional and falls back to its
    own defaults; ``eps_max: null`` disables the small-data check.
    """

    scenario = serializers.ChoiceField(choices=SCENARIOS)
    mesh = MeshParametersSerializer()
    phantom = PhantomSerializer()
    data = DataFamilySerializer()
    orders = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2),
        default=None, allow_null=True,
    )
    noise = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)
    seed = serializers.IntegerField(min_value=0, default=0)
    jobs = serializers.IntegerField(min_value=1, default=1)
    eps_max = serializers.FloatField(min_value=0.0, default=_default_eps_max, allow_null=True)
    tolerances = serializers.DictField(child=serializers.FloatField(), default=dict)
    output = serializers.CharField(default='', allow_blank=True)
    convergence = ConvergenceSerializer()
    well_posedness = WellPosednessSerializer()
    linearization = LinearizationSerializer()
    potentials = PotentialsSerializer()
    recovery = RecoverySerializer()
    cavity_search = CavitySearchSerializer()
    witness = WitnessSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = dict(data)
            for section in SECTIONS:
                data.setdefault(section, {})
        return super().to_internal_value(data)

    def validate_orders(self, value):
        if value is not None and any(sum(order) < 1 for order in value):
            raise serializers.ValidationError("Derivative orders need p + q >= 1")
        return value

    def validate(self, data):
        amplitude = data['data']['amplitude']
        check_amplitude = self.context.get('check_amplitude', True)
        if (check_amplitude and data['scenario'] != 'well_posedness'
                and data['eps_max'] is not None and amplitude > data['eps_max']):
            raise serializers.ValidationError({
                'data': [f"Amplitude {amplitude:g} exceeds eps_max={data['eps_max']:g}"],
            })
        if data['scenario'] in ('detect_cavity', 'full_pipeline', 'contradiction_witness'):
            if data['data']['family'] != 'positive':
                raise serializers.ValidationError({
                    'data': ["This scenario needs the nonnegative 'positive' data family"],
                })
        gamma = data['mesh']['gamma']
        if gamma[1] - gamma[0] > 2.0 * math.pi + 1e-12:
            raise serializers.ValidationError({'mesh': ["Gamma arc longer than the circle"]})
        return data


def _flatten(errors, prefix=''):
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = f"{prefix}.{key}" if prefix and key != 'non_field_errors' else (prefix or key)
            yield from _flatten(value, name)
    elif isinstance(errors, list) and errors and not isinstance(errors[0], (dict, list)):
        yield f"{prefix or 'config'}: {' '.join(str(e) for e in errors)}"
    elif isinstance(errors, list):
        for i, value in enumerate(errors):
            yield from _flatten(value, f"{prefix}[{i}]")


def load_config(source, **context):
    """
    Validated scenario configuration from a JSON file path or a mapping.
    Raises ``config_invalid`` naming every offending field.
    """
    if isinstance(source, dict):
        payload = source
    else:
        try:
            with open(source, encoding='utf-8') as handle:
                payload = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"Cannot read config {source}: {exc}", code='config_invalid')
    serializer = ScenarioConfigSerializer(data=payload, context=context)
    if not serializer.is_valid():
        raise ValidationError(
            "Invalid scenario config: " + '; '.join(_flatten(serializer.errors)),
            code='config_invalid',
            params={'errors': serializer.errors},
        )
    return serializer.validated_data


class CheckSerializer(serializers.Serializer):
    name = serializers.CharField()
    value = serializers.JSONField()
    limit = serializers.JSONField()
    comparison = serializers.CharField()
    passed = serializers.BooleanField()


class RunReportSerializer(serializers.Serializer):
    """summary.json layout; wall-clock time is reported on stdout only."""

    schema_version = serializers.IntegerField()
    scenario = serializers.ChoiceField(choices=SCENARIOS)
    seed = serializers.IntegerField()
    passed = serializers.BooleanField()
    metrics = serializers.DictField()
    checks = CheckSerializer(many=True)
    table_names = serializers.ListField(child=serializers.CharField())

    def validate_schema_version(self, value):
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(f"Unsupported summary schema version {value}")
        return value
