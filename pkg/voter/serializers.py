# voter/serializers.py
from collections.abc import Mapping
from fractions import Fraction

from django.core.exceptions import ValidationError as DjangoValidationError
from rest_framework import serializers
from rest_framework.exceptions import ValidationError

from .choices import DensityKind, StopMode, Topology
from .config import OUTPUT_FORMATS, RenderOptions, RunConfig, geometric_times
from .core import QUANTITIES, DensityVector, Params, StopCondition, build_graph
from .service import EngineSettings

OBSERVER_NAMES = ['interface_density', 'particle_density', 'blockade_density', 'centrist_count',
                  'opinion_counts', 'median_flips']
MAX_SEED = 2 ** 64 - 1


class FractionField(serializers.Field):
    """Exact rational written as an integer, p/q or a decimal"""
    default_error_messages = {
        'invalid': 'A rational number such as 3, 1/3 or 0.05 is required.',
    }

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail('invalid')
        try:
            return Fraction(str(data).strip())
        except (ValueError, ZeroDivisionError):
            self.fail('invalid')

    def to_representation(self, value):
        return f"{value.numerator}/{value.denominator}"


class CommaListField(serializers.ListField):
    """List field that also takes a single scalar or a comma separated string"""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        elif not isinstance(data, (list, tuple)):
            data = [data]
        return super().to_internal_value(data)


class StrictSerializer(serializers.Serializer):
    """Rejects keys it does not declare before validating any field"""

    def to_internal_value(self, data):
        if not isinstance(data, Mapping):
            raise ValidationError({'non_field_errors': ['Expected a section of key = value entries.']})
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise ValidationError({key: ['Unknown key.'] for key in unknown})
        return super().to_internal_value(data)


class ModelSectionSerializer(StrictSerializer):
    F = serializers.IntegerField(min_value=2)
    theta = serializers.IntegerField(min_value=1)


class DensitySectionSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=DensityKind.choices, default=DensityKind.UNIFORM)
    rho1 = FractionField(required=False)
    rho2 = FractionField(required=False)
    values = CommaListField(child=FractionField(), required=False)


class GraphSectionSerializer(StrictSerializer):
    topology = serializers.ChoiceField(choices=Topology.choices)
    size = serializers.IntegerField(min_value=2, required=False)
    edges = CommaListField(child=serializers.CharField(), required=False)

    def validate_edges(self, value):
        """Edges are written u-v"""
        edges = []
        for item in value:
            try:
                u, v = (int(part) for part in item.split('-'))
            except ValueError:
                raise ValidationError(f"Edge {item!r} is not of the form u-v")
            edges.append((u, v))
        return edges


class RunSectionSerializer(StrictSerializer):
    stop = serializers.ChoiceField(choices=StopMode.choices, default=StopMode.ABSORPTION)
    t_max = FractionField(required=False)
    event_budget = serializers.IntegerField(min_value=1, required=False)

    def validate_t_max(self, value):
        if value < 0:
            raise ValidationError("t_max must be non-negative")
        return value


class ObserversSectionSerializer(StrictSerializer):
    times = CommaListField(child=FractionField(), required=False)
    quantities = CommaListField(child=serializers.ChoiceField(choices=OBSERVER_NAMES), required=False)
    pairs = CommaListField(child=serializers.CharField(), required=False)

    def validate_times(self, value):
        if any(t < 0 for t in value):
            raise ValidationError("Sample times must be non-negative")
        return sorted(set(value))

    def validate_pairs(self, value):
        pairs = []
        for item in value:
            try:
                x, y = (int(part) for part in item.split('-'))
            except ValueError:
                raise ValidationError(f"Pair {item!r} is not of the form x-y")
            pairs.append((x, y))
        return pairs


class OutputSectionSerializer(StrictSerializer):
    directory = serializers.CharField(required=False)
    formats = CommaListField(child=serializers.ChoiceField(choices=OUTPUT_FORMATS), required=False,
                             allow_empty=False)


class RenderSectionSerializer(StrictSerializer):
    rows = serializers.IntegerField(min_value=1, default=600)
    interfaces = serializers.BooleanField(default=False)


class RunConfigSerializer(StrictSerializer):
    """Validates a parsed run configuration and builds the domain objects"""
    model = ModelSectionSerializer()
    density = DensitySectionSerializer(required=False)
    graph = GraphSectionSerializer()
    run = RunSectionSerializer(required=False)
    replicates = serializers.IntegerField(min_value=1, default=1)
    seed = serializers.IntegerField(
        min_value=0, max_value=MAX_SEED,
        error_messages={'required': 'A master seed is mandatory.'},
    )
    observers = ObserversSectionSerializer(required=False)
    output = OutputSectionSerializer(required=False)
    render = RenderSectionSerializer(required=False)

    def _density(self, params: Params, section: dict) -> DensityVector:
        kind = section.get('kind', DensityKind.UNIFORM)
        if kind == DensityKind.UNIFORM:
            return DensityVector.uniform(params.F)
        if kind == DensityKind.SYMMETRIC:
            rho1, rho2 = section.get('rho1'), section.get('rho2')
            if rho2 is None and rho1 is None:
                raise ValidationError({'density': ['Symmetric density needs rho1 or rho2.']})
            if params.F == 2:
                if rho2 not in (None, 0):
                    raise ValidationError({'density': ['F = 2 has no interior opinions; rho2 must be 0.']})
                return DensityVector.symmetric(2, 0)
            if rho2 is None:
                rho2 = (1 - 2 * rho1) / (params.F - 2)
            density = DensityVector.symmetric(params.F, rho2)
            if rho1 is not None and density.rho[0] != rho1:
                raise ValidationError({'density': ['rho1 and rho2 violate 2 rho1 + (F - 2) rho2 = 1.']})
            return density
        values = section.get('values')
        if not values:
            raise ValidationError({'density': ['Explicit density needs values.']})
        if len(values) != params.F:
            raise ValidationError({'density': [f'Expected {params.F} values, got {len(values)}.']})
        return DensityVector(tuple(values))

    def validate(self, attrs):
        """Cross-field checks; attaches the built RunConfig as attrs['run_config']"""
        engine = self.context.get('engine') or EngineSettings.from_settings()
        model = attrs['model']
        graph_section = attrs['graph']
        run_section = attrs.get('run', {})
        observers = attrs.get('observers', {})
        output = attrs.get('output', {})
        render = attrs.get('render', {})

        if graph_section['topology'] == Topology.CUSTOM and not graph_section.get('edges'):
            raise ValidationError({'graph': ['Custom topology needs edges.']})
        if graph_section['topology'] != Topology.CUSTOM and 'size' not in graph_section:
            raise ValidationError({'graph': ['size is required.']})

        try:
            params = Params(model['F'], model['theta'])
            density = self._density(params, attrs.get('density', {}))
            graph = build_graph(graph_section['topology'], graph_section.get('size'), graph_section.get('edges'))
            t_max = run_section.get('t_max')
            stop = StopCondition(
                run_section.get('stop', StopMode.ABSORPTION),
                t_max=float(t_max) if t_max is not None else None,
                event_budget=run_section.get('event_budget', engine.event_budget),
            )
        except DjangoValidationError as e:
            raise ValidationError({'non_field_errors': e.messages})

        times = observers.get('times')
        if times is None:
            times = geometric_times(stop.t_max) if stop.t_max is not None else ()
        times = tuple(float(t) for t in times)
        if stop.t_max is not None and any(t > stop.t_max for t in times):
            raise ValidationError({'observers': ['Sample times must not exceed run.t_max.']})
        for x, y in observers.get('pairs', []):
            if not (0 <= x < graph.n and 0 <= y < graph.n):
                raise ValidationError({'observers': [f'Pair {x}-{y} outside the graph.']})
        for name in observers.get('quantities', []):
            if name not in QUANTITIES:
                raise ValidationError({'observers': [f'Unknown quantity {name}.']})

        attrs['run_config'] = RunConfig(
            params=params,
            density=density,
            graph=graph,
            stop=stop,
            replicates=attrs['replicates'],
            seed=attrs['seed'],
            times=times,
            quantities=tuple(observers.get('quantities', ())),
            pairs=tuple(observers.get('pairs', ())),
            output_dir=output.get('directory'),
            formats=tuple(output.get('formats', OUTPUT_FORMATS)),
            render=RenderOptions(**render),
        )
        return attrs


class AnalyticsSerializer(serializers.Serializer):
    """Arguments of the analytics sub-command"""
    F = serializers.IntegerField(min_value=2, max_value=1000)
    theta = serializers.IntegerField(min_value=1)
    rho2 = FractionField(required=False)

    def validate(self, attrs):
        if attrs['theta'] >= attrs['F']:
            raise ValidationError("theta must be smaller than F")
        rho2 = attrs.get('rho2')
        if rho2 is None:
            return attrs
        if attrs['F'] == 2:
            if rho2 != 0:
                raise ValidationError("F = 2 has no interior opinions; rho2 must be 0")
        elif not 0 <= rho2 < Fraction(1, attrs['F'] - 2):
            # rho1 = (1 - (F - 2) rho2) / 2 must stay positive
            raise ValidationError("rho2 outside the symmetric family")
        return attrs


class PhaseDiagramSerializer(serializers.Serializer):
    F_max = serializers.IntegerField(min_value=2, max_value=200)


class LdCheckSerializer(serializers.Serializer):
    """Arguments of the changeover large-deviation check"""
    p = FractionField()
    epsilon = FractionField()
    sizes = CommaListField(child=serializers.IntegerField(min_value=1))
    replicates = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0, max_value=MAX_SEED,
                                    error_messages={'required': 'A master seed is mandatory.'})

    def validate_p(self, value):
        if not 0 < value < 1:
            raise ValidationError("p must lie strictly between 0 and 1")
        return value

    def validate_epsilon(self, value):
        if value <= 0:
            raise ValidationError("epsilon must be positive")
        return value
