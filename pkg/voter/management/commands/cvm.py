# voter/management/commands/cvm.py
import json
import logging
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.core.exceptions import ValidationError as DjangoValidationError
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from rest_framework.exceptions import ValidationError

from voter.analytics import (
    SymmetricDensity, asymptotic_slope_brackets, classify, contribution_bounds_uniform,
    contribution_curves_special, expanded_special_polynomial, expected_phi, expected_phi_uniform,
    fixation_table, mean_field_domain_length, phase_diagram, P_COEFFICIENTS, root_P, special_oracle_root,
    weight_polynomial,
)
from voter.choices import StopMode, Subcommand, Topology
from voter.config import OUTPUT_FORMATS, RunConfig, apply_overrides, config_hash, load_config, set_key, to_jsonable
from voter.core import (
    Configuration, ObserverSchedule, Params, StopCondition, rho_c, simulate_replicate,
)
from voter.estimators import (
    FIXATION_PROXY_LABEL, TORUS_CAVEAT, domain_length_stats, estimate_changeover_mean,
    estimate_consensus_probability, ld_decay_curve, mean_estimate, proportion_estimate, run_replicates,
    summarize_agreement, summarize_observers,
)
from voter.models import SimulationRun
from voter.particles import particle_stats, project_edges
from voter.rendering import encode_ppm, render_phase_diagram, render_spacetime, spacetime_times
from voter.reporting import ArtifactWriter, decimal
from voter.serializers import (
    AnalyticsSerializer, LdCheckSerializer, PhaseDiagramSerializer, RunConfigSerializer,
)
from voter.service import EngineSettings, ReplicateService, SimulationException

logger = logging.getLogger('voter')

RUN_CONFIG_SUBCOMMANDS = {
    Subcommand.SIMULATE: 'Run replicates and record observer series',
    Subcommand.CONSENSUS: 'Estimate the probability of absorption in consensus',
    Subcommand.CLUSTER: 'Domain lengths, interface decay and pair agreement',
    Subcommand.FIXATION: 'Flip-count stabilization proxy for fixation',
    Subcommand.SPACETIME: 'Render space-time diagrams of single runs',
}
MEAN_FIELD_CAVEAT = 'mean-field domain length L^(2 psi) is a reference curve refuted by simulation'
CURVE_GRID = [Fraction(k, 100) for k in range(51)]


def exact_pair(value) -> Tuple[Fraction, str]:
    """(p/q, decimal) cells for one rational."""
    value = Fraction(value)
    return value, decimal(value)


def _flatten(pairs) -> List[Any]:
    return [cell for pair in pairs for cell in pair]


def _exact_header(*names: str) -> List[str]:
    return _flatten((name, f"{name}_decimal") for name in names)


def _symmetric_rho2(density) -> Optional[Fraction]:
    rho = density.rho
    if rho[0] != rho[-1]:
        return None
    if len(rho) == 2:
        return Fraction(0)
    interior = set(rho[1:-1])
    return interior.pop() if len(interior) == 1 else None


class Command(BaseCommand):
    help = 'Constrained voter model simulator and analysis toolkit'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='subcommand', required=True, metavar='subcommand')

        for name, text in RUN_CONFIG_SUBCOMMANDS.items():
            sub = subparsers.add_parser(name, help=text)
            sub.add_argument('--config', help='Run configuration file (section.key = value lines)')
            sub.add_argument('--set', dest='overrides', action='append', default=[],
                             metavar='SECTION.KEY=VALUE', help='Override one configuration key')
            sub.add_argument('--seed', type=int, help='Master seed (unsigned 64-bit)')
            sub.add_argument('--out', help='Output directory')
            sub.add_argument('--threads', type=int, help='Replicate worker threads')

        analytics = subparsers.add_parser(Subcommand.ANALYTICS, help='Exact closed-form tables')
        analytics.add_argument('--F', type=int, required=True)
        analytics.add_argument('--theta', type=int, required=True)
        analytics.add_argument('--rho2', help='Interior opinion density of the symmetric family, p/q or decimal')
        analytics.add_argument('--table-F-max', dest='table_F_max', type=int, default=10,
                               help='Largest F in the fixation rho1 table')
        analytics.add_argument('--out')

        diagram = subparsers.add_parser(Subcommand.PHASE_DIAGRAM, help='Classify every (F, theta) up to F_max')
        diagram.add_argument('--F-max', dest='F_max', type=int, required=True)
        diagram.add_argument('--cell-size', dest='cell_size', type=int, default=8)
        diagram.add_argument('--out')

        ld_check = subparsers.add_parser(Subcommand.LD_CHECK, help='Changeover large-deviation decay')
        ld_check.add_argument('--p', required=True)
        ld_check.add_argument('--epsilon', required=True)
        ld_check.add_argument('--N', required=True, help='Comma separated window lengths')
        ld_check.add_argument('--replicates', type=int, required=True)
        ld_check.add_argument('--seed', type=int)
        ld_check.add_argument('--out')
        ld_check.add_argument('--threads', type=int)

    def handle(self, *args, **options):
        level = logger.level
        if options.get('verbosity', 1) >= 2:
            logger.setLevel(logging.DEBUG)
        try:
            self._dispatch(options)
        finally:
            logger.setLevel(level)

    def _dispatch(self, options):
        subcommand = options['subcommand']
        record = None
        try:
            engine = EngineSettings.from_settings(threads=options.get('threads'))
            if subcommand in RUN_CONFIG_SUBCOMMANDS:
                job = self._prepare_run_config(options, engine)
            else:
                job = getattr(self, f"_prepare_{subcommand.replace('-', '_')}")(options)
            config, seed, output = job['config'], job['seed'], job['output']
            digest = config_hash(config)
            directory = Path(output or Path(engine.output_dir) / f"{subcommand}-{digest[:12]}")

            record = self._ledger_start(subcommand, config, digest, seed, directory)
            writer = ArtifactWriter(directory, formats=job.get('formats', OUTPUT_FORMATS))
            with ReplicateService(engine) as service:
                summary, caveats = getattr(self, f"_run_{subcommand.replace('-', '_')}")(
                    job, writer, service, engine
                )
            writer.manifest(subcommand, config, digest, seed, summary, caveats)
            self._ledger_finish(record, summary)
        except ValidationError as e:
            self._fail(record, 'invalid_config', 'Configuration rejected', e.detail, 2)
        except DjangoValidationError as e:
            self._fail(record, getattr(e, 'code', None) or 'invalid', '; '.join(e.messages), {}, 2)
        except SimulationException as e:
            self._fail(record, e.code, e.message, e.details, 3)

        self.stdout.write(json.dumps({
            'subcommand': subcommand,
            'output_dir': str(directory),
            'summary': _jsonable(summary),
        }, sort_keys=True))

    def _fail(self, record, code: str, message: str, details, returncode: int):
        self.stderr.write(json.dumps({'error': code, 'message': message, 'details': _jsonable(details)},
                                     sort_keys=True))
        self._ledger_fail(record, message)
        raise CommandError(message, returncode=returncode)

    # Ledger

    def _ledger_start(self, subcommand, config, digest, seed, directory) -> Optional[SimulationRun]:
        try:
            record = SimulationRun.objects.create(
                subcommand=subcommand,
                config=_jsonable(config),
                config_hash=digest,
                master_seed=seed,
                output_dir=str(directory),
            )
            record.mark_as_running()
            return record
        except DatabaseError as e:
            logger.warning(f"Run ledger unavailable, continuing without it: {e}")
            return None

    def _ledger_finish(self, record, summary):
        if record is None:
            return
        try:
            record.mark_as_completed(_jsonable(summary))
        except DatabaseError as e:
            logger.warning(f"Could not update run ledger: {e}")

    def _ledger_fail(self, record, reason):
        if record is None:
            return
        try:
            record.mark_as_failed(reason)
        except DatabaseError as e:
            logger.warning(f"Could not update run ledger: {e}")

    # Validation

    def _prepare_run_config(self, options, engine: EngineSettings) -> Dict[str, Any]:
        tree = load_config(options.get('config'))
        apply_overrides(tree, options.get('overrides'))
        if options.get('seed') is not None:
            set_key(tree, 'seed', options['seed'])
        if options.get('out'):
            set_key(tree, 'output.directory', str(options['out']))
        serializer = RunConfigSerializer(data=tree, context={'engine': engine})
        serializer.is_valid(raise_exception=True)
        run_config: RunConfig = serializer.validated_data['run_config']

        subcommand = options['subcommand']
        stop = run_config.stop
        if subcommand == Subcommand.SPACETIME:
            if not run_config.graph.is_linear:
                raise DjangoValidationError("spacetime needs a cycle or a path", code='invalid_topology')
            if stop.t_max is None:
                raise DjangoValidationError("spacetime needs run.t_max", code='invalid_config')
        if subcommand == Subcommand.CLUSTER and not run_config.graph.is_linear:
            raise DjangoValidationError("cluster needs a cycle or a path", code='invalid_topology')
        if subcommand == Subcommand.FIXATION and not [t for t in run_config.times if t > 0]:
            raise DjangoValidationError("fixation needs positive observer times or run.t_max",
                                        code='invalid_config')
        return {'config': tree, 'seed': run_config.seed, 'output': run_config.output_dir,
                'formats': run_config.formats, 'run_config': run_config}

    def _prepare_analytics(self, options) -> Dict[str, Any]:
        data = {'F': options['F'], 'theta': options['theta']}
        if options.get('rho2') is not None:
            data['rho2'] = options['rho2']
        serializer = AnalyticsSerializer(data=data)
        serializer.is_valid(raise_exception=True)
        if not 2 <= options['table_F_max'] <= 40:
            raise DjangoValidationError("--table-F-max must lie in 2..40", code='invalid_argument')
        attrs = dict(serializer.validated_data)
        attrs['table_F_max'] = options['table_F_max']
        return {'config': {'analytics': {**data, 'table_F_max': options['table_F_max']}},
                'seed': None, 'output': options.get('out'), 'attrs': attrs}

    def _prepare_phase_diagram(self, options) -> Dict[str, Any]:
        serializer = PhaseDiagramSerializer(data={'F_max': options['F_max']})
        serializer.is_valid(raise_exception=True)
        if options['cell_size'] < 1:
            raise DjangoValidationError("cell size must be positive", code='invalid_argument')
        return {'config': {'phase_diagram': {'F_max': options['F_max'], 'cell_size': options['cell_size']}},
                'seed': None, 'output': options.get('out'),
                'attrs': {**serializer.validated_data, 'cell_size': options['cell_size']}}

    def _prepare_ld_check(self, options) -> Dict[str, Any]:
        data = {'p': options['p'], 'epsilon': options['epsilon'], 'sizes': options['N'],
                'replicates': options['replicates']}
        if options.get('seed') is not None:
            data['seed'] = options['seed']
        serializer = LdCheckSerializer(data=data)
        serializer.is_valid(raise_exception=True)
        return {'config': {'ld_check': data}, 'seed': serializer.validated_data['seed'],
                'output': options.get('out'), 'attrs': serializer.validated_data}

    # Sub-commands

    def _run_simulate(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        rc: RunConfig = job['run_config']
        names = list(rc.quantities)
        if rc.pairs:
            names.append('snapshot')
        results = run_replicates(rc.params, rc.graph, rc.density, rc.stop, rc.seed, rc.replicates,
                                 names=names if rc.times else (), times=rc.times, service=service)
        header = list(results[0].to_dict())
        writer.csv('replicates.csv', header, [list(result.to_dict().values()) for result in results])
        self._write_series(writer, results, rc, names, engine)

        censored = sum(1 for result in results if result.censored)
        return {
            'replicates': rc.replicates,
            'absorbed': sum(1 for result in results if result.absorbed),
            'consensus': sum(1 for result in results if result.consensus),
            'censored': censored,
        }, self._caveats(rc)

    def _write_series(self, writer, results, rc: RunConfig, names: Sequence[str], engine: EngineSettings):
        if not rc.times:
            return
        level = engine.confidence_level
        scalar = [name for name in names if name != 'snapshot']
        if scalar:
            summaries = summarize_observers(results, rc.times, scalar, level)
            rows = [
                (name, t, mean, half, summary.replicates, summary.censored)
                for name, summary in summaries.items()
                for t, mean, half in summary.rows()
            ]
            writer.csv('series.csv', ['quantity', 'time', 'mean', 'ci_half_width', 'replicates', 'censored'], rows)
        if rc.pairs:
            agreement = summarize_agreement(results, rc.pairs, rc.times, level)
            rows = [
                (x, y, t, mean, half, summary.replicates)
                for (x, y), summary in agreement.items()
                for t, mean, half in summary.rows()
            ]
            writer.csv('agreement.csv', ['x', 'y', 'time', 'agreement', 'ci_half_width', 'replicates'], rows)

    def _run_consensus(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        rc: RunConfig = job['run_config']
        report = estimate_consensus_probability(rc.params, rc.density, rc.graph, rc.replicates, rc.seed,
                                                event_budget=rc.stop.event_budget, service=service)
        writer.csv(
            'consensus.csv',
            ['F', 'theta', 'graph', 'N', 'replicates', 'consensus_rate', 'ci_half_width', 'rho_c_bound', 'censored'],
            [(rc.params.F, rc.params.theta, report.graph, report.n, report.replicates,
              report.estimate.point, report.estimate.half_width, report.rho_c, report.censored)],
        )
        if not report.meets_lower_bound and rc.params.in_fluctuation_regime:
            logger.warning(
                f"Consensus estimate {report.estimate.point:.4f} + {report.estimate.half_width:.4f} "
                f"falls below rho_c = {report.rho_c}"
            )
        return {
            'consensus': report.consensus,
            'non_consensus_absorbed': report.non_consensus_absorbed,
            'censored': report.censored,
            'consensus_rate': report.estimate.point,
            'ci_half_width': report.estimate.half_width,
            'clopper_pearson': list(report.exact_interval),
            'rho_c_bound': report.rho_c,
            'meets_lower_bound': report.meets_lower_bound,
        }, self._caveats(rc)

    def _run_cluster(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        rc: RunConfig = job['run_config']
        names = list(rc.quantities or ('interface_density', 'particle_density'))
        if rc.pairs:
            names.append('snapshot')
        results = run_replicates(rc.params, rc.graph, rc.density, rc.stop, rc.seed, rc.replicates,
                                 names=names if rc.times else (), times=rc.times, service=service)
        level = engine.confidence_level
        L = rc.graph.n
        domains = []
        for result in results:
            stats = domain_length_stats(result.final_configuration(rc.graph))
            domains.append((result.replicate, result.final_time, result.stop_reason, stats.lengths.size,
                            stats.mean, stats.max, result.consensus))
        writer.csv('domains.csv', ['replicate', 'final_time', 'stop_reason', 'domains', 'mean_length',
                                   'max_length', 'consensus'], domains)

        length = mean_estimate([row[4] for row in domains], level)
        consensus = proportion_estimate(sum(1 for row in domains if row[6]), len(domains), level)
        rho2 = _symmetric_rho2(rc.density)
        mean_field = mean_field_domain_length(L, rho2) if rho2 is not None else None
        censored = sum(1 for result in results if result.censored)
        writer.csv(
            'cluster.csv',
            ['L', 'replicates', 'mean_domain_length', 'ci_half_width', 'consensus_rate',
             'consensus_ci_half_width', 'L_times_consensus', 'mean_field_length', 'censored'],
            [(L, len(domains), length.point, length.half_width, consensus.point, consensus.half_width,
              L * consensus.point, mean_field, censored)],
        )
        self._write_series(writer, results, rc, names, engine)
        caveats = self._caveats(rc)
        if mean_field is not None:
            caveats.append(MEAN_FIELD_CAVEAT)
        return {
            'mean_domain_length': length.point,
            'ci_half_width': length.half_width,
            'L_times_consensus': L * consensus.point,
            'mean_field_length': mean_field,
            'censored': censored,
        }, caveats

    def _run_fixation(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        rc: RunConfig = job['run_config']
        times = tuple(t for t in rc.times if t > 0)
        stop = rc.stop
        if stop.mode != StopMode.TIME or stop.t_max is None:
            stop = StopCondition(StopMode.TIME, t_max=max(times), event_budget=stop.event_budget)
        names = ('median_flips', 'blockade_density', 'particle_density')
        results = run_replicates(rc.params, rc.graph, rc.density, stop, rc.seed, rc.replicates,
                                 names=names, times=times, service=service)
        summaries = summarize_observers(results, times, names, engine.confidence_level)
        flips = summaries['median_flips']
        blockades = summaries['blockade_density']
        particles = summaries['particle_density']
        rows = [
            (FIXATION_PROXY_LABEL, t, flips.means[k], flips.half_widths[k], blockades.means[k],
             blockades.half_widths[k], particles.means[k], particles.half_widths[k], flips.replicates)
            for k, t in enumerate(times)
        ]
        writer.csv('fixation.csv', ['measure', 'time', 'median_flips', 'median_flips_ci', 'blockade_density',
                                    'blockade_density_ci', 'particle_density', 'particle_density_ci',
                                    'replicates'], rows)
        growth = [
            float(flips.means[k] / flips.means[k - 1]) - 1 if flips.means[k - 1] > 0 else None
            for k in range(1, len(times))
        ]
        caveats = self._caveats(rc) + [FIXATION_PROXY_LABEL]
        return {'relative_flip_growth': growth, 'censored': flips.censored}, caveats

    def _run_spacetime(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        rc: RunConfig = job['run_config']
        times = spacetime_times(rc.stop.t_max, rc.render.rows)
        schedule = ObserverSchedule.named(times, ['snapshot'])
        stop = StopCondition(StopMode.TIME, t_max=rc.stop.t_max, event_budget=rc.stop.event_budget)
        task = partial(simulate_replicate, rc.params, rc.graph, rc.density, stop, rc.seed,
                       observers=schedule, batch_size=engine.batch_size)
        results = service.map_replicates(task, rc.replicates, label='space-time runs')

        rows = []
        for result in results:
            snapshots = np.array(result.series.get('snapshot', []))
            if snapshots.size == 0:
                raise SimulationException("Run stopped before the first snapshot", code='no_data',
                                          details={'replicate': result.replicate})
            image = render_spacetime(snapshots, interfaces=rc.render.interfaces, topology=rc.graph.topology)
            writer.binary(f"spacetime-{result.replicate:04d}.ppm", image.to_ppm())
            for t, snapshot, pixels in zip(result.sample_times, snapshots, image.interface_counts):
                edges = project_edges(Configuration(rc.graph, snapshot), rc.params)
                occupied = int(np.count_nonzero(edges.xi))
                rows.append((result.replicate, t, int(pixels), occupied, particle_stats(edges).total))
        writer.csv('interfaces.csv', ['replicate', 'time', 'interface_pixels', 'occupied_edges', 'particles'], rows)
        return {'images': len(results), 'rows': int(times.size)}, self._caveats(rc)

    def _run_analytics(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        attrs = job['attrs']
        params = Params(attrs['F'], attrs['theta'])
        rho2 = attrs.get('rho2')
        density = SymmetricDensity.from_rho2(params.F, rho2) if rho2 is not None else SymmetricDensity.uniform(params.F)
        cell = classify(params)
        bounds = contribution_bounds_uniform(params)
        phi_uniform = expected_phi_uniform(params)
        rho_c_bound = rho_c(params, density.as_density_vector())
        phi = expected_phi(params, density)

        writer.csv(
            'analytics.csv',
            ['F', 'theta', 'rho2'] + _exact_header('rho_c_bound', 'expected_phi', 'expected_phi_uniform',
                                                   'f_A', 'f_B', 'f_C')
            + ['margin', 'classification'],
            [[params.F, params.theta, density.rho2]
             + _flatten(exact_pair(v) for v in (rho_c_bound, phi, phi_uniform, bounds.fA, bounds.fB, bounds.fC))
             + [Fraction(cell.margin), cell.classification]],
        )
        coefficients = weight_polynomial(params)
        degree = len(coefficients) - 1
        writer.csv('weight_polynomial.csv', ['power'] + _exact_header('coefficient'),
                   [[degree - k] + list(exact_pair(c)) for k, c in enumerate(coefficients)])

        table = fixation_table(attrs['table_F_max'])
        writer.csv('fixation_table.csv', ['F', 'theta'] + _exact_header('rho1_threshold'),
                   [[F, theta] + (list(exact_pair(value)) if value is not None else [None, None])
                    for F, theta, value in table])

        c_minus, c_plus = asymptotic_slope_brackets()
        p_root = root_P()
        expanded_root = special_oracle_root()
        writer.csv('constants.csv', ['name', 'value', 'bracket_low', 'bracket_high'], [
            ('c_minus', float(c_minus), c_minus.lo, c_minus.hi),
            ('c_plus', float(c_plus), c_plus.lo, c_plus.hi),
            ('P_root', float(p_root), p_root.lo, p_root.hi),
            ('expanded_root', float(expanded_root), expanded_root.lo, expanded_root.hi),
        ])

        expanded = expanded_special_polynomial()
        writer.csv('special_polynomials.csv', ['power', 'P_coefficient', 'expanded_coefficient',
                                               'expanded_times_150'],
                   [(k, Fraction(P_COEFFICIENTS[k]), expanded[k], expanded[k] * 150)
                    for k in range(len(P_COEFFICIENTS))])

        curves = contribution_curves_special(CURVE_GRID)
        writer.csv('contribution_curves.csv', _exact_header('rho2', 'expected_phi', 'f_A', 'f_B', 'f_C', 'total'),
                   [_flatten(exact_pair(v) for v in row) for row in curves])

        return {
            'rho_c_bound': rho_c_bound,
            'expected_phi': phi,
            'weight_polynomial': coefficients,
            'margin': cell.margin,
            'classification': str(cell.classification),
            'c_minus': float(c_minus),
            'c_plus': float(c_plus),
            'P_root': float(p_root),
            'expanded_root': float(expanded_root),
        }, []

    def _run_phase_diagram(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        attrs = job['attrs']
        cells = phase_diagram(attrs['F_max'])
        writer.csv('phase_diagram.csv', ['F', 'theta', 'classification', 'margin', 'normalized_margin'],
                   [(cell.F, cell.theta, cell.classification, Fraction(cell.margin),
                     Fraction(cell.margin, 36 * cell.F ** 3)) for cell in cells])
        writer.binary('phase_diagram.ppm', encode_ppm(render_phase_diagram(cells, attrs['cell_size'])))
        counts = {}
        for cell in cells:
            counts[str(cell.classification)] = counts.get(str(cell.classification), 0) + 1
        return {'cells': len(cells), 'counts': counts}, []

    def _run_ld_check(self, job, writer: ArtifactWriter, service: ReplicateService, engine: EngineSettings):
        attrs = job['attrs']
        p, epsilon = float(attrs['p']), float(attrs['epsilon'])
        sizes = list(attrs['sizes'])
        points = ld_decay_curve(p, epsilon, sizes, attrs['replicates'], attrs['seed'])
        rows = []
        for k, point in enumerate(points):
            # streams 0 .. len(sizes) - 1 belong to the decay curve
            mean = estimate_changeover_mean(p, point.N, attrs['replicates'], attrs['seed'], engine.confidence_level,
                                            stream=len(sizes) + k)
            rows.append((point.N, point.deviations, point.replicates, point.probability, point.log_probability,
                         point.censored, point.exact_probability, 2 * point.N * p * (1 - p), mean.point,
                         mean.half_width))
        writer.csv('ld_decay.csv', ['N', 'deviations', 'replicates', 'probability', 'log_probability', 'censored',
                                    'exact_probability', 'expected_changeovers', 'mean_changeovers',
                                    'mean_ci_half_width'], rows)
        probabilities = [point.probability for point in points]
        decreasing = all(b < a for a, b in zip(probabilities, probabilities[1:]))
        return {'strictly_decreasing': decreasing, 'probabilities': probabilities}, []

    @staticmethod
    def _caveats(rc: RunConfig) -> List[str]:
        return [TORUS_CAVEAT] if rc.graph.topology == Topology.CYCLE else []


def _jsonable(value):
    return json.loads(json.dumps(to_jsonable(value), default=str))
