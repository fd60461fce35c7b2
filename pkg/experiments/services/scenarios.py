"""
Scenario runner. Each scenario turns a validated config into a RunReport:
metric tables, scalar metrics and tolerance checks.
"""
import logging
import math
import time

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from coefficients.models import NonlinearitySeries, PiecewiseCoefficient
from coefficients.serializers import CoefficientTextSerializer
from coefficients.services.phantoms import build_phantom, random_series
from forward.models import BoundaryData, NewtonOptions
from forward.services.boundary_data import positive_family, random_data
from forward.services.solver import ForwardProblem, get_problem
from linearization.services.cascade import lattice_oracle_discrepancies, max_discrepancy
from linearization.services.chain_rule import brute_force_partitions, term_count
from meshes.models import RegionMask
from meshes.serializers import MeshTextSerializer
from meshes.services.mesh_builder import build_disk_mesh, tag_gamma
from potentials.services.localization import build_energy_operators, localized_potential_sequence
from recovery.models import CavityStatus, RecoveryResult
from recovery.services.cavity import detect_cavity as detect_cavity_verdict
from recovery.services.measurements import simulate_measurements
from recovery.services.nonlinearity import recover_nonlinearity
from recovery.services.sigma import recover_sigma_linearized
from recovery.services.witness import contradiction_functional
from semilinear_recovery.exceptions import SolverError

from ..models import RunReport
from .builders import boundary_family, build_mesh, data_pairs, derivative_orders, make_rng, region_mask

logger = logging.getLogger(__name__)

FULL_CIRCLE = (0.0, 2.0 * math.pi)

DEFAULT_TOLERANCES = {
    'slope': 0.2,
    'discrepancy': 1e-2,
    'linear_discrepancy': 1e-9,
    'ratio_growth': 10.0,
    'step_growth': 2.0,
    'sigma': 0.05,
    'a_m': 0.15,
    'd2_decay': 1e-3,
    'equal_total': 1e-10,
}


def tolerance(config, name):
    return config['tolerances'].get(name, DEFAULT_TOLERANCES[name])


def region_error(truth, estimate):
    """Largest region error relative to the largest true magnitude (absolute if all vanish)."""
    scale = max((abs(v) for v in truth.values()), default=0.0) or 1.0
    return max(abs(estimate[r] - truth[r]) for r in truth) / scale


def comparison_rows(truth, estimate, **extra):
    return [
        {**extra, 'region': region, 'true': truth[region], 'estimate': estimate[region],
         'error': abs(estimate[region] - truth[region])}
        for region in sorted(truth)
    ]


def series_region_values(series, labels, m):
    values = series.coefficient(m)
    return {int(r): float(values[labels == r].mean()) for r in np.unique(labels)}


def forward_convergence(config, rng):
    """L² error of the manufactured solution u = x² + y² (σ ≡ 1, a ≡ 0) over h."""
    report = RunReport('forward_convergence', config['seed'])
    rows = []
    for h in config['convergence']['h_values']:
        mesh = tag_gamma(build_disk_mesh(radius=config['mesh']['radius'], h=h), FULL_CIRCLE)
        problem = ForwardProblem(mesh, PiecewiseCoefficient.constant(mesh))

        def exact(x, y):
            return x ** 2 + y ** 2

        u = problem.solve_linear(source=4.0, bdry=BoundaryData.from_function(mesh, exact))
        rows.append({
            'h': h,
            'max_edge': mesh.max_edge_length,
            'n_triangles': mesh.n_triangles,
            'l2_error': problem.l2_error(u, exact),
        })
    table = pd.DataFrame(rows)
    slope = float(np.polyfit(np.log(table['h']), np.log(table['l2_error']), 1)[0])
    report.tables['convergence'] = table
    report.metrics['slope'] = slope
    report.check('slope_error', abs(slope - 2.0), tolerance(config, 'slope'))
    return report


def well_posedness(config, rng):
    """
    Largest amplitude (by bisection) at which every random datum converges
    within the iteration budget and obeys |u| <= growth |f|, then the
    same data at ten times that amplitude.
    """
    report = RunReport('well_posedness', config['seed'])
    settings = config['well_posedness']
    mesh = build_mesh(config['mesh'])
    phantom = build_phantom(mesh, config['phantom'])
    problem = ForwardProblem(mesh, phantom.sigma)
    options = NewtonOptions.from_settings(eps_max=None, max_iterations=settings['max_iterations'])
    directions = [random_data(mesh, rng, 1.0) for _ in range(settings['trials'])]
    rows = []

    def attempt(amplitude, phase):
        ok = True
        for i, direction in enumerate(directions):
            f = direction * amplitude
            row = {'phase': phase, 'amplitude': amplitude, 'trial': i}
            try:
                u, newton = problem.solve_semilinear(phantom.series, f, options)
            except SolverError as exc:
                row.update(converged=False, iterations=options.max_iterations, sup_ratio=float('nan'),
                           within_bound=False, failure=exc.code)
            else:
                ratio = float(np.max(np.abs(u))) / f.sup_norm
                row.update(converged=True, iterations=newton.iterations, sup_ratio=ratio,
                           within_bound=ratio <= settings['growth'], failure='')
            ok = ok and row['converged'] and row['within_bound']
            rows.append(row)
        return ok

    low, high = settings['bracket']
    if not attempt(low, 'bisection'):
        epsilon = 0.0
    elif attempt(high, 'bisection'):
        epsilon = high
    else:
        for _ in range(settings['bisection_steps']):
            middle = math.sqrt(low * high)
            if attempt(middle, 'bisection'):
                low = middle
            else:
                high = middle
        epsilon = low

    blowup_ok = attempt(10.0 * epsilon, 'ten_epsilon') if epsilon > 0 else True
    table = pd.DataFrame(rows)
    at_epsilon = table[(table['phase'] == 'bisection') & (table['amplitude'] == epsilon)]
    report.tables['well_posedness'] = table
    report.metrics.update({
        'epsilon': epsilon,
        'max_iterations_at_epsilon': int(at_epsilon['iterations'].max()) if len(at_epsilon) else None,
        'max_sup_ratio_at_epsilon': float(at_epsilon['sup_ratio'].max()) if len(at_epsilon) else None,
        'ten_epsilon_all_within_bound': bool(blowup_ok),
    })
    report.check('epsilon', epsilon, 0.0, '>')
    report.check('ten_epsilon_breaks_contract', not blowup_ok, True, '==')
    return report


def linearization_check(config, rng):
    """Lattice DN derivatives against the finite-difference oracle, plus chain-rule term counts."""
    report = RunReport('linearization_check', config['seed'])
    settings = config['linearization']
    max_order = settings['max_order']
    mesh = build_mesh(config['mesh'])
    sigma = build_phantom(mesh, config['phantom']).sigma
    rows = []
    for c in range(settings['configurations'] + 1):
        f1, f2 = random_data(mesh, rng, 1.0), random_data(mesh, rng, 1.0)
        is_linear = c == settings['configurations']
        series = (NonlinearitySeries.zero(mesh.n_triangles, max(max_order, 2)) if is_linear
                  else random_series(mesh.n_triangles, max(max_order, 2), rng))
        for row in lattice_oracle_discrepancies(mesh, sigma, series, f1, f2, max_order, settings['step']):
            rows.append({'configuration': c, 'linear': is_linear, **row})
    table = pd.DataFrame(rows)
    nonlinear = max_discrepancy(table[~table['linear']].to_dict('records'))
    linear = max_discrepancy(table[table['linear']].to_dict('records'))

    counts = []
    for n in range(1, 6):
        brute = len(brute_force_partitions(n))
        for p in range(n + 1):
            counts.append({'p': p, 'q': n - p, 'terms': term_count(p, n - p), 'brute_force': brute})
    counts = pd.DataFrame(counts)
    counts['match'] = counts['terms'] == counts['brute_force']

    report.tables['oracle'] = table
    report.tables['chain_rule_counts'] = counts
    report.metrics.update({
        'max_discrepancy': nonlinear,
        'max_linear_discrepancy': linear,
        'term_counts_match': bool(counts['match'].all()),
    })
    report.check('max_discrepancy', nonlinear, tolerance(config, 'discrepancy'))
    report.check('max_linear_discrepancy', linear, tolerance(config, 'linear_discrepancy'))
    report.check('term_counts_match', bool(counts['match'].all()), True, '==')
    return report


def _potential_setup(config, steps, min_growth, mesh=None, weight=None):
    mesh = mesh if mesh is not None else build_mesh(config['mesh'])
    sigma = build_phantom(mesh, config['phantom']).sigma
    d1 = region_mask(mesh, config['potentials']['d1'], 'D1')
    d2 = region_mask(mesh, config['potentials']['d2'], 'D2')
    if d2 is None:
        d2 = RegionMask.empty(mesh, 'D2')
    if weight is not None:
        weight = weight(mesh, sigma)
    pair = build_energy_operators(mesh, sigma, d1, d2, weight)
    sequence = localized_potential_sequence(
        pair, steps, config['potentials']['delta0'], min_growth,
    )
    return mesh, sigma, pair, sequence


def localized_potentials(config, rng):
    report = RunReport('localized_potentials', config['seed'])
    _, _, pair, sequence = _potential_setup(
        config, config['potentials']['steps'], config['potentials']['min_growth'],
    )
    ratios = sequence.ratios
    e1 = sequence.energies_d1
    e2 = sequence.energies_d2
    growth = ratios[-1] / ratios[0] if not pair.d2_empty else float('inf')
    step_growth = min(b / a for a, b in zip(ratios, ratios[1:])) if not pair.d2_empty else float('inf')
    report.tables['potentials'] = pd.DataFrame(sequence.as_rows())
    report.metrics.update({
        'steps': len(sequence),
        'ratio_growth': growth,
        'min_step_growth': step_growth,
        'final_energy_d1': e1[-1],
        'final_energy_d2': e2[-1],
    })
    report.check('ratio_increasing', bool(np.all(np.diff(ratios) > 0)) or pair.d2_empty, True, '==')
    report.check('ratio_growth', growth, tolerance(config, 'ratio_growth'), '>=')
    report.check('min_step_growth', step_growth, tolerance(config, 'step_growth'), '>=')
    report.check('energy_d1_increasing', bool(np.all(np.diff(e1) > 0)), True, '==')
    report.check('energy_d2_nonincreasing', bool(np.all(np.diff(e2) <= 1e-12 * max(e2[0], 1.0))), True, '==')
    return report


def _recover(config, mesh, measurements, jobs):
    """σ on the phantom's σ partition, then a_2 .. a_K on its series partitions."""
    phantom = build_phantom(mesh, config['phantom'])
    max_order = config['recovery']['max_order']
    sigma = recover_sigma_linearized(mesh, phantom.sigma_labels, measurements)
    tests = boundary_family(mesh, config['data'])
    stages = recover_nonlinearity(
        mesh, sigma.coefficient, measurements,
        {m: phantom.labels_for(m) for m in range(2, max_order + 1)}, tests, max_order,
        config['recovery']['regularization'], config['recovery']['refine'], jobs,
    )
    return phantom, RecoveryResult(sigma=sigma, stages=stages)


def _report_recovery(report, config, phantom, result):
    sigma_truth = phantom.sigma.region_values(phantom.sigma_labels)
    report.tables['sigma'] = pd.DataFrame(comparison_rows(sigma_truth, result.sigma.values))
    sigma_error = region_error(sigma_truth, result.sigma.values)
    report.metrics['sigma'] = result.sigma.as_dict()
    report.metrics['sigma_error'] = sigma_error
    report.check('sigma_error', sigma_error, tolerance(config, 'sigma'))

    rows = []
    for stage in result.stages:
        truth = series_region_values(phantom.series, phantom.labels_for(stage.m), stage.m)
        rows.extend(comparison_rows(truth, stage.values, m=stage.m))
        error = region_error(truth, stage.values)
        report.metrics[f'a_{stage.m}'] = stage.as_dict()
        report.metrics[f'a_{stage.m}_error'] = error
        report.check(f'a_{stage.m}_error', error, tolerance(config, 'a_m'))
    report.tables['coefficients'] = pd.DataFrame(rows)
    report.tables['residuals'] = pd.DataFrame(result.residuals())


def _simulate(config, mesh, phantom, rng, orders=None):
    family = boundary_family(mesh, config['data'])
    return simulate_measurements(
        mesh, phantom.sigma, phantom.series, data_pairs(family),
        orders or derivative_orders(config['recovery']['max_order'], config['orders']),
        noise_level=config['noise'], rng=rng, jobs=config['jobs'],
    )


def recover_coefficients(config, rng):
    """Inverse-crime recovery of σ and a_2 .. a_K on the configured geometry."""
    report = RunReport('recover_coefficients', config['seed'])
    mesh = build_mesh(config['mesh'])
    truth = build_phantom(mesh, config['phantom'])
    measurements = _simulate(config, mesh, truth, rng)
    phantom, result = _recover(config, mesh, measurements, config['jobs'])
    _report_recovery(report, config, phantom, result)
    report.artifacts['mesh.txt'] = MeshTextSerializer().dumps(mesh)
    report.artifacts['coefficients.txt'] = CoefficientTextSerializer().dumps(result.sigma.coefficient, result.series)
    return report


def _report_cavity(report, config, verdict):
    cavity = config['mesh'].get('cavity')
    h = config['mesh']['h']
    report.tables['cavity_landscape'] = pd.DataFrame(
        verdict.landscape, columns=['stage', 'center_x', 'center_y', 'radius', 'misfit'],
    )
    report.metrics['cavity'] = verdict.as_dict()
    if cavity:
        report.check('cavity_status', verdict.status, CavityStatus.DETECTED, '==')
        if verdict.center is not None:
            center_error = math.dist(verdict.center, cavity['center'])
            radius_error = abs(verdict.radius - cavity['radius'])
            report.metrics.update(center_error=center_error, radius_error=radius_error)
            report.check('center_error', center_error, config['tolerances'].get('center', h))
            report.check('radius_error', radius_error, config['tolerances'].get('radius', 2 * h))
    else:
        report.check('cavity_status', verdict.status, CavityStatus.NONE, '==')


def _verdict(config, mesh, sigma, measurements):
    search = config['cavity_search']
    return detect_cavity_verdict(
        mesh, sigma, measurements, tuple(config['mesh']['gamma']), config['mesh']['h'],
        radius=config['mesh']['radius'], radii=tuple(search['radii']), spacing=search['spacing'],
        rounds=search['rounds'], threshold=search['threshold'],
    )


def detect_cavity(config, rng):
    """First-order data on the configured (possibly cavity-carrying) mesh, tested against the cavity-free one."""
    report = RunReport('detect_cavity', config['seed'])
    data_mesh = build_mesh(config['mesh'])
    phantom = build_phantom(data_mesh, config['phantom'])
    measurements = _simulate(config, data_mesh, phantom, rng, orders=[(1, 0)])
    free_mesh = build_mesh(config['mesh'], with_cavity=False)
    sigma = build_phantom(free_mesh, config['phantom']).sigma
    verdict = _verdict(config, free_mesh, sigma, measurements.transfer(free_mesh))
    _report_cavity(report, config, verdict)
    return report


def full_pipeline(config, rng):
    """
    σ on the cavity-free hypothesis, the cavity verdict, σ refitted on the
    detected geometry, then a_2 .. a_K.
    """
    report = RunReport('full_pipeline', config['seed'])
    data_mesh = build_mesh(config['mesh'])
    truth = build_phantom(data_mesh, config['phantom'])
    measurements = _simulate(config, data_mesh, truth, rng)

    free_mesh = build_mesh(config['mesh'], with_cavity=False)
    free_phantom = build_phantom(free_mesh, config['phantom'])
    free_data = measurements.transfer(free_mesh)
    sigma = recover_sigma_linearized(free_mesh, free_phantom.sigma_labels, free_data)
    verdict = _verdict(config, free_mesh, sigma.coefficient, free_data)
    _report_cavity(report, config, verdict)

    geometry = free_mesh
    if verdict.detected and verdict.center is not None:
        geometry = tag_gamma(
            build_disk_mesh(radius=config['mesh']['radius'], cavity=(verdict.center, verdict.radius),
                            h=config['mesh']['h']),
            tuple(config['mesh']['gamma']),
        )
    phantom, result = _recover(config, geometry, measurements.transfer(geometry), config['jobs'])
    result.cavity = verdict
    _report_recovery(report, config, phantom, result)
    report.metrics['sigma_cavity_free'] = sigma.as_dict()
    report.artifacts['mesh.txt'] = MeshTextSerializer().dumps(geometry)
    report.artifacts['coefficients.txt'] = CoefficientTextSerializer().dumps(result.sigma.coefficient, result.series)
    return report


def contradiction_witness(config, rng):
    """
    The blow-up functional for a_m - ã_m = 1 on D1 along a localized-potential
    sequence, and for a_m = ã_m as the vanishing control. The potentials
    localize the energy weighted by (w_ψ / |ψ|)^(m-1), the factor the
    functional integrates against.
    """
    report = RunReport('contradiction_witness', config['seed'])
    m = config['witness']['m']
    mesh = build_mesh(config['mesh'])
    psi = positive_family(mesh, 1, config['data']['amplitude'])[0]

    def weight(_, sigma):
        problem = get_problem(mesh, sigma)
        w = problem.quadrature.interpolate(problem.solve_linear(bdry=psi)) / psi.sup_norm
        return np.clip(w, 0.0, None) ** (m - 1)

    mesh, sigma, pair, sequence = _potential_setup(
        config, config['witness']['steps'], config['witness']['min_growth'], mesh, weight,
    )
    unit = contradiction_functional(mesh, sigma, pair.d1.indicator.astype(float), m,
                                    pair.d1, pair.d2, sequence, psi)
    equal = contradiction_functional(mesh, sigma, np.zeros(mesh.n_triangles), m,
                                     pair.d1, pair.d2, sequence, psi)
    table = pd.concat(
        [pd.DataFrame(unit).assign(case='unit_on_d1'), pd.DataFrame(equal).assign(case='equal')],
        ignore_index=True,
    )
    d1 = [row['d1_part'] for row in unit]
    bounds = [row['d2_bound'] for row in unit]
    decay = bounds[-1] / bounds[0] if bounds[0] > 0 else 0.0
    equal_total = max(abs(row['total']) for row in equal)
    report.tables['witness'] = table
    report.metrics.update({
        'm': m,
        'd1_growth': d1[-1] / d1[0] if d1[0] else float('inf'),
        'd2_decay': decay,
        'max_equal_total': equal_total,
    })
    report.check('d1_part_increasing', bool(np.all(np.diff(d1) > 0)), True, '==')
    report.check('d2_decay', decay, tolerance(config, 'd2_decay'))
    report.check('equal_total', equal_total, tolerance(config, 'equal_total'))
    return report


SCENARIO_RUNNERS = {
    'forward_convergence': forward_convergence,
    'well_posedness': well_posedness,
    'linearization_check': linearization_check,
    'localized_potentials': localized_potentials,
    'recover_coefficients': recover_coefficients,
    'detect_cavity': detect_cavity,
    'full_pipeline': full_pipeline,
    'contradiction_witness': contradiction_witness,
}


def run_scenario(config, strict=False):
    """
    Run the configured scenario deterministically from ``config['seed']``.
    With ``strict`` a missed tolerance raises ``scenario_failed`` naming it.
    """
    runner = SCENARIO_RUNNERS.get(config['scenario'])
    if runner is None:
        raise ValidationError(f"Unknown scenario {config['scenario']}", code='config_invalid')
    started = time.perf_counter()
    report = runner(config, make_rng(config['seed']))
    report.wall_clock = time.perf_counter() - started
    logger.info("%s in %.1f s", report, report.wall_clock)
    if strict and not report.passed:
        raise SolverError(
            f"Scenario {report.scenario} missed: {', '.join(report.failures)}",
            code='scenario_failed',
            params={'report': report},
        )
    return report
