import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from recovery.serializers import MeasurementTextSerializer
from semilinear_recovery.exceptions import SolverError

from .models import SCHEMA_VERSION, RunReport
from .serializers import RunReportSerializer, load_config
from .services.builders import build_mesh, data_pairs, derivative_orders
from .services.reports import SUMMARY_FILE, write_report
from .services.scenarios import run_scenario
from .services.synthetic import MEASUREMENT_FILE, generate_synthetic_data

INCLUSION_A2 = {
    'order': 2,
    'background': 0.0,
    'inclusions': [{'center': [0.0, 0.0], 'radius': 0.5, 'value': 1.0}],
}


def config(scenario, **overrides):
    return load_config({'scenario': scenario, **overrides})


def read_bytes(directory):
    return {path.name: path.read_bytes() for path in sorted(Path(directory).iterdir())}


class ConfigTests(SimpleTestCase):
    def test_defaults_fill_every_section(self):
        data = config('forward_convergence')
        self.assertEqual(data['mesh']['h'], 0.1)
        self.assertAlmostEqual(data['mesh']['gamma'][1], 2.0 * math.pi)
        self.assertEqual(data['data']['family'], 'positive')
        self.assertEqual(data['eps_max'], 0.1)
        self.assertEqual(data['convergence']['h_values'], [0.2, 0.1, 0.05, 0.025])
        self.assertEqual(data['potentials']['d1']['radius'], 0.3)
        self.assertIsNone(data['potentials']['min_growth'])
        self.assertEqual(data['witness']['steps'], 8)
        self.assertEqual(data['witness']['min_growth'], 1.0)
        self.assertEqual(data['seed'], 0)

    def test_unknown_scenario(self):
        with self.assertRaises(ValidationError) as ctx:
            config('plot_everything')
        self.assertEqual(ctx.exception.code, 'config_invalid')
        self.assertIn('scenario', ctx.exception.message)

    def test_amplitude_above_eps_max(self):
        with self.assertRaises(ValidationError) as ctx:
            config('recover_coefficients', data={'amplitude': 0.5})
        self.assertEqual(ctx.exception.code, 'config_invalid')
        self.assertIn('data', ctx.exception.message)
        self.assertEqual(config('well_posedness', data={'amplitude': 0.5})['data']['amplitude'], 0.5)
        self.assertIsNone(config('recover_coefficients', data={'amplitude': 0.5}, eps_max=None)['eps_max'])
        relaxed = load_config({'scenario': 'recover_coefficients', 'data': {'amplitude': 0.5}}, check_amplitude=False)
        self.assertEqual(relaxed['data']['amplitude'], 0.5)

    def test_nested_errors_name_the_field(self):
        with self.assertRaises(ValidationError) as ctx:
            config('detect_cavity', mesh={'h': 2.0}, potentials={'d1': {'inner': 0.4}})
        self.assertIn('mesh', ctx.exception.message)
        self.assertIn('potentials.d1', ctx.exception.message)

    def test_cavity_scenarios_need_positive_data(self):
        with self.assertRaises(ValidationError):
            config('detect_cavity', data={'family': 'trig'})

    def test_reads_json_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'scenario.json'
            path.write_text(json.dumps({'scenario': 'localized_potentials', 'seed': 4}))
            self.assertEqual(load_config(path)['seed'], 4)
            path.write_text('{not json')
            with self.assertRaises(ValidationError) as ctx:
                load_config(path)
            self.assertEqual(ctx.exception.code, 'config_invalid')


class BuilderTests(SimpleTestCase):
    def test_stage_orders(self):
        self.assertEqual(derivative_orders(3), [(1, 0), (2, 0), (2, 1)])
        self.assertEqual(derivative_orders(3, [[1, 1]]), [(1, 1)])

    def test_pairs_wrap_around(self):
        pairs = data_pairs(['a', 'b', 'c'])
        self.assertEqual(pairs, [('a', 'b'), ('b', 'c'), ('c', 'a')])

    def test_mesh_without_cavity_keeps_gamma(self):
        mesh_config = config('detect_cavity', mesh={'h': 0.2, 'cavity': {'center': [0.0, 0.0], 'radius': 0.3}})['mesh']
        with_cavity, without = build_mesh(mesh_config), build_mesh(mesh_config, with_cavity=False)
        self.assertTrue(with_cavity.has_cavity)
        self.assertFalse(without.has_cavity)
        np.testing.assert_array_equal(
            with_cavity.vertices[with_cavity.gamma_nodes], without.vertices[without.gamma_nodes],
        )


class ReportTests(SimpleTestCase):
    def test_checks_decide_pass(self):
        report = RunReport('forward_convergence', 0)
        self.assertTrue(report.check('slope_error', 0.05, 0.2))
        self.assertTrue(report.passed)
        self.assertFalse(report.check('ratio_growth', 3.0, 10.0, '>='))
        self.assertFalse(report.passed)
        self.assertEqual(report.failures, ['ratio_growth'])

    def test_written_summary_validates(self):
        report = RunReport('detect_cavity', 3)
        report.metrics['residual'] = 0.25
        report.check('cavity_status', 'detected', 'detected', '==')
        report.tables['cavity_landscape'] = pd.DataFrame([{'radius': 0.3, 'misfit': 1e-3}])
        with tempfile.TemporaryDirectory() as tmp:
            write_report(report, tmp)
            summary = json.loads((Path(tmp) / SUMMARY_FILE).read_text())
            table = (Path(tmp) / 'cavity_landscape.csv').read_text().splitlines()
        serializer = RunReportSerializer(data=summary)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(summary['schema_version'], SCHEMA_VERSION)
        self.assertEqual(summary['table_names'], ['cavity_landscape'])
        self.assertEqual(table[0], 'radius,misfit')
        self.assertNotIn('wall_clock', summary)


class ScenarioTests(SimpleTestCase):
    def run_twice(self, data):
        outputs = []
        for _ in range(2):
            report = run_scenario(data)
            with tempfile.TemporaryDirectory() as tmp:
                write_report(report, tmp)
                outputs.append(read_bytes(tmp))
        self.assertEqual(outputs[0], outputs[1])
        return report

    def test_forward_convergence(self):
        report = self.run_twice(config('forward_convergence', convergence={'h_values': [0.2, 0.1, 0.05]}))
        self.assertGreater(report.metrics['slope'], 1.5)
        self.assertEqual(len(report.tables['convergence']), 3)

    def test_localized_potentials(self):
        report = run_scenario(config('localized_potentials', mesh={'h': 0.1, 'gamma': [0.0, math.pi]},
                                     potentials={'steps': 6}))
        failed = [check['name'] for check in report.checks if not check['passed']]
        self.assertEqual(failed, [])
        self.assertTrue(report.passed)
        self.assertGreaterEqual(report.metrics['min_step_growth'], 2.0)
        self.assertGreaterEqual(report.metrics['ratio_growth'], 2.0 ** 5)
        table = report.tables['potentials']
        self.assertEqual(len(table), 6)
        self.assertTrue(table['energy_d1'].is_monotonic_increasing)
        self.assertTrue(table['ratio'].is_monotonic_increasing)

    def test_contradiction_witness(self):
        report = run_scenario(config('contradiction_witness', mesh={'h': 0.1, 'gamma': [0.0, math.pi]}))
        failed = [check['name'] for check in report.checks if not check['passed']]
        self.assertEqual(failed, [])
        self.assertTrue(report.passed)
        witness = report.tables['witness']
        unit = witness[witness['case'] == 'unit_on_d1']
        self.assertEqual(len(unit), 8)
        self.assertTrue(np.all(np.diff(unit['d1_part'].to_numpy()) > 0))
        self.assertLessEqual(report.metrics['d2_decay'], 1e-3)

    def test_linearization_check(self):
        report = run_scenario(config('linearization_check', mesh={'h': 0.25},
                                     linearization={'configurations': 1, 'max_order': 2}))
        self.assertLessEqual(report.metrics['max_linear_discrepancy'], 1e-9)
        self.assertTrue(report.metrics['term_counts_match'])
        self.assertEqual(set(report.tables['oracle']['configuration']), {0, 1})

    def test_recover_coefficients(self):
        report = run_scenario(config(
            'recover_coefficients', mesh={'h': 0.125},
            phantom={'nonlinearity': [INCLUSION_A2]}, data={'modes': 6},
        ))
        self.assertLess(report.metrics['sigma_error'], 1e-3)
        self.assertLess(report.metrics['a_2_error'], 0.05)
        self.assertTrue(report.passed)
        self.assertIn('coefficients.txt', report.artifacts)

    def test_detect_cavity(self):
        report = run_scenario(config(
            'detect_cavity',
            mesh={'h': 0.1, 'gamma': [0.0, math.pi], 'cavity': {'center': [0.0, 0.0], 'radius': 0.3}},
            data={'modes': 4}, cavity_search={'radii': [0.3], 'rounds': 0},
        ))
        self.assertEqual(report.metrics['cavity']['status'], 'detected')
        self.assertLessEqual(report.metrics['center_error'], 0.1)
        self.assertTrue(report.passed)

    def test_strict_run_names_the_miss(self):
        data = config('forward_convergence', convergence={'h_values': [0.2, 0.1]}, tolerances={'slope': 0.0})
        with self.assertRaises(SolverError) as ctx:
            run_scenario(data, strict=True)
        self.assertEqual(ctx.exception.code, 'scenario_failed')
        self.assertIn('slope_error', ctx.exception.message)


class SyntheticDataTests(SimpleTestCase):
    def generate(self, tmp, **overrides):
        data = load_config({
            'scenario': 'recover_coefficients',
            'mesh': {'h': 0.25},
            'phantom': {'nonlinearity': [INCLUSION_A2]},
            'data': {'modes': 3},
            **overrides,
        }, check_amplitude=False)
        return generate_synthetic_data(data, tmp)

    def test_same_seed_same_bytes(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            self.generate(first, seed=3)
            self.generate(second, seed=3)
            self.assertEqual(read_bytes(first), read_bytes(second))

    def test_noise_changes_values_not_structure(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            measurements, paths = self.generate(first, seed=1, noise=0.01)
            self.generate(second, seed=2, noise=0.01)
            reader = MeasurementTextSerializer()
            a = reader.read(paths['measurements'], measurements.mesh)
            b = reader.read(Path(second) / MEASUREMENT_FILE, measurements.mesh)
        self.assertEqual([e.order for e in a], [e.order for e in b])
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.f1.values, y.f1.values)
            self.assertFalse(np.array_equal(x.measurement.values, y.measurement.values))

    def test_amplitude_above_eps_max(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(SolverError) as ctx:
                self.generate(tmp, data={'modes': 3, 'amplitude': 0.5})
        self.assertEqual(ctx.exception.code, 'phantom_outside_wellposedness')


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def write_config(self, payload):
        path = self.root / 'scenario.json'
        path.write_text(json.dumps(payload))
        return str(path)

    def test_validate(self):
        path = self.write_config({'scenario': 'forward_convergence'})
        out = StringIO()
        call_command('validate', path, stdout=out)
        self.assertIn('valid forward_convergence config', out.getvalue())

    def test_validate_builds_mesh(self):
        path = self.write_config({'scenario': 'forward_convergence', 'mesh': {'h': 0.25}})
        out = StringIO()
        call_command('validate', path, build_mesh=True, stdout=out)
        self.assertIn('Built', out.getvalue())
        self.assertIn('valid forward_convergence config', out.getvalue())

    def test_invalid_config(self):
        path = self.write_config({'scenario': 'forward_convergence', 'noise': -1})
        with self.assertRaisesMessage(CommandError, 'config_invalid'):
            call_command('validate', path, stdout=StringIO())

    def test_run_writes_outputs(self):
        path = self.write_config({'scenario': 'forward_convergence', 'convergence': {'h_values': [0.2, 0.1]}})
        out = self.root / 'run'
        call_command('run', path, out=str(out), seed=5, stdout=StringIO())
        summary = json.loads((out / SUMMARY_FILE).read_text())
        self.assertEqual(summary['seed'], 5)
        self.assertTrue((out / 'convergence.csv').exists())

    def test_strict_run_fails(self):
        path = self.write_config({
            'scenario': 'forward_convergence',
            'convergence': {'h_values': [0.2, 0.1]},
            'tolerances': {'slope': 0.0},
        })
        with self.assertRaisesMessage(CommandError, 'scenario_failed'):
            call_command('run', path, out=str(self.root / 'run'), strict=True, stdout=StringIO())

    def test_gen_data_outside_wellposedness(self):
        path = self.write_config({'scenario': 'recover_coefficients', 'mesh': {'h': 0.25},
                                  'data': {'amplitude': 0.5}})
        with self.assertRaisesMessage(CommandError, 'phantom_outside_wellposedness'):
            call_command('gen_data', path, out=str(self.root / 'data'), stdout=StringIO())
