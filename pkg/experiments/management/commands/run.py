from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from experiments.serializers import load_config
from experiments.services.reports import output_dir, write_report
from experiments.services.scenarios import run_scenario
from semilinear_recovery.exceptions import SolverError


def add_run_arguments(parser):
    parser.add_argument('config', help='Scenario config file (JSON)')
    parser.add_argument('--out', help='Output directory')
    parser.add_argument('--seed', type=int, help='Override the config seed')
    parser.add_argument('--jobs', type=int, help='Worker threads for independent simulations')


def configure(options, **context):
    """Load the config and apply the command-line overrides."""
    config = load_config(options['config'], **context)
    if options.get('seed') is not None:
        config['seed'] = options['seed']
    if options.get('jobs') is not None:
        if options['jobs'] < 1:
            raise ValidationError("--jobs must be at least 1", code='config_invalid')
        config['jobs'] = options['jobs']
    return config


def command_error(exc):
    code = getattr(exc, 'code', None) or 'error'
    message = exc.message if isinstance(exc, (ValidationError, SolverError)) else str(exc)
    return CommandError(f"[{code}] {message}")


class Command(BaseCommand):
    help = 'Run a scenario and write its CSV tables and summary.json.'

    def add_arguments(self, parser):
        add_run_arguments(parser)
        parser.add_argument('--strict', action='store_true', help='Fail on any tolerance miss')

    def handle(self, *args, **options):
        try:
            config = configure(options)
            report = run_scenario(config, strict=False)
            out = output_dir(config, options.get('out'))
            write_report(report, out)
        except (ValidationError, SolverError) as exc:
            raise command_error(exc)

        for check in report.checks:
            style = self.style.SUCCESS if check['passed'] else self.style.WARNING
            self.stdout.write(style(f"{check['name']}: {check['value']!r} {check['comparison']} {check['limit']!r}"))
        self.stdout.write(f"Wrote {out} in {report.wall_clock:.1f} s")
        if report.passed:
            self.stdout.write(self.style.SUCCESS(f"{report.scenario} passed"))
        elif options['strict']:
            raise CommandError(f"[scenario_failed] {report.scenario} missed: {', '.join(report.failures)}")
        else:
            self.stdout.write(self.style.WARNING(f"{report.scenario} missed: {', '.join(report.failures)}"))
