from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand

from experiments.services.reports import output_dir
from experiments.services.synthetic import generate_synthetic_data
from semilinear_recovery.exceptions import SolverError

from .run import add_run_arguments, command_error, configure


class Command(BaseCommand):
    help = 'Simulate the configured measurements and write mesh, coefficient and measurement files.'

    def add_arguments(self, parser):
        add_run_arguments(parser)

    def handle(self, *args, **options):
        try:
            config = configure(options, check_amplitude=False)
            out = output_dir(config, options.get('out'))
            measurements, paths = generate_synthetic_data(config, out)
        except (ValidationError, SolverError) as exc:
            raise command_error(exc)
        for path in paths.values():
            self.stdout.write(f"Wrote {path}")
        self.stdout.write(self.style.SUCCESS(f"Generated {measurements}"))
