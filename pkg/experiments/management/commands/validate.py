from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand

from experiments.services.builders import build_mesh

from .run import command_error, configure


class Command(BaseCommand):
    help = 'Validate a scenario config without running it.'

    def add_arguments(self, parser):
        parser.add_argument('config', help='Scenario config file (JSON)')
        parser.add_argument('--build-mesh', action='store_true', help='Also build the configured mesh')

    def handle(self, *args, **options):
        try:
            config = configure(options)
            if options['build_mesh']:
                mesh = build_mesh(config['mesh'])
                self.stdout.write(f"Built {mesh}")
        except ValidationError as exc:
            raise command_error(exc)
        self.stdout.write(self.style.SUCCESS(f"{options['config']}: valid {config['scenario']} config"))
