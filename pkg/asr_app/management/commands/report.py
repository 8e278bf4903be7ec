from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Write comparison, pass and example tables plus a PDF report'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--baseline', default=None)
        parser.add_argument('--examples', default=None, help='Corrected system to list examples for')

    def run(self, **options):
        table = ExperimentService.report(options['workspace'], options['baseline'], options['examples'])
        self.stdout.write(table.to_string(index=False))
