from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Correct decoder hypotheses with a trained speller'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--run-name', required=True)
        parser.add_argument('--input', required=True, help='System whose hypotheses are corrected, e.g. greedy')
        parser.add_argument('--checkpoint', default=None, help='Defaults to the last pass of the run')
        parser.add_argument('--system', default=None, help='Name of the corrected system')
        parser.add_argument('--n-jobs', type=int, default=1)

    def run(self, **options):
        system, corrections = ExperimentService.correct(
            options['workspace'], options['run_name'], options['input'],
            options['checkpoint'], options['system'], options['n_jobs'],
        )
        self.stdout.write(self.style.SUCCESS(f"Corrected {len(corrections)} hypotheses into {system}"))
