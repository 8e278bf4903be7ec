from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Score hypotheses against references per test set'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--system', action='append', dest='systems', help='Repeatable; defaults to every system')

    def run(self, **options):
        reports = ExperimentService.score(options['workspace'], options['systems'])
        for (system, testset), report in reports.items():
            self.stdout.write(
                f"{system}\t{testset}\tS={report.substitutions} D={report.deletions} "
                f"I={report.insertions} N={report.reference_length} CER={100 * report.cer:.2f}%"
            )
