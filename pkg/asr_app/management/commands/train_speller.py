from ml.transformer import PRESETS
from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Train the transformer speller with warm-restarted cosine learning rates'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--pairs', required=True, help='Name of a paired corpus under pairs/')
        parser.add_argument('--run-name', default=None)
        parser.add_argument('--passes', type=int, default=4)
        parser.add_argument('--steps-per-pass', type=int, default=None)
        parser.add_argument('--batch-size', type=int, default=16)
        parser.add_argument('--eta-max', type=float, default=0.1)
        parser.add_argument('--preset', choices=PRESETS, default='desk')

    def run(self, **options):
        run = ExperimentService.train_speller(
            options['workspace'], options['pairs'], options['run_name'], options['seed'],
            options['passes'], options['steps_per_pass'], options['batch_size'],
            options['eta_max'], options['preset'],
        )
        cers = ", ".join("-" if cer is None else f"{100 * cer:.2f}%" for cer in run.validation_cers)
        self.stdout.write(self.style.SUCCESS(f"Validation CER per pass: {cers}"))
