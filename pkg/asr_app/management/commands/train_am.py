from services.experiment_service import UNITS, ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Train the DFSMN-CTC acoustic model'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--units', choices=UNITS, default='char')
        parser.add_argument('--vocab-size', type=int, default=None, help='K of a char-K vocabulary')
        parser.add_argument('--epochs', type=int, default=8)
        parser.add_argument('--learning-rate', type=float, default=0.02)

    def run(self, **options):
        _, losses = ExperimentService.train_am(
            options['workspace'], options['seed'], options['units'], options['vocab_size'],
            options['epochs'], options['learning_rate'],
        )
        self.stdout.write(self.style.SUCCESS(f"Trained for {len(losses)} epochs, final loss {losses[-1]:.4f}"))
