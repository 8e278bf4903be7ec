from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Synthesize a homophone language, its text corpus and acoustic features'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--n-chars', type=int, default=60)
        parser.add_argument('--n-pron-classes', type=int, default=24)
        parser.add_argument('--grammar-order', type=int, default=3)
        parser.add_argument('--n-sentences', type=int, default=5000)
        parser.add_argument('--test-size', type=int, default=200)

    def run(self, **options):
        lexicon, utterances = ExperimentService.synth(
            options['workspace'], options['seed'], options['n_chars'], options['n_pron_classes'],
            options['grammar_order'], options['n_sentences'], options['test_size'],
        )
        self.stdout.write(self.style.SUCCESS(
            f"{len(utterances)} utterances, {len(lexicon.characters)} characters, "
            f"{len(lexicon.homophone_classes())} homophone classes"
        ))
