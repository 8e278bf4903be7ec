from services.expansion_service import ExpansionService
from services.experiment_service import ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Build a speller training corpus from decoder outputs following a recipe'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--recipe', required=True, help='key=value file with name and sources')

    def run(self, **options):
        recipe = ExpansionService.parse_recipe(options['recipe'])
        corpus = ExperimentService.expand(options['workspace'], recipe)
        counts = ", ".join(f"{tag}: {count}" for tag, count in sorted(corpus.tag_counts.items()))
        self.stdout.write(self.style.SUCCESS(f"{recipe.name}: {len(corpus)} pairs ({counts})"))
