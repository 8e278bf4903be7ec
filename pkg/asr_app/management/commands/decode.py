from django.conf import settings

from services.experiment_service import MODES, ExperimentService
from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Decode every utterance with greedy search or through the WFST decoding graph'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--mode', choices=MODES, required=True)
        parser.add_argument('--beam', type=int, default=settings.DECODER_BEAM)
        parser.add_argument('--acoustic-scale', type=float, default=settings.DECODER_ACOUSTIC_SCALE)
        parser.add_argument('--nbest', type=int, default=settings.DECODER_NBEST)
        parser.add_argument('--max-paths', type=int, default=settings.THRESHOLD_MAX_PATHS)
        parser.add_argument('--lm-order', type=int, default=settings.LM_ORDER)
        parser.add_argument('--lm-discount', type=float, default=settings.LM_DISCOUNT)
        parser.add_argument('--n-jobs', type=int, default=settings.DECODE_N_JOBS)

    def run(self, **options):
        records = ExperimentService.decode(
            options['workspace'], options['mode'], options['beam'], options['acoustic_scale'],
            options['nbest'], options['max_paths'], options['lm_order'], options['lm_discount'],
            options['n_jobs'],
        )
        self.stdout.write(self.style.SUCCESS(f"Decoded {len(records)} utterances ({options['mode']})"))
