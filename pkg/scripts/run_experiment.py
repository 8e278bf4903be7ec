import sys
import os
import argparse
import django

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'ctc_speller.settings')
django.setup()

from django.conf import settings
from services.experiment_service import ExperimentConfig, ExperimentService


def main():
    parser = argparse.ArgumentParser(description="Run the desk-scale listen-decode-spell experiment end to end.")
    parser.add_argument('--seed', type=int, default=settings.PIPELINE_SEED)
    parser.add_argument('--workspace', default=os.path.join(settings.ARTIFACTS_DIR, 'experiment'))
    parser.add_argument('--n-sentences', type=int, default=5000)
    parser.add_argument('--units', choices=('char', 'syllable'), default='char')
    parser.add_argument('--n-jobs', type=int, default=settings.DECODE_N_JOBS)
    args = parser.parse_args()

    config = ExperimentConfig(
        seed=args.seed,
        n_sentences=args.n_sentences,
        units=args.units,
        beam=settings.DECODER_BEAM,
        acoustic_scale=settings.DECODER_ACOUSTIC_SCALE,
        nbest_size=settings.DECODER_NBEST,
        lm_order=settings.LM_ORDER,
        lm_discount=settings.LM_DISCOUNT,
        max_paths=settings.THRESHOLD_MAX_PATHS,
        n_jobs=args.n_jobs,
    )
    result = ExperimentService.run(config, args.workspace)
    print(result.table.to_string(index=False))
    print(f"Reports written to {os.path.join(args.workspace, 'reports')}")


if __name__ == '__main__':
    main()
