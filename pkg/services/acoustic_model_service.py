import logging
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from ml.ctc import read_posteriors, write_posteriors
from ml.dfsmn import AmUtterance, DfsmnConfig, DfsmnModel, am_forward, train_am
from services.feature_service import FeatureService
from services.language_service import LanguageService

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 8
DEFAULT_LEARNING_RATE = 0.02
LR_DECAY = 0.7


class AcousticModelService:
    @staticmethod
    def build_corpus(utterances, features, lexicon, vocab, fold_map=None):
        """Stacked, downsampled features with unit targets for every utterance."""
        corpus = []
        for utterance in utterances:
            units = LanguageService.to_units(lexicon, utterance.reference, fold_map)
            corpus.append(AmUtterance(
                utterance.utt_id,
                FeatureService.stack_frames(features[utterance.utt_id]),
                vocab.encode(units),
            ))
        return corpus

    @staticmethod
    def learning_rate_schedule(learning_rate, decay=LR_DECAY):
        return lambda epoch: learning_rate * decay ** epoch

    @staticmethod
    def train(corpus, vocab, epochs=DEFAULT_EPOCHS, learning_rate=DEFAULT_LEARNING_RATE, seed=0, config=None):
        if not corpus:
            logger.error("Empty acoustic training corpus")
            raise ValueError("acoustic training corpus is empty")
        input_dim = corpus[0].features.shape[1]
        config = config or DfsmnConfig.desk_scale(input_dim, vocab.num_labels)
        model = DfsmnModel.initialize(config, seed=seed)
        logger.info(f"Training DFSMN with {model.num_parameters()} parameters on {len(corpus)} utterances")
        return train_am(
            model, corpus, epochs,
            AcousticModelService.learning_rate_schedule(learning_rate),
            seed, vocab.blank_id,
        )

    @staticmethod
    def save_loss_curve(path, losses):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({"epoch": range(1, len(losses) + 1), "loss": losses})
        frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
        return frame

    @staticmethod
    def compute_posteriors(model, vocab, stacked_features, n_jobs=1):
        """Posteriors per utterance id, in the order of ``stacked_features``."""
        ids = list(stacked_features)
        results = Parallel(n_jobs=n_jobs)(
            delayed(am_forward)(model, stacked_features[utt_id], vocab) for utt_id in ids
        )
        logger.info(f"Computed posteriors for {len(ids)} utterances")
        return dict(zip(ids, results))

    @staticmethod
    def write_posteriors(directory, posteriors):
        directory = Path(directory)
        for utt_id, post in posteriors.items():
            write_posteriors(directory / f"{utt_id}.pstm", post)

    @staticmethod
    def read_posteriors(directory, vocab, utt_ids):
        directory = Path(directory)
        posteriors = {}
        for utt_id in utt_ids:
            path = directory / f"{utt_id}.pstm"
            if not path.exists():
                logger.error(f"Posteriors missing for {utt_id}")
                raise FileNotFoundError(f"Posteriors not found: {path}")
            posteriors[utt_id] = read_posteriors(path, vocab)
        return posteriors
