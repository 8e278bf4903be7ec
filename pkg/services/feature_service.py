import logging
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_DIM = 16
PROTOTYPE_SCALE = 1.5
MIN_BURST = 6
MAX_BURST = 9
MIN_GAP = 3
EDGE_SILENCE = 3
TRAIN_NOISE = 0.4
TESTSETS = {"clean": 0.2, "noisy": 0.6, "far": 1.0}


class Utterance(NamedTuple):
    utt_id: str
    reference: tuple
    split: str
    testset: str
    noise: float


class FeatureService:
    @staticmethod
    def class_prototypes(lexicon, feature_dim=FEATURE_DIM):
        """One mean vector per pronunciation class; silence is the zero vector."""
        rng = np.random.default_rng([lexicon.seed, feature_dim])
        return rng.normal(0.0, PROTOTYPE_SCALE, size=(len(lexicon.syllables), feature_dim))

    @staticmethod
    def synth_features(lexicon, reference, seed, noise, feature_dim=FEATURE_DIM, prototypes=None):
        """
        Frame bursts of the class prototype of every character plus Gaussian
        noise. Homophones share a prototype, so only noise tells them apart.
        Characters of one class in a row are separated by silence.
        """
        if not reference:
            raise ValueError("reference must be nonempty")
        if noise < 0:
            raise ValueError("noise must be nonnegative")
        prototypes = FeatureService.class_prototypes(lexicon, feature_dim) if prototypes is None else prototypes
        rng = np.random.default_rng(seed)
        silence = np.zeros(feature_dim)
        rows = [silence] * EDGE_SILENCE
        previous = None
        for char in reference:
            class_id = lexicon.class_of(char)
            if previous is not None:
                gap = rng.integers(MIN_GAP, MIN_GAP + 2) if class_id == previous else rng.integers(0, MIN_GAP)
                rows.extend([silence] * int(gap))
            rows.extend([prototypes[class_id]] * int(rng.integers(MIN_BURST, MAX_BURST + 1)))
            previous = class_id
        rows.extend([silence] * EDGE_SILENCE)
        frames = np.array(rows, dtype=np.float64)
        if noise:
            frames = frames + noise * rng.normal(size=frames.shape)
        return frames

    @staticmethod
    def stack_frames(features, left=2, right=2, downsample=3):
        """Context windows of ``left + 1 + right`` frames, edges repeated, every ``downsample``-th kept."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a nonempty (T, dim) matrix")
        if left < 0 or right < 0 or downsample < 1:
            raise ValueError("left and right must be nonnegative and downsample positive")
        frames = features.shape[0]
        padded = np.pad(features, ((left, right), (0, 0)), mode="edge")
        windows = np.concatenate([padded[offset:offset + frames] for offset in range(left + right + 1)], axis=1)
        return windows[::downsample]

    @staticmethod
    def split_corpus(sentences, seed, test_size, testsets=None):
        """
        Train utterances plus one copy of the held-out sentences per test set;
        test sets differ only in channel noise.
        """
        testsets = TESTSETS if testsets is None else testsets
        if not 0 < test_size < len(sentences):
            raise ValueError(f"test_size must be between 1 and {len(sentences) - 1}")
        rng = np.random.default_rng([seed, len(sentences)])
        order = rng.permutation(len(sentences))
        held_out, train = order[:test_size], order[test_size:]
        utterances = [
            Utterance(f"train-{i:05d}", tuple(sentences[index]), "train", "train", TRAIN_NOISE)
            for i, index in enumerate(sorted(train))
        ]
        for name, noise in testsets.items():
            utterances.extend(
                Utterance(f"{name}-{i:05d}", tuple(sentences[index]), "test", name, noise)
                for i, index in enumerate(sorted(held_out))
            )
        logger.info(f"Split {len(sentences)} sentences into {len(train)} train and {test_size} test sentences x {len(testsets)} test sets")
        return utterances

    @staticmethod
    def synth_corpus_features(lexicon, utterances, seed, feature_dim=FEATURE_DIM):
        prototypes = FeatureService.class_prototypes(lexicon, feature_dim)
        features = {}
        for index, utterance in enumerate(utterances):
            features[utterance.utt_id] = FeatureService.synth_features(
                lexicon, utterance.reference, [seed, index], utterance.noise, feature_dim, prototypes,
            )
        return features
