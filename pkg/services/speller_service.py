import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed

from asr_app.models import SpellerPass
from ml.sgdr import SgdrSchedule
from ml.transformer import SpellerModel, SpellerVocab, TransformerConfig, correct, train_speller
from services.artifact_service import ArtifactService
from services.scoring_service import ScoringService

logger = logging.getLogger(__name__)

DEFAULT_PASSES = 4
DEFAULT_BATCH_SIZE = 16
DEFAULT_ETA_MAX = 0.1
VALIDATION_FRACTION = 0.05


class SpellerRun(NamedTuple):
    model: SpellerModel
    steps_per_pass: int
    validation_cers: list
    checkpoints: list


class SpellerService:
    @staticmethod
    def split_pairs(pairs, seed, validation_fraction=VALIDATION_FRACTION):
        """Seeded train/validation split; validation is empty for a single pair."""
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no speller training pairs")
        size = 0 if len(pairs) < 2 else max(1, int(round(validation_fraction * len(pairs))))
        order = np.random.default_rng(seed).permutation(len(pairs))
        validation = [pairs[i] for i in sorted(order[:size])]
        train = [pairs[i] for i in sorted(order[size:])]
        return train, validation

    @staticmethod
    def steps_for(num_pairs, batch_size):
        return max(1, math.ceil(num_pairs / batch_size))

    @staticmethod
    def validation_cer(model, validation):
        if not validation:
            return None
        references = {i: ref for i, (_, ref) in enumerate(validation)}
        hypotheses = {i: correct(model, hyp).tokens for i, (hyp, _) in enumerate(validation)}
        return ScoringService.score(references, hypotheses).cer

    @staticmethod
    def train(pairs, run_dir, seed=0, passes=DEFAULT_PASSES, steps_per_pass=None, batch_size=DEFAULT_BATCH_SIZE,
              eta_max=DEFAULT_ETA_MAX, eta_min=0.0, config=None, validation_fraction=VALIDATION_FRACTION):
        """
        SGDR training with a checkpoint and a validation CER after every pass.
        Without ``steps_per_pass`` one pass is one sweep over the training pairs.
        """
        train, validation = SpellerService.split_pairs(pairs, seed, validation_fraction)
        config = config or TransformerConfig.desk()
        steps_per_pass = steps_per_pass or SpellerService.steps_for(len(train), batch_size)
        schedule = SgdrSchedule(passes, steps_per_pass, eta_max, eta_min)
        model = SpellerModel.initialize(config, SpellerVocab.from_pairs(pairs), seed=seed)
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoints = []
        logger.info(
            f"Training speller on {len(train)} pairs ({len(validation)} held out), "
            f"{passes} passes x {steps_per_pass} steps, {model.num_parameters()} parameters"
        )

        def on_pass_end(pass_index, current):
            checkpoint = run_dir / f"pass{pass_index}.cspl"
            current.save(checkpoint)
            checkpoints.append(checkpoint)
            cer = SpellerService.validation_cer(current, validation)
            if cer is not None:
                logger.info(f"Speller pass {pass_index}: validation CER {100 * cer:.2f}%")
            return cer

        model, cers = train_speller(model, train, schedule, batch_size, seed, on_pass_end=on_pass_end)
        return SpellerRun(model, steps_per_pass, cers, checkpoints)

    @staticmethod
    def record_passes(run_name, training_data, run, eta_max, workspace=None):
        workspace = ArtifactService.workspace_key(workspace)
        rows = []
        for pass_index, cer in enumerate(run.validation_cers, start=1):
            row, _ = SpellerPass.objects.update_or_create(
                workspace=workspace,
                run_name=run_name,
                pass_index=pass_index,
                defaults={
                    "training_data": training_data,
                    "steps": run.steps_per_pass,
                    "learning_rate_max": eta_max,
                    "validation_cer": cer,
                },
            )
            rows.append(row)
        logger.info(f"Recorded {len(rows)} passes for speller run {run_name}")
        return rows

    @staticmethod
    def load(path):
        path = Path(path)
        if not path.exists():
            logger.error(f"Speller checkpoint not found: {path}")
            raise FileNotFoundError(f"Speller checkpoint not found: {path}")
        return SpellerModel.load(path)

    @staticmethod
    def correct_all(model, hypotheses, n_jobs=1):
        """Corrections keyed like ``hypotheses``."""
        ids = list(hypotheses)
        results = Parallel(n_jobs=n_jobs)(delayed(correct)(model, hypotheses[utt_id]) for utt_id in ids)
        truncated = sum(result.truncated for result in results)
        if truncated:
            logger.warning(f"{truncated} of {len(ids)} corrections were truncated")
        return dict(zip(ids, results))
