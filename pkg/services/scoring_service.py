import logging
from dataclasses import dataclass, field

import numpy as np

from asr_app.models import ScoredRun
from services.artifact_service import ArtifactService

logger = logging.getLogger(__name__)

MATCH, SUBSTITUTE, INSERT, DELETE = "match", "substitute", "insert", "delete"


@dataclass(frozen=True)
class UtteranceAlignment:
    ops: tuple
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


@dataclass
class AlignmentReport:
    utterances: dict = field(default_factory=dict)
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def cer(self):
        if not self.reference_length:
            return 0.0 if not self.errors else float("inf")
        return self.errors / self.reference_length

    def as_dict(self):
        return {
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "reference_length": self.reference_length,
            "cer": self.cer,
        }


class ScoringService:
    @staticmethod
    def edit_distance_table(reference, hypothesis):
        rows, cols = len(reference) + 1, len(hypothesis) + 1
        table = np.zeros((rows, cols), dtype=np.int64)
        table[:, 0] = np.arange(rows)
        table[0, :] = np.arange(cols)
        for i in range(1, rows):
            for j in range(1, cols):
                diagonal = table[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
                table[i, j] = min(diagonal, table[i - 1, j] + 1, table[i, j - 1] + 1)
        return table

    @staticmethod
    def align(reference, hypothesis):
        """
        Unit-cost Levenshtein alignment. The backtrace takes the diagonal
        whenever it is optimal, then a deletion, then an insertion.
        """
        reference, hypothesis = tuple(reference), tuple(hypothesis)
        table = ScoringService.edit_distance_table(reference, hypothesis)
        i, j = len(reference), len(hypothesis)
        ops = []
        while i or j:
            if i and j:
                same = reference[i - 1] == hypothesis[j - 1]
                if table[i, j] == table[i - 1, j - 1] + (not same):
                    ops.append((MATCH if same else SUBSTITUTE, reference[i - 1], hypothesis[j - 1]))
                    i, j = i - 1, j - 1
                    continue
            if i and table[i, j] == table[i - 1, j] + 1:
                ops.append((DELETE, reference[i - 1], None))
                i -= 1
            else:
                ops.append((INSERT, None, hypothesis[j - 1]))
                j -= 1
        ops.reverse()
        kinds = [op for op, _, _ in ops]
        return UtteranceAlignment(
            ops=tuple(ops),
            substitutions=kinds.count(SUBSTITUTE),
            deletions=kinds.count(DELETE),
            insertions=kinds.count(INSERT),
            reference_length=len(reference),
        )

    @staticmethod
    def score(references, hypotheses):
        """Corpus alignment report; both mappings are keyed by utterance id."""
        missing = set(references) ^ set(hypotheses)
        if missing:
            logger.error(f"Reference and hypothesis ids differ: {sorted(missing)[:5]}")
            raise ValueError(f"{len(missing)} utterance ids are not in both references and hypotheses")
        report = AlignmentReport()
        for utt_id in references:
            alignment = ScoringService.align(references[utt_id], hypotheses[utt_id])
            report.utterances[utt_id] = alignment
            report.substitutions += alignment.substitutions
            report.deletions += alignment.deletions
            report.insertions += alignment.insertions
            report.reference_length += alignment.reference_length
        return report

    @staticmethod
    def record_run(system_name, testset, report, workspace=None):
        run, _ = ScoredRun.objects.update_or_create(
            workspace=ArtifactService.workspace_key(workspace),
            system_name=system_name,
            testset=testset,
            defaults={
                "substitutions": report.substitutions,
                "deletions": report.deletions,
                "insertions": report.insertions,
                "reference_length": report.reference_length,
                "cer": report.cer,
            },
        )
        logger.info(f"Scored {system_name} on {testset}: CER {100 * report.cer:.2f}%")
        return run
