import csv
import logging
import re
from collections import Counter
from pathlib import Path
from typing import NamedTuple

import pandas as pd
from dotenv import dotenv_values

from ml.ctc import ThresholdConfig
from ml.errors import MissingArtifactError
from services.artifact_service import ArtifactService

logger = logging.getLogger(__name__)

GREEDY = "greedy"
THRESHOLD_PATTERN = re.compile(r"^threshold\(\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\)$")
NBEST_PATTERN = re.compile(r"^nbest\(\s*([0-9]+)\s*\)$")
PAIR_COLUMNS = ["hypothesis", "reference", "tag"]


class Recipe(NamedTuple):
    name: str
    sources: tuple


class Pair(NamedTuple):
    hypothesis: tuple
    reference: tuple
    tag: str


class PairedCorpus:
    def __init__(self, pairs=()):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def tag_counts(self):
        return Counter(pair.tag for pair in self.pairs)

    def as_training_pairs(self):
        return [(pair.hypothesis, pair.reference) for pair in self.pairs]


class ExpansionService:
    @staticmethod
    def parse_source(tag):
        """Canonical form of a source tag: ``greedy``, ``threshold(u,l)`` or ``nbest(k)``."""
        tag = tag.strip()
        if tag == GREEDY:
            return GREEDY
        match = THRESHOLD_PATTERN.match(tag)
        if match:
            return ThresholdConfig(float(match.group(1)), float(match.group(2))).tag
        match = NBEST_PATTERN.match(tag)
        if match and int(match.group(1)) >= 1:
            return f"nbest({int(match.group(1))})"
        logger.error(f"Unknown source tag {tag!r}")
        raise ValueError(f"unknown source tag {tag!r}; expected greedy, threshold(u,l) or nbest(k)")

    @staticmethod
    def parse_recipe(path):
        path = Path(path)
        if not path.exists():
            logger.error(f"Recipe not found: {path}")
            raise ValueError(f"recipe file {path} does not exist")
        values = dotenv_values(path)
        sources = [part for part in (values.get("sources") or "").split(";") if part.strip()]
        if not sources:
            raise ValueError(f"recipe {path} lists no sources")
        return Recipe(
            name=values.get("name") or path.stem,
            sources=tuple(ExpansionService.parse_source(tag) for tag in sources),
        )

    @staticmethod
    def _source_pairs(tag, decodes):
        if tag == GREEDY or tag.startswith("threshold("):
            records = decodes.get("greedy")
            if records is None:
                raise MissingArtifactError(f"{tag} needs greedy decode artifacts")
            for record in records:
                if tag == GREEDY:
                    yield record["reference"], [record["hypothesis"]]
                    continue
                thresholds = record.get("thresholds") or {}
                if tag not in thresholds:
                    raise MissingArtifactError(f"{tag} was not decoded for {record['utt_id']}")
                yield record["reference"], thresholds[tag]
            return
        k = int(NBEST_PATTERN.match(tag).group(1))
        records = decodes.get("wfst")
        if records is None:
            raise MissingArtifactError(f"{tag} needs wfst decode artifacts")
        for record in records:
            if int(record["nbest_size"]) < k:
                raise MissingArtifactError(f"{tag} needs n-best lists of at least {k}, have {record['nbest_size']}")
            yield record["reference"], [hypothesis for hypothesis, _ in record["nbest"][:k]]

    @staticmethod
    def expand_dataset(decodes, recipe):
        """
        Union of the pairs every recipe source contributes, first occurrence of
        a (hypothesis, reference) pair kept. ``decodes`` maps a decode mode
        (``greedy``/``wfst``) to its JSON-lines records.
        """
        seen = set()
        pairs = []
        skipped = 0
        for tag in recipe.sources:
            try:
                for reference, hypotheses in ExpansionService._source_pairs(tag, decodes):
                    reference = ArtifactService.split_tokens(reference)
                    if not reference:
                        skipped += 1
                        continue
                    for hypothesis in hypotheses:
                        key = (ArtifactService.split_tokens(hypothesis), reference)
                        if key not in seen:
                            seen.add(key)
                            pairs.append(Pair(key[0], reference, tag))
            except MissingArtifactError as exc:
                logger.error(f"Recipe {recipe.name}: {exc}")
                raise
        corpus = PairedCorpus(pairs)
        if skipped:
            logger.warning(f"Skipped {skipped} records with empty references")
        for tag, count in corpus.tag_counts.items():
            logger.info(f"Recipe {recipe.name}: {count} pairs from {tag}")
        return corpus

    @staticmethod
    def write_pairs(path, corpus):
        frame = pd.DataFrame(
            [(" ".join(p.hypothesis), " ".join(p.reference), p.tag) for p in corpus],
            columns=PAIR_COLUMNS,
        )
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep="\t", header=False, index=False, quoting=csv.QUOTE_NONE, lineterminator="\n")
        return path

    @staticmethod
    def read_pairs(path):
        path = ArtifactService.require(path, "expand")
        frame = ArtifactService.read_table(path, header=None, names=PAIR_COLUMNS)
        return PairedCorpus(
            Pair(ArtifactService.split_tokens(row.hypothesis), ArtifactService.split_tokens(row.reference), row.tag)
            for row in frame.itertuples(index=False)
        )
