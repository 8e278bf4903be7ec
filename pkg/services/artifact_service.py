import csv
import json
import logging
import shutil
from pathlib import Path

import pandas as pd
from django.conf import settings

from ml.checkpoint import load_checkpoint, save_checkpoint
from ml.errors import MissingArtifactError

logger = logging.getLogger(__name__)

DEFAULT_WORKSPACE = "default"


class ArtifactService:
    """File layout of a pipeline workspace and the readers/writers for its tables."""

    LEXICON = "lexicon.json"
    TEXT = "text.txt"
    UTTERANCES = "utterances.tsv"
    FEATURES = "features.cspl"
    AM_VOCAB = "am/vocab.txt"
    FOLD_MAP = "am/fold_map.tsv"
    AM_MODEL = "am/model.cspl"
    LOSS_CURVE = "am/loss_curve.csv"
    POSTERIORS = "posteriors"
    GRAPH = "graph/S.fst.txt"
    GRAPH_WORDS = "graph/words.txt"
    GRAPH_UNITS = "graph/units.txt"
    DECODES = "decodes"
    PAIRS = "pairs"
    SPELLER = "speller"
    HYPS = "hyps"
    REPORTS = "reports"

    @staticmethod
    def workspace(path=None):
        root = Path(path) if path else Path(settings.ARTIFACTS_DIR) / DEFAULT_WORKSPACE
        root.mkdir(parents=True, exist_ok=True)
        return root

    @staticmethod
    def workspace_key(workspace=None):
        """Absolute path of a workspace, the key its scored runs and speller passes are stored under."""
        root = Path(workspace) if workspace else Path(settings.ARTIFACTS_DIR) / DEFAULT_WORKSPACE
        return str(root.resolve())

    @staticmethod
    def path(workspace, *parts):
        return Path(workspace).joinpath(*parts)

    @staticmethod
    def clear(workspace, name):
        """Drop a derived artifact (file or directory) so later stages rebuild it."""
        path = ArtifactService.path(workspace, name)
        if path.is_dir():
            shutil.rmtree(path)
            logger.info(f"Cleared stale {path}")
        elif path.exists():
            path.unlink()
            logger.info(f"Cleared stale {path}")

    @staticmethod
    def require(path, stage):
        path = Path(path)
        if not path.exists():
            logger.error(f"Missing {stage} artifact: {path}")
            raise MissingArtifactError(f"{path} not found; run `{stage}` first")
        return path

    @staticmethod
    def write_text_lines(path, lines):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")

    @staticmethod
    def read_text_lines(path):
        return Path(path).read_text(encoding="utf-8").splitlines()

    @staticmethod
    def write_json(path, payload):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")

    @staticmethod
    def read_json(path):
        return json.loads(Path(path).read_text(encoding="utf-8"))

    @staticmethod
    def write_table(path, frame):
        """Tab-separated table with a header row, no quoting."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, sep="\t", index=False, quoting=csv.QUOTE_NONE, lineterminator="\n")

    @staticmethod
    def read_table(path, header="infer", names=None):
        return pd.read_csv(
            path, sep="\t", header=header, names=names, dtype=str,
            keep_default_na=False, quoting=csv.QUOTE_NONE,
        )

    @staticmethod
    def write_jsonl(path, records):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame.from_records(records).to_json(path, orient="records", lines=True, force_ascii=False)

    @staticmethod
    def read_jsonl(path):
        frame = pd.read_json(path, orient="records", lines=True, dtype=False)
        return frame.to_dict(orient="records")

    @staticmethod
    def write_matrices(path, matrices):
        save_checkpoint(path, matrices)

    @staticmethod
    def read_matrices(path):
        return load_checkpoint(path)

    @staticmethod
    def join_tokens(tokens):
        return " ".join(tokens)

    @staticmethod
    def split_tokens(text):
        return tuple(text.split())
