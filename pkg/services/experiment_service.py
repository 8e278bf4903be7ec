"""
Workspace-level pipeline stages. Each stage reads the artifacts of the
previous ones from a workspace directory and writes its own; the management
commands are thin wrappers around them and ``run`` chains them all.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import pandas as pd

from ml.ctc import read_vocab, write_vocab
from ml.dfsmn import DfsmnModel
from ml.fst import write_fst
from ml.transformer import TransformerConfig
from services.acoustic_model_service import AcousticModelService
from services.artifact_service import ArtifactService
from services.decoding_service import DecodingService
from services.expansion_service import ExpansionService, Recipe
from services.feature_service import FeatureService, Utterance
from services.language_service import LanguageService, Lexicon
from services.report_service import ReportService
from services.scoring_service import ScoringService
from services.speller_service import SpellerService

logger = logging.getLogger(__name__)

MODES = ("greedy", "wfst")
UNITS = ("char", "syllable")
HYP_COLUMNS = ["utt_id", "testset", "hypothesis"]
PASS_FILE = re.compile(r"^pass(\d+)\.cspl$")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1234
    n_chars: int = 60
    n_pron_classes: int = 24
    grammar_order: int = 3
    n_sentences: int = 5000
    test_size: int = 200
    units: str = "char"
    vocab_size: int = 50
    am_epochs: int = 8
    am_learning_rate: float = 0.02
    lm_order: int = 3
    lm_discount: float = 0.5
    beam: int = 16
    acoustic_scale: float = 1.0
    nbest_size: int = 10
    max_paths: int = 16
    speller_preset: str = "desk"
    speller_passes: int = 4
    speller_batch_size: int = 16
    speller_eta_max: float = 0.1
    recipes: tuple = (
        ("d1", "greedy"),
        ("d1-3", "greedy;threshold(0.5,0.1);threshold(0.6,0.1)"),
        ("nbest1", "nbest(1)"),
        ("nbest5", "nbest(5)"),
    )
    corrections: tuple = (
        ("greedy", "d1"),
        ("greedy", "d1-3"),
        ("wfst", "nbest1"),
        ("wfst", "nbest5"),
    )
    baseline: str = "greedy"
    n_jobs: int = 1


class ExperimentResult(NamedTuple):
    table: pd.DataFrame
    reports: dict


class ExperimentService:
    @staticmethod
    def load_lexicon(workspace):
        path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.LEXICON), "synth")
        return Lexicon.from_dict(ArtifactService.read_json(path))

    @staticmethod
    def load_utterances(workspace):
        path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.UTTERANCES), "synth")
        frame = ArtifactService.read_table(path)
        return {
            row.utt_id: Utterance(row.utt_id, tuple(row.reference), row.split, row.testset, float(row.noise))
            for row in frame.itertuples(index=False)
        }

    @staticmethod
    def load_features(workspace):
        path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.FEATURES), "synth")
        return ArtifactService.read_matrices(path)

    @staticmethod
    def load_fold_map(workspace):
        """None for a syllable acoustic model."""
        path = ArtifactService.path(workspace, ArtifactService.FOLD_MAP)
        if not path.exists():
            return None
        frame = ArtifactService.read_table(path)
        return dict(zip(frame["character"], frame["unit"]))

    @staticmethod
    def load_acoustic_model(workspace):
        vocab_path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.AM_VOCAB), "train_am")
        model_path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.AM_MODEL), "train_am")
        return read_vocab(vocab_path), ExperimentService.load_fold_map(workspace), DfsmnModel.load(model_path)

    @staticmethod
    def synth(workspace, seed, n_chars, n_pron_classes, grammar_order, n_sentences, test_size, testsets=None):
        lexicon, sentences = LanguageService.synth_language(seed, n_chars, n_pron_classes, grammar_order, n_sentences)
        utterances = FeatureService.split_corpus(sentences, seed, test_size, testsets)
        features = FeatureService.synth_corpus_features(lexicon, utterances, seed)

        ArtifactService.write_json(ArtifactService.path(workspace, ArtifactService.LEXICON), lexicon.to_dict())
        ArtifactService.write_text_lines(
            ArtifactService.path(workspace, ArtifactService.TEXT), ("".join(s) for s in sentences),
        )
        ArtifactService.write_table(
            ArtifactService.path(workspace, ArtifactService.UTTERANCES),
            pd.DataFrame(
                [(u.utt_id, "".join(u.reference), u.split, u.testset, u.noise) for u in utterances],
                columns=["utt_id", "reference", "split", "testset", "noise"],
            ),
        )
        ArtifactService.write_matrices(ArtifactService.path(workspace, ArtifactService.FEATURES), features)
        ArtifactService.clear(workspace, ArtifactService.POSTERIORS)
        logger.info(f"Synthesized {len(utterances)} utterances in {workspace}")
        return lexicon, utterances

    @staticmethod
    def train_am(workspace, seed, units="char", vocab_size=None, epochs=8, learning_rate=0.02):
        if units not in UNITS:
            raise ValueError(f"units must be one of {UNITS}, got {units!r}")
        lexicon = ExperimentService.load_lexicon(workspace)
        utterances = ExperimentService.load_utterances(workspace)
        features = ExperimentService.load_features(workspace)
        train = [u for u in utterances.values() if u.split == "train"]
        fold_path = ArtifactService.path(workspace, ArtifactService.FOLD_MAP)

        if units == "char":
            references = [u.reference for u in train]
            k = vocab_size or len(LanguageService.character_counts(references))
            vocab, fold_map, _ = LanguageService.build_char_vocab(references, lexicon, k)
            ArtifactService.write_table(
                fold_path, pd.DataFrame(sorted(fold_map.items()), columns=["character", "unit"]),
            )
        else:
            vocab, fold_map = LanguageService.build_syllable_vocab(lexicon), None
            fold_path.unlink(missing_ok=True)
        write_vocab(ArtifactService.path(workspace, ArtifactService.AM_VOCAB), vocab)

        corpus = AcousticModelService.build_corpus(train, features, lexicon, vocab, fold_map)
        model, losses = AcousticModelService.train(corpus, vocab, epochs, learning_rate, seed)
        model.save(ArtifactService.path(workspace, ArtifactService.AM_MODEL))
        ArtifactService.clear(workspace, ArtifactService.POSTERIORS)
        AcousticModelService.save_loss_curve(ArtifactService.path(workspace, ArtifactService.LOSS_CURVE), losses)
        return model, losses

    @staticmethod
    def posteriors(workspace, model, vocab, utterances, n_jobs=1):
        """Posteriors of every utterance, computed once and cached in the workspace."""
        directory = ArtifactService.path(workspace, ArtifactService.POSTERIORS)
        if all((directory / f"{utt_id}.pstm").exists() for utt_id in utterances):
            return AcousticModelService.read_posteriors(directory, vocab, list(utterances))
        features = ExperimentService.load_features(workspace)
        stacked = {utt_id: FeatureService.stack_frames(features[utt_id]) for utt_id in utterances}
        posteriors = AcousticModelService.compute_posteriors(model, vocab, stacked, n_jobs)
        AcousticModelService.write_posteriors(directory, posteriors)
        return posteriors

    @staticmethod
    def decode(workspace, mode, beam=16, acoustic_scale=1.0, nbest_size=10, max_paths=16,
               lm_order=3, lm_discount=0.5, n_jobs=1):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        lexicon = ExperimentService.load_lexicon(workspace)
        utterances = ExperimentService.load_utterances(workspace)
        vocab, fold_map, model = ExperimentService.load_acoustic_model(workspace)
        posteriors = ExperimentService.posteriors(workspace, model, vocab, utterances, n_jobs)

        if mode == "greedy":
            decoded = DecodingService.greedy_decode(
                posteriors, lexicon, syllable_units=fold_map is None, max_paths=max_paths, n_jobs=n_jobs,
            )
            records = DecodingService.greedy_records(decoded, utterances)
        else:
            sentences = [u.reference for u in utterances.values() if u.split == "train"]
            graph = DecodingService.build_graph(lexicon, vocab, sentences, fold_map, lm_order, lm_discount)
            write_fst(ArtifactService.path(workspace, ArtifactService.GRAPH), graph.graph)
            graph.words.write(ArtifactService.path(workspace, ArtifactService.GRAPH_WORDS))
            graph.units.write(ArtifactService.path(workspace, ArtifactService.GRAPH_UNITS))
            decoded = DecodingService.wfst_decode(
                posteriors, graph.graph, vocab, beam, acoustic_scale, nbest_size, n_jobs,
            )
            records = DecodingService.wfst_records(decoded, utterances, nbest_size)

        ArtifactService.write_jsonl(ArtifactService.path(workspace, ArtifactService.DECODES, f"{mode}.jsonl"), records)
        hypotheses = {r["utt_id"]: ArtifactService.split_tokens(r["hypothesis"]) for r in records if r["split"] == "test"}
        ExperimentService.write_hypotheses(workspace, mode, hypotheses, utterances)
        return records

    @staticmethod
    def load_decodes(workspace, split="train"):
        decodes = {}
        for mode in MODES:
            path = ArtifactService.path(workspace, ArtifactService.DECODES, f"{mode}.jsonl")
            if path.exists():
                decodes[mode] = [r for r in ArtifactService.read_jsonl(path) if r["split"] == split]
        if not decodes:
            logger.error(f"No decode artifacts in {workspace}")
        return decodes

    @staticmethod
    def expand(workspace, recipe):
        corpus = ExpansionService.expand_dataset(ExperimentService.load_decodes(workspace), recipe)
        ExpansionService.write_pairs(ArtifactService.path(workspace, ArtifactService.PAIRS, f"{recipe.name}.tsv"), corpus)
        return corpus

    @staticmethod
    def train_speller(workspace, pairs_name, run_name=None, seed=0, passes=4, steps_per_pass=None,
                      batch_size=16, eta_max=0.1, preset="desk"):
        run_name = run_name or pairs_name
        corpus = ExpansionService.read_pairs(ArtifactService.path(workspace, ArtifactService.PAIRS, f"{pairs_name}.tsv"))
        run = SpellerService.train(
            corpus.as_training_pairs(),
            ArtifactService.path(workspace, ArtifactService.SPELLER, run_name),
            seed=seed, passes=passes, steps_per_pass=steps_per_pass, batch_size=batch_size,
            eta_max=eta_max, config=TransformerConfig.preset(preset),
        )
        SpellerService.record_passes(run_name, pairs_name, run, eta_max, workspace)
        return run

    @staticmethod
    def latest_checkpoint(workspace, run_name):
        directory = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.SPELLER, run_name), "train_speller")
        passes = [(int(m.group(1)), path) for path in directory.iterdir() if (m := PASS_FILE.match(path.name))]
        if not passes:
            raise FileNotFoundError(f"no pass checkpoints in {directory}")
        return max(passes)[1]

    @staticmethod
    def write_hypotheses(workspace, system, hypotheses, utterances):
        ArtifactService.write_table(
            ArtifactService.path(workspace, ArtifactService.HYPS, f"{system}.tsv"),
            pd.DataFrame(
                [(utt_id, utterances[utt_id].testset, " ".join(tokens)) for utt_id, tokens in hypotheses.items()],
                columns=HYP_COLUMNS,
            ),
        )

    @staticmethod
    def read_hypotheses(workspace, system):
        path = ArtifactService.require(ArtifactService.path(workspace, ArtifactService.HYPS, f"{system}.tsv"), "decode")
        frame = ArtifactService.read_table(path)
        return {row.utt_id: ArtifactService.split_tokens(row.hypothesis) for row in frame.itertuples(index=False)}

    @staticmethod
    def correct(workspace, run_name, source_system, checkpoint=None, system_name=None, n_jobs=1):
        checkpoint = Path(checkpoint) if checkpoint else ExperimentService.latest_checkpoint(workspace, run_name)
        utterances = ExperimentService.load_utterances(workspace)
        hypotheses = ExperimentService.read_hypotheses(workspace, source_system)
        model = SpellerService.load(checkpoint)
        corrections = SpellerService.correct_all(model, hypotheses, n_jobs)
        system = system_name or f"{source_system}+{run_name}"
        ExperimentService.write_hypotheses(
            workspace, system, {utt_id: c.tokens for utt_id, c in corrections.items()}, utterances,
        )
        return system, corrections

    @staticmethod
    def systems(workspace):
        directory = ArtifactService.path(workspace, ArtifactService.HYPS)
        return sorted(path.stem for path in directory.glob("*.tsv")) if directory.exists() else []

    @staticmethod
    def score(workspace, systems=None):
        """Score every system on every test set and store the results."""
        utterances = ExperimentService.load_utterances(workspace)
        systems = systems or ExperimentService.systems(workspace)
        if not systems:
            raise ValueError(f"no hypotheses to score in {workspace}")
        reports = {}
        for system in systems:
            hypotheses = ExperimentService.read_hypotheses(workspace, system)
            by_testset = {}
            for utt_id in hypotheses:
                by_testset.setdefault(utterances[utt_id].testset, []).append(utt_id)
            for testset, ids in sorted(by_testset.items()):
                report = ScoringService.score(
                    {utt_id: utterances[utt_id].reference for utt_id in ids},
                    {utt_id: hypotheses[utt_id] for utt_id in ids},
                )
                ScoringService.record_run(system, testset, report, workspace)
                reports[(system, testset)] = report
        return reports

    @staticmethod
    def report(workspace, baseline=None, examples_system=None):
        examples = None
        if examples_system and "+" in examples_system:
            utterances = ExperimentService.load_utterances(workspace)
            corrected = ExperimentService.read_hypotheses(workspace, examples_system)
            decoded = ExperimentService.read_hypotheses(workspace, examples_system.split("+", 1)[0])
            examples = ReportService.examples_table(
                {utt_id: utterances[utt_id].reference for utt_id in corrected}, decoded, corrected,
            )
        return ReportService.write_reports(
            ArtifactService.path(workspace, ArtifactService.REPORTS),
            ReportService.fetch_runs(workspace), baseline, ReportService.fetch_passes(workspace), examples,
        )

    @staticmethod
    def run(config, workspace):
        """Every stage end to end; returns the comparison table and the per-(system, test set) reports."""
        workspace = ArtifactService.workspace(workspace)
        ExperimentService.synth(
            workspace, config.seed, config.n_chars, config.n_pron_classes,
            config.grammar_order, config.n_sentences, config.test_size,
        )
        ExperimentService.train_am(
            workspace, config.seed, config.units, config.vocab_size, config.am_epochs, config.am_learning_rate,
        )
        for mode in MODES:
            ExperimentService.decode(
                workspace, mode, config.beam, config.acoustic_scale, config.nbest_size,
                config.max_paths, config.lm_order, config.lm_discount, config.n_jobs,
            )
        for name, sources in config.recipes:
            recipe = Recipe(name, tuple(ExpansionService.parse_source(tag) for tag in sources.split(";")))
            ExperimentService.expand(workspace, recipe)
            ExperimentService.train_speller(
                workspace, name, seed=config.seed, passes=config.speller_passes,
                batch_size=config.speller_batch_size, eta_max=config.speller_eta_max,
                preset=config.speller_preset,
            )
        corrected = [
            ExperimentService.correct(workspace, run_name, source, n_jobs=config.n_jobs)[0]
            for source, run_name in config.corrections
        ]
        reports = ExperimentService.score(workspace, list(MODES) + corrected)
        table = ExperimentService.report(workspace, config.baseline, corrected[-1] if corrected else None)
        return ExperimentResult(table, reports)
