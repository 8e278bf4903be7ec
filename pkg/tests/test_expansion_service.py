import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from ml.errors import MissingArtifactError
from services.expansion_service import ExpansionService, Pair, PairedCorpus, Recipe


def greedy_record(utt_id, reference, hypothesis, thresholds=None):
    return {
        "utt_id": utt_id, "split": "train", "testset": "train",
        "reference": reference, "hypothesis": hypothesis, "thresholds": thresholds or {},
    }


def wfst_record(utt_id, reference, nbest, nbest_size=10):
    return {
        "utt_id": utt_id, "split": "train", "testset": "train", "reference": reference,
        "hypothesis": nbest[0][0] if nbest else "", "nbest_size": nbest_size, "nbest": nbest,
    }


DECODES = {
    "greedy": [
        greedy_record("train-00000", "a b c", "a x c", {
            "threshold(0.5,0.1)": ["a x c", "a b c"],
            "threshold(0.6,0.3)": ["a x c", "a b c", "a y c"],
        }),
        greedy_record("train-00001", "b c", "b c", {
            "threshold(0.5,0.1)": ["b c"],
            "threshold(0.6,0.3)": ["b c", "d c"],
        }),
    ],
    "wfst": [
        wfst_record("train-00000", "a b c", [["a b c", 3.0], ["a x c", 3.5], ["a b", 5.0]]),
        wfst_record("train-00001", "b c", [["b c", 1.0]]),
    ],
}


class ParseTest(SimpleTestCase):

    def test_source_tags_are_canonical(self):
        self.assertEqual(ExpansionService.parse_source(" greedy "), "greedy")
        self.assertEqual(ExpansionService.parse_source("threshold(0.50, 0.1)"), "threshold(0.5,0.1)")
        self.assertEqual(ExpansionService.parse_source("nbest(05)"), "nbest(5)")

    def test_unknown_tags(self):
        for tag in ("beam", "nbest(0)", "threshold(0.1,0.5)", "threshold(1.5,0.1)"):
            with self.assertRaises(ValueError):
                ExpansionService.parse_source(tag)

    def test_recipe_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "d1-3.env"
            path.write_text("# greedy plus two threshold settings\nname=D1-3\n"
                            "sources=greedy;threshold(0.5,0.1);threshold(0.6,0.1)\n")
            recipe = ExpansionService.parse_recipe(path)
            self.assertEqual(recipe.name, "D1-3")
            self.assertEqual(recipe.sources, ("greedy", "threshold(0.5,0.1)", "threshold(0.6,0.1)"))

            unnamed = Path(tmp) / "nbest5.env"
            unnamed.write_text("sources=nbest(5)\n")
            self.assertEqual(ExpansionService.parse_recipe(unnamed), Recipe("nbest5", ("nbest(5)",)))

            empty = Path(tmp) / "empty.env"
            empty.write_text("name=nothing\n")
            with self.assertRaises(ValueError):
                ExpansionService.parse_recipe(empty)
            with self.assertRaises(ValueError):
                ExpansionService.parse_recipe(Path(tmp) / "missing.env")


class ExpandDatasetTest(SimpleTestCase):

    def test_greedy_gives_one_pair_per_utterance(self):
        corpus = ExpansionService.expand_dataset(DECODES, Recipe("D1", ("greedy",)))
        self.assertEqual(len(corpus), len(DECODES["greedy"]))
        self.assertEqual(corpus.pairs[0], Pair(("a", "x", "c"), ("a", "b", "c"), "greedy"))

    def test_nbest_pair_count_bounds(self):
        corpus = ExpansionService.expand_dataset(DECODES, Recipe("N5", ("nbest(5)",)))
        utterances = len(DECODES["wfst"])
        self.assertGreaterEqual(len(corpus), utterances)
        self.assertLessEqual(len(corpus), 5 * utterances)
        self.assertEqual(corpus.tag_counts, {"nbest(5)": 4})

    def test_duplicates_keep_first_source(self):
        corpus = ExpansionService.expand_dataset(DECODES, Recipe("D1-2", ("greedy", "threshold(0.5,0.1)")))
        self.assertEqual(corpus.tag_counts, {"greedy": 2, "threshold(0.5,0.1)": 1})
        self.assertEqual(len({(p.hypothesis, p.reference) for p in corpus}), len(corpus))

    def test_more_sources_never_remove_pairs(self):
        sources = ("greedy", "threshold(0.5,0.1)", "threshold(0.6,0.3)", "nbest(1)", "nbest(3)")
        previous = set()
        for end in range(1, len(sources) + 1):
            corpus = ExpansionService.expand_dataset(DECODES, Recipe("r", sources[:end]))
            current = set(corpus.as_training_pairs())
            self.assertTrue(previous <= current)
            previous = current

    def test_empty_references_are_skipped(self):
        decodes = {"greedy": [greedy_record("train-00000", "", "a"), greedy_record("train-00001", "b", "b")]}
        with self.assertLogs("services.expansion_service", level="WARNING"):
            corpus = ExpansionService.expand_dataset(decodes, Recipe("D1", ("greedy",)))
        self.assertEqual(corpus.as_training_pairs(), [(("b",), ("b",))])

    def test_missing_decode_artifacts(self):
        with self.assertRaises(MissingArtifactError):
            ExpansionService.expand_dataset({"greedy": DECODES["greedy"]}, Recipe("N1", ("nbest(1)",)))
        with self.assertRaises(MissingArtifactError):
            ExpansionService.expand_dataset(DECODES, Recipe("N20", ("nbest(20)",)))
        with self.assertRaises(MissingArtifactError):
            ExpansionService.expand_dataset(DECODES, Recipe("D5", ("threshold(0.5,0.3)",)))
        with self.assertRaises(MissingArtifactError):
            ExpansionService.expand_dataset({}, Recipe("D1", ("greedy",)))


class PairFileTest(SimpleTestCase):

    def test_pairs_file_format(self):
        corpus = PairedCorpus([Pair(("a", "x"), ("a", "b"), "greedy"), Pair((), ("c",), "nbest(2)")])
        with tempfile.TemporaryDirectory() as tmp:
            path = ExpansionService.write_pairs(Path(tmp) / "pairs" / "D1.tsv", corpus)
            self.assertEqual(path.read_text(encoding="utf-8"), "a x\ta b\tgreedy\n\tc\tnbest(2)\n")
            self.assertEqual(ExpansionService.read_pairs(path).pairs, corpus.pairs)

    def test_missing_pairs_file(self):
        with self.assertRaises(MissingArtifactError):
            ExpansionService.read_pairs(Path(tempfile.gettempdir()) / "no-such-pairs.tsv")
