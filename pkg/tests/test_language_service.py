import pandas as pd
from django.test import SimpleTestCase

from services.language_service import LanguageService, Lexicon, syllable_name


def toy_lexicon():
    # a and b are homophones (class 0), c has class 1 to itself
    return Lexicon(
        seed=0,
        characters=("a", "b", "c"),
        classes={"a": 0, "b": 0, "c": 1},
        syllables=("ba", "pa"),
        frequencies={"a": 0.5, "b": 0.3, "c": 0.2},
    )


class SyntheticLanguageTest(SimpleTestCase):

    def test_degenerate_sizes_are_rejected(self):
        with self.assertRaises(ValueError):
            LanguageService.synth_lexicon(0, n_chars=10, n_pron_classes=1)
        with self.assertRaises(ValueError):
            LanguageService.synth_lexicon(0, n_chars=4, n_pron_classes=5)
        with self.assertRaises(ValueError):
            LanguageService.synth_language(0, 10, 4, sentence_grammar_order=0, n_sentences=5)
        with self.assertRaises(ValueError):
            LanguageService.synth_language(0, 10, 4, 2, n_sentences=0)

    def test_one_character_per_class(self):
        lexicon = LanguageService.synth_lexicon(0, n_chars=5, n_pron_classes=5)
        self.assertEqual(lexicon.homophone_classes(), [])
        self.assertEqual(sorted(len(lexicon.members(c)) for c in range(5)), [1] * 5)

    def test_homophones_exist(self):
        lexicon = LanguageService.synth_lexicon(3, n_chars=50, n_pron_classes=20)
        self.assertTrue(lexicon.homophone_classes())
        self.assertEqual(len(set(lexicon.classes.values())), 20)
        for char in lexicon.characters:
            self.assertIn(char, lexicon.members(lexicon.class_of(char)))

    def test_members_are_ordered_by_frequency(self):
        lexicon = LanguageService.synth_lexicon(5, n_chars=30, n_pron_classes=4)
        for class_id in range(4):
            freqs = [lexicon.frequencies[c] for c in lexicon.members(class_id)]
            self.assertEqual(freqs, sorted(freqs, reverse=True))

    def test_fixed_seed_is_deterministic(self):
        first = LanguageService.synth_language(11, 40, 12, 2, 50)
        second = LanguageService.synth_language(11, 40, 12, 2, 50)
        self.assertEqual(first, second)
        other = LanguageService.synth_language(12, 40, 12, 2, 50)
        self.assertNotEqual(first[1], other[1])

    def test_sentence_lengths_respect_bounds(self):
        _, sentences = LanguageService.synth_language(1, 30, 8, 3, 200, min_length=2, max_length=5)
        self.assertEqual(len(sentences), 200)
        self.assertTrue(all(2 <= len(s) <= 5 for s in sentences))

    def test_frequencies_follow_zipf_ranks(self):
        lexicon, sentences = LanguageService.synth_language(7, 50, 20, 1, 10_000)
        counts = LanguageService.character_counts(sentences)
        frame = pd.DataFrame({
            "rank": range(len(lexicon.characters)),
            "count": [counts.get(c, 0) for c in lexicon.characters],
        }).rank()
        self.assertGreater(-frame["rank"].corr(frame["count"]), 0.9)

    def test_grammar_context_keeps_zipf_shape(self):
        lexicon, sentences = LanguageService.synth_language(7, 50, 20, 3, 5_000)
        counts = LanguageService.character_counts(sentences)
        frame = pd.DataFrame({
            "rank": range(len(lexicon.characters)),
            "count": [counts.get(c, 0) for c in lexicon.characters],
        }).rank()
        self.assertGreater(-frame["rank"].corr(frame["count"]), 0.7)

    def test_lexicon_round_trips_through_dict(self):
        lexicon = LanguageService.synth_lexicon(2, 12, 5)
        self.assertEqual(Lexicon.from_dict(lexicon.to_dict()), lexicon)

    def test_syllable_names_stay_unique(self):
        names = [syllable_name(i) for i in range(1000)]
        self.assertEqual(len(set(names)), 1000)
        self.assertEqual(syllable_name(0), "ba")


class CharVocabTest(SimpleTestCase):

    def test_full_vocabulary_is_identity(self):
        lexicon, sentences = LanguageService.synth_language(4, 20, 6, 2, 300)
        distinct = len(LanguageService.character_counts(sentences))
        result = LanguageService.build_char_vocab(sentences, lexicon, distinct)
        self.assertAlmostEqual(result.coverage, 1.0)
        for char in LanguageService.character_counts(sentences):
            self.assertEqual(result.fold_map[char], char)

    def test_homophone_folds_onto_kept_member(self):
        lexicon = toy_lexicon()
        sentences = [("a", "a", "c"), ("a", "b", "c"), ("c",)]
        result = LanguageService.build_char_vocab(sentences, lexicon, 2)
        self.assertEqual(result.vocab.tokens, ("a", "c"))
        self.assertEqual(result.fold_map, {"a": "a", "b": "a", "c": "c"})
        self.assertAlmostEqual(result.coverage, 6 / 7)

    def test_class_without_kept_member_falls_back_to_most_frequent(self):
        lexicon = toy_lexicon()
        sentences = [("a", "a", "b"), ("c",)]
        with self.assertLogs("services.language_service", level="WARNING"):
            result = LanguageService.build_char_vocab(sentences, lexicon, 1)
        self.assertEqual(result.fold_map["c"], "a")

    def test_coverage_is_nondecreasing_in_k(self):
        lexicon, sentences = LanguageService.synth_language(9, 40, 10, 2, 500)
        distinct = len(LanguageService.character_counts(sentences))
        coverages = [LanguageService.build_char_vocab(sentences, lexicon, k).coverage for k in range(1, distinct + 1)]
        self.assertEqual(coverages, sorted(coverages))
        self.assertAlmostEqual(coverages[-1], 1.0)

    def test_in_vocabulary_characters_are_fixed_points(self):
        lexicon, sentences = LanguageService.synth_language(9, 40, 10, 2, 500)
        result = LanguageService.build_char_vocab(sentences, lexicon, 15)
        kept = set(result.vocab.tokens) & set(lexicon.characters)
        self.assertEqual(len(kept), 15)
        for char in kept:
            self.assertEqual(result.fold_map[char], char)
        for char, target in result.fold_map.items():
            self.assertIn(target, kept)

    def test_k_out_of_range(self):
        lexicon = toy_lexicon()
        with self.assertRaises(ValueError):
            LanguageService.build_char_vocab([("a",)], lexicon, 2)
        with self.assertRaises(ValueError):
            LanguageService.build_char_vocab([("a",)], lexicon, 0)


class UnitsTest(SimpleTestCase):

    def test_syllables_map_to_most_frequent_member(self):
        lexicon = toy_lexicon()
        self.assertEqual(LanguageService.syllables_to_characters(lexicon, ("pa", "ba")), ("c", "a"))
        with self.assertRaises(ValueError):
            LanguageService.syllables_to_characters(lexicon, ("zz",))

    def test_to_units(self):
        lexicon = toy_lexicon()
        self.assertEqual(LanguageService.to_units(lexicon, ("b", "c")), ("ba", "pa"))
        fold_map = {"a": "a", "b": "a", "c": "c"}
        self.assertEqual(LanguageService.to_units(lexicon, ("b", "c"), fold_map), ("a", "c"))

    def test_decoding_lexicon_skips_characters_without_units(self):
        lexicon = toy_lexicon()
        vocab = LanguageService.build_syllable_vocab(lexicon)
        self.assertEqual(
            LanguageService.decoding_lexicon(lexicon, vocab),
            {"a": ("ba",), "b": ("ba",), "c": ("pa",)},
        )
        char_vocab = LanguageService.build_char_vocab([("a", "c")], lexicon, 1).vocab
        with self.assertLogs("services.language_service", level="WARNING"):
            words = LanguageService.decoding_lexicon(lexicon, char_vocab, {"a": "a", "b": "a", "c": "c"})
        self.assertEqual(set(words), {"a", "b"})
