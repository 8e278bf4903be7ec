import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ml.errors import ShapeError
from ml.sgdr import SgdrSchedule
from ml.transformer import (
    BOS_ID,
    PAD_ID,
    SPECIALS,
    UNK_ID,
    SpellerModel,
    SpellerVocab,
    TransformerConfig,
    batch_loss,
    correct,
    forward,
    parameter_count,
    train_speller,
)

PAIRS = [
    (("ni", "hao"), ("ni", "hao")),
    (("ma", "ma"), ("ma",)),
    (("hao",), ("hao", "ma")),
    (("ni", "ma", "hao"), ("ni", "hao")),
    (("ma", "ni"), ("ma", "ni")),
    (("hao", "hao"), ("hao",)),
]


def tiny_config(max_len=16, dropout=0.0):
    return TransformerConfig(num_layers=1, d_model=16, d_ff=32, num_heads=2, dropout=dropout, max_len=max_len)


def tiny_model(seed=0, **kwargs):
    return SpellerModel.initialize(tiny_config(**kwargs), SpellerVocab.from_pairs(PAIRS), seed=seed)


class TransformerConfigTest(SimpleTestCase):

    def test_presets(self):
        self.assertEqual(TransformerConfig.preset("desk"), TransformerConfig(2, 64, 256, 4))
        small = TransformerConfig.preset("small")
        self.assertEqual((small.num_layers, small.d_model, small.d_ff, small.num_heads), (3, 512, 2048, 4))
        self.assertEqual(small.d_k, 128)
        big = TransformerConfig.preset("big")
        self.assertEqual((big.num_layers, big.num_heads, big.d_k, big.d_v), (6, 8, 64, 64))
        with self.assertRaises(ValueError):
            TransformerConfig.preset("huge")

    def test_invalid_configs(self):
        with self.assertRaises(ValueError):
            TransformerConfig(d_model=30, num_heads=4)
        with self.assertRaises(ValueError):
            TransformerConfig(num_layers=0)
        with self.assertRaises(ValueError):
            TransformerConfig(dropout=1.0)

    def test_parameter_count_matches_initialized_model(self):
        vocab = SpellerVocab.from_pairs(PAIRS)
        for config in (tiny_config(), TransformerConfig.desk()):
            model = SpellerModel.initialize(config, vocab)
            self.assertEqual(model.num_parameters(), parameter_count(config, vocab.size))

    def test_parameter_count_formula_at_published_scale(self):
        small, big = TransformerConfig.small(), TransformerConfig.big()
        self.assertLess(parameter_count(small, 6000), parameter_count(big, 6000))
        self.assertEqual(
            parameter_count(small, 0),
            3 * (4 * (512 * 512 + 512) + 2 * 512 * 2048 + 2048 + 512 + 4 * 512)
            + 3 * (8 * (512 * 512 + 512) + 2 * 512 * 2048 + 2048 + 512 + 6 * 512),
        )


class SpellerVocabTest(SimpleTestCase):

    def test_specials_first_and_unknowns(self):
        vocab = SpellerVocab(["b", "a", "a"])
        self.assertEqual(vocab.symbols, SPECIALS + ("a", "b"))
        self.assertEqual(vocab.encode(["a", "zz"]), [4, UNK_ID])

    def test_file_must_be_canonical(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "vocab.txt"
            path.write_text("a\nb\n")
            with self.assertRaises(ValueError):
                SpellerVocab.read(path)
            SpellerVocab(["x"]).write(path)
            self.assertEqual(SpellerVocab.read(path).symbols, SPECIALS + ("x",))


class ForwardTest(SimpleTestCase):

    def test_decoder_is_causal(self):
        model = tiny_model()
        src = model.vocab.encode(["ni", "hao"]) + [2]
        memory = model.encode(src)
        first = model.decode([BOS_ID, 4, 5, 6], memory, src).data
        second = model.decode([BOS_ID, 4, 6, 5], memory, src).data
        np.testing.assert_allclose(first[:2], second[:2], atol=1e-12)
        self.assertFalse(np.allclose(first[2:], second[2:]))

    def test_distributions_and_loss(self):
        model = tiny_model()
        result = forward(model, ("ni", "hao"), ("ni", "hao"))
        self.assertEqual(result.probs.shape, (3, model.vocab.size))
        np.testing.assert_allclose(result.probs.sum(axis=1), 1.0, atol=1e-12)
        self.assertGreater(result.loss.item(), 0.0)

    def test_overlong_sequences(self):
        model = tiny_model(max_len=4)
        with self.assertRaises(ValueError):
            forward(model, ("ni",) * 4, ("ni",))
        with self.assertRaises(ShapeError):
            model.encode([4] * 5)

    def test_batch_loss_is_the_token_weighted_mean(self):
        model = tiny_model()
        first, second = PAIRS[0], PAIRS[1]
        loss_a = forward(model, *first).loss.item()
        loss_b = forward(model, *second).loss.item()
        na, nb = len(first[1]) + 1, len(second[1]) + 1
        combined = batch_loss(model, [first, second]).item()
        self.assertAlmostEqual(combined, (na * loss_a + nb * loss_b) / (na + nb), places=10)
        self.assertAlmostEqual(batch_loss(model, [first]).item(), loss_a, places=12)

    def test_padding_id_is_zero(self):
        self.assertEqual(PAD_ID, 0)


class CorrectTest(SimpleTestCase):

    def test_greedy_output_is_deterministic_and_clean(self):
        model = tiny_model(seed=3)
        first = correct(model, ["ni", "hao", "ma"])
        self.assertEqual(first, correct(model, ["ni", "hao", "ma"]))
        for token in first.tokens:
            self.assertNotIn(token, ("<pad>", "<s>", "<unk>"))

    def test_truncation_is_reported(self):
        model = tiny_model(max_len=4)
        result = correct(model, ["ni"] * 10)
        self.assertTrue(result.truncated)
        self.assertLessEqual(len(result.tokens), 3)

    def test_save_and_load(self):
        model = tiny_model(seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run" / "pass1.cspl"
            path.parent.mkdir()
            model.save(path)
            loaded = SpellerModel.load(path)
            (path.parent / "vocab.txt").unlink()
            with self.assertRaises(FileNotFoundError):
                SpellerModel.load(path)
        self.assertEqual(loaded.config, model.config)
        self.assertEqual(correct(loaded, ["ma", "ni"]), correct(model, ["ma", "ni"]))


class TrainSpellerTest(SimpleTestCase):

    def test_training_lowers_the_loss_and_reports_every_pass(self):
        model = tiny_model(seed=1, dropout=0.1)
        before = batch_loss(model, PAIRS).item()
        schedule = SgdrSchedule(passes=3, steps_per_pass=20, eta_max=0.1)
        model, results = train_speller(model, PAIRS, schedule, batch_size=3, seed=0, on_pass_end=lambda k, m: k)
        self.assertEqual(results, [1, 2, 3])
        self.assertLess(batch_loss(model, PAIRS).item(), before)

    def test_same_seed_same_model(self):
        schedule = SgdrSchedule(passes=1, steps_per_pass=3, eta_max=0.1)
        first, _ = train_speller(tiny_model(dropout=0.1), PAIRS, schedule, batch_size=2, seed=5)
        second, _ = train_speller(tiny_model(dropout=0.1), PAIRS, schedule, batch_size=2, seed=5)
        for name in first.params:
            np.testing.assert_array_equal(first.params[name].data, second.params[name].data)

    def test_rejects_empty_or_overlong_data(self):
        schedule = SgdrSchedule(passes=1, steps_per_pass=1, eta_max=0.1)
        with self.assertRaises(ValueError):
            train_speller(tiny_model(), [], schedule, batch_size=2, seed=0)
        with self.assertRaises(ValueError):
            train_speller(tiny_model(max_len=2), [(("ni", "hao"), ("ni", "hao"))], schedule, batch_size=2, seed=0)
        with self.assertRaises(ValueError):
            train_speller(tiny_model(), PAIRS, schedule, batch_size=0, seed=0)
