import itertools
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from ml import numerics as nx
from ml.ctc import (
    PosteriorMatrix,
    ThresholdConfig,
    Vocab,
    collapse,
    ctc_forward_backward,
    ctc_loss,
    ctc_loss_gradient,
    ctc_loss_op,
    enumerate_paths,
    greedy_search,
    read_posteriors,
    read_vocab,
    required_frames,
    threshold_expand,
    write_posteriors,
    write_vocab,
)
from ml.errors import InfeasibleTargetError, InstanceTooLargeError, ShapeError
from tests.helpers import numeric_gradient, posteriors_from_rows, random_posteriors, tape_gradient

A, B, BLANK = 0, 1, 2


class VocabTest(SimpleTestCase):

    def test_blank_is_last_and_not_a_token(self):
        vocab = Vocab.from_tokens(["a", "b"])
        self.assertEqual(vocab.blank_id, 2)
        self.assertEqual(vocab.tokens, ("a", "b"))
        self.assertNotIn("<b>", vocab)
        with self.assertRaises(ValueError):
            vocab.id("<b>")
        with self.assertRaises(ValueError):
            vocab.id("z")

    def test_duplicate_tokens_rejected(self):
        with self.assertRaises(ValueError):
            Vocab.from_tokens(["a", "a"])

    def test_posterior_rows_must_be_distributions(self):
        vocab = Vocab.from_tokens(["a"])
        with self.assertRaises(ValueError):
            PosteriorMatrix(np.array([[0.7, 0.7]]), vocab)
        with self.assertRaises(ShapeError):
            PosteriorMatrix(np.array([[0.2, 0.3, 0.5]]), vocab)


class CollapseTest(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(collapse([A, BLANK, A, B, BLANK, B], BLANK), (A, A, B))
        self.assertEqual(collapse([BLANK, BLANK, BLANK], BLANK), ())
        self.assertEqual(collapse([A, A, BLANK, A], BLANK), (A, A))

    def test_required_frames_counts_repeats(self):
        self.assertEqual(required_frames((A, A, B)), 4)
        self.assertEqual(required_frames(()), 0)

    @given(st.lists(st.integers(min_value=0, max_value=3), max_size=20))
    def test_idempotent_on_collapsed_blank_free_sequences(self, labels):
        once = collapse(labels, 4)
        self.assertEqual(collapse(once, 4), once)


class CtcLossTest(SimpleTestCase):

    def test_single_frame(self):
        post = posteriors_from_rows(["a"], [[0.6, 0.4]])
        self.assertAlmostEqual(ctc_loss(post, ["a"]), -math.log(0.6), places=12)

    def test_two_uniform_frames(self):
        post = posteriors_from_rows(["a"], [[0.5, 0.5], [0.5, 0.5]])
        self.assertAlmostEqual(ctc_loss(post, ["a"]), -math.log(0.75), places=12)

    def test_empty_target_is_the_all_blank_path(self):
        post = posteriors_from_rows(["a", "b"], [[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
        self.assertAlmostEqual(enumerate_paths(post, []), 0.4, places=12)
        self.assertAlmostEqual(math.exp(-ctc_loss(post, [])), 0.4, places=12)

    def test_matches_path_enumeration(self):
        for seed in range(10):
            post = random_posteriors(["a", "b", "c"], frames=6, seed=seed)
            rng = np.random.default_rng(100 + seed)
            target = [str(t) for t in rng.choice(["a", "b", "c"], size=rng.integers(0, 4))]
            if len(target) > 1 and required_frames(post.vocab.encode(target)) > 6:
                continue
            self.assertAlmostEqual(math.exp(-ctc_loss(post, target)), enumerate_paths(post, target), delta=1e-9)

    def test_empty_target_at_every_length(self):
        for frames in range(1, 7):
            post = random_posteriors(["a", "b"], frames=frames, seed=frames)
            self.assertAlmostEqual(math.exp(-ctc_loss(post, [])), enumerate_paths(post, []), delta=1e-9)
            self.assertAlmostEqual(math.exp(-ctc_loss(post, [])), float(np.prod(post.probs[:, 2])), delta=1e-12)

    def test_empty_target_gradient_touches_only_blank(self):
        post = random_posteriors(["a", "b"], frames=3, seed=4)
        grad = ctc_loss_gradient(post, [])
        np.testing.assert_allclose(grad[:, :2], 0.0)
        np.testing.assert_allclose(grad[:, 2], -1.0 / post.probs[:, 2])

    def test_infeasible_target(self):
        post = random_posteriors(["a", "b"], frames=2)
        with self.assertRaises(InfeasibleTargetError):
            ctc_loss(post, ["a", "a"])
        self.assertEqual(enumerate_paths(post, ["a", "a"]), 0.0)

    def test_total_probability_is_one(self):
        post = random_posteriors(["a", "b"], frames=4, seed=3)
        total = sum(
            enumerate_paths(post, list(target))
            for length in range(5)
            for target in itertools.product(["a", "b"], repeat=length)
        )
        self.assertAlmostEqual(total, 1.0, places=12)

    def test_enumeration_guard(self):
        with self.assertRaises(InstanceTooLargeError):
            enumerate_paths(random_posteriors(["a"], frames=9), ["a"])
        with self.assertRaises(InstanceTooLargeError):
            enumerate_paths(random_posteriors(["a", "b", "c", "d", "e"], frames=3), ["a"])

    def test_gradient_matches_finite_differences(self):
        post = random_posteriors(["a", "b", "c"], frames=5, seed=11)
        target = ["a", "c", "c"]
        ids = post.vocab.encode(target)

        def loss(probs):
            return -ctc_forward_backward(np.log(probs), ids, post.vocab.blank_id)[0]

        np.testing.assert_allclose(
            ctc_loss_gradient(post, target), numeric_gradient(loss, post.probs), rtol=1e-4, atol=1e-7,
        )

    def test_tape_op_through_log_softmax(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(6, 3))
        target = (0, 1)

        def build(tensor):
            return ctc_loss_op(nx.log_softmax(tensor), target, 2)

        def value(array):
            return ctc_loss_op(nx.log_softmax(nx.Tensor(array)), target, 2).item()

        _, analytic = tape_gradient(build, logits)
        np.testing.assert_allclose(analytic, numeric_gradient(value, logits), rtol=1e-4, atol=1e-7)


class GreedySearchTest(SimpleTestCase):

    def test_one_hot_rows(self):
        post = posteriors_from_rows(["a", "b"], [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
        path, tokens = greedy_search(post)
        self.assertEqual(path, (A, BLANK, B))
        self.assertEqual(tokens, ("a", "b"))

    def test_ties_go_to_the_first_token(self):
        post = posteriors_from_rows(["a", "b"], [[1 / 3] * 3] * 3)
        self.assertEqual(greedy_search(post), ((A, A, A), ("a",)))

    def test_best_path_beats_sampled_paths(self):
        post = random_posteriors(["a", "b", "c"], frames=8, seed=2)
        path, _ = greedy_search(post)
        rows = np.arange(post.num_frames)
        best = np.prod(post.probs[rows, list(path)])
        rng = np.random.default_rng(0)
        for _ in range(100):
            other = rng.integers(0, post.vocab.num_labels, size=post.num_frames)
            self.assertGreaterEqual(best, np.prod(post.probs[rows, other]))


class ThresholdExpandTest(SimpleTestCase):

    def test_upper_and_lower_one_is_greedy(self):
        for seed in range(5):
            post = random_posteriors(["a", "b", "c"], frames=10, seed=seed, peaked=0.5)
            self.assertEqual(threshold_expand(post, ThresholdConfig(1.0, 1.0)), [greedy_search(post)[1]])

    def test_retains_second_token_on_ambiguous_frames(self):
        post = posteriors_from_rows(["a", "b"], [[0.55, 0.30, 0.15], [0.9, 0.05, 0.05]])
        self.assertEqual(threshold_expand(post, ThresholdConfig(0.6, 0.1)), [("a",), ("b", "a")])

    def test_confident_frames_give_a_singleton(self):
        post = posteriors_from_rows(["a", "b"], [[0.8, 0.1, 0.1], [0.05, 0.05, 0.9]])
        self.assertEqual(threshold_expand(post, ThresholdConfig(0.6, 0.05)), [("a",)])

    def test_greedy_first_and_max_paths(self):
        post = random_posteriors(["a", "b", "c"], frames=12, seed=4, peaked=0.3)
        hypotheses = threshold_expand(post, ThresholdConfig(0.9, 0.05), max_paths=5)
        self.assertLessEqual(len(hypotheses), 5)
        self.assertEqual(hypotheses[0], greedy_search(post)[1])
        self.assertEqual(len(set(hypotheses)), len(hypotheses))
        with self.assertRaises(ValueError):
            threshold_expand(post, ThresholdConfig(0.9, 0.05), max_paths=0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_size_nonincreasing_in_lower_threshold(self, seed):
        post = random_posteriors(["a", "b"], frames=6, seed=seed, peaked=0.7)
        sizes = [
            len(threshold_expand(post, ThresholdConfig(0.9, lower), max_paths=10_000))
            for lower in (0.05, 0.1, 0.2, 0.3, 0.45)
        ]
        self.assertEqual(sizes, sorted(sizes, reverse=True))

    def test_invalid_thresholds(self):
        with self.assertRaises(ValueError):
            ThresholdConfig(0.3, 0.5)
        with self.assertRaises(ValueError):
            ThresholdConfig(1.2, 0.5)
        self.assertEqual(ThresholdConfig(0.5, 0.1).tag, "threshold(0.5,0.1)")


class PosteriorFileTest(SimpleTestCase):

    def test_vocab_and_posteriors_survive_a_write(self):
        post = random_posteriors(["ni", "hao"], frames=4, seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            write_vocab(Path(tmp) / "vocab.txt", post.vocab)
            write_posteriors(Path(tmp) / "u.pstm", post)
            vocab = read_vocab(Path(tmp) / "vocab.txt")
            loaded = read_posteriors(Path(tmp) / "u.pstm", vocab)
        self.assertEqual(vocab, post.vocab)
        np.testing.assert_array_equal(loaded.probs, post.probs)
