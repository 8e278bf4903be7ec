import tempfile
from pathlib import Path

from django.test import SimpleTestCase, TestCase

from asr_app.models import SpellerPass
from ml.transformer import SpellerModel, SpellerVocab, TransformerConfig, correct
from services.artifact_service import ArtifactService
from services.speller_service import SpellerRun, SpellerService

PAIRS = [
    (("ni", "hao"), ("ni", "hao")),
    (("ma", "ma"), ("ma",)),
    (("hao",), ("hao", "ma")),
    (("ni", "ma", "hao"), ("ni", "hao")),
    (("ma", "ni"), ("ma", "ni")),
    (("hao", "hao"), ("hao",)),
]


def tiny_config(max_len=16):
    return TransformerConfig(num_layers=1, d_model=16, d_ff=32, num_heads=2, dropout=0.0, max_len=max_len)


class SplitPairsTest(SimpleTestCase):

    def test_five_percent_is_held_out(self):
        pairs = [((str(i),), (str(i),)) for i in range(100)]
        train, validation = SpellerService.split_pairs(pairs, seed=0)
        self.assertEqual((len(train), len(validation)), (95, 5))
        self.assertEqual(sorted(train + validation), sorted(pairs))
        self.assertEqual(SpellerService.split_pairs(pairs, seed=0), (train, validation))

    def test_small_inputs(self):
        self.assertEqual(SpellerService.split_pairs(PAIRS[:1], seed=0), (PAIRS[:1], []))
        self.assertEqual(len(SpellerService.split_pairs(PAIRS, seed=0)[1]), 1)
        with self.assertRaises(ValueError):
            SpellerService.split_pairs([], seed=0)

    def test_steps_per_pass(self):
        self.assertEqual(SpellerService.steps_for(33, 16), 3)
        self.assertEqual(SpellerService.steps_for(32, 16), 2)
        self.assertEqual(SpellerService.steps_for(0, 16), 1)


class TrainTest(SimpleTestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.run_dir = Path(self._tmp.name) / "speller" / "D1"

    def tearDown(self):
        self._tmp.cleanup()

    def test_checkpoint_and_validation_after_every_pass(self):
        run = SpellerService.train(PAIRS * 4, self.run_dir, seed=1, passes=3, steps_per_pass=4,
                                   batch_size=4, config=tiny_config())
        self.assertIsInstance(run, SpellerRun)
        self.assertEqual(run.steps_per_pass, 4)
        self.assertEqual([path.name for path in run.checkpoints], ["pass1.cspl", "pass2.cspl", "pass3.cspl"])
        self.assertTrue(all(path.exists() for path in run.checkpoints))
        self.assertEqual(len(run.validation_cers), 3)
        self.assertTrue(all(cer >= 0 for cer in run.validation_cers))

        restored = SpellerService.load(run.checkpoints[-1])
        for hypothesis, _ in PAIRS:
            self.assertEqual(correct(restored, hypothesis), correct(run.model, hypothesis))

    def test_default_pass_length_is_one_sweep(self):
        run = SpellerService.train(PAIRS * 6, self.run_dir, passes=1, batch_size=4, config=tiny_config())
        # 36 pairs, 2 held out
        self.assertEqual(run.steps_per_pass, 9)

    def test_single_pair_has_no_validation(self):
        run = SpellerService.train(PAIRS[:1], self.run_dir, passes=2, steps_per_pass=1, config=tiny_config())
        self.assertEqual(run.validation_cers, [None, None])

    def test_missing_checkpoint(self):
        with self.assertRaises(FileNotFoundError):
            SpellerService.load(self.run_dir / "pass9.cspl")


class CorrectAllTest(SimpleTestCase):

    def test_keys_are_preserved(self):
        model = SpellerModel.initialize(tiny_config(), SpellerVocab.from_pairs(PAIRS), seed=0)
        hypotheses = {"clean-00001": ("ni", "hao"), "clean-00000": ("ma",)}
        corrected = SpellerService.correct_all(model, hypotheses)
        self.assertEqual(list(corrected), ["clean-00001", "clean-00000"])
        self.assertEqual(corrected["clean-00000"], correct(model, ("ma",)))

    def test_truncation_is_reported(self):
        model = SpellerModel.initialize(tiny_config(max_len=3), SpellerVocab.from_pairs(PAIRS), seed=0)
        with self.assertLogs("services.speller_service", level="WARNING"):
            corrected = SpellerService.correct_all(model, {"u1": ("ni", "hao", "ma", "ni")})
        self.assertTrue(corrected["u1"].truncated)


class RecordPassesTest(TestCase):

    def test_one_row_per_pass(self):
        run = SpellerRun(model=None, steps_per_pass=10, validation_cers=[0.5, 0.25, None], checkpoints=[])
        rows = SpellerService.record_passes("speller-D1", "D1", run, eta_max=0.1)
        self.assertEqual([row.pass_index for row in rows], [1, 2, 3])
        self.assertEqual(SpellerPass.objects.get(run_name="speller-D1", pass_index=2).validation_cer, 0.25)
        self.assertIsNone(SpellerPass.objects.get(run_name="speller-D1", pass_index=3).validation_cer)

        SpellerService.record_passes("speller-D1", "D1", run._replace(validation_cers=[0.1]), eta_max=0.1)
        self.assertEqual(SpellerPass.objects.filter(run_name="speller-D1").count(), 3)
        self.assertEqual(SpellerPass.objects.get(run_name="speller-D1", pass_index=1).validation_cer, 0.1)

    def test_passes_are_kept_per_workspace(self):
        run = SpellerRun(model=None, steps_per_pass=10, validation_cers=[0.5], checkpoints=[])
        SpellerService.record_passes("d1", "d1", run, eta_max=0.1, workspace="/srv/first")
        SpellerService.record_passes("d1", "d1", run._replace(validation_cers=[0.2]), eta_max=0.1, workspace="/srv/second")
        self.assertEqual(SpellerPass.objects.filter(run_name="d1").count(), 2)
        row = SpellerPass.objects.get(run_name="d1", workspace=ArtifactService.workspace_key("/srv/first"))
        self.assertEqual(row.validation_cer, 0.5)
