from django.db import IntegrityError
from django.test import TestCase

from tests.factories import ScoredRunFactory, SpellerPassFactory


class ModelsTest(TestCase):

    def test_scored_run_creation(self):
        run = ScoredRunFactory(substitutions=3, deletions=1, insertions=0, reference_length=40, cer=0.1)
        self.assertIsNotNone(run.id)
        self.assertEqual(run.errors, 4)
        self.assertEqual(str(run), f'greedy - {run.testset}: 10.00%')

    def test_scored_run_is_unique_per_workspace_system_and_testset(self):
        ScoredRunFactory(testset='clean')
        ScoredRunFactory(testset='clean', workspace='/srv/other')
        with self.assertRaises(IntegrityError):
            ScoredRunFactory(testset='clean')

    def test_speller_pass_creation(self):
        speller_pass = SpellerPassFactory(pass_index=2)
        self.assertIsNotNone(speller_pass.id)
        self.assertEqual(str(speller_pass), 'speller-D1 - pass 2')
