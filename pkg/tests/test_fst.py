import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, strategies as st

from ml.errors import NonDeterminizableError
from ml.fst import (
    EPSILON,
    Fst,
    SymbolTable,
    TropicalWeight,
    compose,
    connect,
    determinize,
    fst_from_text,
    fst_to_text,
    linear_fst,
    minimize,
    project,
    replace_input_labels,
    shortest_path,
    weighted_language,
)

weights = st.one_of(st.floats(min_value=0.0, max_value=100.0), st.just(math.inf))


def random_acyclic(seed, num_states=5, labels=(1, 2, 3), olabels=None, arc_prob=0.5, with_epsilon=False):
    """Arcs only run forward, so the machine is acyclic."""
    rng = np.random.default_rng(seed)
    olabels = olabels or labels
    fst = Fst()
    fst.add_states(num_states)
    fst.set_start(0)
    for source in range(num_states):
        for target in range(source + 1, num_states):
            for label in labels:
                if rng.random() < arc_prob:
                    out = olabels[rng.integers(len(olabels))]
                    fst.add_arc(source, label, out, round(float(rng.uniform(0, 3)), 3), target)
            if with_epsilon and rng.random() < 0.2:
                fst.add_arc(source, EPSILON, EPSILON, round(float(rng.uniform(0, 1)), 3), target)
    fst.set_final(num_states - 1, 0.5)
    if num_states > 2 and rng.random() < 0.5:
        fst.set_final(num_states - 2, 1.25)
    return fst


def identity_acceptor(labels):
    fst = Fst()
    state = fst.add_state()
    fst.set_start(state)
    fst.set_final(state)
    for label in labels:
        fst.add_arc(state, label, label, 0.0, state)
    return fst


class LanguageAssertions:

    def assertSameLanguage(self, first, second, max_length=6, side="both"):
        a = weighted_language(first, max_length, side)
        b = weighted_language(second, max_length, side)
        self.assertEqual(set(a), set(b))
        for key in a:
            self.assertAlmostEqual(a[key], b[key], delta=1e-6)


class TropicalWeightTest(SimpleTestCase):

    @given(weights, weights, weights)
    def test_semiring_axioms(self, a, b, c):
        plus, times = TropicalWeight.plus, TropicalWeight.times
        self.assertEqual(plus(a, plus(b, c)), plus(plus(a, b), c))
        self.assertAlmostEqual(times(a, times(b, c)), times(times(a, b), c))
        self.assertAlmostEqual(times(a, plus(b, c)), plus(times(a, b), times(a, c)))
        self.assertEqual(plus(a, TropicalWeight.ZERO), a)
        self.assertEqual(times(a, TropicalWeight.ONE), a)
        self.assertTrue(TropicalWeight.is_zero(times(a, TropicalWeight.ZERO)))


class ComposeTest(LanguageAssertions, SimpleTestCase):

    def test_identity_on_the_output_side(self):
        for seed in range(10):
            machine = random_acyclic(seed, olabels=(4, 5))
            self.assertSameLanguage(compose(machine, identity_acceptor([4, 5])), machine)

    def test_associativity(self):
        for seed in range(5):
            a = random_acyclic(seed, num_states=4, olabels=(4, 5))
            b = random_acyclic(seed + 50, num_states=4, labels=(4, 5), olabels=(6, 7))
            c = random_acyclic(seed + 90, num_states=4, labels=(6, 7), olabels=(8,))
            self.assertSameLanguage(compose(compose(a, b), c), compose(a, compose(b, c)))

    def test_epsilons_on_both_sides_are_not_double_counted(self):
        a = Fst()
        a.add_states(3)
        a.set_start(0)
        a.add_arc(0, 1, EPSILON, 1.0, 1)
        a.add_arc(1, 2, 9, 0.5, 2)
        a.set_final(2)
        b = Fst()
        b.add_states(3)
        b.set_start(0)
        b.add_arc(0, EPSILON, 7, 2.0, 1)
        b.add_arc(1, 9, 8, 0.25, 2)
        b.set_final(2)
        result = compose(a, b)
        paths = {}
        stack = [(result.start, (), (), 0.0)]
        count = 0
        while stack:
            state, i, o, w = stack.pop()
            if result.is_final(state):
                count += 1
                paths[(i, o)] = w
            for arc in result.arcs(state):
                stack.append((
                    arc.nextstate,
                    i + ((arc.ilabel,) if arc.ilabel else ()),
                    o + ((arc.olabel,) if arc.olabel else ()),
                    w + arc.weight,
                ))
        self.assertEqual(count, 1)
        self.assertEqual(paths, {((1, 2), (7, 8)): 3.75})

    def test_linear_machine_through_a_transducer(self):
        transducer = Fst()
        state = transducer.add_state()
        transducer.set_start(state)
        transducer.set_final(state)
        transducer.add_arc(state, 1, 10, 0.5, state)
        transducer.add_arc(state, 2, 20, 1.0, state)
        path = shortest_path(compose(linear_fst([1, 2, 1]), transducer))
        self.assertEqual(path.olabels, (10, 20, 10))
        self.assertAlmostEqual(path.weight, 2.0)


class DeterminizeMinimizeTest(LanguageAssertions, SimpleTestCase):

    def test_preserve_weighted_language_of_acceptors(self):
        for seed in range(20):
            machine = project(random_acyclic(seed, with_epsilon=True), "input")
            det = determinize(machine)
            self.assertSameLanguage(det, machine, side="input")
            self.assertSameLanguage(minimize(det), machine, side="input")

    def test_result_is_deterministic(self):
        det = determinize(project(random_acyclic(3, num_states=6, with_epsilon=True), "input"))
        for state in det.states():
            labels = [arc.ilabel for arc in det.arcs(state)]
            self.assertNotIn(EPSILON, labels)
            self.assertEqual(len(labels), len(set(labels)))

    def test_functional_transducer_with_delayed_output(self):
        machine = Fst()
        machine.add_states(5)
        machine.set_start(0)
        machine.add_arc(0, 1, 7, 1.0, 1)
        machine.add_arc(0, 1, EPSILON, 2.0, 2)
        machine.add_arc(1, 2, 8, 0.0, 3)
        machine.add_arc(2, 3, 9, 0.0, 4)
        machine.set_final(3)
        machine.set_final(4)
        self.assertSameLanguage(determinize(machine), machine)

    def test_non_functional_input_is_rejected(self):
        machine = Fst()
        machine.add_states(2)
        machine.set_start(0)
        machine.add_arc(0, 1, 5, 0.0, 1)
        machine.add_arc(0, 1, 6, 0.0, 1)
        machine.set_final(1)
        with self.assertRaises(NonDeterminizableError):
            determinize(machine)

    def test_minimize_merges_equivalent_branches(self):
        machine = Fst()
        machine.add_states(5)
        machine.set_start(0)
        machine.add_arc(0, 1, 1, 0.5, 1)
        machine.add_arc(0, 2, 2, 0.5, 2)
        machine.add_arc(1, 3, 3, 1.0, 3)
        machine.add_arc(2, 3, 3, 1.0, 4)
        machine.set_final(3)
        machine.set_final(4)
        minimal = minimize(machine)
        self.assertEqual(minimal.num_states, 3)
        self.assertSameLanguage(minimal, machine)


class FstUtilitiesTest(SimpleTestCase):

    def test_connect_drops_dead_and_unreachable_states(self):
        machine = linear_fst([1, 2])
        dead = machine.add_state()
        machine.add_arc(0, 3, 3, 0.0, dead)
        orphan = machine.add_state()
        machine.add_arc(orphan, 4, 4, 0.0, 2)
        self.assertEqual(connect(machine).num_states, 3)
        self.assertEqual(connect(Fst()).num_states, 0)

    def test_shortest_path_and_empty_language(self):
        machine = random_acyclic(4)
        machine.add_arc(0, 1, 1, 5.0, 4)
        best = min(weighted_language(machine, 10).values())
        self.assertAlmostEqual(shortest_path(machine).weight, best)
        empty = Fst()
        empty.set_start(empty.add_state())
        with self.assertRaises(ValueError):
            shortest_path(empty)

    def test_project_and_relabel(self):
        machine = linear_fst([1, 2], [3, 4])
        self.assertEqual(shortest_path(project(machine, "output")).ilabels, (3, 4))
        self.assertEqual(shortest_path(replace_input_labels(machine, [2])).ilabels, (1,))
        with self.assertRaises(ValueError):
            project(machine, "both")

    def test_text_format(self):
        machine = random_acyclic(7, with_epsilon=True)
        restored = fst_from_text(fst_to_text(machine))
        self.assertEqual(fst_to_text(restored), fst_to_text(machine))
        self.assertTrue(fst_to_text(machine).startswith("0 "))
        with self.assertRaises(ValueError):
            fst_from_text("0 1 2\n")

    def test_symbol_table_text(self):
        table = SymbolTable(["<eps>", "a", "b"])
        self.assertEqual(table.to_text(), "<eps> 0\na 1\nb 2\n")
        self.assertEqual(SymbolTable.from_text(table.to_text()).find("b"), 2)
        with self.assertRaises(ValueError):
            SymbolTable.from_text("<eps> 0\nb 2\n")
        with self.assertRaises(ValueError):
            table.find("z")
