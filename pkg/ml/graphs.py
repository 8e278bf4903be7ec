"""
Builders for the decoding graph ``S = T o min(det(L o G))``.

Label spaces:

* units: ``<eps>``, the acoustic tokens in vocabulary order, the blank, then
  the disambiguation symbols ``#0``, ``#1``, ...
* words: ``<eps>``, the words, then ``#0`` for grammar backoff arcs.
"""
import logging
import math
from collections import defaultdict

import numpy as np

from ml.ctc import BLANK_MARKER
from ml.fst import (
    EPSILON,
    Fst,
    SymbolTable,
    compose,
    connect,
    determinize,
    minimize,
    replace_input_labels,
)
from ml.ngram import BOS, EOS, NgramModel

logger = logging.getLogger(__name__)

BACKOFF_SYMBOL = "#0"


def disambig_symbol(k):
    return f"#{k}"


def build_unit_symbols(vocab, num_disambig=0):
    table = SymbolTable()
    for token in vocab.tokens:
        table.add_symbol(token)
    table.add_symbol(BLANK_MARKER)
    for k in range(num_disambig + 1):
        table.add_symbol(disambig_symbol(k))
    return table


def build_word_symbols(words):
    table = SymbolTable()
    for word in sorted(set(words)):
        table.add_symbol(word)
    table.add_symbol(BACKOFF_SYMBOL)
    return table


def disambig_labels(unit_symbols):
    return [label for label, symbol in unit_symbols if symbol.startswith("#") and symbol[1:].isdigit()]


def label_columns(unit_symbols, vocab):
    """Posterior column of every unit label; -1 for epsilon and disambiguation labels."""
    columns = np.full(len(unit_symbols), -1, dtype=np.int64)
    for label, symbol in unit_symbols:
        if symbol == BLANK_MARKER:
            columns[label] = vocab.blank_id
        elif symbol in vocab:
            columns[label] = vocab.id(symbol)
    return columns


def build_token_fst(vocab, unit_symbols=None):
    """
    Maps CTC label strings onto unit strings: blanks and repeats inside a
    run emit nothing, the first frame of every run emits its unit.
    State 0 is "after a blank or at the start"; state ``s_u`` is "inside a
    run of u".
    """
    units = unit_symbols or build_unit_symbols(vocab)
    blank = units.find(BLANK_MARKER)
    token_labels = [units.find(token) for token in vocab.tokens]
    fst = Fst(units, units)
    idle = fst.add_state()
    fst.set_start(idle)
    fst.set_final(idle)
    fst.add_arc(idle, blank, EPSILON, 0.0, idle)
    inside = {}
    for label in token_labels:
        inside[label] = fst.add_state()
        fst.set_final(inside[label])
    for label, state in inside.items():
        fst.add_arc(idle, label, label, 0.0, state)
        fst.add_arc(state, label, EPSILON, 0.0, state)
        fst.add_arc(state, blank, EPSILON, 0.0, idle)
        for other, other_state in inside.items():
            if other != label:
                fst.add_arc(state, other, other, 0.0, other_state)
    return fst


def assign_disambig(lexicon):
    """
    Disambiguation index per word: homophones and pronunciations that are a
    proper prefix of another pronunciation get ``#1``, ``#2``, ...; 0 means none.
    """
    by_pron = defaultdict(list)
    prefixes = set()
    for word, pron in lexicon.items():
        pron = tuple(pron)
        if not pron:
            logger.error(f"Empty pronunciation for {word!r}")
            raise ValueError(f"word {word!r} has an empty pronunciation")
        by_pron[pron].append(word)
        for k in range(1, len(pron)):
            prefixes.add(pron[:k])
    assigned = {}
    for pron, words in by_pron.items():
        needs = len(words) > 1 or pron in prefixes
        for k, word in enumerate(sorted(words), start=1):
            assigned[word] = k if needs else 0
    return assigned


def build_lexicon_fst(lexicon, disambig=True, unit_symbols=None, word_symbols=None):
    """
    Loop-state lexicon: one chain per word from state 0 back to state 0, the
    word emitted on its first unit. With ``disambig`` every ambiguous chain
    ends in its ``#k`` symbol and state 0 passes the grammar's ``#0`` through.
    """
    if not lexicon:
        raise ValueError("lexicon is empty")
    if any(not pron for pron in lexicon.values()):
        raise ValueError("lexicon contains an empty pronunciation")
    assigned = assign_disambig(lexicon) if disambig else {word: 0 for word in lexicon}
    if unit_symbols is None:
        unit_symbols = SymbolTable()
        for unit in sorted({u for pron in lexicon.values() for u in pron}):
            unit_symbols.add_symbol(unit)
    for k in range(max(assigned.values(), default=0) + 1 if disambig else 0):
        unit_symbols.add_symbol(disambig_symbol(k))
    word_symbols = word_symbols or build_word_symbols(lexicon)

    fst = Fst(unit_symbols, word_symbols)
    loop = fst.add_state()
    fst.set_start(loop)
    fst.set_final(loop)
    for word in sorted(lexicon):
        labels = [unit_symbols.find(unit) for unit in lexicon[word]]
        if assigned[word]:
            labels.append(unit_symbols.find(disambig_symbol(assigned[word])))
        outputs = [word_symbols.find(word)] + [EPSILON] * (len(labels) - 1)
        state = loop
        for position, (ilabel, olabel) in enumerate(zip(labels, outputs)):
            nxt = loop if position == len(labels) - 1 else fst.add_state()
            fst.add_arc(state, ilabel, olabel, 0.0, nxt)
            state = nxt
    if disambig:
        fst.add_arc(loop, unit_symbols.find(BACKOFF_SYMBOL), word_symbols.find(BACKOFF_SYMBOL), 0.0, loop)
    return fst


def _longest_known_suffix(gram, order, states):
    context = gram[max(0, len(gram) - (order - 1)):] if order > 1 else ()
    while context not in states:
        context = context[1:]
    return context


def build_grammar_fst(ngram_counts, order=3, discount=0.5, word_symbols=None, backoff_symbol=BACKOFF_SYMBOL):
    """
    Backoff n-gram acceptor. One state per observed history plus the empty
    history; word arcs carry ``-log P(w | h)``, backoff arcs ``-log alpha(h)``
    and final weights ``-log P(</s> | h)``.
    """
    model = ngram_counts if isinstance(ngram_counts, NgramModel) else NgramModel(ngram_counts, order, discount)
    order = model.order
    if word_symbols is None:
        word_symbols = build_word_symbols(model.words)
    backoff_label = word_symbols.find(backoff_symbol) if backoff_symbol else EPSILON

    histories = [h for h in model.histories() if EOS not in h]
    if () not in histories:
        histories.insert(0, ())
    fst = Fst(word_symbols, word_symbols)
    state_of = {history: fst.add_state() for history in histories}
    start = (BOS,) if order > 1 and (BOS,) in state_of else ()
    fst.set_start(state_of[start])

    for history, state in state_of.items():
        if model.has_eos:
            p_end = model.prob(EOS, history)
            if p_end > 0.0:
                fst.set_final(state, -math.log(p_end))
        else:
            fst.set_final(state, 0.0)
        words = model.words if not history else [w for w in model.followers[history] if w != EOS]
        for word in sorted(words):
            p = model.prob(word, history)
            if p <= 0.0:
                continue
            target = _longest_known_suffix(history + (word,), order, state_of)
            label = word_symbols.find(word)
            fst.add_arc(state, label, label, -math.log(p), state_of[target])
        if history:
            alpha = model.backoff(history)
            if alpha > 0.0:
                fst.add_arc(state, backoff_label, EPSILON, -math.log(alpha), state_of[history[1:]])
    logger.info(f"Built grammar with {fst.num_states} states and {fst.num_arcs()} arcs (order {order})")
    return fst


def grammar_path_weight(grammar, words, backoff_label=None):
    """
    Weight of a sentence through ``grammar`` taking a backoff arc only when
    the current state has no arc for the next word.
    """
    symbols = grammar.input_symbols
    if backoff_label is None:
        backoff_label = symbols.find(BACKOFF_SYMBOL) if symbols and BACKOFF_SYMBOL in symbols else EPSILON
    labels = [symbols.find(w) if isinstance(w, str) else int(w) for w in words]

    def backoff_arc(state):
        for arc in grammar.arcs(state):
            if arc.ilabel == backoff_label and arc.olabel == EPSILON:
                return arc
        return None

    state, total = grammar.start, 0.0
    for label in labels:
        while True:
            arc = next((a for a in grammar.arcs(state) if a.ilabel == label), None)
            if arc is not None:
                total += arc.weight
                state = arc.nextstate
                break
            fallback = backoff_arc(state)
            if fallback is None:
                return math.inf
            total += fallback.weight
            state = fallback.nextstate
    return total + grammar.final(state)


def build_decoding_graph(token_fst, lexicon_fst, grammar_fst, disambig=None):
    """``T o min(det(L o G))`` with disambiguation symbols removed after minimization."""
    lg = compose(lexicon_fst, grammar_fst)
    logger.info(f"L o G: {lg}")
    lg = minimize(determinize(lg))
    logger.info(f"min(det(L o G)): {lg}")
    disambig = disambig_labels(lexicon_fst.input_symbols) if disambig is None else disambig
    lg = replace_input_labels(lg, disambig)
    graph = connect(compose(token_fst, lg))
    logger.info(f"Decoding graph: {graph}")
    return graph
