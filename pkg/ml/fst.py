"""
Weighted finite-state transducers over the tropical semiring.

Weights are costs (-log probabilities): plus is ``min``, times is ``+``,
zero is ``inf`` and one is ``0``. Label 0 is epsilon on both tapes.
"""
import heapq
import logging
import math
from collections import defaultdict, deque
from pathlib import Path
from typing import NamedTuple

from ml.errors import NonDeterminizableError

logger = logging.getLogger(__name__)

EPSILON = 0
WEIGHT_QUANTUM = 1e-7
DETERMINIZE_STATE_FACTOR = 100


class TropicalWeight:
    ZERO = math.inf
    ONE = 0.0

    @staticmethod
    def plus(a, b):
        return min(a, b)

    @staticmethod
    def times(a, b):
        return a + b

    @staticmethod
    def is_zero(w):
        return w == math.inf


class Arc(NamedTuple):
    ilabel: int
    olabel: int
    weight: float
    nextstate: int


class ShortestPath(NamedTuple):
    ilabels: tuple
    olabels: tuple
    weight: float
    states: tuple


class SymbolTable:
    """Bidirectional symbol <-> id map, written as ``symbol id`` lines."""

    def __init__(self, symbols=("<eps>",)):
        self._symbols = []
        self._ids = {}
        for symbol in symbols:
            self.add_symbol(symbol)

    def add_symbol(self, symbol):
        if symbol not in self._ids:
            self._ids[symbol] = len(self._symbols)
            self._symbols.append(symbol)
        return self._ids[symbol]

    def find(self, symbol):
        try:
            return self._ids[symbol]
        except KeyError:
            raise ValueError(f"symbol {symbol!r} is not in the table") from None

    def symbol(self, label):
        return self._symbols[label]

    def __contains__(self, symbol):
        return symbol in self._ids

    def __len__(self):
        return len(self._symbols)

    def __iter__(self):
        return iter(enumerate(self._symbols))

    def to_text(self):
        return "".join(f"{symbol} {label}\n" for label, symbol in enumerate(self._symbols))

    @classmethod
    def from_text(cls, text):
        pairs = []
        for line in text.splitlines():
            if line.strip():
                symbol, label = line.rsplit(maxsplit=1)
                pairs.append((int(label), symbol))
        table = cls(symbols=())
        for expected, (label, symbol) in enumerate(sorted(pairs)):
            if label != expected:
                raise ValueError(f"symbol ids must be dense, missing {expected}")
            table.add_symbol(symbol)
        return table

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


class Fst:
    """Mutable transducer; builders produce one and callers treat it as read-only."""

    def __init__(self, input_symbols=None, output_symbols=None):
        self._arcs = []
        self._finals = []
        self.start = -1
        self.input_symbols = input_symbols
        self.output_symbols = output_symbols

    def add_state(self):
        self._arcs.append([])
        self._finals.append(math.inf)
        return len(self._arcs) - 1

    def add_states(self, count):
        return [self.add_state() for _ in range(count)]

    def _check_state(self, state):
        if not 0 <= state < len(self._arcs):
            raise ValueError(f"state {state} does not exist")

    def set_start(self, state):
        self._check_state(state)
        self.start = state

    def set_final(self, state, weight=TropicalWeight.ONE):
        self._check_state(state)
        self._finals[state] = float(weight)

    def final(self, state):
        return self._finals[state]

    def is_final(self, state):
        return self._finals[state] != math.inf

    def add_arc(self, state, ilabel, olabel, weight, nextstate):
        self._check_state(state)
        self._check_state(nextstate)
        self._arcs[state].append(Arc(int(ilabel), int(olabel), float(weight), int(nextstate)))

    def arcs(self, state):
        return self._arcs[state]

    @property
    def num_states(self):
        return len(self._arcs)

    def states(self):
        return range(len(self._arcs))

    def num_arcs(self, state=None):
        if state is not None:
            return len(self._arcs[state])
        return sum(len(arcs) for arcs in self._arcs)

    def final_states(self):
        return [state for state in self.states() if self.is_final(state)]

    def copy(self):
        other = type(self).__new__(type(self))
        other.__dict__.update(self.__dict__)
        other._arcs = [list(arcs) for arcs in self._arcs]
        other._finals = list(self._finals)
        return other

    def is_acyclic(self):
        indegree = [0] * self.num_states
        for state in self.states():
            for arc in self._arcs[state]:
                indegree[arc.nextstate] += 1
        queue = deque(state for state in self.states() if indegree[state] == 0)
        visited = 0
        while queue:
            state = queue.popleft()
            visited += 1
            for arc in self._arcs[state]:
                indegree[arc.nextstate] -= 1
                if indegree[arc.nextstate] == 0:
                    queue.append(arc.nextstate)
        return visited == self.num_states

    def __repr__(self):
        return f"{type(self).__name__}(states={self.num_states}, arcs={self.num_arcs()})"


def linear_fst(ilabels, olabels=None, weights=None, input_symbols=None, output_symbols=None):
    """Single-path machine; an acceptor when ``olabels`` is omitted."""
    ilabels = list(ilabels)
    olabels = ilabels if olabels is None else list(olabels)
    if len(olabels) != len(ilabels):
        raise ValueError("input and output label sequences differ in length")
    weights = [0.0] * len(ilabels) if weights is None else list(weights)
    fst = Fst(input_symbols, output_symbols)
    states = fst.add_states(len(ilabels) + 1)
    fst.set_start(states[0])
    for k, (i, o, w) in enumerate(zip(ilabels, olabels, weights)):
        fst.add_arc(states[k], i, o, w, states[k + 1])
    fst.set_final(states[-1])
    return fst


def _input_index(fst):
    index = defaultdict(lambda: defaultdict(list))
    for state in fst.states():
        for arc in fst.arcs(state):
            index[state][arc.ilabel].append(arc)
    return index


def compose(a, b):
    """
    Composition with the sequence epsilon filter.

    Filter state 0 lets ``a`` move alone on an output epsilon; once ``b`` has
    moved alone on an input epsilon (filter 1) ``a`` must wait for a matched
    arc. Each pair of epsilon runs is therefore generated exactly once.
    """
    result = Fst(a.input_symbols, b.output_symbols)
    if a.start < 0 or b.start < 0:
        return result
    b_index = _input_index(b)
    states = {}
    queue = deque()

    def state_of(triple):
        if triple not in states:
            states[triple] = result.add_state()
            queue.append(triple)
        return states[triple]

    result.set_start(state_of((a.start, b.start, 0)))
    while queue:
        triple = queue.popleft()
        qa, qb, filt = triple
        source = states[triple]
        if a.is_final(qa) and b.is_final(qb):
            result.set_final(source, a.final(qa) + b.final(qb))
        b_arcs = b_index.get(qb, {})
        for arc_a in a.arcs(qa):
            if arc_a.olabel == EPSILON:
                if filt == 0:
                    target = state_of((arc_a.nextstate, qb, 0))
                    result.add_arc(source, arc_a.ilabel, EPSILON, arc_a.weight, target)
                continue
            for arc_b in b_arcs.get(arc_a.olabel, ()):
                target = state_of((arc_a.nextstate, arc_b.nextstate, 0))
                result.add_arc(source, arc_a.ilabel, arc_b.olabel, arc_a.weight + arc_b.weight, target)
        for arc_b in b_arcs.get(EPSILON, ()):
            target = state_of((qa, arc_b.nextstate, 1))
            result.add_arc(source, EPSILON, arc_b.olabel, arc_b.weight, target)
    return result


def _reachable(fst, start_states, reverse=False):
    if reverse:
        edges = defaultdict(list)
        for state in fst.states():
            for arc in fst.arcs(state):
                edges[arc.nextstate].append(state)
        neighbours = lambda s: edges[s]
    else:
        neighbours = lambda s: (arc.nextstate for arc in fst.arcs(s))
    seen = set(start_states)
    stack = list(start_states)
    while stack:
        for nxt in neighbours(stack.pop()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def connected_states(fst):
    """States both reachable from the start and able to reach a final state, in order."""
    if fst.start < 0:
        return []
    accessible = _reachable(fst, [fst.start])
    coaccessible = _reachable(fst, fst.final_states(), reverse=True)
    if fst.start not in coaccessible:
        return []
    return [state for state in fst.states() if state in accessible and state in coaccessible]


def connect(fst, result=None):
    """Trimmed copy; ``result`` is an empty machine to fill, a plain ``Fst`` by default."""
    if result is None:
        result = Fst(fst.input_symbols, fst.output_symbols)
    keep = connected_states(fst)
    if not keep:
        return result
    mapping = {state: result.add_state() for state in keep}
    result.set_start(mapping[fst.start])
    for state in keep:
        result.set_final(mapping[state], fst.final(state))
        for arc in fst.arcs(state):
            if arc.nextstate in mapping:
                result.add_arc(mapping[state], arc.ilabel, arc.olabel, arc.weight, mapping[arc.nextstate])
    return result


def project(fst, side="input"):
    """Acceptor over one tape."""
    if side not in ("input", "output"):
        raise ValueError(f"side must be 'input' or 'output', got {side!r}")
    result = fst.copy()
    for state in result.states():
        result._arcs[state] = [
            Arc(label, label, arc.weight, arc.nextstate)
            for arc in result._arcs[state]
            for label in [arc.ilabel if side == "input" else arc.olabel]
        ]
    symbols = fst.input_symbols if side == "input" else fst.output_symbols
    result.input_symbols = result.output_symbols = symbols
    return result


def replace_input_labels(fst, labels, replacement=EPSILON):
    labels = set(labels)
    result = fst.copy()
    for state in result.states():
        result._arcs[state] = [
            arc._replace(ilabel=replacement) if arc.ilabel in labels else arc
            for arc in result._arcs[state]
        ]
    return result


def _quantize(weight):
    return round(weight / WEIGHT_QUANTUM)


def _epsilon_closure(fst, subset):
    """Follow input-epsilon arcs from every element of a determinization subset."""
    best = dict(subset)
    queue = deque(best)
    while queue:
        state, residual = element = queue.popleft()
        weight = best[element]
        for arc in fst.arcs(state):
            if arc.ilabel != EPSILON:
                continue
            nxt_residual = residual + (arc.olabel,) if arc.olabel != EPSILON else residual
            nxt = (arc.nextstate, nxt_residual)
            candidate = weight + arc.weight
            if candidate < best.get(nxt, math.inf) - WEIGHT_QUANTUM:
                best[nxt] = candidate
                queue.append(nxt)
    return best


def _check_functional(subset):
    residual_of = {}
    for state, residual in subset:
        if residual_of.setdefault(state, residual) != residual:
            logger.error(f"State {state} reached with outputs {residual_of[state]} and {residual}")
            raise NonDeterminizableError(
                f"input is not functional: state {state} has two pending outputs"
            )


def _common_prefix(strings):
    prefix = min(strings, key=len)
    for string in strings:
        k = 0
        while k < len(prefix) and prefix[k] == string[k]:
            k += 1
        prefix = prefix[:k]
    return prefix


def determinize(fst, state_factor=DETERMINIZE_STATE_FACTOR):
    """
    Tropical determinization of a functional transducer.

    Subset elements are ``(state, pending output, residual weight)``. Each
    result arc carries at most one output label, the first label shared by
    every pending output. Pending output left at a final subset is written
    out on an epsilon-input chain.
    """
    fst = connect(fst)
    result = Fst(fst.input_symbols, fst.output_symbols)
    if fst.start < 0:
        return result
    cap = state_factor * max(1, fst.num_states)
    subsets = {}
    queue = deque()

    def state_of(elements):
        key = tuple(sorted((s, r, _quantize(w)) for (s, r), w in elements.items()))
        if key not in subsets:
            if len(subsets) >= cap:
                logger.error(f"Determinization exceeded {cap} states")
                raise NonDeterminizableError(
                    f"determinization exceeded {cap} states; add disambiguation symbols"
                )
            subsets[key] = result.add_state()
            queue.append((subsets[key], elements))
        return subsets[key]

    result.set_start(state_of(_epsilon_closure(fst, {(fst.start, ()): 0.0})))
    while queue:
        source, elements = queue.popleft()
        _check_functional(elements)

        final_weight, final_residual = math.inf, ()
        for (state, residual), weight in elements.items():
            if fst.is_final(state) and weight + fst.final(state) < final_weight:
                final_weight, final_residual = weight + fst.final(state), residual
        if final_weight < math.inf:
            if not final_residual:
                result.set_final(source, final_weight)
            else:
                tail = source
                for label in final_residual:
                    nxt = result.add_state()
                    result.add_arc(tail, EPSILON, label, 0.0, nxt)
                    tail = nxt
                result.set_final(tail, final_weight)

        moves = defaultdict(list)
        for (state, residual), weight in elements.items():
            for arc in fst.arcs(state):
                if arc.ilabel == EPSILON:
                    continue
                output = residual + (arc.olabel,) if arc.olabel != EPSILON else residual
                moves[arc.ilabel].append((arc.nextstate, output, weight + arc.weight))
        for ilabel in sorted(moves):
            candidates = moves[ilabel]
            arc_weight = min(weight for _, _, weight in candidates)
            prefix = _common_prefix([output for _, output, _ in candidates])
            olabel = prefix[0] if prefix else EPSILON
            consumed = 1 if prefix else 0
            nxt = {}
            for state, output, weight in candidates:
                element = (state, output[consumed:])
                nxt[element] = min(nxt.get(element, math.inf), weight - arc_weight)
            target = state_of(_epsilon_closure(fst, nxt))
            result.add_arc(source, ilabel, olabel, arc_weight, target)
    return result


def minimize(fst):
    """
    Merge states with identical futures (same finality, same arcs into the
    same blocks). Weights are compared as they stand; nothing is pushed.
    """
    fst = connect(fst)
    if fst.start < 0:
        return fst
    block = [(_quantize(fst.final(s)) if fst.is_final(s) else None) for s in fst.states()]
    ids = {}
    block = [ids.setdefault(b, len(ids)) for b in block]
    while True:
        signatures = {}
        refined = []
        for state in fst.states():
            signature = (
                block[state],
                tuple(sorted(
                    (arc.ilabel, arc.olabel, _quantize(arc.weight), block[arc.nextstate])
                    for arc in fst.arcs(state)
                )),
            )
            refined.append(signatures.setdefault(signature, len(signatures)))
        if len(signatures) == len(set(block)):
            block = refined
            break
        block = refined

    result = Fst(fst.input_symbols, fst.output_symbols)
    order = {}
    for state in fst.states():
        if block[state] not in order:
            order[block[state]] = result.add_state()
    built = set()
    for state in fst.states():
        if block[state] in built:
            continue
        built.add(block[state])
        merged = order[block[state]]
        result.set_final(merged, fst.final(state))
        seen = set()
        for arc in fst.arcs(state):
            key = (arc.ilabel, arc.olabel, _quantize(arc.weight), block[arc.nextstate])
            if key not in seen:
                seen.add(key)
                result.add_arc(merged, arc.ilabel, arc.olabel, arc.weight, order[block[arc.nextstate]])
    result.set_start(order[block[fst.start]])
    return result


def shortest_distance(fst):
    """Tropical distance from the start to every state, with back-pointers."""
    distance = [math.inf] * fst.num_states
    backpointer = [None] * fst.num_states
    if fst.start < 0:
        return distance, backpointer
    distance[fst.start] = 0.0
    heap = [(0.0, fst.start)]
    while heap:
        dist, state = heapq.heappop(heap)
        if dist > distance[state]:
            continue
        for arc in fst.arcs(state):
            candidate = dist + arc.weight
            if candidate < distance[arc.nextstate]:
                distance[arc.nextstate] = candidate
                backpointer[arc.nextstate] = (state, arc)
                heapq.heappush(heap, (candidate, arc.nextstate))
    return distance, backpointer


def shortest_path(fst):
    distance, backpointer = shortest_distance(fst)
    best_state, best_weight = None, math.inf
    for state in fst.final_states():
        total = distance[state] + fst.final(state)
        if total < best_weight:
            best_state, best_weight = state, total
    if best_state is None:
        raise ValueError("the machine accepts no string")
    arcs, states = [], [best_state]
    state = best_state
    while backpointer[state] is not None:
        state, arc = backpointer[state]
        arcs.append(arc)
        states.append(state)
    arcs.reverse()
    states.reverse()
    return ShortestPath(
        ilabels=tuple(arc.ilabel for arc in arcs if arc.ilabel != EPSILON),
        olabels=tuple(arc.olabel for arc in arcs if arc.olabel != EPSILON),
        weight=best_weight,
        states=tuple(states),
    )


def weighted_language(fst, max_length, side="both", max_epsilon_run=None):
    """
    Every accepted string with at most ``max_length`` non-epsilon input labels,
    mapped to its best weight. Keys are ``(input, output)`` pairs, or a single
    label tuple when ``side`` is ``"input"`` or ``"output"``.
    """
    if fst.start < 0:
        return {}
    max_epsilon_run = max_epsilon_run or fst.num_states + 1
    language = {}
    stack = [(fst.start, (), (), 0.0, 0)]
    while stack:
        state, ilabels, olabels, weight, eps_run = stack.pop()
        if fst.is_final(state):
            key = {"both": (ilabels, olabels), "input": ilabels, "output": olabels}[side]
            language[key] = min(language.get(key, math.inf), weight + fst.final(state))
        for arc in fst.arcs(state):
            nxt_ilabels = ilabels + (arc.ilabel,) if arc.ilabel != EPSILON else ilabels
            if len(nxt_ilabels) > max_length:
                continue
            nxt_run = eps_run + 1 if arc.ilabel == EPSILON else 0
            if nxt_run > max_epsilon_run:
                continue
            nxt_olabels = olabels + (arc.olabel,) if arc.olabel != EPSILON else olabels
            stack.append((arc.nextstate, nxt_ilabels, nxt_olabels, weight + arc.weight, nxt_run))
    return language


def _format_weight(weight):
    return repr(float(weight))


def fst_to_text(fst, arc_suffix=None):
    """
    One ``src dst ilabel olabel weight`` line per arc and one ``state weight``
    line per final state. The first line's source is the start state.
    """
    if fst.start < 0:
        return ""
    order = [fst.start] + [state for state in fst.states() if state != fst.start]
    lines = []
    # a start state without arcs announces itself through its final line
    leading_final = not fst.arcs(fst.start)
    if leading_final:
        lines.append(f"{fst.start} {_format_weight(fst.final(fst.start))}")
    for state in order:
        for position, arc in enumerate(fst.arcs(state)):
            suffix = f" {arc_suffix(state, position, arc)}" if arc_suffix else ""
            lines.append(
                f"{state} {arc.nextstate} {arc.ilabel} {arc.olabel} {_format_weight(arc.weight)}{suffix}"
            )
    for state in order:
        if fst.is_final(state) and not (leading_final and state == fst.start):
            lines.append(f"{state} {_format_weight(fst.final(state))}")
    return "".join(f"{line}\n" for line in lines)


def fst_from_text(text, fst=None):
    fst = Fst() if fst is None else fst
    records = [line.split() for line in text.splitlines() if line.strip()]
    if not records:
        return fst
    highest = max(max(int(r[0]), int(r[1]) if len(r) >= 5 else int(r[0])) for r in records)
    fst.add_states(highest + 1)
    fst.set_start(int(records[0][0]))
    for record in records:
        if len(record) in (1, 2):
            weight = float(record[1]) if len(record) == 2 else 0.0
            fst.set_final(int(record[0]), weight)
        elif len(record) >= 5:
            fst.add_arc(int(record[0]), int(record[2]), int(record[3]), float(record[4]), int(record[1]))
        else:
            raise ValueError(f"malformed FST text line: {' '.join(record)}")
    return fst


def write_fst(path, fst):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(fst_to_text(fst), encoding="utf-8")
    logger.info(f"Wrote {fst} to {path}")


def read_fst(path):
    return fst_from_text(Path(path).read_text(encoding="utf-8"))
