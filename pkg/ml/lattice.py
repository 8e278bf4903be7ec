"""
Frame-synchronous beam search through a decoding graph and N-best
extraction from the resulting lattice.

A lattice state is a (frame, graph state) pair that survived pruning.
Emitting arcs go from frame t to frame t+1 and carry the graph weight plus
``acoustic_scale * -log p_t(label)``; epsilon arcs stay inside a frame.
"""
import heapq
import logging
import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ml.errors import EmptyLatticeError
from ml.fst import EPSILON, Fst, connected_states, fst_to_text, shortest_path
from ml.graphs import label_columns

logger = logging.getLogger(__name__)


class Lattice(Fst):
    def __init__(self, input_symbols=None, output_symbols=None):
        super().__init__(input_symbols, output_symbols)
        self.state_frames = []

    def add_state(self, frame=0):
        self.state_frames.append(int(frame))
        return super().add_state()

    def arc_span(self, state, arc):
        return self.state_frames[state], self.state_frames[arc.nextstate]


class NbestEntry(NamedTuple):
    words: tuple
    weight: float


class CompiledGraph:
    """Array view of a decoding graph: emitting arcs in CSR order, epsilon arcs per state."""

    def __init__(self, graph, columns):
        self.graph = graph
        self.num_states = graph.num_states
        self.start = graph.start
        self.finals = np.array([graph.final(s) for s in graph.states()], dtype=np.float64)
        offsets = [0]
        ilabels, olabels, weights, targets = [], [], [], []
        self.epsilon_arcs = [[] for _ in graph.states()]
        for state in graph.states():
            for arc in graph.arcs(state):
                if arc.ilabel == EPSILON:
                    self.epsilon_arcs[state].append(arc)
                    continue
                if columns[arc.ilabel] < 0:
                    raise ValueError(f"graph input label {arc.ilabel} has no posterior column")
                ilabels.append(arc.ilabel)
                olabels.append(arc.olabel)
                weights.append(arc.weight)
                targets.append(arc.nextstate)
            offsets.append(len(ilabels))
        self.offsets = np.array(offsets, dtype=np.int64)
        self.ilabels = np.array(ilabels, dtype=np.int64)
        self.olabels = np.array(olabels, dtype=np.int64)
        self.weights = np.array(weights, dtype=np.float64)
        self.targets = np.array(targets, dtype=np.int64)
        self.columns = np.asarray(columns, dtype=np.int64)[self.ilabels] if ilabels else self.ilabels
        self.epsilon_rank = self._epsilon_order()

    def _epsilon_order(self):
        indegree = [0] * self.num_states
        for arcs in self.epsilon_arcs:
            for arc in arcs:
                indegree[arc.nextstate] += 1
        ready = [s for s in range(self.num_states) if indegree[s] == 0]
        rank = [0] * self.num_states
        position = 0
        while ready:
            state = ready.pop()
            rank[state] = position
            position += 1
            for arc in self.epsilon_arcs[state]:
                indegree[arc.nextstate] -= 1
                if indegree[arc.nextstate] == 0:
                    ready.append(arc.nextstate)
        if position != self.num_states:
            raise ValueError("decoding graph has an epsilon cycle")
        return rank

    def emitting(self, states):
        """Arc indices leaving ``states`` and the position of their source in ``states``."""
        starts = self.offsets[states]
        counts = self.offsets[states + 1] - starts
        sources = np.repeat(np.arange(states.size), counts)
        arc_index = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        return arc_index, sources


def compile_graph(graph, vocab):
    if graph.input_symbols is None:
        raise ValueError("decoding graph needs an input symbol table")
    return CompiledGraph(graph, label_columns(graph.input_symbols, vocab))


def _epsilon_closure(compiled, lattice, frame_nodes, frame):
    """Extend the tokens of one frame along epsilon arcs in topological order."""
    rank = compiled.epsilon_rank
    heap = [(rank[state], state) for state in frame_nodes]
    heapq.heapify(heap)
    done = set()
    while heap:
        _, state = heapq.heappop(heap)
        if state in done:
            continue
        done.add(state)
        cost, node = frame_nodes[state]
        for arc in compiled.epsilon_arcs[state]:
            candidate = cost + arc.weight
            if arc.nextstate not in frame_nodes:
                frame_nodes[arc.nextstate] = (candidate, lattice.add_state(frame))
                heapq.heappush(heap, (rank[arc.nextstate], arc.nextstate))
            elif candidate < frame_nodes[arc.nextstate][0]:
                frame_nodes[arc.nextstate] = (candidate, frame_nodes[arc.nextstate][1])
            lattice.add_arc(node, EPSILON, arc.olabel, arc.weight, frame_nodes[arc.nextstate][1])
    return frame_nodes


def beam_search_decode(post, graph, beam_width=16, acoustic_scale=1.0, compiled=None):
    """
    Viterbi beam search keeping the ``beam_width`` cheapest graph states of
    every frame before epsilon expansion. ``beam_width=math.inf`` disables
    pruning. Returns the trimmed lattice.
    """
    if not beam_width >= 1:
        raise ValueError(f"beam_width must be at least 1, got {beam_width}")
    if acoustic_scale < 0:
        raise ValueError("acoustic_scale must be nonnegative")
    compiled = compiled or compile_graph(graph, post.vocab)
    with np.errstate(divide="ignore"):
        acoustic = -post.log_probs * acoustic_scale if acoustic_scale else np.zeros_like(post.probs)
    acoustic = np.where(post.probs > 0, acoustic, np.inf)

    raw = Lattice(graph.input_symbols, graph.output_symbols)
    frame_nodes = {compiled.start: (0.0, raw.add_state(0))}
    raw.set_start(frame_nodes[compiled.start][1])
    frame_nodes = _epsilon_closure(compiled, raw, frame_nodes, 0)

    for t in range(post.num_frames):
        states = np.fromiter(frame_nodes, dtype=np.int64, count=len(frame_nodes))
        costs = np.array([frame_nodes[s][0] for s in states])
        arc_index, sources = compiled.emitting(states)
        step = compiled.weights[arc_index] + acoustic[t, compiled.columns[arc_index]]
        totals = costs[sources] + step
        alive = np.isfinite(totals)
        arc_index, sources, step, totals = arc_index[alive], sources[alive], step[alive], totals[alive]
        if not arc_index.size:
            break
        targets = compiled.targets[arc_index]

        order = np.lexsort((totals, targets))
        first = np.ones(order.size, dtype=bool)
        first[1:] = targets[order][1:] != targets[order][:-1]
        best = order[first]
        ranked = best[np.lexsort((targets[best], totals[best]))]
        if len(ranked) > beam_width:
            ranked = ranked[:int(beam_width)]

        next_nodes = {}
        for k in ranked:
            state = int(targets[k])
            next_nodes[state] = (float(totals[k]), raw.add_state(t + 1))
        for k in range(arc_index.size):
            state = int(targets[k])
            if state in next_nodes:
                raw.add_arc(
                    frame_nodes[int(states[sources[k]])][1],
                    int(compiled.ilabels[arc_index[k]]),
                    int(compiled.olabels[arc_index[k]]),
                    float(step[k]),
                    next_nodes[state][1],
                )
        frame_nodes = _epsilon_closure(compiled, raw, next_nodes, t + 1)
    else:
        for state, (_, node) in frame_nodes.items():
            if np.isfinite(compiled.finals[state]):
                raw.set_final(node, compiled.finals[state])

    lattice = trim_lattice(raw)
    if lattice.start < 0:
        logger.error(f"Beam {beam_width} pruned every hypothesis over {post.num_frames} frames")
        raise EmptyLatticeError(f"no hypothesis survived beam {beam_width}; retry with a larger beam")
    return lattice


def trim_lattice(lattice):
    keep = connected_states(lattice)
    result = Lattice(lattice.input_symbols, lattice.output_symbols)
    if not keep:
        return result
    mapping = {state: result.add_state(lattice.state_frames[state]) for state in keep}
    result.set_start(mapping[lattice.start])
    for state in keep:
        result.set_final(mapping[state], lattice.final(state))
        for arc in lattice.arcs(state):
            if arc.nextstate in mapping:
                result.add_arc(mapping[state], arc.ilabel, arc.olabel, arc.weight, mapping[arc.nextstate])
    return result


def _words(lattice, labels):
    symbols = lattice.output_symbols
    return tuple(symbols.symbol(label) for label in labels) if symbols else tuple(labels)


def best_path(lattice):
    path = shortest_path(lattice)
    return NbestEntry(_words(lattice, path.olabels), path.weight)


def _distance_to_final(lattice):
    order = []
    seen = set()
    for root in lattice.states():
        if root in seen:
            continue
        stack = [(root, iter(lattice.arcs(root)))]
        seen.add(root)
        while stack:
            state, arcs = stack[-1]
            for arc in arcs:
                if arc.nextstate not in seen:
                    seen.add(arc.nextstate)
                    stack.append((arc.nextstate, iter(lattice.arcs(arc.nextstate))))
                    break
            else:
                order.append(state)
                stack.pop()
    distance = [math.inf] * lattice.num_states
    for state in order:
        best = lattice.final(state)
        for arc in lattice.arcs(state):
            best = min(best, arc.weight + distance[arc.nextstate])
        distance[state] = best
    return distance


def nbest(lattice, n):
    """
    The ``n`` cheapest distinct word sequences, cheapest first.

    A* over (state, words so far) with the exact distance-to-final as
    heuristic: the first time a word sequence completes it does so at its
    best weight, and a (state, prefix) pair is expanded at most once.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if lattice.start < 0:
        return []
    if not lattice.is_acyclic():
        raise ValueError("n-best extraction needs an acyclic lattice")
    remaining = _distance_to_final(lattice)
    heap = [(remaining[lattice.start], (), lattice.start, 0.0)]
    expanded = set()
    emitted = set()
    results = []
    while heap and len(results) < n:
        estimate, prefix, state, cost = heapq.heappop(heap)
        if state == -1:
            if prefix not in emitted:
                emitted.add(prefix)
                results.append(NbestEntry(_words(lattice, prefix), cost))
            continue
        if (state, prefix) in expanded:
            continue
        expanded.add((state, prefix))
        if lattice.is_final(state):
            total = cost + lattice.final(state)
            heapq.heappush(heap, (total, prefix, -1, total))
        for arc in lattice.arcs(state):
            if remaining[arc.nextstate] == math.inf:
                continue
            nxt_prefix = prefix + (arc.olabel,) if arc.olabel != EPSILON else prefix
            nxt_cost = cost + arc.weight
            heapq.heappush(heap, (nxt_cost + remaining[arc.nextstate], nxt_prefix, arc.nextstate, nxt_cost))
    return results


def lattice_to_text(lattice):
    """FST text with two extra arc columns: first and last frame of the arc."""
    return fst_to_text(lattice, arc_suffix=lambda state, _, arc: "%d %d" % lattice.arc_span(state, arc))


def write_lattice(path, lattice):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(lattice_to_text(lattice), encoding="utf-8")
