"""
CTC mathematics: the collapse map, the exact loss and its gradient, greedy
best-path search and threshold-based path retention.

Label ids index the columns of a posterior matrix. The blank is an ordinary
column whose position is ``Vocab.blank_id`` (last by default).
"""
import heapq
import itertools
import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ml.errors import InfeasibleTargetError, InstanceTooLargeError, ShapeError
from ml.numerics import record_op

logger = logging.getLogger(__name__)

BLANK_MARKER = "<b>"
POSTERIOR_MAGIC = b"PSTM1"
ROW_TOLERANCE = 1e-9
ORACLE_MAX_FRAMES = 8
ORACLE_MAX_TOKENS = 4


@dataclass(frozen=True)
class Vocab:
    labels: tuple
    blank_id: int

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("vocabulary labels must be unique")
        if not 0 <= self.blank_id < len(self.labels) or self.labels[self.blank_id] != BLANK_MARKER:
            raise ValueError(f"label {self.blank_id} must be the blank marker {BLANK_MARKER!r}")

    @classmethod
    def from_tokens(cls, tokens):
        tokens = tuple(tokens)
        return cls(labels=tokens + (BLANK_MARKER,), blank_id=len(tokens))

    @property
    def tokens(self):
        return tuple(label for i, label in enumerate(self.labels) if i != self.blank_id)

    @property
    def size(self):
        return len(self.labels) - 1

    @property
    def num_labels(self):
        return len(self.labels)

    @cached_property
    def _ids(self):
        return {label: i for i, label in enumerate(self.labels)}

    def id(self, token):
        try:
            label = self._ids[token]
        except KeyError:
            raise ValueError(f"token {token!r} is not in the vocabulary") from None
        if label == self.blank_id:
            raise ValueError("the blank is not a token")
        return label

    def __contains__(self, token):
        return token in self._ids and self._ids[token] != self.blank_id

    def encode(self, tokens):
        return tuple(self.id(token) for token in tokens)

    def decode(self, ids):
        return tuple(self.labels[i] for i in ids)


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    probs: np.ndarray
    vocab: Vocab

    def __post_init__(self):
        probs = self.probs
        if probs.ndim != 2 or probs.shape[1] != self.vocab.num_labels:
            raise ShapeError(
                f"posteriors of shape {probs.shape} do not match {self.vocab.num_labels} labels"
            )
        if probs.shape[0] and not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=ROW_TOLERANCE):
            raise ValueError("every posterior row must sum to 1")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0 + ROW_TOLERANCE):
            raise ValueError("posterior entries must lie in [0, 1]")

    @property
    def num_frames(self):
        return self.probs.shape[0]

    @cached_property
    def log_probs(self):
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class ThresholdConfig:
    upper_th: float
    lower_th: float

    def __post_init__(self):
        for name in ("upper_th", "lower_th"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.lower_th > self.upper_th:
            raise ValueError("lower_th must not exceed upper_th")

    @property
    def tag(self):
        return f"threshold({self.upper_th:g},{self.lower_th:g})"


def collapse(path, blank_id):
    """Merge consecutive repeats, then drop blanks."""
    out = []
    previous = None
    for label in path:
        label = int(label)
        if label != previous and label != blank_id:
            out.append(label)
        previous = label
    return tuple(out)


def required_frames(target):
    """Shortest path length that collapses onto ``target``."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extend_with_blanks(target, blank_id):
    extended = [blank_id]
    for label in target:
        extended.extend((label, blank_id))
    return np.array(extended, dtype=np.int64)


def ctc_forward_backward(log_probs, target, blank_id):
    """
    Log-likelihood of ``target`` and per-frame label occupancies.

    ``occupancy[t, k]`` is the posterior probability that a path for the
    target emits label ``k`` at frame ``t``; the gradient of the negative
    log-likelihood with respect to ``log_probs`` is ``-occupancy``.
    """
    target = tuple(int(label) for label in target)
    frames, num_labels = log_probs.shape
    if frames < required_frames(target):
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs {required_frames(target)} frames, got {frames}"
        )
    extended = _extend_with_blanks(target, blank_id)
    states = extended.size
    emit = log_probs[:, extended]
    can_skip = np.zeros(states, dtype=bool)
    can_skip[2:] = (extended[2:] != blank_id) & (extended[2:] != extended[:-2])
    neg_inf = -np.inf

    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.full((frames, states), neg_inf)
        alpha[0, 0] = emit[0, 0]
        if states > 1:
            alpha[0, 1] = emit[0, 1]
        for t in range(1, frames):
            prev = alpha[t - 1]
            step = np.concatenate(([neg_inf], prev[:-1]))
            jump = np.full(states, neg_inf)
            jump[2:] = np.where(can_skip[2:], prev[:-2], neg_inf)
            alpha[t] = np.logaddexp(np.logaddexp(prev, step), jump) + emit[t]

        beta = np.full((frames, states), neg_inf)
        beta[-1, -1] = emit[-1, -1]
        if states > 1:
            beta[-1, -2] = emit[-1, -2]
        for t in range(frames - 2, -1, -1):
            nxt = beta[t + 1]
            step = np.concatenate((nxt[1:], [neg_inf]))
            jump = np.full(states, neg_inf)
            jump[:-2] = np.where(can_skip[2:], nxt[2:], neg_inf)
            beta[t] = np.logaddexp(np.logaddexp(nxt, step), jump) + emit[t]

        log_likelihood = alpha[-1, -1]
        if states > 1:
            log_likelihood = np.logaddexp(log_likelihood, alpha[-1, -2])

        occupancy = np.zeros((frames, num_labels))
        if np.isfinite(log_likelihood):
            log_gamma = np.where(np.isfinite(emit), alpha + beta - emit - log_likelihood, neg_inf)
            np.add.at(occupancy, (slice(None), extended), np.exp(log_gamma))
    return float(log_likelihood), occupancy


def _target_ids(post, target):
    return tuple(post.vocab.encode(target))


def ctc_loss(post, target):
    """Negative log-likelihood of the token sequence ``target``."""
    log_likelihood, _ = ctc_forward_backward(post.log_probs, _target_ids(post, target), post.vocab.blank_id)
    return -log_likelihood


def ctc_loss_gradient(post, target):
    """d ctc_loss / d posteriors."""
    _, occupancy = ctc_forward_backward(post.log_probs, _target_ids(post, target), post.vocab.blank_id)
    grad = np.zeros_like(post.probs)
    np.divide(-occupancy, post.probs, out=grad, where=post.probs > 0)
    return grad


def ctc_loss_op(log_probs, target, blank_id):
    """Tape-recorded CTC loss over log-posteriors (e.g. a log_softmax output)."""
    log_likelihood, occupancy = ctc_forward_backward(log_probs.data, target, blank_id)
    return record_op("ctc_loss", (log_probs,), -log_likelihood, lambda g: (-occupancy * g,))


def enumerate_paths(post, target):
    """Brute-force sum over every path that collapses onto ``target``."""
    frames = post.num_frames
    if frames > ORACLE_MAX_FRAMES or post.vocab.size > ORACLE_MAX_TOKENS:
        raise InstanceTooLargeError(
            f"enumeration limited to T <= {ORACLE_MAX_FRAMES} and |vocab| <= {ORACLE_MAX_TOKENS}"
        )
    target = _target_ids(post, target)
    if frames < required_frames(target):
        return 0.0
    blank_id = post.vocab.blank_id
    rows = np.arange(frames)
    total = 0.0
    for path in itertools.product(range(post.vocab.num_labels), repeat=frames):
        if collapse(path, blank_id) == target:
            total += float(np.prod(post.probs[rows, path]))
    return total


def greedy_search(post):
    """Per-frame argmax path (ties go to the lowest label id) and its collapse."""
    path = tuple(int(label) for label in np.argmax(post.probs, axis=1))
    return path, post.vocab.decode(collapse(path, post.vocab.blank_id))


def threshold_expand(post, cfg, max_paths=16, max_expansions=None):
    """
    Hypotheses from every path that keeps the top-1 label per frame and, on
    ambiguous frames, optionally the top-2 label instead.

    A frame is ambiguous when ``lower_th < p1 < upper_th`` and
    ``p2 > lower_th``. Hypotheses come back ordered by the probability of their
    best path, deduplicated, at most ``max_paths`` of them; the first one is
    always the greedy hypothesis.
    """
    if max_paths < 1:
        raise ValueError("max_paths must be at least 1")
    probs = post.probs
    frames = post.num_frames
    blank_id = post.vocab.blank_id
    ranked = np.argsort(-probs, axis=1, kind="stable")
    rows = np.arange(frames)
    top1 = ranked[:, 0].copy()
    top2 = ranked[:, 1] if probs.shape[1] > 1 else ranked[:, 0]
    p1 = probs[rows, top1]
    p2 = probs[rows, top2]
    ambiguous = (cfg.lower_th < p1) & (p1 < cfg.upper_th) & (p2 > cfg.lower_th)

    candidates = np.flatnonzero(ambiguous)
    penalties = np.log(p1[candidates]) - np.log(p2[candidates])
    order = np.argsort(penalties, kind="stable")
    candidates, penalties = candidates[order], penalties[order]
    count = candidates.size
    limit = max_expansions or max(1024, 64 * max_paths)

    hypotheses = []
    seen = set()
    heap = [(0.0, ())]
    popped = 0
    while heap and len(hypotheses) < max_paths and popped < limit:
        _, chosen = heapq.heappop(heap)
        popped += 1
        path = top1.copy()
        if chosen:
            frames_switched = candidates[list(chosen)]
            path[frames_switched] = top2[frames_switched]
        hypothesis = collapse(path, blank_id)
        if hypothesis not in seen:
            seen.add(hypothesis)
            hypotheses.append(post.vocab.decode(hypothesis))
        successors = []
        if not chosen:
            if count:
                successors.append((0,))
        else:
            last = chosen[-1]
            if last + 1 < count:
                successors.append(chosen + (last + 1,))
                successors.append(chosen[:-1] + (last + 1,))
        for subset in successors:
            heapq.heappush(heap, (math.fsum(penalties[list(subset)]), subset))
    if heap and len(hypotheses) < max_paths:
        logger.warning(f"threshold expansion stopped after {limit} paths with {len(hypotheses)} hypotheses")
    return hypotheses


def write_vocab(path, vocab):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{label}\n" for label in vocab.labels), encoding="utf-8")


def read_vocab(path):
    labels = tuple(Path(path).read_text(encoding="utf-8").splitlines())
    if BLANK_MARKER not in labels:
        raise ValueError(f"{path} has no blank marker line {BLANK_MARKER!r}")
    return Vocab(labels=labels, blank_id=labels.index(BLANK_MARKER))


def encode_posteriors(post):
    frames, columns = post.probs.shape
    return (
        POSTERIOR_MAGIC
        + struct.pack("<ii", frames, columns)
        + np.ascontiguousarray(post.probs, dtype="<f8").tobytes()
    )


def decode_posteriors(payload, vocab):
    if payload[:len(POSTERIOR_MAGIC)] != POSTERIOR_MAGIC:
        raise ValueError("not a PSTM1 posterior file")
    offset = len(POSTERIOR_MAGIC)
    frames, columns = struct.unpack_from("<ii", payload, offset)
    offset += 8
    if len(payload) - offset != 8 * frames * columns:
        raise ValueError("PSTM1 payload size does not match its header")
    values = np.frombuffer(payload, dtype="<f8", offset=offset).astype(np.float64)
    return PosteriorMatrix(values.reshape(frames, columns), vocab)


def write_posteriors(path, post):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_posteriors(post))


def read_posteriors(path, vocab):
    return decode_posteriors(Path(path).read_bytes(), vocab)
