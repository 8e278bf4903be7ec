"""
Interpolated absolute-discounting n-gram model written in backoff form.

For a seen history ``h``::

    P(w | h) = max(c(h, w) - D, 0) / c(h) + alpha(h) * P(w | h[1:])
    alpha(h) = D * N1+(h) / c(h)

and ``P(w | h) = P(w | h[1:])`` for unseen histories. The empty history
interpolates with the uniform distribution over predicted tokens.
"""
import logging
import math
from collections import Counter, defaultdict

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"


def pad_ends(sentence, order):
    """``<s>`` is a conditioning symbol only, so unigram models skip it."""
    if order == 1:
        return tuple(sentence) + (EOS,)
    return (BOS,) + tuple(sentence) + (EOS,)


def count_ngrams(sentences, order):
    """Counts of every 1..order gram predicting a token of each padded sentence."""
    if order < 1:
        raise ValueError("order must be at least 1")
    counts = Counter()
    for sentence in sentences:
        padded = pad_ends(sentence, order)
        start = 1 if padded[0] == BOS else 0
        for end in range(start, len(padded)):
            for n in range(1, order + 1):
                if end - n + 1 < 0:
                    break
                counts[padded[end - n + 1:end + 1]] += 1
    return counts


def _normalize_counts(ngram_counts):
    normalized = Counter()
    for key, count in ngram_counts.items():
        gram = (key,) if isinstance(key, str) else tuple(key)
        if count < 0:
            raise ValueError(f"negative count for {gram}")
        if count:
            normalized[gram] += count
    return normalized


class NgramModel:
    def __init__(self, ngram_counts, order=3, discount=0.5):
        if order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {order}")
        if not 0.0 <= discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {discount}")
        counts = _normalize_counts(ngram_counts)
        counts = Counter({gram: c for gram, c in counts.items() if len(gram) <= order})
        if not counts:
            logger.error("Cannot build an n-gram model from empty counts")
            raise ValueError("n-gram counts are empty")
        self.order = order
        self.discount = discount
        self.counts = counts

        self.history_total = Counter()
        self.followers = defaultdict(dict)
        for gram, count in counts.items():
            history, word = gram[:-1], gram[-1]
            self.history_total[history] += count
            self.followers[history][word] = count
        self.vocab = tuple(sorted(gram[0] for gram in counts if len(gram) == 1))
        if not self.vocab:
            raise ValueError("n-gram counts carry no unigrams")
        self.has_eos = EOS in self.vocab
        self._uniform = 1.0 / len(self.vocab)
        self._cache = {}

    @classmethod
    def from_sentences(cls, sentences, order=3, discount=0.5):
        return cls(count_ngrams(sentences, order), order=order, discount=discount)

    @property
    def words(self):
        """Predicted tokens other than the end-of-sentence marker."""
        return tuple(word for word in self.vocab if word != EOS)

    def histories(self):
        """Histories with at least one observed continuation, shortest first."""
        return sorted(self.history_total, key=lambda h: (len(h), h))

    def is_seen(self, history):
        return self.history_total.get(tuple(history), 0) > 0

    def backoff(self, history):
        """alpha(h); 1.0 for histories never seen."""
        history = tuple(history)
        total = self.history_total.get(history, 0)
        if not total:
            return 1.0
        return self.discount * len(self.followers[history]) / total

    def prob(self, word, history=()):
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        key = (word, history)
        if key not in self._cache:
            self._cache[key] = self._prob(word, history)
        return self._cache[key]

    def _prob(self, word, history):
        lower = self._uniform if not history and word in self.vocab else 0.0
        if history:
            lower = self.prob(word, history[1:])
        total = self.history_total.get(history, 0)
        if not total:
            return lower
        count = self.followers[history].get(word, 0)
        return max(count - self.discount, 0.0) / total + self.backoff(history) * lower

    def sentence_logprob(self, words):
        """Natural-log probability of a sentence including its end marker."""
        padded = pad_ends(words, self.order)
        start = 1 if padded[0] == BOS else 0
        total = 0.0
        for end in range(start, len(padded)):
            if padded[end] == EOS and not self.has_eos:
                break
            history = padded[max(0, end - self.order + 1):end]
            p = self.prob(padded[end], history)
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
        return total

    def normalization_error(self):
        """Largest |1 - sum_w P(w | h)| over all seen histories."""
        worst = 0.0
        for history in self.histories():
            mass = math.fsum(self.prob(word, history) for word in self.vocab)
            worst = max(worst, abs(1.0 - mass))
        return worst
