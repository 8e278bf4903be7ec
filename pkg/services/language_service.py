import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ml.ctc import Vocab

logger = logging.getLogger(__name__)

FIRST_CODEPOINT = 0x4E00
INITIALS = ("b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x",
            "zh", "ch", "sh", "r", "z", "c", "s", "y", "w")
FINALS = ("a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong")
SUCCESSOR_SALT = 7919


def syllable_name(class_id):
    """Pinyin-like name of a pronunciation class, with a tone digit once plain names run out."""
    plain = len(INITIALS) * len(FINALS)
    base = INITIALS[class_id % len(INITIALS)] + FINALS[(class_id // len(INITIALS)) % len(FINALS)]
    tone = class_id // plain
    return f"{base}{tone}" if tone else base


@dataclass
class Lexicon:
    """Characters ranked by Zipf frequency, each with one pronunciation class."""

    seed: int
    characters: tuple
    classes: dict
    syllables: tuple
    frequencies: dict
    _members: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        missing = [char for char in self.characters if char not in self.classes]
        if missing:
            raise ValueError(f"characters without a pronunciation class: {missing[:5]}")
        members = {}
        for char in self.characters:
            members.setdefault(self.classes[char], []).append(char)
        self._members = {
            class_id: tuple(sorted(chars, key=lambda c: (-self.frequencies[c], c)))
            for class_id, chars in members.items()
        }

    def class_of(self, char):
        return self.classes[char]

    def syllable_of(self, char):
        return self.syllables[self.classes[char]]

    def members(self, class_id):
        """Characters of a class, most frequent first."""
        return self._members.get(class_id, ())

    def homophone_classes(self):
        return [class_id for class_id, chars in self._members.items() if len(chars) > 1]

    def to_dict(self):
        return {
            "seed": self.seed,
            "characters": list(self.characters),
            "classes": {char: int(c) for char, c in self.classes.items()},
            "syllables": list(self.syllables),
            "frequencies": {char: float(p) for char, p in self.frequencies.items()},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            seed=int(data["seed"]),
            characters=tuple(data["characters"]),
            classes={char: int(c) for char, c in data["classes"].items()},
            syllables=tuple(data["syllables"]),
            frequencies={char: float(p) for char, p in data["frequencies"].items()},
        )


class CharVocab(NamedTuple):
    vocab: Vocab
    fold_map: dict
    coverage: float


class LanguageService:
    @staticmethod
    def zipf_frequencies(n, exponent=1.0):
        weights = 1.0 / np.arange(1, n + 1) ** exponent
        return weights / weights.sum()

    @staticmethod
    def synth_lexicon(seed, n_chars, n_pron_classes, zipf_exponent=1.0):
        if n_pron_classes < 2 or n_chars < n_pron_classes:
            logger.error(f"Degenerate language size: {n_chars} characters, {n_pron_classes} classes")
            raise ValueError("need n_chars >= n_pron_classes >= 2")
        rng = np.random.default_rng(seed)
        characters = tuple(chr(FIRST_CODEPOINT + i) for i in range(n_chars))
        frequencies = LanguageService.zipf_frequencies(n_chars, zipf_exponent)
        shuffled = rng.permutation(n_chars)
        classes = {characters[index]: position % n_pron_classes for position, index in enumerate(shuffled)}
        return Lexicon(
            seed=seed,
            characters=characters,
            classes=classes,
            syllables=tuple(syllable_name(c) for c in range(n_pron_classes)),
            frequencies={char: float(p) for char, p in zip(characters, frequencies)},
        )

    @staticmethod
    def _successors(lexicon, history, count):
        """Fixed, Zipf-biased follower set of a history; the same for every call."""
        entropy = [lexicon.seed, SUCCESSOR_SALT] + [ord(char) for char in history]
        rng = np.random.default_rng(entropy)
        weights = np.array([lexicon.frequencies[c] for c in lexicon.characters])
        chosen = rng.choice(len(weights), size=min(count, len(weights)), replace=False, p=weights)
        chosen_weights = weights[chosen] / weights[chosen].sum()
        return chosen, chosen_weights

    @staticmethod
    def synth_language(seed, n_chars, n_pron_classes, sentence_grammar_order, n_sentences,
                       zipf_exponent=1.0, min_length=4, max_length=12,
                       successor_count=4, context_weight=0.5):
        """
        Lexicon plus ``n_sentences`` sentences from an order-k Markov grammar.

        A token follows its ``k - 1`` predecessors: with probability
        ``context_weight`` it comes from the history's follower set, otherwise
        from the Zipf unigram distribution.
        """
        if sentence_grammar_order < 1:
            raise ValueError("sentence_grammar_order must be at least 1")
        if n_sentences < 1 or not 1 <= min_length <= max_length:
            raise ValueError("need at least one sentence of positive length")
        lexicon = LanguageService.synth_lexicon(seed, n_chars, n_pron_classes, zipf_exponent)
        rng = np.random.default_rng([seed, n_sentences])
        unigram = np.array([lexicon.frequencies[c] for c in lexicon.characters])
        cache = {}
        sentences = []
        for _ in range(n_sentences):
            length = int(rng.integers(min_length, max_length + 1))
            sentence = []
            for _ in range(length):
                history = tuple(sentence[len(sentence) - sentence_grammar_order + 1:]) if sentence_grammar_order > 1 else ()
                if history and rng.random() < context_weight:
                    if history not in cache:
                        cache[history] = LanguageService._successors(lexicon, history, successor_count)
                    choices, weights = cache[history]
                    index = choices[rng.choice(len(choices), p=weights)]
                else:
                    index = rng.choice(len(unigram), p=unigram)
                sentence.append(lexicon.characters[int(index)])
            sentences.append(tuple(sentence))
        logger.info(
            f"Synthesized {n_sentences} sentences over {n_chars} characters in "
            f"{n_pron_classes} pronunciation classes ({len(lexicon.homophone_classes())} with homophones)"
        )
        return lexicon, sentences

    @staticmethod
    def character_counts(sentences):
        return Counter(char for sentence in sentences for char in sentence)

    @staticmethod
    def build_char_vocab(sentences, lexicon, k):
        """
        Top-``k`` characters by corpus frequency; every other lexicon character
        folds onto the most frequent in-vocabulary character of its class.
        """
        counts = LanguageService.character_counts(sentences)
        rank = {char: i for i, char in enumerate(lexicon.characters)}
        if not 1 <= k <= len(counts):
            logger.error(f"Vocabulary size {k} outside 1..{len(counts)}")
            raise ValueError(f"K must be between 1 and the {len(counts)} distinct corpus characters")
        ranked = sorted(counts, key=lambda c: (-counts[c], rank.get(c, len(rank)), c))
        kept = ranked[:k]
        in_vocab = set(kept)
        by_class = {}
        for char in kept:
            by_class.setdefault(lexicon.class_of(char), char)

        fold_map = {}
        for char in sorted(set(lexicon.characters) | set(counts), key=lambda c: rank.get(c, len(rank))):
            if char in in_vocab:
                fold_map[char] = char
            elif lexicon.class_of(char) in by_class:
                fold_map[char] = by_class[lexicon.class_of(char)]
            else:
                logger.warning(f"No in-vocabulary homophone for {char}; folding to {kept[0]}")
                fold_map[char] = kept[0]

        total = sum(counts.values())
        coverage = sum(counts[c] for c in kept) / total
        logger.info(f"Character vocabulary of {k} units covers {100 * coverage:.2f}% of the corpus")
        return CharVocab(Vocab.from_tokens(kept), fold_map, coverage)

    @staticmethod
    def build_syllable_vocab(lexicon):
        return Vocab.from_tokens(lexicon.syllables)

    @staticmethod
    def syllables_to_characters(lexicon, syllables):
        index = {name: class_id for class_id, name in enumerate(lexicon.syllables)}
        characters = []
        for syllable in syllables:
            if syllable not in index:
                raise ValueError(f"unknown syllable {syllable!r}")
            characters.append(lexicon.members(index[syllable])[0])
        return tuple(characters)

    @staticmethod
    def to_units(lexicon, characters, fold_map=None):
        """Acoustic targets: folded characters, or syllables when ``fold_map`` is None."""
        if fold_map is None:
            return tuple(lexicon.syllable_of(char) for char in characters)
        return tuple(fold_map[char] for char in characters)

    @staticmethod
    def decoding_lexicon(lexicon, vocab, fold_map=None):
        """Pronunciation of every character in acoustic units."""
        words = {}
        for char in lexicon.characters:
            unit = fold_map.get(char) if fold_map is not None else lexicon.syllable_of(char)
            if unit is None or unit not in vocab:
                logger.warning(f"{char} has no unit in the acoustic vocabulary; left out of the lexicon")
                continue
            words[char] = (unit,)
        return words
