import logging
from typing import NamedTuple

from joblib import Parallel, delayed

from ml.ctc import ThresholdConfig, greedy_search, threshold_expand
from ml.errors import EmptyLatticeError
from ml.graphs import (
    build_decoding_graph,
    build_grammar_fst,
    build_lexicon_fst,
    build_token_fst,
    build_unit_symbols,
    build_word_symbols,
    disambig_labels,
)
from ml.lattice import beam_search_decode, compile_graph, nbest
from ml.ngram import NgramModel
from services.language_service import LanguageService

logger = logging.getLogger(__name__)

THRESHOLD_CONFIGS = (
    ThresholdConfig(1.0, 1.0),
    ThresholdConfig(0.5, 0.1),
    ThresholdConfig(0.6, 0.1),
    ThresholdConfig(0.5, 0.3),
    ThresholdConfig(0.6, 0.3),
)
BEAM_RETRY_FACTOR = 4


class DecodingGraph(NamedTuple):
    graph: object
    units: object
    words: object


def _greedy_one(post, thresholds, max_paths):
    _, hypothesis = greedy_search(post)
    expanded = {cfg.tag: threshold_expand(post, cfg, max_paths) for cfg in thresholds}
    return hypothesis, expanded


def _wfst_one(utt_id, post, compiled, beam, acoustic_scale, nbest_size):
    try:
        lattice = beam_search_decode(post, compiled.graph, beam, acoustic_scale, compiled)
    except EmptyLatticeError:
        logger.warning(f"Empty lattice for {utt_id} at beam {beam}; retrying with beam {beam * BEAM_RETRY_FACTOR}")
        lattice = beam_search_decode(post, compiled.graph, beam * BEAM_RETRY_FACTOR, acoustic_scale, compiled)
    return nbest(lattice, nbest_size)


class DecodingService:
    @staticmethod
    def to_characters(lexicon, tokens, syllable_units):
        if syllable_units:
            return LanguageService.syllables_to_characters(lexicon, tokens)
        return tuple(tokens)

    @staticmethod
    def greedy_decode(posteriors, lexicon, syllable_units=False, thresholds=THRESHOLD_CONFIGS,
                      max_paths=16, n_jobs=1):
        """
        1-best and threshold-expanded hypotheses per utterance, in characters.
        Returns ``{utt_id: {"hypothesis": tokens, "thresholds": {tag: [tokens, ...]}}}``.
        """
        ids = list(posteriors)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_greedy_one)(posteriors[utt_id], thresholds, max_paths) for utt_id in ids
        )
        decoded = {}
        for utt_id, (hypothesis, expanded) in zip(ids, results):
            decoded[utt_id] = {
                "hypothesis": DecodingService.to_characters(lexicon, hypothesis, syllable_units),
                "thresholds": {
                    tag: [DecodingService.to_characters(lexicon, hyp, syllable_units) for hyp in hyps]
                    for tag, hyps in expanded.items()
                },
            }
        logger.info(f"Greedy decoding of {len(ids)} utterances with {len(thresholds)} threshold settings")
        return decoded

    @staticmethod
    def build_graph(lexicon, vocab, sentences, fold_map=None, order=3, discount=0.5):
        """Decoding graph over characters for a character (``fold_map``) or syllable acoustic model."""
        pronunciations = LanguageService.decoding_lexicon(lexicon, vocab, fold_map)
        model = NgramModel.from_sentences(sentences, order=order, discount=discount)
        words = build_word_symbols(set(pronunciations) | set(model.words))
        units = build_unit_symbols(vocab)
        token_fst = build_token_fst(vocab, units)
        lexicon_fst = build_lexicon_fst(pronunciations, unit_symbols=units, word_symbols=words)
        grammar_fst = build_grammar_fst(model, word_symbols=words)
        graph = build_decoding_graph(token_fst, lexicon_fst, grammar_fst, disambig_labels(units))
        return DecodingGraph(graph, units, words)

    @staticmethod
    def wfst_decode(posteriors, graph, vocab, beam=16, acoustic_scale=1.0, nbest_size=10, n_jobs=1):
        """
        Beam search per utterance. Returns ``{utt_id: [NbestEntry, ...]}``,
        cheapest first; the first entry is the 1-best.
        """
        compiled = compile_graph(graph, vocab)
        ids = list(posteriors)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_wfst_one)(utt_id, posteriors[utt_id], compiled, beam, acoustic_scale, nbest_size)
            for utt_id in ids
        )
        logger.info(f"WFST decoding of {len(ids)} utterances at beam {beam}, acoustic scale {acoustic_scale}")
        return dict(zip(ids, results))

    @staticmethod
    def greedy_records(decoded, utterances):
        """JSON-lines rows of a greedy decode; token sequences are space-joined."""
        return [
            {
                "utt_id": utt_id,
                "split": utterances[utt_id].split,
                "testset": utterances[utt_id].testset,
                "reference": " ".join(utterances[utt_id].reference),
                "hypothesis": " ".join(result["hypothesis"]),
                "thresholds": {tag: [" ".join(hyp) for hyp in hyps] for tag, hyps in result["thresholds"].items()},
            }
            for utt_id, result in decoded.items()
        ]

    @staticmethod
    def wfst_records(decoded, utterances, nbest_size):
        return [
            {
                "utt_id": utt_id,
                "split": utterances[utt_id].split,
                "testset": utterances[utt_id].testset,
                "reference": " ".join(utterances[utt_id].reference),
                "hypothesis": " ".join(entries[0].words) if entries else "",
                "nbest_size": nbest_size,
                "nbest": [[" ".join(entry.words), entry.weight] for entry in entries],
            }
            for utt_id, entries in decoded.items()
        ]
