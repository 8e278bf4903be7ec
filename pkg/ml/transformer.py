"""
Post-LN transformer encoder-decoder used as the spelling corrector.

Sequences are framed as ``src = tokens + </s>``, ``decoder input = <s> +
reference`` and ``decoder target = reference + </s>``. Every sequence of a
batch is processed as its own matrix; padding is masked out of attention
and of the loss.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ml import numerics as nx
from ml.checkpoint import load_checkpoint, save_checkpoint
from ml.errors import ShapeError
from ml.sgdr import sgdr_lr

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(len(SPECIALS))
CLIP_NORM = 5.0
PRESETS = ("desk", "small", "big")
CONFIG_FILE = "config.json"
VOCAB_FILE = "vocab.txt"


class SpellerVocab:
    def __init__(self, tokens=()):
        extra = sorted({token for token in tokens if token not in SPECIALS})
        self.symbols = SPECIALS + tuple(extra)
        self._ids = {symbol: i for i, symbol in enumerate(self.symbols)}

    @classmethod
    def from_pairs(cls, pairs):
        return cls(token for hyp, ref in pairs for token in (*hyp, *ref))

    @property
    def size(self):
        return len(self.symbols)

    def __contains__(self, token):
        return token in self._ids

    def encode(self, tokens):
        return [self._ids.get(token, UNK_ID) for token in tokens]

    def decode(self, ids):
        return tuple(self.symbols[i] for i in ids)

    def write(self, path):
        Path(path).write_text("".join(f"{symbol}\n" for symbol in self.symbols), encoding="utf-8")

    @classmethod
    def read(cls, path):
        symbols = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(symbols[:len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path} does not start with the special symbols {SPECIALS}")
        vocab = cls(symbols[len(SPECIALS):])
        if vocab.symbols != tuple(symbols):
            raise ValueError(f"{path} is not a sorted, duplicate-free speller vocabulary")
        return vocab


@dataclass(frozen=True)
class TransformerConfig:
    num_layers: int = 2
    d_model: int = 64
    d_ff: int = 256
    num_heads: int = 4
    dropout: float = 0.1
    max_len: int = 64

    def __post_init__(self):
        if min(self.num_layers, self.d_model, self.d_ff, self.num_heads, self.max_len) < 1:
            raise ValueError("transformer dimensions must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by {self.num_heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_k(self):
        return self.d_model // self.num_heads

    @property
    def d_v(self):
        return self.d_model // self.num_heads

    @classmethod
    def desk(cls):
        return cls(num_layers=2, d_model=64, d_ff=256, num_heads=4)

    @classmethod
    def small(cls):
        return cls(num_layers=3, d_model=512, d_ff=2048, num_heads=4)

    @classmethod
    def big(cls):
        return cls(num_layers=6, d_model=512, d_ff=2048, num_heads=8)

    @classmethod
    def preset(cls, name):
        if name not in PRESETS:
            raise ValueError(f"unknown transformer preset {name!r}; choose one of {PRESETS}")
        return getattr(cls, name)()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def parameter_count(config, vocab_size):
    d, f, n, v = config.d_model, config.d_ff, config.num_layers, vocab_size
    attention = 4 * (d * d + d)
    feed_forward = d * f + f + f * d + d
    encoder = n * (attention + feed_forward + 4 * d)
    decoder = n * (2 * attention + feed_forward + 6 * d)
    return 2 * v * d + encoder + decoder + d * v + v


def positional_encoding(length, d_model):
    position = np.arange(length)[:, None]
    rates = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[:d_model // 2])
    return table


class ForwardResult(NamedTuple):
    probs: np.ndarray
    loss: nx.Tensor


class Correction(NamedTuple):
    tokens: tuple
    truncated: bool


class SpellerModel:
    def __init__(self, config, vocab, params):
        self.config = config
        self.vocab = vocab
        self.params = params
        self._positions = positional_encoding(config.max_len, config.d_model)

    @classmethod
    def initialize(cls, config, vocab, seed=0):
        rng = nx.new_rng(seed)
        d, f, v = config.d_model, config.d_ff, vocab.size
        params = {}

        def matrix(name, rows, cols, std=None):
            std = std if std is not None else 1.0 / math.sqrt(rows)
            params[name] = nx.Tensor.wrap(rng.normal(0.0, std, size=(rows, cols)), name=name)

        def vector(name, size, value=0.0):
            params[name] = nx.Tensor.wrap(np.full((1, size), value), name=name)

        def attention(prefix):
            for part in ("q", "k", "v", "o"):
                matrix(f"{prefix}.w{part}", d, d)
                vector(f"{prefix}.b{part}", d)

        def feed_forward(prefix):
            matrix(f"{prefix}.w1", d, f)
            vector(f"{prefix}.b1", f)
            matrix(f"{prefix}.w2", f, d)
            vector(f"{prefix}.b2", d)

        def norm(prefix):
            vector(f"{prefix}.gamma", d, 1.0)
            vector(f"{prefix}.beta", d)

        matrix("src_embed", v, d, std=d ** -0.5)
        matrix("tgt_embed", v, d, std=d ** -0.5)
        for i in range(config.num_layers):
            attention(f"enc{i}.self")
            norm(f"enc{i}.norm1")
            feed_forward(f"enc{i}.ff")
            norm(f"enc{i}.norm2")
        for i in range(config.num_layers):
            attention(f"dec{i}.self")
            norm(f"dec{i}.norm1")
            attention(f"dec{i}.cross")
            norm(f"dec{i}.norm2")
            feed_forward(f"dec{i}.ff")
            norm(f"dec{i}.norm3")
        matrix("out.w", d, v)
        vector("out.b", v)
        return cls(config, vocab, params)

    def num_parameters(self):
        return sum(tensor.size for tensor in self.params.values())

    def _linear(self, x, prefix, suffix=""):
        return nx.add(nx.matmul(x, self.params[f"{prefix}.w{suffix}"]), self.params[f"{prefix}.b{suffix}"])

    def _norm(self, x, prefix):
        return nx.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _dropout(self, x, training, rng):
        return nx.dropout(x, self.config.dropout, rng, training)

    def _multi_head(self, prefix, query, memory, mask):
        q = self._linear(query, prefix, "q")
        k = self._linear(memory, prefix, "k")
        v = self._linear(memory, prefix, "v")
        width = self.config.d_k
        heads = [
            nx.attention(
                nx.slice_columns(q, h * width, (h + 1) * width),
                nx.slice_columns(k, h * width, (h + 1) * width),
                nx.slice_columns(v, h * width, (h + 1) * width),
                mask,
            )
            for h in range(self.config.num_heads)
        ]
        return self._linear(nx.concat_columns(heads), prefix, "o")

    def _feed_forward(self, x, prefix):
        hidden = nx.relu(nx.add(nx.matmul(x, self.params[f"{prefix}.w1"]), self.params[f"{prefix}.b1"]))
        return nx.add(nx.matmul(hidden, self.params[f"{prefix}.w2"]), self.params[f"{prefix}.b2"])

    def _embed(self, table, ids, training, rng):
        if len(ids) > self.config.max_len:
            raise ShapeError(f"sequence of length {len(ids)} exceeds max_len {self.config.max_len}")
        scaled = nx.scale(nx.embedding(self.params[table], ids), math.sqrt(self.config.d_model))
        positions = nx.Tensor.wrap(self._positions[:len(ids)])
        return self._dropout(nx.add(scaled, positions), training, rng)

    def encode(self, src_ids, training=False, rng=None):
        keys = np.asarray(src_ids) != PAD_ID
        mask = np.broadcast_to(keys[None, :], (len(src_ids), len(src_ids)))
        x = self._embed("src_embed", src_ids, training, rng)
        for i in range(self.config.num_layers):
            attended = self._multi_head(f"enc{i}.self", x, x, mask)
            x = self._norm(nx.add(x, self._dropout(attended, training, rng)), f"enc{i}.norm1")
            x = self._norm(nx.add(x, self._dropout(self._feed_forward(x, f"enc{i}.ff"), training, rng)), f"enc{i}.norm2")
        return x

    def decode(self, tgt_ids, memory, src_ids, training=False, rng=None):
        """Logits for every decoder position; position i sees decoder inputs 0..i only."""
        length = len(tgt_ids)
        keys = np.asarray(tgt_ids) != PAD_ID
        causal = np.tril(np.ones((length, length), dtype=bool)) & keys[None, :]
        causal[np.arange(length), np.arange(length)] = True
        source_keys = np.asarray(src_ids) != PAD_ID
        cross = np.broadcast_to(source_keys[None, :], (length, len(src_ids)))
        y = self._embed("tgt_embed", tgt_ids, training, rng)
        for i in range(self.config.num_layers):
            attended = self._multi_head(f"dec{i}.self", y, y, causal)
            y = self._norm(nx.add(y, self._dropout(attended, training, rng)), f"dec{i}.norm1")
            attended = self._multi_head(f"dec{i}.cross", y, memory, cross)
            y = self._norm(nx.add(y, self._dropout(attended, training, rng)), f"dec{i}.norm2")
            y = self._norm(nx.add(y, self._dropout(self._feed_forward(y, f"dec{i}.ff"), training, rng)), f"dec{i}.norm3")
        return nx.add(nx.matmul(y, self.params["out.w"]), self.params["out.b"])

    def logits(self, src_ids, tgt_ids, training=False, rng=None):
        memory = self.encode(src_ids, training, rng)
        return self.decode(tgt_ids, memory, src_ids, training, rng)

    def save(self, path):
        """Write ``path`` plus the config and vocabulary files next to it."""
        path = Path(path)
        save_checkpoint(path, self.params)
        (path.parent / CONFIG_FILE).write_text(json.dumps(self.config.to_dict(), indent=2))
        self.vocab.write(path.parent / VOCAB_FILE)

    @classmethod
    def load(cls, path):
        path = Path(path)
        config_path, vocab_path = path.parent / CONFIG_FILE, path.parent / VOCAB_FILE
        for required in (config_path, vocab_path):
            if not required.exists():
                logger.error(f"Speller file not found: {required}")
                raise FileNotFoundError(f"Speller file not found: {required}")
        config = TransformerConfig.from_dict(json.loads(config_path.read_text()))
        vocab = SpellerVocab.read(vocab_path)
        params = {name: nx.Tensor.wrap(value, name=name) for name, value in load_checkpoint(path).items()}
        if sum(t.size for t in params.values()) != parameter_count(config, vocab.size):
            raise ShapeError(f"checkpoint {path} does not match its config and vocabulary")
        return cls(config, vocab, params)


def frame_pair(vocab, hypothesis, reference):
    src = vocab.encode(hypothesis) + [EOS_ID]
    target = vocab.encode(reference)
    return src, [BOS_ID] + target, target + [EOS_ID]


def fits(config, hypothesis, reference):
    return len(hypothesis) + 1 <= config.max_len and len(reference) + 1 <= config.max_len


def forward(model, src_tokens, tgt_tokens, training=False, rng=None):
    """Teacher-forced output distributions and mean cross-entropy of one pair."""
    if not fits(model.config, src_tokens, tgt_tokens):
        raise ValueError(f"pair longer than max_len {model.config.max_len}")
    src, tgt_in, tgt_out = frame_pair(model.vocab, src_tokens, tgt_tokens)
    logits = model.logits(src, tgt_in, training, rng)
    loss = nx.cross_entropy(logits, tgt_out)
    return ForwardResult(probs=nx.softmax(nx.Tensor.wrap(logits.data)).data, loss=loss)


def _pad(ids, length):
    return ids + [PAD_ID] * (length - len(ids))


def batch_loss(model, pairs, training=False, rng=None):
    """Token-level mean cross-entropy of a padded batch."""
    framed = [frame_pair(model.vocab, hyp, ref) for hyp, ref in pairs]
    src_len = max(len(src) for src, _, _ in framed)
    tgt_len = max(len(tgt_in) for _, tgt_in, _ in framed)
    total_tokens = sum(len(tgt_out) for _, _, tgt_out in framed)
    loss = None
    for src, tgt_in, tgt_out in framed:
        src, tgt_in, tgt_out = _pad(src, src_len), _pad(tgt_in, tgt_len), _pad(tgt_out, tgt_len)
        keep = np.asarray(tgt_out) != PAD_ID
        logits = model.logits(src, tgt_in, training, rng)
        term = nx.scale(nx.cross_entropy(logits, tgt_out, keep), keep.sum() / total_tokens)
        loss = term if loss is None else nx.add(loss, term)
    return loss


def correct(model, tokens, max_len=None):
    """Greedy decoding from ``<s>`` until ``</s>`` or the length limit."""
    limit = min(max_len or model.config.max_len, model.config.max_len)
    src = model.vocab.encode(tokens)
    truncated = False
    if len(src) + 1 > limit:
        src = src[:limit - 1]
        truncated = True
    src.append(EOS_ID)
    memory = model.encode(src)
    output = [BOS_ID]
    while True:
        if len(output) >= limit:
            truncated = True
            break
        scores = model.decode(output, memory, src).data[-1].copy()
        scores[[PAD_ID, BOS_ID, UNK_ID]] = -np.inf
        best = int(np.argmax(scores))
        if best == EOS_ID:
            break
        output.append(best)
    if truncated:
        logger.warning(f"Speller output cut at {limit} positions")
    return Correction(model.vocab.decode(output[1:]), truncated)


def train_speller(model, pairs, schedule, batch_size, seed, on_pass_end=None, clip_norm=CLIP_NORM):
    """
    SGD under ``schedule`` over seeded shuffles of ``pairs``.

    ``on_pass_end(pass_index, model)`` runs after every pass; its return
    values are collected and returned with the model.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    usable = [(tuple(h), tuple(r)) for h, r in pairs if fits(model.config, h, r)]
    if len(usable) < len(pairs):
        logger.warning(f"Dropped {len(pairs) - len(usable)} pairs longer than max_len {model.config.max_len}")
    if not usable:
        logger.error("No speller training pairs")
        raise ValueError("speller training needs at least one pair")

    rng = nx.new_rng(seed)
    order = rng.permutation(len(usable))
    cursor = 0
    pass_results = []
    for step in range(schedule.total_steps):
        if cursor >= len(order):
            order, cursor = rng.permutation(len(usable)), 0
        batch = [usable[i] for i in order[cursor:cursor + batch_size]]
        cursor += batch_size
        learning_rate = sgdr_lr(schedule, step)
        with nx.Tape() as tape:
            loss = batch_loss(model, batch, training=True, rng=rng)
        grads = nx.backward(tape, loss).for_parameters(model.params)
        grads, _ = nx.clip_gradients(grads, clip_norm)
        model.params = nx.sgd_step(model.params, grads, learning_rate)
        if (step + 1) % schedule.steps_per_pass == 0:
            pass_index = (step + 1) // schedule.steps_per_pass
            logger.info(f"Speller pass {pass_index}/{schedule.passes} done at step {step + 1}, loss {loss.item():.4f}")
            if on_pass_end is not None:
                pass_results.append(on_pass_end(pass_index, model))
    return model, pass_results
