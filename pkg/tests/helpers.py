import numpy as np

from ml.ctc import PosteriorMatrix, Vocab
from ml.numerics import Tape, Tensor, backward


def numeric_gradient(fn, array, eps=1e-6):
    """Central differences of the scalar ``fn`` around ``array``."""
    array = np.array(array, dtype=np.float64)
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        upper = fn(array)
        array[index] = original - eps
        lower = fn(array)
        array[index] = original
        grad[index] = (upper - lower) / (2 * eps)
    return grad


def tape_gradient(build, array):
    """Value and analytic gradient of ``build(Tensor)`` at ``array``."""
    x = Tensor(array)
    with Tape() as tape:
        loss = build(x)
    return loss.item(), backward(tape, loss)[x]


def random_posteriors(tokens, frames, seed=0, peaked=1.0):
    vocab = Vocab.from_tokens(tokens)
    rng = np.random.default_rng(seed)
    logits = peaked * rng.normal(size=(frames, vocab.num_labels))
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return PosteriorMatrix(probs / probs.sum(axis=1, keepdims=True), vocab)


def posteriors_from_rows(tokens, rows):
    return PosteriorMatrix(np.array(rows, dtype=np.float64), Vocab.from_tokens(tokens))
