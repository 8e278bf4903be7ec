"""
Deep feedforward sequential memory network acoustic model with a CTC head.

Each component maps its input through a ReLU hidden layer and a linear
projection ``p``, then adds a memory block over neighbouring projections:

    m[t] = m_prev[t] + p[t] + sum_i a[i] * p[t - s1*i] + sum_j c[j] * p[t + s2*j]

with ``i`` in ``0..N1`` and ``j`` in ``1..N2``. Taps that fall outside the
utterance contribute zero. Two ReLU layers and a softmax output follow the
last component.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ml import numerics as nx
from ml.checkpoint import load_checkpoint, save_checkpoint
from ml.ctc import PosteriorMatrix, ctc_loss_op, required_frames
from ml.errors import ShapeError

logger = logging.getLogger(__name__)

CLIP_NORM = 5.0


@dataclass(frozen=True)
class DfsmnLayerConfig:
    hidden_dim: int
    proj_dim: int
    look_back: int = 2
    look_ahead: int = 2
    stride_back: int = 1
    stride_ahead: int = 1

    def __post_init__(self):
        if self.hidden_dim < 1 or self.proj_dim < 1:
            raise ValueError("hidden_dim and proj_dim must be positive")
        if self.look_back < 0 or self.look_ahead < 0:
            raise ValueError("memory orders must be nonnegative")
        if self.stride_back < 1 or self.stride_ahead < 1:
            raise ValueError("memory strides must be positive")


@dataclass(frozen=True)
class DfsmnConfig:
    input_dim: int
    output_dim: int
    layers: tuple = field(default_factory=tuple)
    relu_dims: tuple = (128, 128)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DFSMN needs at least one memory component")
        if len({layer.proj_dim for layer in self.layers}) != 1:
            raise ValueError("all memory components must share one projection width")
        if len(self.relu_dims) != 2:
            raise ValueError("exactly two fully-connected ReLU layers follow the memory components")

    @classmethod
    def desk_scale(cls, input_dim, output_dim, num_layers=4, hidden_dim=128, proj_dim=64,
                   order=2, stride=1, relu_dims=(128, 128)):
        layer = DfsmnLayerConfig(hidden_dim, proj_dim, order, order, stride, stride)
        return cls(input_dim, output_dim, tuple([layer] * num_layers), tuple(relu_dims))

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [asdict(layer) for layer in self.layers],
            "relu_dims": list(self.relu_dims),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_dim=int(data["input_dim"]),
            output_dim=int(data["output_dim"]),
            layers=tuple(DfsmnLayerConfig(**layer) for layer in data["layers"]),
            relu_dims=tuple(data["relu_dims"]),
        )


class AmUtterance(NamedTuple):
    utt_id: str
    features: np.ndarray
    target: tuple


def dfsmn_layer_forward(p, prev_mem, cfg, params):
    """Memory block of one component; ``params`` holds the tap tensors ``a`` and ``c``."""
    p = nx.as_tensor(p)
    if p.ndim != 2 or p.shape[1] != cfg.proj_dim:
        raise ShapeError(f"projection of shape {p.shape} does not match proj_dim {cfg.proj_dim}")
    a, c = params["a"], params["c"]
    if a.shape != (cfg.look_back + 1, cfg.proj_dim) or c.shape != (cfg.look_ahead, cfg.proj_dim):
        raise ShapeError(f"memory taps {a.shape}/{c.shape} do not match the layer orders")

    memory = p
    if prev_mem is not None:
        if prev_mem.shape != p.shape:
            raise ShapeError(f"skip input {prev_mem.shape} does not match projection {p.shape}")
        memory = nx.add(prev_mem, memory)
    for i in range(cfg.look_back + 1):
        tap = nx.slice_rows(a, i, i + 1)
        memory = nx.add(memory, nx.mul(tap, nx.shift_rows(p, cfg.stride_back * i)))
    for j in range(1, cfg.look_ahead + 1):
        tap = nx.slice_rows(c, j - 1, j)
        memory = nx.add(memory, nx.mul(tap, nx.shift_rows(p, -cfg.stride_ahead * j)))
    return memory


class DfsmnModel:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config, seed=0, zero=False):
        rng = nx.new_rng(seed)

        def weight(name, rows, cols, std=None):
            if zero:
                return nx.Tensor.zeros(rows, cols, name=name)
            std = std if std is not None else 1.0 / np.sqrt(rows)
            return nx.Tensor.wrap(rng.normal(0.0, std, size=(rows, cols)), name=name)

        def bias(name, size):
            return nx.Tensor.zeros(1, size, name=name)

        params = {}
        width = config.input_dim
        for index, layer in enumerate(config.layers):
            prefix = f"layer{index}"
            params[f"{prefix}.w_hidden"] = weight(f"{prefix}.w_hidden", width, layer.hidden_dim)
            params[f"{prefix}.b_hidden"] = bias(f"{prefix}.b_hidden", layer.hidden_dim)
            params[f"{prefix}.w_proj"] = weight(f"{prefix}.w_proj", layer.hidden_dim, layer.proj_dim)
            params[f"{prefix}.a"] = weight(f"{prefix}.a", layer.look_back + 1, layer.proj_dim, std=0.1)
            params[f"{prefix}.c"] = weight(f"{prefix}.c", layer.look_ahead, layer.proj_dim, std=0.1)
            width = layer.proj_dim
        for index, size in enumerate(config.relu_dims):
            params[f"relu{index}.w"] = weight(f"relu{index}.w", width, size)
            params[f"relu{index}.b"] = bias(f"relu{index}.b", size)
            width = size
        params["out.w"] = weight("out.w", width, config.output_dim)
        params["out.b"] = bias("out.b", config.output_dim)
        return cls(config, params)

    def num_parameters(self):
        return sum(tensor.size for tensor in self.params.values())

    def logits(self, features):
        features = nx.as_tensor(features)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"features of shape {features.shape} do not match input_dim {self.config.input_dim}"
            )
        params = self.params
        x = features
        memory = None
        for index, layer in enumerate(self.config.layers):
            prefix = f"layer{index}"
            hidden = nx.relu(nx.add(nx.matmul(x, params[f"{prefix}.w_hidden"]), params[f"{prefix}.b_hidden"]))
            projection = nx.matmul(hidden, params[f"{prefix}.w_proj"])
            memory = dfsmn_layer_forward(
                projection, memory, layer,
                {"a": params[f"{prefix}.a"], "c": params[f"{prefix}.c"]},
            )
            x = memory
        for index in range(len(self.config.relu_dims)):
            x = nx.relu(nx.add(nx.matmul(x, params[f"relu{index}.w"]), params[f"relu{index}.b"]))
        return nx.add(nx.matmul(x, params["out.w"]), params["out.b"])

    def save(self, path):
        path = Path(path)
        save_checkpoint(path, self.params)
        path.with_suffix(".json").write_text(json.dumps(self.config.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        config_path = path.with_suffix(".json")
        if not config_path.exists():
            logger.error(f"Model config not found: {config_path}")
            raise FileNotFoundError(f"Model config not found: {config_path}")
        config = DfsmnConfig.from_dict(json.loads(config_path.read_text()))
        params = {name: nx.Tensor.wrap(value, name=name) for name, value in load_checkpoint(path).items()}
        expected = cls.initialize(config, zero=True).params
        for name, tensor in expected.items():
            if name not in params or params[name].shape != tensor.shape:
                raise ShapeError(f"checkpoint tensor {name!r} is missing or has the wrong shape")
        return cls(config, params)


def am_forward(model, features, vocab):
    if vocab.num_labels != model.config.output_dim:
        raise ShapeError(f"model emits {model.config.output_dim} labels, vocabulary has {vocab.num_labels}")
    probs = nx.softmax(model.logits(features), axis=-1)
    return PosteriorMatrix(probs.data, vocab)


def am_loss(model, utterance, blank_id):
    """CTC loss of one utterance, recorded on the active tape."""
    log_probs = nx.log_softmax(model.logits(utterance.features), axis=-1)
    return ctc_loss_op(log_probs, utterance.target, blank_id)


def _learning_rate(schedule, epoch):
    return schedule(epoch) if callable(schedule) else float(schedule)


def train_am(model, corpus, epochs, lr_schedule, seed, blank_id, clip_norm=CLIP_NORM):
    """
    Plain SGD over utterances in a seeded random order.

    Returns the trained model and the mean CTC loss of every epoch.
    Utterances whose reference needs more frames than they have are skipped.
    """
    usable = []
    for utterance in corpus:
        if required_frames(utterance.target) > utterance.features.shape[0]:
            logger.warning(f"Skipping {utterance.utt_id}: reference does not fit in {utterance.features.shape[0]} frames")
            continue
        usable.append(utterance)
    if not usable:
        logger.error("No trainable utterances in the acoustic corpus")
        raise ValueError("acoustic model training needs at least one feasible utterance")

    rng = nx.new_rng(seed)
    losses = []
    for epoch in range(epochs):
        learning_rate = _learning_rate(lr_schedule, epoch)
        total = 0.0
        for index in rng.permutation(len(usable)):
            with nx.Tape() as tape:
                loss = am_loss(model, usable[index], blank_id)
            grads = nx.backward(tape, loss).for_parameters(model.params)
            grads, _ = nx.clip_gradients(grads, clip_norm)
            model.params = nx.sgd_step(model.params, grads, learning_rate)
            total += loss.item()
        losses.append(total / len(usable))
        logger.info(f"Acoustic model epoch {epoch + 1}/{epochs}: mean CTC loss {losses[-1]:.4f}")
    return model, losses
