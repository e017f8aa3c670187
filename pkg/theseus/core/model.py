#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Encoder Model
=======================

Toy transformer encoder classifier: token and learned position embeddings,
a stack of post-layer-norm transformer layers, and a classification head
reading the first (sequence-start) position.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .constants import DEFAULT_ENCODER, INIT_STDDEV
from .errors import ConfigError, DimensionError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    """Hyperparameters of the toy encoder."""

    vocab_size: int = DEFAULT_ENCODER["vocab_size"]
    max_seq_len: int = DEFAULT_ENCODER["max_seq_len"]
    d_model: int = DEFAULT_ENCODER["d_model"]
    n_heads: int = DEFAULT_ENCODER["n_heads"]
    d_ff: int = DEFAULT_ENCODER["d_ff"]
    n_layers: int = DEFAULT_ENCODER["n_layers"]
    n_classes: int = DEFAULT_ENCODER["n_classes"]
    dropout_rate: float = DEFAULT_ENCODER["dropout_rate"]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("vocab_size", "max_seq_len", "d_model", "n_heads", "d_ff", "n_classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"encoder {name} must be >= 1, got {getattr(self, name)}")
        # A zero-layer stack is a valid degenerate encoder.
        if self.n_layers < 0:
            raise ConfigError(f"encoder n_layers must be >= 0, got {self.n_layers}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def with_layers(self, n_layers: int) -> "EncoderConfig":
        return replace(self, n_layers=n_layers)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "EncoderConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in values.items():
            kwargs[key] = float(value) if key == "dropout_rate" else int(value)
        return cls(**kwargs)


LAYER_PARAM_NAMES = (
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln1.gain", "ln1.bias",
    "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
    "ln2.gain", "ln2.bias",
)


class TransformerLayer:
    """One post-layer-norm encoder block: LN(x + MHA(x)) then LN(h + FFN(h))."""

    def __init__(self, params: Dict[str, Tensor], n_heads: int):
        missing = [n for n in LAYER_PARAM_NAMES if n not in params]
        if missing:
            raise ConfigError(f"transformer layer is missing parameters: {', '.join(missing)}")
        self.params = {name: params[name] for name in LAYER_PARAM_NAMES}
        self.n_heads = n_heads

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def d_model(self) -> int:
        return self.params["attn.wq"].data.shape[0]

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return [(f"{prefix}{name}", self.params[name]) for name in LAYER_PARAM_NAMES]

    def parameters(self) -> List[Tensor]:
        return [self.params[name] for name in LAYER_PARAM_NAMES]

    def copy(self) -> "TransformerLayer":
        return TransformerLayer({n: t.copy() for n, t in self.params.items()}, self.n_heads)


class Embeddings:
    """Token and learned absolute position tables."""

    def __init__(self, token: Tensor, position: Tensor):
        self.token = token
        self.position = position

    def named_parameters(self, prefix: str = "embedding.") -> List[Tuple[str, Tensor]]:
        return [(f"{prefix}token", self.token), (f"{prefix}position", self.position)]

    def parameters(self) -> List[Tensor]:
        return [self.token, self.position]

    def copy(self) -> "Embeddings":
        return Embeddings(self.token.copy(), self.position.copy())


class ClassifierHead:
    """Linear map from the pooled position to class logits."""

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def named_parameters(self, prefix: str = "head.") -> List[Tuple[str, Tensor]]:
        return [(f"{prefix}weight", self.weight), (f"{prefix}bias", self.bias)]

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.weight.copy(), self.bias.copy())


class EncoderModel:
    """
    Embeddings, a stack of transformer layers and a pooled classification head.

    Args:
        config: Encoder hyperparameters
        embeddings: Token/position tables
        layers: Transformer layers, ``len(layers) == config.n_layers``
        head: Classification head
    """

    def __init__(
        self,
        config: EncoderConfig,
        embeddings: Embeddings,
        layers: Sequence[TransformerLayer],
        head: ClassifierHead,
    ):
        if len(layers) != config.n_layers:
            raise ConfigError(f"model has {len(layers)} layers but config declares {config.n_layers}")
        if embeddings.token.data.shape[0] != config.vocab_size:
            raise ConfigError(
                f"token embedding has {embeddings.token.data.shape[0]} rows, vocab_size is {config.vocab_size}"
            )
        self.config = config
        self.embeddings = embeddings
        self.layers = list(layers)
        self.head = head

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = list(self.embeddings.named_parameters())
        for i, layer in enumerate(self.layers):
            named.extend(layer.named_parameters(f"layers.{i}."))
        named.extend(self.head.named_parameters())
        return named

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def set_trainable(self, trainable: bool) -> None:
        for t in self.parameters():
            t.frozen = not trainable

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            self.config,
            self.embeddings.copy(),
            [layer.copy() for layer in self.layers],
            self.head.copy(),
        )

    def __call__(self, tokens: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        return encoder_forward(self, tokens, mask)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    """Normal draws rejected and redrawn outside two standard deviations."""
    draws = rng.standard_normal(shape)
    outside = np.abs(draws) > 2.0
    while outside.any():
        draws[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(draws) > 2.0
    return draws * std


def init_layer(config: EncoderConfig, rng: np.random.Generator) -> TransformerLayer:
    d, ff = config.d_model, config.d_ff
    shapes = {
        "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
        "ffn.w1": (d, ff), "ffn.w2": (ff, d),
    }
    params: Dict[str, Tensor] = {}
    for name in LAYER_PARAM_NAMES:
        if name in shapes:
            data = _truncated_normal(rng, shapes[name], INIT_STDDEV)
        elif name.endswith("gain"):
            data = np.ones(d)
        elif name == "ffn.b1":
            data = np.zeros(ff)
        else:
            data = np.zeros(d)
        params[name] = Tensor.parameter(data, name=name)
    return TransformerLayer(params, config.n_heads)


def init_encoder(config: EncoderConfig, seed: int) -> EncoderModel:
    """
    Build an encoder with seeded truncated-normal weights (std 0.02).

    Layer-norm gains start at 1 and every bias at 0.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    embeddings = Embeddings(
        Tensor.parameter(_truncated_normal(rng, (config.vocab_size, config.d_model), INIT_STDDEV), "embedding.token"),
        Tensor.parameter(_truncated_normal(rng, (config.max_seq_len, config.d_model), INIT_STDDEV), "embedding.position"),
    )
    layers = [init_layer(config, rng) for _ in range(config.n_layers)]
    head = ClassifierHead(
        Tensor.parameter(_truncated_normal(rng, (config.d_model, config.n_classes), INIT_STDDEV), "head.weight"),
        Tensor.parameter(np.zeros(config.n_classes), "head.bias"),
    )
    logger.debug(f"initialized {config.n_layers}-layer encoder with seed {seed}")
    return EncoderModel(config, embeddings, layers, head)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = rng.random(x.data.shape) >= rate
    return T.dropout_mask_apply(x, keep, rate)


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.add(T.matmul(x, weight), bias)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    batch, seq, width = x.data.shape
    return T.transpose(T.reshape(x, (batch, seq, n_heads, width // n_heads)), (0, 2, 1, 3))


def _self_attention(layer: TransformerLayer, x: Tensor, key_mask: np.ndarray) -> Tuple[Tensor, Tensor]:
    batch, seq, width = x.data.shape
    head_dim = width // layer.n_heads
    q = _split_heads(_linear(x, layer["attn.wq"], layer["attn.bq"]), layer.n_heads)
    k = _split_heads(_linear(x, layer["attn.wk"], layer["attn.bk"]), layer.n_heads)
    v = _split_heads(_linear(x, layer["attn.wv"], layer["attn.bv"]), layer.n_heads)
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    probs = T.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    context = T.transpose(T.matmul(probs, v), (0, 2, 1, 3))
    context = T.reshape(context, (batch, seq, width))
    return _linear(context, layer["attn.wo"], layer["attn.bo"]), probs


def _key_mask(x: Tensor, mask: Optional[np.ndarray]) -> np.ndarray:
    batch, seq = x.data.shape[:2]
    if mask is None:
        return np.ones((batch, seq), dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (batch, seq):
        raise DimensionError("attention mask", [batch, seq], mask.shape)
    return mask


def layer_forward(
    layer: TransformerLayer,
    x: Tensor,
    mask: Optional[np.ndarray] = None,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Apply one transformer layer to ``x`` of shape [batch x seq x d_model].

    ``mask`` is [batch x seq] with 1 for real tokens; padded keys receive
    -inf attention logits before the softmax.
    """
    if x.data.ndim != 3 or x.data.shape[-1] != layer.d_model:
        raise DimensionError("layer_forward", x.shape, detail=f"expected [batch, seq, {layer.d_model}]")
    key_mask = _key_mask(x, mask)
    attended, _ = _self_attention(layer, x, key_mask)
    attended = _dropout(attended, dropout_rate, rng)
    h = T.layer_norm(T.add(x, attended), layer["ln1.gain"], layer["ln1.bias"])
    inner = T.gelu(_linear(h, layer["ffn.w1"], layer["ffn.b1"]))
    ffn = _dropout(_linear(inner, layer["ffn.w2"], layer["ffn.b2"]), dropout_rate, rng)
    return T.layer_norm(T.add(h, ffn), layer["ln2.gain"], layer["ln2.bias"])


def embed(embeddings: Embeddings, tokens: np.ndarray, max_seq_len: int) -> Tensor:
    """Sum of token and position embeddings, [batch x seq x d_model]."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise DimensionError("embed", tokens.shape, detail="tokens must be [batch, seq]")
    seq = tokens.shape[1]
    if seq > max_seq_len:
        raise ConfigError(f"sequence length {seq} exceeds max_seq_len {max_seq_len}")
    token_vectors = T.embedding_lookup(embeddings.token, tokens)
    position_vectors = T.embedding_lookup(embeddings.position, np.arange(seq))
    return T.add(token_vectors, position_vectors)


def classify(head: ClassifierHead, hidden: Tensor) -> Tensor:
    """Pool position 0 and project to class logits."""
    pooled = T.take(hidden, 0, axis=1)
    return _linear(pooled, head.weight, head.bias)


def encoder_forward(
    model: EncoderModel,
    tokens: np.ndarray,
    mask: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Logits [batch x n_classes] for a batch of token ids.

    Dropout is applied only when ``rng`` is given and the config's rate is
    positive.
    """
    config = model.config
    hidden = embed(model.embeddings, tokens, config.max_seq_len)
    for layer in model.layers:
        hidden = layer_forward(layer, hidden, mask, config.dropout_rate, rng)
    return classify(model.head, hidden)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------

def layer_flops(config: EncoderConfig, seq_len: int) -> int:
    """
    Multiply-add FLOPs of one transformer layer for one example:
    ``2 * (4*s*d^2 + 2*s^2*d + 2*s*d*d_ff)`` (Q/K/V/O projections, the
    score and context products, and the two feed-forward matrices).
    """
    s, d, ff = int(seq_len), config.d_model, config.d_ff
    return 2 * (4 * s * d * d + 2 * s * s * d + 2 * s * d * ff)


def count_flops(config: EncoderConfig, seq_len: int) -> int:
    """
    Analytic forward FLOPs per example.

    Formula::

        n_layers * layer_flops(config, s)   # see layer_flops
        + s * d                             # token + position embedding sum
        + 2 * d * n_classes                 # classifier head on the pooled row

    Lookups, biases, softmax and layer norms are not counted.
    """
    if seq_len > config.max_seq_len:
        raise ConfigError(f"seq_len {seq_len} exceeds max_seq_len {config.max_seq_len}")
    embedding_term = seq_len * config.d_model
    head_term = 2 * config.d_model * config.n_classes
    return config.n_layers * layer_flops(config, seq_len) + embedding_term + head_term


def count_params(config: EncoderConfig) -> Dict[str, int]:
    """Parameter counts split into embedding, transformer layers and head."""
    d, ff = config.d_model, config.d_ff
    per_layer = 4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 4 * d
    counts = {
        "embedding": (config.vocab_size + config.max_seq_len) * d,
        "layers": config.n_layers * per_layer,
        "head": d * config.n_classes + config.n_classes,
    }
    counts["total"] = sum(counts.values())
    return counts
