#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Module Replacement
============================

Hybrid predecessor/successor construction, Bernoulli module replacement,
replacing-rate schedulers, the equivalent learning rate, and successor
assembly.

A predecessor's layers are partitioned into ``n`` contiguous groups by a
CompressionMap. Each group ``prd_i`` is paired with a compact successor
module ``scc_i``. During training every module position independently runs
``scc_i`` with probability ``p`` and ``prd_i`` otherwise:

    y_{i+1} = r_i * scc_i(y_i) + (1 - r_i) * prd_i(y_i),   r_i ~ Bernoulli(p)

Because ``r_i`` is 0 or 1 only the selected branch is executed, which is
the same function and records only that branch on the tape.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import INIT_STRATEGIES, PHASES, SCHEDULER_KINDS
from .errors import CompressionMapError, ParameterError
from .model import (
    ClassifierHead,
    EncoderConfig,
    EncoderModel,
    Embeddings,
    TransformerLayer,
    classify,
    embed,
    init_layer,
    layer_forward,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class CompressionMap:
    """
    Partition of predecessor layers into contiguous groups.

    Attributes:
        groups: Ordered, disjoint, covering lists of layer indices
        successor_layers_per_group: Successor layers replacing each group
        init: ``group-leading`` copies the leading layers of each group;
            ``global-prefix`` copies predecessor layers 0, 1, ... in order
    """

    groups: List[List[int]]
    successor_layers_per_group: int = 1
    init: str = "group-leading"

    def __post_init__(self):
        self.groups = [[int(i) for i in group] for group in self.groups]
        if self.successor_layers_per_group < 1:
            raise CompressionMapError(
                f"successor_layers_per_group must be >= 1, got {self.successor_layers_per_group}"
            )
        if self.init not in INIT_STRATEGIES:
            raise CompressionMapError(f"init must be one of {INIT_STRATEGIES}, got {self.init!r}")

    @classmethod
    def uniform(
        cls,
        n_layers: int,
        group_size: int,
        successor_layers_per_group: int = 1,
        init: str = "group-leading",
    ) -> "CompressionMap":
        """Groups of ``group_size`` consecutive layers; the last group absorbs any remainder."""
        if group_size < 1 or n_layers < 1:
            raise CompressionMapError(f"cannot group {n_layers} layers by {group_size}")
        n_groups = max(1, n_layers // group_size)
        groups = [list(range(g * group_size, (g + 1) * group_size)) for g in range(n_groups)]
        groups[-1] = list(range(groups[-1][0], n_layers))
        return cls(groups, successor_layers_per_group, init)

    @classmethod
    def identity(cls, n_layers: int) -> "CompressionMap":
        return cls.uniform(n_layers, 1)

    @property
    def n_modules(self) -> int:
        return len(self.groups)

    @property
    def successor_depth(self) -> int:
        return self.n_modules * self.successor_layers_per_group

    def validate(self, n_layers: int) -> None:
        """Check that the groups partition ``[0, n_layers)`` in order."""
        if not self.groups:
            raise CompressionMapError("compression map has no groups")
        expected = 0
        for position, group in enumerate(self.groups):
            if not group:
                raise CompressionMapError(f"group {position} is empty")
            if group != list(range(expected, expected + len(group))):
                raise CompressionMapError(
                    f"group {position} {group} is not the contiguous range starting at layer {expected}"
                )
            expected += len(group)
        if expected != n_layers:
            raise CompressionMapError(f"groups cover {expected} layers, predecessor has {n_layers}")

    def describe(self) -> str:
        """Compact text form, e.g. ``0-1|2-3``."""
        return "|".join(f"{g[0]}-{g[-1]}" if len(g) > 1 else str(g[0]) for g in self.groups)

    @classmethod
    def parse(cls, text: str, successor_layers_per_group: int = 1, init: str = "group-leading") -> "CompressionMap":
        """Inverse of ``describe``."""
        groups = []
        for chunk in text.split("|"):
            chunk = chunk.strip()
            try:
                if "-" in chunk:
                    lo, hi = (int(v) for v in chunk.split("-"))
                    groups.append(list(range(lo, hi + 1)))
                else:
                    groups.append([int(chunk)])
            except ValueError:
                raise CompressionMapError(f"malformed group {chunk!r} in {text!r}") from None
        return cls(groups, successor_layers_per_group, init)


@dataclass
class ReplacementMask:
    """Per-step module selection: ``r[i] == 1`` runs the successor at position ``i``."""

    r: np.ndarray
    p_used: float = float("nan")
    step: int = -1

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.int8).reshape(-1)
        if np.any((self.r != 0) & (self.r != 1)):
            raise ParameterError(f"mask entries must be 0 or 1, got {self.r.tolist()}")

    def __len__(self) -> int:
        return int(self.r.size)

    def __getitem__(self, i: int) -> int:
        return int(self.r[i])

    def tolist(self) -> List[int]:
        return [int(v) for v in self.r]

    @classmethod
    def zeros(cls, n: int) -> "ReplacementMask":
        return cls(np.zeros(n, dtype=np.int8), 0.0)

    @classmethod
    def ones(cls, n: int) -> "ReplacementMask":
        return cls(np.ones(n, dtype=np.int8), 1.0)

    @classmethod
    def one_hot(cls, n: int, position: int) -> "ReplacementMask":
        r = np.zeros(n, dtype=np.int8)
        r[position] = 1
        return cls(r)


MaskLike = Union[ReplacementMask, Sequence[int], np.ndarray]


@dataclass
class ReplacementScheduler:
    """
    Replacing-rate policy.

    ``constant`` emits ``p``; ``linear`` emits ``min(1, k*t + b)``;
    ``anti-linear`` emits ``1 - min(1, k*t + b)``.
    """

    kind: str = "constant"
    p: Optional[float] = None
    k: Optional[float] = None
    b: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in SCHEDULER_KINDS:
            raise ParameterError(f"scheduler kind must be one of {SCHEDULER_KINDS}, got {self.kind!r}")
        if self.kind == "constant":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ParameterError(f"constant scheduler needs p in [0, 1], got {self.p}")
        else:
            if self.k is None or self.k <= 0.0:
                raise ParameterError(f"{self.kind} scheduler needs k > 0, got {self.k}")
            if self.b is None or not 0.0 <= self.b <= 1.0:
                raise ParameterError(f"{self.kind} scheduler needs b in [0, 1], got {self.b}")

    @classmethod
    def constant(cls, p: float) -> "ReplacementScheduler":
        return cls("constant", p=p)

    @classmethod
    def linear(cls, k: float, b: float) -> "ReplacementScheduler":
        return cls("linear", k=k, b=b)

    @classmethod
    def anti_linear(cls, k: float, b: float) -> "ReplacementScheduler":
        return cls("anti-linear", k=k, b=b)

    @classmethod
    def reaching_one_at(cls, steps: int, b: float, kind: str = "linear") -> "ReplacementScheduler":
        """Linear-kind scheduler whose ``k*t + b`` reaches 1 at step ``steps``."""
        if steps < 1:
            raise ParameterError(f"saturation step must be >= 1, got {steps}")
        return cls(kind, k=(1.0 - b) / steps, b=b)

    def rate(self, t: int) -> float:
        return replacement_rate(self, t)

    def saturation_step(self) -> Optional[int]:
        """First step at which ``k*t + b >= 1`` (None for constant schedulers)."""
        if self.kind == "constant":
            return None
        step = int(np.ceil((1.0 - self.b) / self.k))
        # the division can land one step off the rate function
        while step > 0 and self.k * (step - 1) + self.b >= 1.0:
            step -= 1
        while self.k * step + self.b < 1.0:
            step += 1
        return step

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant(p={self.p:g})"
        return f"{self.kind}(k={self.k:g}, b={self.b:g}, saturates at step {self.saturation_step()})"


def replacement_rate(sched: ReplacementScheduler, t: int) -> float:
    """Replacing rate ``p_d`` at training step ``t``, clamped to [0, 1]."""
    if t < 0:
        raise ParameterError(f"step must be >= 0, got {t}")
    if sched.kind == "constant":
        rate = float(sched.p)
    else:
        rate = min(1.0, sched.k * t + sched.b)
        if sched.kind == "anti-linear":
            rate = 1.0 - rate
    return min(1.0, max(0.0, rate))


def equivalent_lr(lr: float, p_d: float) -> float:
    """Expected learning rate seen by the successor modules: ``p_d * lr``."""
    if lr <= 0.0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    if not 0.0 <= p_d <= 1.0:
        raise ParameterError(f"replacing rate must lie in [0, 1], got {p_d}")
    return p_d * lr


def lr_for_equivalent(target_lr: float, p: float) -> float:
    """Learning rate whose equivalent rate at constant ``p`` is ``target_lr`` (``lr'/p``)."""
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"replacing rate must lie in (0, 1] to correct the learning rate, got {p}")
    if target_lr <= 0.0:
        raise ParameterError(f"learning rate must be > 0, got {target_lr}")
    return target_lr / p


def sample_mask(n: int, p: float, rng: np.random.Generator, step: int = -1) -> ReplacementMask:
    """Draw ``n`` independent Bernoulli(p) module selections (one mask per batch)."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"replacing rate must lie in [0, 1], got {p}")
    r = (rng.random(n) < p).astype(np.int8)
    return ReplacementMask(r, float(p), step)


def enumerate_masks(n: int) -> Iterator[ReplacementMask]:
    """All ``2**n`` masks in lexicographic order."""
    for bits in itertools.product((0, 1), repeat=n):
        yield ReplacementMask(np.array(bits, dtype=np.int8))


def mask_probability(mask: MaskLike, p: float) -> float:
    """Probability of drawing ``mask`` from independent Bernoulli(p) positions."""
    r = _as_bits(mask)
    ones = int(r.sum())
    return float(p ** ones * (1.0 - p) ** (r.size - ones))


def _as_bits(mask: MaskLike) -> np.ndarray:
    if isinstance(mask, ReplacementMask):
        return mask.r
    return ReplacementMask(mask).r


@dataclass
class ModulePair:
    """A frozen predecessor group and its trainable successor module."""

    prd: List[TransformerLayer]
    scc: List[TransformerLayer]


class HybridModel:
    """
    Paired predecessor/successor modules sharing one embedding and one head.

    Args:
        config: Predecessor encoder configuration
        compression_map: Layer grouping the pairs were built from
        embeddings: Shared embedding tables
        head: Shared classification head
        pairs: One ModulePair per map group
    """

    def __init__(
        self,
        config: EncoderConfig,
        compression_map: CompressionMap,
        embeddings: Embeddings,
        head: ClassifierHead,
        pairs: Sequence[ModulePair],
    ):
        if len(pairs) != compression_map.n_modules:
            raise ParameterError(f"{len(pairs)} module pairs for a {compression_map.n_modules}-group map")
        self.config = config
        self.compression_map = compression_map
        self.embeddings = embeddings
        self.head = head
        self.pairs = list(pairs)
        self.phase = "replacement"

    @property
    def n_modules(self) -> int:
        return len(self.pairs)

    def successor_config(self) -> EncoderConfig:
        return self.config.with_layers(sum(len(pair.scc) for pair in self.pairs))

    def shared_parameters(self) -> List[Tensor]:
        return self.embeddings.parameters() + self.head.parameters()

    def predecessor_parameters(self) -> List[Tensor]:
        return [t for pair in self.pairs for layer in pair.prd for t in layer.parameters()]

    def successor_parameters(self) -> List[Tensor]:
        return [t for pair in self.pairs for layer in pair.scc for t in layer.parameters()]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        named = list(self.embeddings.named_parameters())
        named.extend(self.head.named_parameters())
        for i, pair in enumerate(self.pairs):
            for j, layer in enumerate(pair.prd):
                named.extend(layer.named_parameters(f"prd.{i}.{j}."))
            for j, layer in enumerate(pair.scc):
                named.extend(layer.named_parameters(f"scc.{i}.{j}."))
        return named

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def trainable_parameters(self) -> List[Tensor]:
        return [t for t in self.parameters() if not t.frozen]

    def copy(self) -> "HybridModel":
        clone = HybridModel(
            self.config,
            self.compression_map,
            self.embeddings.copy(),
            self.head.copy(),
            [ModulePair([l.copy() for l in p.prd], [l.copy() for l in p.scc]) for p in self.pairs],
        )
        clone.phase = self.phase
        return clone

    def __call__(self, tokens: np.ndarray, mask: Optional[np.ndarray], r: MaskLike) -> Tensor:
        return hybrid_forward(self, tokens, mask, r)


def build_hybrid(predecessor: EncoderModel, compression_map: CompressionMap, seed: int = 0) -> HybridModel:
    """
    Pair each predecessor layer group with a successor module.

    Embedding, head and predecessor layers are deep-copied and frozen; the
    predecessor model itself is left untouched. Successor layers copy the
    leading layers of their group (or, with ``init = global-prefix``,
    predecessor layers 0, 1, ... in order). Successor layers with no
    predecessor layer to copy are freshly initialized from ``seed``.
    """
    config = predecessor.config
    compression_map.validate(config.n_layers)
    rng = np.random.default_rng(seed)
    per_group = compression_map.successor_layers_per_group

    pairs = []
    for position, group in enumerate(compression_map.groups):
        prd = [predecessor.layers[i].copy() for i in group]
        scc = []
        for j in range(per_group):
            if compression_map.init == "global-prefix":
                source = position * per_group + j
                source = source if source < config.n_layers else None
            else:
                source = group[j] if j < len(group) else None
            scc.append(predecessor.layers[source].copy() if source is not None else init_layer(config, rng))
        pairs.append(ModulePair(prd, scc))

    hybrid = HybridModel(
        config,
        compression_map,
        predecessor.embeddings.copy(),
        predecessor.head.copy(),
        pairs,
    )
    set_phase(hybrid, "replacement")
    logger.info(
        f"built hybrid: {config.n_layers} predecessor layers in {hybrid.n_modules} modules -> "
        f"{compression_map.successor_depth} successor layers ({compression_map.init} init)"
    )
    return hybrid


def hybrid_forward(
    hybrid: HybridModel,
    tokens: np.ndarray,
    mask_attn: Optional[np.ndarray],
    r: MaskLike,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Logits of the hybrid with module position ``i`` running ``scc_i`` iff ``r[i] == 1``."""
    bits = _as_bits(r)
    if bits.size != hybrid.n_modules:
        raise ParameterError(f"mask has {bits.size} entries, hybrid has {hybrid.n_modules} modules")
    config = hybrid.config
    hidden = embed(hybrid.embeddings, tokens, config.max_seq_len)
    for selected, pair in zip(bits, hybrid.pairs):
        for layer in (pair.scc if selected else pair.prd):
            hidden = layer_forward(layer, hidden, mask_attn, config.dropout_rate, rng)
    return classify(hybrid.head, hidden)


def set_phase(hybrid: HybridModel, phase: str, freeze_shared: bool = False) -> None:
    """
    Set which hybrid tensors are trainable.

    ``replacement`` freezes predecessor, embedding and head tensors and
    trains the successor modules. ``successor-finetune`` trains successor,
    embedding and head (the latter two stay frozen with ``freeze_shared``);
    predecessor modules no longer participate and stay frozen.
    """
    if phase not in PHASES:
        raise ParameterError(f"phase must be one of {PHASES}, got {phase!r}")
    for t in hybrid.predecessor_parameters():
        t.frozen = True
    for t in hybrid.successor_parameters():
        t.frozen = False
    shared_frozen = phase == "replacement" or freeze_shared
    for t in hybrid.shared_parameters():
        t.frozen = shared_frozen
    hybrid.phase = phase
    logger.debug(f"hybrid phase set to {phase} (shared frozen: {shared_frozen})")


def assemble_successor(hybrid: HybridModel, freeze_shared: bool = False) -> EncoderModel:
    """
    Standalone successor: shared embedding, ``scc_1 ... scc_n`` and shared head.

    Its forward pass equals ``hybrid_forward`` with every position replaced.
    """
    layers = [layer.copy() for pair in hybrid.pairs for layer in pair.scc]
    successor = EncoderModel(
        hybrid.successor_config(),
        hybrid.embeddings.copy(),
        layers,
        hybrid.head.copy(),
    )
    successor.set_trainable(True)
    if freeze_shared:
        for t in successor.embeddings.parameters() + successor.head.parameters():
            t.frozen = True
    return successor


def truncate_predecessor(predecessor: EncoderModel, n_layers: int) -> EncoderModel:
    """Copy of the predecessor keeping only its bottom ``n_layers`` layers."""
    if not 0 <= n_layers <= predecessor.config.n_layers:
        raise ParameterError(f"cannot keep {n_layers} of {predecessor.config.n_layers} layers")
    truncated = EncoderModel(
        predecessor.config.with_layers(n_layers),
        predecessor.embeddings.copy(),
        [layer.copy() for layer in predecessor.layers[:n_layers]],
        predecessor.head.copy(),
    )
    truncated.set_trainable(True)
    return truncated
