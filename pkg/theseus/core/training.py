#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Training
==================

Adam optimizer, evaluation, early stopping, metric records and the three
pipeline stages: predecessor training, replacement compression and
successor fine-tuning.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EVAL_EVERY,
    DEFAULT_PATIENCE,
    STAGES,
)
from .data import Batch, Split, batches
from .errors import ConfigError, DataError, NumericError, OptimizerStateError, ParameterError
from .model import EncoderModel, encoder_forward
from .replacement import (
    CompressionMap,
    HybridModel,
    ReplacementMask,
    ReplacementScheduler,
    assemble_successor,
    build_hybrid,
    equivalent_lr,
    hybrid_forward,
    replacement_rate,
    sample_mask,
    set_phase,
)
from .tensor import Tape, Tensor, cross_entropy, no_grad

logger = logging.getLogger(__name__)

Model = Union[EncoderModel, HybridModel]
Forward = Callable[[np.ndarray, np.ndarray], Tensor]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam with decoupled weight decay."""

    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """
    Apply one Adam update to every non-frozen parameter.

    Frozen parameters are skipped and never get moment buffers.
    """
    trainable = [p for p in params if not p.frozen]
    missing = [p.name or str(p.shape) for p in trainable if p.grad is None]
    if missing:
        raise OptimizerStateError(f"no gradient for trainable parameters: {', '.join(missing)}")
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p in trainable:
        key = id(p)
        if key not in state.m:
            state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        m, v, g = state.m[key], state.v[key], p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        if state.weight_decay:
            update = update + state.lr * state.weight_decay * p.data
        p.data -= update


# ---------------------------------------------------------------------------
# Configuration and metrics
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """
    One training stage.

    Exactly one of ``max_epochs`` / ``max_steps`` must be set.
    ``grad_clip`` is reserved and must stay unset.
    """

    stage: str = "predecessor"
    batch_size: int = DEFAULT_BATCH_SIZE
    max_epochs: Optional[int] = None
    max_steps: Optional[int] = None
    lr: float = 1e-3
    eval_every: int = DEFAULT_EVAL_EVERY
    early_stop_patience: int = DEFAULT_PATIENCE
    seed: int = 0
    weight_decay: float = 0.0
    freeze_shared: bool = False
    log_masks: bool = False
    check_finite: bool = False
    grad_clip: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if (self.max_epochs is None) == (self.max_steps is None):
            raise ConfigError("exactly one of max_epochs and max_steps must be set")
        limit = self.max_epochs if self.max_epochs is not None else self.max_steps
        if limit < 0:
            raise ConfigError(f"stopping limit must be >= 0, got {limit}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.early_stop_patience < 1:
            raise ConfigError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip is not None:
            raise ConfigError("gradient clipping is a reserved option and is not supported")

    def total_steps(self, n_train: int) -> int:
        if self.max_steps is not None:
            return int(self.max_steps)
        return int(self.max_epochs) * math.ceil(n_train / self.batch_size)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown training config keys: {', '.join(unknown)}")
        return cls(**values)


@dataclass
class MetricRecord:
    stage: str
    step: int
    split: str
    loss: float
    accuracy: float
    p_d: Optional[float] = None
    lr_effective: Optional[float] = None
    wall_ms: float = 0.0
    mask: Optional[List[int]] = None

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        if record["mask"] is None:
            del record["mask"]
        return record


class RunMetrics:
    """Append-only evaluation records; steps strictly increase per split."""

    def __init__(self, stage: str):
        self.stage = stage
        self.records: List[MetricRecord] = []
        self._last_step: Dict[str, int] = {}

    def append(self, record: MetricRecord) -> None:
        last = self._last_step.get(record.split)
        if last is not None and record.step <= last:
            raise ParameterError(f"{record.split} metrics step {record.step} does not follow step {last}")
        self._last_step[record.split] = record.step
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MetricRecord]:
        return iter(self.records)

    def for_split(self, split: str) -> List[MetricRecord]:
        return [r for r in self.records if r.split == split]

    def column(self, name: str, split: str = "dev") -> List[Any]:
        return [getattr(r, name) for r in self.for_split(split)]

    def to_jsonl(self, path: str, append: bool = True) -> None:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


@dataclass
class TrainResult:
    """Best-dev model, its metrics stream, and the final-step model."""

    model: Any
    metrics: RunMetrics
    best_step: int = 0
    best_accuracy: Optional[float] = None
    final_model: Any = None
    stopped_early: bool = False


# ---------------------------------------------------------------------------
# Evaluation and early stopping
# ---------------------------------------------------------------------------

def evaluate(
    model: Model,
    split: Split,
    batch_size: int = 64,
    forward: Optional[Forward] = None,
    max_len: Optional[int] = None,
) -> Dict[str, float]:
    """
    Mean loss and accuracy over a whole split, without recording a tape.

    ``forward`` maps (tokens, mask) to logits; the default runs the
    encoder. Pass a closure over ``hybrid_forward`` to score a hybrid.
    """
    if len(split) == 0:
        raise DataError(f"cannot evaluate on empty split {split.name!r}")
    if forward is None:
        if not isinstance(model, EncoderModel):
            raise ParameterError("evaluating a hybrid needs an explicit forward function")
        forward = lambda tokens, mask: encoder_forward(model, tokens, mask)  # noqa: E731
    max_len = max_len or model.config.max_seq_len
    total_loss, correct = 0.0, 0
    with no_grad():
        for batch in batches(split, batch_size, max_len):
            logits = forward(batch.tokens, batch.mask)
            total_loss += cross_entropy(logits, batch.labels).item() * len(batch)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == batch.labels))
    return {"loss": total_loss / len(split), "accuracy": correct / len(split)}


def hybrid_evaluator(hybrid: HybridModel, r: Optional[ReplacementMask] = None) -> Forward:
    """Forward closure scoring ``hybrid`` under a fixed mask (default: all successors)."""
    mask = r if r is not None else ReplacementMask.ones(hybrid.n_modules)
    return lambda tokens, attn: hybrid_forward(hybrid, tokens, attn, mask)


def early_stop(history: Sequence[float], patience: int) -> Tuple[bool, int]:
    """
    Stop once ``patience`` consecutive evals fail to beat the best so far.

    Ties are not improvements; the best index is the earliest maximum.
    """
    if patience < 1:
        raise ParameterError(f"patience must be >= 1, got {patience}")
    if not history:
        return False, -1
    best = int(np.argmax(history))
    return len(history) - 1 - best >= patience, best


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _snapshot(model: Model) -> List[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def _restore(model: Model, snapshot: List[np.ndarray]) -> None:
    for p, data in zip(model.parameters(), snapshot):
        p.data[...] = data


def _clone(model: Model, snapshot: List[np.ndarray]) -> Model:
    clone = model.copy()
    _restore(clone, snapshot)
    return clone


def _require_splits(data: Dict[str, Split]) -> Tuple[Split, Split]:
    missing = [name for name in ("train", "dev") if name not in data]
    if missing:
        raise DataError(f"training needs splits {missing}")
    if len(data["train"]) == 0:
        raise DataError("train split is empty")
    return data["train"], data["dev"]


def _fit(
    model: Model,
    data: Dict[str, Split],
    config: TrainConfig,
    step_forward: Callable[[Batch, Optional[ReplacementMask], Optional[np.random.Generator]], Tensor],
    dev_forward: Optional[Forward],
    scheduler: Optional[ReplacementScheduler] = None,
    n_modules: int = 0,
) -> TrainResult:
    train, dev = _require_splits(data)
    params = [p for p in model.parameters() if not p.frozen]
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    metrics = RunMetrics(config.stage)
    total = config.total_steps(len(train))
    max_len = model.config.max_seq_len
    mask_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2]) if model.config.dropout_rate > 0 else None

    described = f", scheduler {scheduler.describe()}" if scheduler else ""
    logger.info(f"{config.stage} stage: {total} steps, {len(params)} trainable tensors, lr {config.lr:g}{described}")
    history: List[float] = []
    best_snapshot, best_step, best_accuracy = None, 0, None
    last_good = _snapshot(model)
    stopped = False
    step, epoch = 0, 0
    started = time.perf_counter()

    while step < total and not stopped:
        for batch in batches(train, config.batch_size, max_len, shuffle_seed=config.seed, epoch=epoch):
            if step >= total:
                break
            r = None
            if scheduler is not None:
                p_d = replacement_rate(scheduler, step)
                assert 0.0 <= p_d <= 1.0, f"scheduler emitted {p_d} at step {step}"
                r = sample_mask(n_modules, p_d, mask_rng, step)
            for p in params:
                p.grad = None
            try:
                with Tape(check_finite=config.check_finite) as tape:
                    loss = cross_entropy(step_forward(batch, r, dropout_rng), batch.labels)
                    if not np.isfinite(loss.item()):
                        raise NumericError(f"{config.stage}: loss is {loss.item()} at step {step}")
                    # an all-predecessor mask reaches no trainable tensor
                    if tape.produced(loss):
                        tape.backward(loss)
            except NumericError as exc:
                logger.error(f"{config.stage} diverged at step {step}; returning last good weights")
                raise NumericError(str(exc), last_good=_clone(model, last_good)) from exc
            reached = {id(t) for t in tape.leaves()}
            adam_step(state, [p for p in params if id(p) in reached])

            # train records carry the step the mask was drawn for
            if config.log_masks and r is not None:
                metrics.append(MetricRecord(
                    config.stage, r.step, "train", loss.item(), float("nan"), r.p_used,
                    equivalent_lr(config.lr, r.p_used), (time.perf_counter() - started) * 1000.0, r.tolist(),
                ))
            step += 1

            if step % config.eval_every == 0 or step == total:
                result = evaluate(model, dev, forward=dev_forward)
                p_d = replacement_rate(scheduler, step) if scheduler is not None else None
                lr_eff = equivalent_lr(config.lr, p_d) if p_d is not None else config.lr
                metrics.append(MetricRecord(
                    config.stage, step, "dev", result["loss"], result["accuracy"], p_d, lr_eff,
                    (time.perf_counter() - started) * 1000.0,
                ))
                rate = f" p_d {p_d:.3f}" if p_d is not None else ""
                logger.info(
                    f"{config.stage} step {step}: dev loss {result['loss']:.4f} acc {result['accuracy']:.4f}{rate}"
                )
                history.append(result["accuracy"])
                last_good = _snapshot(model)
                if best_accuracy is None or result["accuracy"] > best_accuracy:
                    best_snapshot, best_step, best_accuracy = last_good, step, result["accuracy"]
                stop, _ = early_stop(history, config.early_stop_patience)
                if stop:
                    logger.info(f"{config.stage} early stop at step {step} (best step {best_step})")
                    stopped = True
                    break
        epoch += 1

    final_model = model.copy()
    if best_snapshot is not None:
        _restore(model, best_snapshot)
    return TrainResult(model, metrics, best_step, best_accuracy, final_model, stopped)


def train_predecessor(model: EncoderModel, data: Dict[str, Split], config: TrainConfig) -> TrainResult:
    """Supervised training of every predecessor tensor; returns the best-dev model."""
    model.set_trainable(True)
    return _fit(
        model, data, config,
        lambda batch, r, rng: encoder_forward(model, batch.tokens, batch.mask, rng),
        None,
    )


def compress_hybrid(
    hybrid: HybridModel,
    data: Dict[str, Split],
    scheduler: ReplacementScheduler,
    config: TrainConfig,
) -> TrainResult:
    """
    Module-replacement training of an existing hybrid.

    Each batch draws ``p_d`` from the scheduler and one replacement mask;
    only successor modules are updated. Dev accuracy is measured with every
    position replaced.
    """
    set_phase(hybrid, "replacement")
    return _fit(
        hybrid, data, config,
        lambda batch, r, rng: hybrid_forward(hybrid, batch.tokens, batch.mask, r, rng),
        hybrid_evaluator(hybrid),
        scheduler=scheduler,
        n_modules=hybrid.n_modules,
    )


def compress(
    predecessor: EncoderModel,
    data: Dict[str, Split],
    compression_map: CompressionMap,
    scheduler: ReplacementScheduler,
    config: TrainConfig,
) -> TrainResult:
    """Build a hybrid from ``predecessor`` and run replacement compression on it."""
    hybrid = build_hybrid(predecessor, compression_map, config.seed)
    return compress_hybrid(hybrid, data, scheduler, config)


def finetune_successor(model: Model, data: Dict[str, Split], config: TrainConfig) -> TrainResult:
    """
    Train a standalone successor on the task loss.

    A hybrid is assembled first. With ``config.freeze_shared`` the embedding
    and head stay frozen.
    """
    if isinstance(model, HybridModel):
        successor = assemble_successor(model, freeze_shared=config.freeze_shared)
    else:
        successor = model.copy()
        successor.set_trainable(True)
        if config.freeze_shared:
            for t in successor.embeddings.parameters() + successor.head.parameters():
                t.frozen = True
    return _fit(
        successor, data, config,
        lambda batch, r, rng: encoder_forward(successor, batch.tokens, batch.mask, rng),
        None,
    )
