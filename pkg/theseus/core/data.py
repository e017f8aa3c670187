#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Task Data
===================

Seeded synthetic sequence-classification tasks, a TSV text-classification
reader, vocabulary building and padded batching.

Synthetic sequences hold at most ``seq_len - 1`` tokens so the
sequence-start token prepended at batching time never forces truncation.
"""

import csv
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import FIRST_FREE_ID, PAD_ID, RESERVED_TOKENS, START_ID, SYNTHETIC_TASKS, UNK_ID
from .errors import ConfigError, DataError, FormatError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "dev", "test")


class Vocab:
    """
    Token to id map with stable reserved ids (0 pad, 1 unknown, 2 start).
    """

    def __init__(self, tokens: Optional[Sequence[str]] = None):
        self.token_to_id: Dict[str, int] = dict(RESERVED_TOKENS)
        for token in tokens or ():
            if token not in self.token_to_id:
                self.token_to_id[token] = len(self.token_to_id)

    @classmethod
    def build(cls, tokenized: Iterable[Sequence[str]], max_size: Optional[int] = None) -> "Vocab":
        """Most-frequent-first vocabulary; ties are ordered alphabetically."""
        counts = Counter(token for tokens in tokenized for token in tokens)
        for reserved in RESERVED_TOKENS:
            counts.pop(reserved, None)
        ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - len(RESERVED_TOKENS))]
        return cls([token for token, _ in ordered])

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.token_to_id.get(token, UNK_ID) for token in tokens]


@dataclass
class Example:
    tokens: List[int]
    label: int


@dataclass
class Batch:
    """Padded token matrix, attention mask (1 = real token) and labels."""

    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class Split:
    name: str
    examples: List[Example]
    n_classes: int
    label_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------

def majority_label(tokens: Sequence[int], n_classes: int) -> Optional[int]:
    """Class whose token occurs strictly most often, or None on a tie."""
    counts = [0] * n_classes
    for token in tokens:
        c = token - FIRST_FREE_ID
        if 0 <= c < n_classes:
            counts[c] += 1
    best = max(counts)
    winners = [c for c, n in enumerate(counts) if n == best]
    return winners[0] if len(winners) == 1 else None


def bracket_label(tokens: Sequence[int]) -> int:
    """1 if the open/close tokens form a balanced sequence, else 0."""
    depth = 0
    for token in tokens:
        depth += 1 if token == OPEN_ID else -1
        if depth < 0:
            return 0
    return int(depth == 0)


OPEN_ID = FIRST_FREE_ID
CLOSE_ID = FIRST_FREE_ID + 1


def _balanced_labels(rng: np.random.Generator, size: int, n_classes: int) -> np.ndarray:
    return rng.permutation(np.arange(size) % n_classes)


def _majority_example(rng: np.random.Generator, label: int, seq_len: int, vocab_size: int, n_classes: int) -> List[int]:
    length = int(rng.integers(3, seq_len))
    filler_lo = FIRST_FREE_ID + n_classes
    for _ in range(100):
        tokens = []
        for _ in range(length):
            if rng.random() < 0.3:
                tokens.append(int(rng.integers(filler_lo, vocab_size)))
            elif rng.random() < 0.5:
                tokens.append(FIRST_FREE_ID + label)
            else:
                tokens.append(FIRST_FREE_ID + int(rng.integers(0, n_classes)))
        if majority_label(tokens, n_classes) == label:
            return tokens
    return [FIRST_FREE_ID + label] * length


def _dyck_word(rng: np.random.Generator, length: int) -> List[int]:
    tokens, depth = [], 0
    for position in range(length):
        remaining = length - position
        if depth == 0:
            opening = True
        elif depth == remaining:
            opening = False
        else:
            opening = rng.random() < 0.5
        tokens.append(OPEN_ID if opening else CLOSE_ID)
        depth += 1 if opening else -1
    return tokens


def _bracket_example(rng: np.random.Generator, label: int, seq_len: int) -> List[int]:
    length = 2 * int(rng.integers(1, (seq_len - 1) // 2 + 1))
    tokens = _dyck_word(rng, length)
    if label == 1:
        return tokens
    if rng.random() < 0.5:
        # count mismatch
        flip = int(rng.integers(0, length))
        tokens[flip] = CLOSE_ID if tokens[flip] == OPEN_ID else OPEN_ID
        return tokens
    # equal counts, some prefix dips below zero
    closes = [i for i, t in enumerate(tokens) if t == CLOSE_ID]
    tokens.pop(closes[int(rng.integers(0, len(closes)))])
    depth, zero_depth = 0, [0]
    for i, token in enumerate(tokens):
        depth += 1 if token == OPEN_ID else -1
        if depth == 0:
            zero_depth.append(i + 1)
    tokens.insert(zero_depth[int(rng.integers(0, len(zero_depth)))], CLOSE_ID)
    return tokens


def _lookup_example(rng: np.random.Generator, label: int, seq_len: int, vocab_size: int, n_classes: int) -> List[int]:
    key_ids = np.arange(FIRST_FREE_ID + n_classes, vocab_size)
    max_pairs = min((seq_len - 2) // 2, key_ids.size)
    n_pairs = int(rng.integers(2, max_pairs + 1))
    keys = rng.choice(key_ids, size=n_pairs, replace=False)
    values = rng.integers(0, n_classes, size=n_pairs)
    query = int(rng.integers(0, n_pairs))
    values[query] = label
    tokens: List[int] = []
    for key, value in zip(keys, values):
        tokens.extend([int(key), FIRST_FREE_ID + int(value)])
    tokens.append(int(keys[query]))
    return tokens


def generate_synthetic(
    task: str,
    sizes: Union[Mapping[str, int], Sequence[int]],
    seq_len: int,
    vocab_size: int,
    seed: int,
    n_classes: int = 2,
) -> Dict[str, Split]:
    """
    Generate train/dev/test splits of a synthetic classification task.

    Args:
        task: ``majority-token`` (shallow frequency cue), ``bracket-balance``
            (needs composition across positions) or ``keyed-lookup``
        sizes: Example counts for train, dev and test
        seq_len: Maximum sequence length including the start token
        vocab_size: Model vocabulary size (>= 8)
        seed: Generator seed; splits are a pure function of all arguments
        n_classes: Number of classes (bracket-balance is always binary)

    Returns:
        Dictionary mapping split name to Split
    """
    if task not in SYNTHETIC_TASKS:
        raise ConfigError(f"unknown synthetic task {task!r}; choose from {SYNTHETIC_TASKS}")
    if isinstance(sizes, Mapping):
        counts = [int(sizes[name]) for name in SPLIT_NAMES]
    else:
        counts = [int(v) for v in sizes]
    if len(counts) != 3 or min(counts) < 1:
        raise ConfigError(f"split sizes must be three counts >= 1, got {sizes}")
    if vocab_size < 8:
        raise ConfigError(f"vocab_size must be >= 8, got {vocab_size}")
    if task == "bracket-balance":
        n_classes = 2
    if task == "keyed-lookup" and (seq_len < 6 or vocab_size - FIRST_FREE_ID - n_classes < 2):
        raise ConfigError("keyed-lookup needs seq_len >= 6 and at least two key tokens")
    if seq_len < 4:
        raise ConfigError(f"seq_len must be >= 4, got {seq_len}")
    if FIRST_FREE_ID + n_classes >= vocab_size:
        raise ConfigError(f"vocab_size {vocab_size} too small for {n_classes} classes")

    task_index = SYNTHETIC_TASKS.index(task)
    splits = {}
    for split_index, (name, size) in enumerate(zip(SPLIT_NAMES, counts)):
        rng = np.random.default_rng([seed, task_index, split_index])
        examples = []
        for label in _balanced_labels(rng, size, n_classes):
            label = int(label)
            if task == "majority-token":
                tokens = _majority_example(rng, label, seq_len, vocab_size, n_classes)
            elif task == "bracket-balance":
                tokens = _bracket_example(rng, label, seq_len)
            else:
                tokens = _lookup_example(rng, label, seq_len, vocab_size, n_classes)
            examples.append(Example(tokens, label))
        splits[name] = Split(name, examples, n_classes)
    split_sizes = {n: len(s) for n, s in splits.items()}
    logger.info(f"generated {task} splits: {split_sizes}")
    return splits


# ---------------------------------------------------------------------------
# TSV ingestion
# ---------------------------------------------------------------------------

def tokenize(text: str) -> List[str]:
    """Whitespace tokenization of lowercased text."""
    return text.lower().split()


def load_tsv(
    path: str,
    text_col: str,
    label_col: str,
    vocab: Optional[Vocab] = None,
    max_vocab: Optional[int] = None,
    label_names: Optional[Sequence[str]] = None,
) -> Tuple[Split, Vocab]:
    """
    Read a tab-separated file with a header row.

    Args:
        path: UTF-8 TSV file
        text_col: Header name of the text column
        label_col: Header name of the label column
        vocab: Vocabulary to encode with; built from this file when omitted
        max_vocab: Vocabulary size cap (reserved ids included) when building
        label_names: Ordered label strings; inferred when omitted

    Returns:
        Tuple of (split, vocabulary)
    """
    if not os.path.exists(path):
        raise DataError(f"TSV file does not exist: {path}")
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            header = reader.fieldnames
            if not header:
                raise DataError(f"TSV file is empty: {path}")
            for column in (text_col, label_col):
                if column not in header:
                    raise FormatError(f"column {column!r} missing from {path} (header: {', '.join(header)})")
            rows = [(row[text_col] or "", (row[label_col] or "").strip()) for row in reader]
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not valid UTF-8 (byte {exc.start}: {exc.reason})") from exc
    except csv.Error as exc:
        raise FormatError(f"{path} is not a readable TSV file: {exc}") from exc
    if not rows:
        raise DataError(f"TSV file has a header but no rows: {path}")

    tokenized = [tokenize(text) for text, _ in rows]
    if vocab is None:
        vocab = Vocab.build(tokenized, max_vocab)

    raw_labels = [label for _, label in rows]
    if label_names is None:
        if all(label.lstrip("-").isdigit() for label in raw_labels):
            label_ids = [int(label) for label in raw_labels]
            label_names = [str(i) for i in range(max(label_ids) + 1)]
        else:
            label_names = sorted(set(raw_labels))
            label_ids = [label_names.index(label) for label in raw_labels]
    else:
        label_names = list(label_names)
        unknown = sorted(set(raw_labels) - set(label_names))
        if unknown:
            raise FormatError(f"labels {unknown} in {path} are not among {label_names}")
        label_ids = [label_names.index(label) for label in raw_labels]

    examples = [Example(vocab.encode(tokens), label) for tokens, label in zip(tokenized, label_ids)]
    name = os.path.splitext(os.path.basename(path))[0]
    logger.info(f"loaded {len(examples)} examples from {path} (vocab {len(vocab)})")
    return Split(name, examples, len(label_names), list(label_names)), vocab


def load_tsv_splits(
    paths: Mapping[str, str],
    text_col: str,
    label_col: str,
    max_vocab: Optional[int] = None,
) -> Tuple[Dict[str, Split], Vocab]:
    """Load train/dev/test TSV files with a vocabulary built from train only."""
    if "train" not in paths:
        raise ConfigError("TSV data needs a train file")
    train, vocab = load_tsv(paths["train"], text_col, label_col, max_vocab=max_vocab)
    splits = {"train": Split("train", train.examples, train.n_classes, train.label_names)}
    for name in ("dev", "test"):
        if name in paths:
            split, _ = load_tsv(paths[name], text_col, label_col, vocab=vocab, label_names=train.label_names)
            splits[name] = Split(name, split.examples, train.n_classes, train.label_names)
    return splits, vocab


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def batches(
    split: Split,
    batch_size: int,
    max_len: int,
    shuffle_seed: Optional[int] = None,
    epoch: int = 0,
) -> Iterator[Batch]:
    """
    Yield padded batches covering the split exactly once.

    The sequence-start token is prepended to every example before
    truncation to ``max_len``; the last, shorter batch is kept. With a
    ``shuffle_seed`` the order is a seeded permutation per ``epoch``.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(split))
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(split))
    for start in range(0, len(order), batch_size):
        chunk = [split.examples[i] for i in order[start:start + batch_size]]
        rows = [([START_ID] + list(e.tokens))[:max_len] for e in chunk]
        width = max(len(row) for row in rows)
        tokens = np.full((len(rows), width), PAD_ID, dtype=np.int64)
        mask = np.zeros((len(rows), width), dtype=np.int64)
        for i, row in enumerate(rows):
            tokens[i, :len(row)] = row
            mask[i, :len(row)] = 1
        labels = np.array([e.label for e in chunk], dtype=np.int64)
        yield Batch(tokens, mask, labels)
