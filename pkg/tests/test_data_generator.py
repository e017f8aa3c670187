"""
Test data generator for the Theseus suite.
Builds random small networks for gradient checks and writes TSV corpora.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from theseus.core.model import EncoderConfig, init_encoder
from theseus.core.tensor import Tensor

logger = logging.getLogger('test_data_generator')

# The key bias shifts every score of a query by the same amount, so its
# gradient is identically zero and finite differences only see roundoff.
ZERO_GRAD_PARAMS = ("attn.bk",)


def load_jsonl(file_path) -> List[Dict[str, Any]]:
    with open(file_path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def read_csv(file_path) -> List[Dict[str, str]]:
    with open(file_path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


class TestDataGenerator:
    """Generates networks and corpora for tests."""

    __test__ = False

    def __init__(self, base_dir: Optional[str] = None, seed: int = 0):
        """
        Initialize the test data generator.

        Args:
            base_dir: Directory for generated files
            seed: Seed for every random draw
        """
        self.base_dir = Path(base_dir) if base_dir else None
        if self.base_dir:
            self.base_dir.mkdir(parents=True, exist_ok=True)
        self.rng = np.random.default_rng(seed)
        self.words = ["good", "bad", "fine", "awful", "great", "poor", "nice", "dull", "bright", "grim"]

    def random_tensor(self, *shape: int, scale: float = 1.0, name: Optional[str] = None) -> Tensor:
        return Tensor.parameter(self.rng.standard_normal(shape) * scale, name=name)

    def random_encoder(self, config: EncoderConfig, seed: int = 0, scale: float = 0.3):
        """Encoder whose weights are redrawn at ``scale`` so gradients are well above roundoff."""
        model = init_encoder(config, seed)
        for name, tensor in model.named_parameters():
            if name.endswith("gain"):
                tensor.data[...] = 1.0 + self.rng.standard_normal(tensor.data.shape) * 0.1
            else:
                tensor.data[...] = self.rng.standard_normal(tensor.data.shape) * scale
        return model

    def random_tokens(self, batch: int, seq_len: int, vocab_size: int) -> Tuple[np.ndarray, np.ndarray]:
        """Token ids with ragged lengths and the matching attention mask."""
        tokens = self.rng.integers(3, vocab_size, size=(batch, seq_len))
        lengths = self.rng.integers(max(1, seq_len // 2), seq_len + 1, size=batch)
        mask = (np.arange(seq_len)[None, :] < lengths[:, None]).astype(np.int64)
        return tokens * mask, mask

    def readout(self, *shape: int) -> Tensor:
        """Fixed random weights for ``sum(out * R)`` losses."""
        return Tensor(self.rng.standard_normal(shape))

    @staticmethod
    def checkable(params: Sequence[Tuple[str, Tensor]]) -> List[Tensor]:
        return [t for name, t in params if not name.endswith(ZERO_GRAD_PARAMS)]

    def write_tsv(self, name: str, n_rows: int, text_column: str = "sentence",
                  label_column: str = "label", extra_columns: Sequence[str] = ()) -> Path:
        """
        Write a labelled TSV file.

        Rows mentioning "good"/"great"/"nice"/"bright"/"fine" more often
        than their opposites get label 1.
        """
        if self.base_dir is None:
            raise ValueError("write_tsv needs a base directory")
        positive = {"good", "great", "nice", "bright", "fine"}
        path = self.base_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
            writer.writerow([text_column, label_column, *extra_columns])
            for _ in range(n_rows):
                words = list(self.rng.choice(self.words, size=int(self.rng.integers(3, 8))))
                label = int(sum(w in positive for w in words) * 2 > len(words))
                writer.writerow([" ".join(words), label, *("x" for _ in extra_columns)])
        logger.info(f"Wrote {n_rows} rows to {path}")
        return path

    def write_tsv_splits(self, sizes: Dict[str, int]) -> Dict[str, str]:
        return {split: str(self.write_tsv(f"{split}.tsv", n)) for split, n in sizes.items()}


