#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Checkpoint Manager
============================

Binary checkpoints for encoder and hybrid models.

Layout (all integers little-endian):

    magic "THSC" | u32 format version
    u32 header length | UTF-8 key=value config echo
    u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 dtype tag | u8 rank |
                u64 extents | raw float64 payload

Every checkpoint gets a JSON manifest next to it holding per-tensor SHA-256
hashes so that a file can be verified without loading it into a model.
"""

import hashlib
import json
import logging
import struct
from datetime import datetime
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional, Tuple, Union

import numpy as np

from .constants import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC, DTYPE_TAG_F64
from .errors import FormatError
from .model import ClassifierHead, EncoderConfig, EncoderModel, Embeddings, LAYER_PARAM_NAMES, TransformerLayer
from .replacement import CompressionMap, HybridModel, ModulePair, set_phase
from .tensor import Tensor

logger = logging.getLogger(__name__)

Model = Union[EncoderModel, HybridModel]

MANIFEST_SUFFIX = ".manifest.json"


# ---------------------------------------------------------------------------
# Hashing
# ---------------------------------------------------------------------------

def _tensor_digest(data: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(struct.pack(f"<B{data.ndim}Q", data.ndim, *data.shape))
    digest.update(np.ascontiguousarray(data, dtype="<f8").tobytes())
    return digest.hexdigest()


def tensor_hashes(model: Model) -> Dict[str, str]:
    """SHA-256 of every named tensor (shape and raw bytes)."""
    return {name: _tensor_digest(t.data) for name, t in model.named_parameters()}


def model_hash(model: Model) -> str:
    """Single digest over all tensor hashes in name order."""
    digest = hashlib.sha256()
    for name, value in sorted(tensor_hashes(model).items()):
        digest.update(f"{name}={value}\n".encode("utf-8"))
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Header echo
# ---------------------------------------------------------------------------

def _config_echo(model: Model) -> Dict[str, str]:
    echo = {"kind": "hybrid" if isinstance(model, HybridModel) else "encoder"}
    echo.update({key: str(value) for key, value in model.config.to_dict().items()})
    if isinstance(model, HybridModel):
        cmap = model.compression_map
        echo["map.groups"] = cmap.describe()
        echo["map.successor_layers_per_group"] = str(cmap.successor_layers_per_group)
        echo["map.init"] = cmap.init
        echo["phase"] = model.phase
    return echo


def _parse_echo(text: str) -> Dict[str, str]:
    echo = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"malformed checkpoint header line {line!r}")
        key, value = line.split("=", 1)
        echo[key.strip()] = value.strip()
    return echo


# ---------------------------------------------------------------------------
# Binary records
# ---------------------------------------------------------------------------

def _write_tensor(fh: BinaryIO, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BB", DTYPE_TAG_F64, data.ndim))
    fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, size: int, what: str) -> bytes:
    chunk = fh.read(size)
    if len(chunk) != size:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return chunk


def _read_tensor(fh: BinaryIO) -> Tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    dtype_tag, rank = struct.unpack("<BB", _read_exact(fh, 2, f"{name} dtype"))
    if dtype_tag != DTYPE_TAG_F64:
        raise FormatError(f"tensor {name}: unsupported dtype tag {dtype_tag}")
    extents = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, f"{name} extents"))
    count = int(np.prod(extents, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 8 * count, f"{name} payload")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(extents)
    return name, data


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """Raw header echo and named arrays of a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint does not exist: {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise FormatError(f"{path} is not a Theseus checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint format version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        echo = _parse_echo(_read_exact(fh, header_len, "header").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            name, data = _read_tensor(fh)
            if name in tensors:
                raise FormatError(f"{path}: duplicate tensor {name}")
            tensors[name] = data
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} tensors")
    return echo, tensors


# ---------------------------------------------------------------------------
# Save / load
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None) -> str:
    """
    Write ``model`` and its hash manifest.

    Args:
        model: Encoder or hybrid model
        path: Output file; parent directories are created
        metadata: Extra JSON-serializable fields for the manifest

    Returns:
        Path to the written checkpoint
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    echo = _config_echo(model)
    header = "".join(f"{key}={value}\n" for key, value in echo.items()).encode("utf-8")
    named = model.named_parameters()

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named:
            _write_tensor(fh, name, tensor.data)

    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "config": echo,
        "tensors": tensor_hashes(model),
        "model_hash": model_hash(model),
    }
    if metadata:
        manifest["metadata"] = metadata
    with open(_manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    logger.info(f"Checkpoint written: {path} ({len(named)} tensors)")
    return str(path)


def _take(tensors: Dict[str, np.ndarray], name: str) -> Tensor:
    if name not in tensors:
        raise FormatError(f"checkpoint is missing tensor {name}")
    return Tensor.parameter(tensors.pop(name), name=name)


def _take_layer(tensors: Dict[str, np.ndarray], prefix: str, n_heads: int) -> TransformerLayer:
    params = {}
    for param in LAYER_PARAM_NAMES:
        tensor = _take(tensors, prefix + param)
        tensor.name = param
        params[param] = tensor
    return TransformerLayer(params, n_heads)


def _config_from_echo(echo: Dict[str, str]) -> EncoderConfig:
    values = {key: value for key, value in echo.items() if "." not in key and key not in ("kind", "phase")}
    try:
        return EncoderConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint config echo is invalid: {exc}") from exc


def load_checkpoint(path: Union[str, Path]) -> Model:
    """
    Rebuild the model stored at ``path``.

    Encoders come back fully trainable; hybrids come back in the phase
    they were saved in.
    """
    echo, tensors = read_checkpoint(path)
    config = _config_from_echo(echo)
    kind = echo.get("kind", "encoder")
    embeddings = Embeddings(_take(tensors, "embedding.token"), _take(tensors, "embedding.position"))
    head = ClassifierHead(_take(tensors, "head.weight"), _take(tensors, "head.bias"))

    if kind == "encoder":
        layers = [_take_layer(tensors, f"layers.{i}.", config.n_heads) for i in range(config.n_layers)]
        model: Model = EncoderModel(config, embeddings, layers, head)
        model.set_trainable(True)
    elif kind == "hybrid":
        try:
            cmap = CompressionMap.parse(
                echo["map.groups"],
                int(echo.get("map.successor_layers_per_group", 1)),
                echo.get("map.init", "group-leading"),
            )
        except KeyError:
            raise FormatError("hybrid checkpoint is missing its compression map") from None
        pairs = []
        for i, group in enumerate(cmap.groups):
            prd = [_take_layer(tensors, f"prd.{i}.{j}.", config.n_heads) for j in range(len(group))]
            scc = [_take_layer(tensors, f"scc.{i}.{j}.", config.n_heads) for j in range(cmap.successor_layers_per_group)]
            pairs.append(ModulePair(prd, scc))
        model = HybridModel(config, cmap, embeddings, head, pairs)
        set_phase(model, echo.get("phase", "replacement"))
    else:
        raise FormatError(f"unknown checkpoint kind {kind!r}")

    if tensors:
        raise FormatError(f"checkpoint has unexpected tensors: {', '.join(sorted(tensors))}")
    logger.info(f"Checkpoint loaded: {path} ({kind})")
    return model


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + MANIFEST_SUFFIX)


def verify_checkpoint(path: Union[str, Path]) -> List[str]:
    """
    Compare a checkpoint against its manifest.

    Returns:
        Names of tensors whose hash differs, is missing or is unexpected
        (empty when the file is intact)
    """
    path = Path(path)
    manifest_file = _manifest_path(path)
    if not manifest_file.exists():
        raise FormatError(f"no manifest for checkpoint {path}")
    with open(manifest_file, "r", encoding="utf-8") as fh:
        expected = json.load(fh).get("tensors", {})
    _, tensors = read_checkpoint(path)
    actual = {name: _tensor_digest(data) for name, data in tensors.items()}
    bad = sorted(
        name for name in set(expected) | set(actual)
        if expected.get(name) != actual.get(name)
    )
    if bad:
        logger.warning(f"Checkpoint {path} failed verification for {len(bad)} tensors")
    return bad


class CheckpointManager:
    """Saves and loads tagged checkpoints under one run directory."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def path_for(self, tag: str) -> Path:
        return self.directory / f"{tag}.ckpt"

    def save(self, model: Model, tag: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        return save_checkpoint(model, self.path_for(tag), metadata)

    def load(self, tag: str) -> Model:
        return load_checkpoint(self.path_for(tag))

    def metadata(self, tag: str) -> Dict[str, Any]:
        """The ``metadata`` block saved with a checkpoint (empty when absent)."""
        manifest_file = _manifest_path(self.path_for(tag))
        if not manifest_file.exists():
            return {}
        with open(manifest_file, "r", encoding="utf-8") as fh:
            return json.load(fh).get("metadata", {})
