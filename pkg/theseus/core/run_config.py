#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Run Configuration
===========================

Experiment configuration files: one ``dotted.key = value`` assignment per
line, ``#`` starts a comment. Values use YAML scalar/list syntax and are
coerced to the type each key declares, e.g.::

    model.n_layers = 4
    data.task = bracket-balance
    compress.lr = 1e-3
    map.groups = 0-1|2-3
    scheduler.kind = linear
    scheduler.saturation_steps = 1000
    seeds = [0, 1, 2, 3, 4]

Every key is checked and every derived configuration object is built before
any training starts.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from ..utils.common import config_hash
from .constants import (
    COMPARE_CONSTANT_RATES,
    DEFAULT_BATCH_SIZE,
    DEFAULT_ENCODER,
    DEFAULT_EVAL_EVERY,
    DEFAULT_PATIENCE,
    DEPTH_SWEEP_RATIOS,
    INIT_STRATEGIES,
    SCHEDULER_KINDS,
    SYNTHETIC_TASKS,
)
from .data import Split, Vocab, generate_synthetic, load_tsv_splits
from .errors import CompressionMapError, ConfigError, ParameterError
from .model import EncoderConfig
from .replacement import CompressionMap, ReplacementScheduler
from .training import TrainConfig

logger = logging.getLogger(__name__)

SWEEP_MODES = ["fixed-lr", "fixed-equivalent-lr"]
TRAIN_STAGES = ("predecessor", "compress", "finetune")

# Stage defaults sized for the toy encoder.
STAGE_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "predecessor": {"max_steps": 2000, "lr": 1e-3},
    "compress": {"max_steps": 2000, "lr": 1e-3},
    "finetune": {"max_steps": 1000, "lr": 5e-4},
}


# ---------------------------------------------------------------------------
# Value coercion
# ---------------------------------------------------------------------------

def _as_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError("expected an integer, got a boolean")
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    return int(value)


def _as_float(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError("expected a number, got a boolean")
    # YAML reads exponent forms without a dot (``1e-5``) as strings.
    return float(value)


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError(f"expected true or false, got {value!r}")


def _as_str(value: Any) -> str:
    return str(value)


def _list_of(item: Callable[[Any], Any]) -> Callable[[Any], List[Any]]:
    def coerce(value: Any) -> List[Any]:
        if not isinstance(value, (list, tuple)):
            value = [value]
        return [item(v) for v in value]
    return coerce


def _as_groups(value: Any) -> List[List[int]]:
    if isinstance(value, (str, int)) and not isinstance(value, bool):
        return CompressionMap.parse(str(value)).groups
    if isinstance(value, (list, tuple)) and all(isinstance(g, (list, tuple)) for g in value):
        return [[_as_int(i) for i in g] for g in value]
    raise ValueError(f"expected groups like 0-1|2-3 or [[0, 1], [2, 3]], got {value!r}")


@dataclass(frozen=True)
class Key:
    coerce: Callable[[Any], Any]
    default: Any = None
    optional: bool = False


def _stage_keys(stage: str) -> Dict[str, Key]:
    keys = {
        f"{stage}.batch_size": Key(_as_int, DEFAULT_BATCH_SIZE),
        f"{stage}.max_epochs": Key(_as_int, None, optional=True),
        f"{stage}.max_steps": Key(_as_int, None, optional=True),
        f"{stage}.lr": Key(_as_float, STAGE_DEFAULTS[stage]["lr"]),
        f"{stage}.eval_every": Key(_as_int, DEFAULT_EVAL_EVERY),
        f"{stage}.early_stop_patience": Key(_as_int, DEFAULT_PATIENCE),
        f"{stage}.weight_decay": Key(_as_float, 0.0),
        f"{stage}.check_finite": Key(_as_bool, False),
        f"{stage}.grad_clip": Key(_as_float, None, optional=True),
    }
    if stage == "compress":
        keys["compress.log_masks"] = Key(_as_bool, False)
    if stage == "finetune":
        keys["finetune.freeze_shared"] = Key(_as_bool, False)
    return keys


SCHEMA: Dict[str, Key] = {
    **{f"model.{name}": Key(_as_float if name == "dropout_rate" else _as_int, value)
       for name, value in DEFAULT_ENCODER.items()},
    "data.task": Key(_as_str, "bracket-balance"),
    "data.train_size": Key(_as_int, 2000),
    "data.dev_size": Key(_as_int, 500),
    "data.test_size": Key(_as_int, 500),
    "data.seq_len": Key(_as_int, 16),
    "data.train": Key(_as_str, None, optional=True),
    "data.dev": Key(_as_str, None, optional=True),
    "data.test": Key(_as_str, None, optional=True),
    "data.text_column": Key(_as_str, "sentence"),
    "data.label_column": Key(_as_str, "label"),
    "data.seed": Key(_as_int, 1234),
    **_stage_keys("predecessor"),
    **_stage_keys("compress"),
    **_stage_keys("finetune"),
    "map.groups": Key(_as_groups, None, optional=True),
    "map.group_size": Key(_as_int, 2),
    "map.successor_layers_per_group": Key(_as_int, 1),
    "map.init": Key(_as_str, "group-leading"),
    "scheduler.kind": Key(_as_str, "linear"),
    "scheduler.p": Key(_as_float, None, optional=True),
    "scheduler.k": Key(_as_float, None, optional=True),
    "scheduler.b": Key(_as_float, 0.3),
    "scheduler.saturation_steps": Key(_as_int, 1000, optional=True),
    "seed": Key(_as_int, 0),
    "seeds": Key(_list_of(_as_int), None, optional=True),
    "output_dir": Key(_as_str, "runs"),
    "sweep.rates": Key(_list_of(_as_float), [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]),
    "sweep.modes": Key(_list_of(_as_str), list(SWEEP_MODES)),
    "compare.constant_rates": Key(_list_of(_as_float), list(COMPARE_CONSTANT_RATES)),
    "depth.ratios": Key(_list_of(_as_int), list(DEPTH_SWEEP_RATIOS)),
    "bench.batch_size": Key(_as_int, 32),
    "bench.reps": Key(_as_int, 20),
    "bench.warmup": Key(_as_int, 3),
    "eval.batch_size": Key(_as_int, 64),
}

# where results go does not change what is computed
UNHASHED_KEYS = frozenset({"output_dir"})


def _coerce(key: str, value: Any) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    spec = SCHEMA[key]
    if value is None:
        if spec.optional:
            return None
        raise ConfigError(f"config key {key!r} may not be empty")
    try:
        return spec.coerce(value)
    except (TypeError, ValueError, CompressionMapError) as exc:
        raise ConfigError(f"invalid value for {key}: {exc}") from None


def parse_assignments(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines into a dict of raw YAML-decoded values."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = yaml.safe_load(value) if value else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}:{lineno}: cannot parse value for {key}: {exc}") from None
    return values


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfigFile:
    """
    Validated experiment configuration.

    ``explicit`` holds the keys the file or an override actually set;
    ``values`` holds every schema key with defaults filled in.
    """

    values: Dict[str, Any]
    explicit: Dict[str, Any] = field(default_factory=dict)
    source: str = "<defaults>"

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], source: str = "<mapping>") -> "RunConfigFile":
        explicit = {key: _coerce(key, value) for key, value in raw.items()}
        values = {key: spec.default for key, spec in SCHEMA.items()}
        values.update(explicit)
        config = cls(values, explicit, source)
        config.validate()
        return config

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfigFile":
        return cls.from_mapping(parse_assignments(text, source), source)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfigFile":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file does not exist: {path}")
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfigFile":
        """New config with ``overrides`` (already-typed or YAML text values) applied."""
        raw = dict(self.explicit)
        for key, value in overrides.items():
            if value is None:
                continue
            raw[key] = yaml.safe_load(value) if isinstance(value, str) else value
        return RunConfigFile.from_mapping(raw, self.source)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    # -- derived objects -------------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_dict({k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("model.")})

    def train_config(self, stage: str, seed: Optional[int] = None, **changes: Any) -> TrainConfig:
        if stage not in TRAIN_STAGES:
            raise ConfigError(f"no training section {stage!r}")
        prefix = f"{stage}."
        fields_ = {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}
        if fields_["max_epochs"] is None and fields_["max_steps"] is None:
            fields_["max_steps"] = STAGE_DEFAULTS[stage]["max_steps"]
        fields_.update(changes)
        fields_["stage"] = stage
        fields_["seed"] = self.values["seed"] if seed is None else seed
        return TrainConfig.from_dict(fields_)

    def compression_map(self, n_layers: Optional[int] = None) -> CompressionMap:
        n_layers = self.values["model.n_layers"] if n_layers is None else n_layers
        per_group = self.values["map.successor_layers_per_group"]
        init = self.values["map.init"]
        if self.values["map.groups"] is not None:
            cmap = CompressionMap(self.values["map.groups"], per_group, init)
        else:
            cmap = CompressionMap.uniform(n_layers, self.values["map.group_size"], per_group, init)
        cmap.validate(n_layers)
        return cmap

    def scheduler(self, kind: Optional[str] = None, p: Optional[float] = None) -> ReplacementScheduler:
        kind = kind or self.values["scheduler.kind"]
        if kind == "constant":
            rate = self.values["scheduler.p"] if p is None else p
            if rate is None:
                raise ConfigError("constant scheduler needs scheduler.p")
            return ReplacementScheduler.constant(rate)
        b = self.values["scheduler.b"]
        if self.values["scheduler.k"] is not None:
            return ReplacementScheduler(kind, k=self.values["scheduler.k"], b=b)
        steps = self.values["scheduler.saturation_steps"]
        if steps is None:
            raise ConfigError(f"{kind} scheduler needs scheduler.k or scheduler.saturation_steps")
        return ReplacementScheduler.reaching_one_at(steps, b, kind)

    def seeds(self) -> List[int]:
        return list(self.values["seeds"]) if self.values["seeds"] else [self.values["seed"]]

    @property
    def output_dir(self) -> str:
        return self.values["output_dir"]

    def is_tsv(self) -> bool:
        return self.values["data.task"] == "tsv"

    def load_data(self) -> Tuple[Dict[str, Split], Optional[Vocab]]:
        """Materialize the configured splits (synthetic data ignores the run seed)."""
        model = self.encoder_config()
        if self.is_tsv():
            paths = {name: self.values[f"data.{name}"] for name in ("train", "dev", "test") if self.values[f"data.{name}"]}
            splits, vocab = load_tsv_splits(
                paths,
                self.values["data.text_column"],
                self.values["data.label_column"],
                max_vocab=model.vocab_size,
            )
            if splits["train"].n_classes != model.n_classes:
                raise ConfigError(
                    f"train file has {splits['train'].n_classes} labels, model.n_classes is {model.n_classes}"
                )
            return splits, vocab
        sizes = {name: self.values[f"data.{name}_size"] for name in ("train", "dev", "test")}
        splits = generate_synthetic(
            self.values["data.task"],
            sizes,
            self.values["data.seq_len"],
            model.vocab_size,
            self.values["data.seed"],
            model.n_classes,
        )
        return splits, None

    # -- validation and identity ----------------------------------------

    def validate(self) -> None:
        """Build every derived object once so errors surface before compute."""
        model = self.encoder_config()
        for stage in TRAIN_STAGES:
            self.train_config(stage)
        if self.values["map.init"] not in INIT_STRATEGIES:
            raise ConfigError(f"map.init must be one of {INIT_STRATEGIES}")
        try:
            self.compression_map(model.n_layers)
        except CompressionMapError as exc:
            raise ConfigError(f"invalid compression map: {exc}") from None
        if self.values["scheduler.kind"] not in SCHEDULER_KINDS:
            raise ConfigError(f"scheduler.kind must be one of {SCHEDULER_KINDS}")
        try:
            self.scheduler()
        except ParameterError as exc:
            raise ConfigError(f"invalid scheduler: {exc}") from None

        task = self.values["data.task"]
        if task == "tsv":
            missing = [n for n in ("train", "dev") if not self.values[f"data.{n}"]]
            if missing:
                raise ConfigError(f"TSV data needs data.{' and data.'.join(missing)}")
        elif task not in SYNTHETIC_TASKS:
            raise ConfigError(f"data.task must be 'tsv' or one of {SYNTHETIC_TASKS}, got {task!r}")
        elif self.values["data.seq_len"] > model.max_seq_len:
            raise ConfigError(f"data.seq_len {self.values['data.seq_len']} exceeds model.max_seq_len {model.max_seq_len}")

        rates = self.values["sweep.rates"]
        if any(not 0.0 < r <= 1.0 for r in rates):
            raise ConfigError(
                f"sweep.rates must lie in (0, 1]; a rate of 0 cannot be corrected by lr / p, got {rates}"
            )
        unknown_modes = [m for m in self.values["sweep.modes"] if m not in SWEEP_MODES]
        if unknown_modes:
            raise ConfigError(f"unknown sweep modes {unknown_modes}; choose from {SWEEP_MODES}")
        if any(not 0.0 <= r <= 1.0 for r in self.values["compare.constant_rates"]):
            raise ConfigError("compare.constant_rates must lie in [0, 1]")
        if any(r < 1 for r in self.values["depth.ratios"]):
            raise ConfigError("depth.ratios must be >= 1")
        if self.values["bench.reps"] < 10:
            raise ConfigError(f"bench.reps must be >= 10, got {self.values['bench.reps']}")
        if self.values["seeds"] is not None and not self.values["seeds"]:
            raise ConfigError("seeds may not be an empty list")

    def canonical_text(self) -> str:
        """Every effective key and value except the output location, sorted; the basis of ``hash``."""
        return "".join(f"{key} = {self.values[key]!r}\n" for key in sorted(self.values) if key not in UNHASHED_KEYS)

    @property
    def hash(self) -> str:
        return config_hash(self.canonical_text())
