#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Constants
===================

Definitions of constants used throughout the Theseus toolkit.
Includes the toy encoder defaults, optimizer constants, reserved vocabulary
ids, checkpoint format identifiers and the default sweep grids.
"""

from typing import Any, Dict, List

# Application version
VERSION = "0.1.0"

# Checkpoint format
CHECKPOINT_MAGIC = b"THSC"
CHECKPOINT_FORMAT_VERSION = 1
DTYPE_TAG_F64 = 1

# Reserved vocabulary ids
PAD_ID = 0
UNK_ID = 1
START_ID = 2
RESERVED_TOKENS = {
    "[pad]": PAD_ID,
    "[unk]": UNK_ID,
    "[start]": START_ID,
}
FIRST_FREE_ID = 3

# Numerics
LAYER_NORM_EPS = 1e-5
INIT_STDDEV = 0.02
GRAD_CHECK_EPS = 1e-5
GRAD_CHECK_FLOOR = 1e-8

# Adam
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Toy encoder defaults
DEFAULT_ENCODER: Dict[str, Any] = {
    "vocab_size": 256,
    "max_seq_len": 32,
    "d_model": 64,
    "n_heads": 4,
    "d_ff": 256,
    "n_layers": 4,
    "n_classes": 2,
    "dropout_rate": 0.0,
}

# Training loop defaults
DEFAULT_BATCH_SIZE = 32
DEFAULT_EVAL_EVERY = 200
DEFAULT_PATIENCE = 5

# Scheduler grid: base rates and the steps at which p_d reaches 1
SCHEDULER_BASE_RATES: List[float] = [0.1, 0.3]
SCHEDULER_SATURATION_STEPS: List[int] = [1000, 5000, 10000, 30000]

# Default grids for compare-schedulers and depth-sweep
COMPARE_CONSTANT_RATES: List[float] = [0.5, 0.7, 0.9]
DEPTH_SWEEP_RATIOS: List[int] = [2, 3, 4]

# Constant replacing rates that usually work well
RECOMMENDED_RATE_RANGE = (0.5, 0.7)

# Synthetic tasks
SYNTHETIC_TASKS = ["majority-token", "bracket-balance", "keyed-lookup"]

# Scheduler kinds
SCHEDULER_KINDS = ["constant", "linear", "anti-linear"]

# Stages
STAGES = ["predecessor", "compress", "finetune"]
PHASES = ["replacement", "successor-finetune"]

# Successor initialization strategies
INIT_STRATEGIES = ["group-leading", "global-prefix"]

# Output file names
METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.csv"
RUNS_FILE = "runs.csv"
ERRORS_FILE = "errors.jsonl"
LOG_FILE = "theseus.log"
