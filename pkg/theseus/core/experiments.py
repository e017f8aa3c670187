#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Theseus - Experiments
=====================

Drivers behind the command-line verbs. Each grid point (seed, rate, ratio,
...) is a picklable task run by a top-level function so sweeps can fan out
over worker processes; every task writes into its own subdirectory and the
aggregating driver writes the command's summary table afterwards.

Synthetic data is generated from ``data.seed`` and is the same for every
run seed; run seeds drive model initialization, batch order and
replacement masks.
"""

import logging
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from ..utils.common import append_jsonl, ensure_dir_exists, median, write_csv
from ..utils.performance import bench, get_system_info, parallel_map, timed
from .checkpoint_manager import CheckpointManager, load_checkpoint
from .constants import ERRORS_FILE, METRICS_FILE, RECOMMENDED_RATE_RANGE, RUNS_FILE, SUMMARY_FILE
from .data import Split
from .errors import ConfigError, TheseusError
from .model import EncoderModel, count_flops, count_params, encoder_forward, init_encoder
from .replacement import (
    CompressionMap,
    HybridModel,
    ReplacementMask,
    ReplacementScheduler,
    assemble_successor,
    lr_for_equivalent,
    truncate_predecessor,
)
from .run_config import RunConfigFile
from .tensor import no_grad
from .training import (
    TrainResult,
    compress,
    evaluate,
    finetune_successor,
    hybrid_evaluator,
    train_predecessor,
)

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    """Rows of a command's summary table plus where it was written."""

    title: str
    rows: List[Dict[str, Any]]
    columns: List[str]
    summary_path: str
    errors: int = 0
    notes: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _record_error(out_root: str, context: Dict[str, Any], exc: BaseException) -> Dict[str, Any]:
    record = {
        **context,
        "error": type(exc).__name__,
        "message": str(exc),
        "time": datetime.now().isoformat(timespec="seconds"),
    }
    append_jsonl(record, os.path.join(out_root, ERRORS_FILE))
    logger.error(f"{context}: {type(exc).__name__}: {exc}", exc_info=not isinstance(exc, TheseusError))
    return {**context, "status": "error", "error": str(exc)}


def _reset_metrics(run_dir: str) -> None:
    path = os.path.join(run_dir, METRICS_FILE)
    if os.path.exists(path):
        os.remove(path)


def _write_metrics(result: TrainResult, run_dir: str) -> None:
    ensure_dir_exists(run_dir)
    result.metrics.to_jsonl(os.path.join(run_dir, METRICS_FILE), append=True)


def _split_for_test(data: Dict[str, Split]) -> Split:
    if "test" in data:
        return data["test"]
    logger.warning("no test split configured; reporting dev accuracy as test")
    return data["dev"]


def _score(model, split: Split, batch_size: int) -> Dict[str, float]:
    if isinstance(model, HybridModel):
        return evaluate(model, split, batch_size, forward=hybrid_evaluator(model))
    return evaluate(model, split, batch_size)


def _with_median(rows: List[Dict[str, Any]], label_key: str, numeric: Sequence[str]) -> List[Dict[str, Any]]:
    ok = [r for r in rows if r.get("status", "ok") == "ok"]
    summary = {label_key: "median", "status": f"{len(ok)}/{len(rows)} ok"}
    for column in numeric:
        summary[column] = median(r.get(column) for r in ok)
    if rows and "config_hash" in rows[0]:
        summary["config_hash"] = rows[0]["config_hash"]
    return rows + [summary]


def _flop_ratio(predecessor_config, successor_config) -> float:
    seq = predecessor_config.max_seq_len
    return count_flops(predecessor_config, seq) / count_flops(successor_config, seq)


def _train_or_load_predecessor(config: RunConfigFile, seed: int, run_dir: str,
                               data: Dict[str, Split]) -> EncoderModel:
    """
    Reuse ``predecessor.ckpt`` in ``run_dir`` when it was trained from the
    same config, otherwise train and save it.
    """
    checkpoints = CheckpointManager(run_dir)
    saved = checkpoints.path_for("predecessor")
    if saved.exists() and checkpoints.metadata("predecessor").get("config_hash") == config.hash:
        model = checkpoints.load("predecessor")
        if not isinstance(model, EncoderModel):
            raise ConfigError(f"{saved} does not hold an encoder")
        logger.info(f"Reusing predecessor checkpoint in {run_dir}")
        return model
    _reset_metrics(run_dir)
    model = init_encoder(config.encoder_config(), seed)
    result = train_predecessor(model, data, config.train_config("predecessor", seed))
    _write_metrics(result, run_dir)
    checkpoints.save(result.model, "predecessor", {"seed": seed, "config_hash": config.hash})
    return result.model


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass
class SeedTask:
    config: RunConfigFile
    seed: int
    out_root: str


@timed
def run_pipeline_seed(task: SeedTask) -> Dict[str, Any]:
    """Predecessor -> compress -> assemble -> finetune -> test for one seed."""
    config, seed = task.config, task.seed
    run_dir = os.path.join(task.out_root, f"seed_{seed}")
    checkpoints = CheckpointManager(run_dir)
    meta = {"seed": seed, "config_hash": config.hash}
    batch = config["eval.batch_size"]
    _reset_metrics(run_dir)
    stage = "data"
    try:
        data, _ = config.load_data()
        test = _split_for_test(data)

        stage = "predecessor"
        predecessor = init_encoder(config.encoder_config(), seed)
        pred = train_predecessor(predecessor, data, config.train_config("predecessor", seed))
        _write_metrics(pred, run_dir)
        checkpoints.save(pred.model, "predecessor", meta)
        checkpoints.save(pred.final_model, "predecessor_final", meta)

        stage = "compress"
        cmap = config.compression_map()
        comp = compress(pred.model, data, cmap, config.scheduler(), config.train_config("compress", seed))
        _write_metrics(comp, run_dir)
        checkpoints.save(comp.model, "hybrid", meta)
        checkpoints.save(comp.final_model, "hybrid_final", meta)

        stage = "finetune"
        fin = finetune_successor(comp.model, data, config.train_config("finetune", seed))
        _write_metrics(fin, run_dir)
        checkpoints.save(fin.model, "successor", meta)
        checkpoints.save(fin.final_model, "successor_final", meta)

        stage = "test"
        pred_dev = _score(pred.model, data["dev"], batch)
        pred_test = _score(pred.model, test, batch)
        hybrid_dev = _score(comp.model, data["dev"], batch)
        succ_dev = _score(fin.model, data["dev"], batch)
        succ_test = _score(fin.model, test, batch)
    except Exception as exc:
        return _record_error(task.out_root, {"command": "pipeline", "seed": seed, "stage": stage,
                                             "config_hash": config.hash}, exc)

    retention = succ_test["accuracy"] / pred_test["accuracy"] if pred_test["accuracy"] > 0 else float("nan")
    logger.info(f"seed {seed}: predecessor test {pred_test['accuracy']:.4f}, successor test {succ_test['accuracy']:.4f}")
    return {
        "seed": seed,
        "status": "ok",
        "predecessor_dev_accuracy": pred_dev["accuracy"],
        "predecessor_test_accuracy": pred_test["accuracy"],
        "hybrid_dev_accuracy": hybrid_dev["accuracy"],
        "successor_dev_accuracy": succ_dev["accuracy"],
        "successor_test_accuracy": succ_test["accuracy"],
        "retention": retention,
        "successor_layers": fin.model.config.n_layers,
        "flop_ratio": _flop_ratio(pred.model.config, fin.model.config),
        "config_hash": config.hash,
    }


PIPELINE_NUMERIC = [
    "predecessor_dev_accuracy", "predecessor_test_accuracy", "hybrid_dev_accuracy",
    "successor_dev_accuracy", "successor_test_accuracy", "retention", "successor_layers", "flop_ratio",
]


def cmd_pipeline(config: RunConfigFile, out_root: str, workers: int = 1) -> CommandResult:
    tasks = [SeedTask(config, seed, out_root) for seed in config.seeds()]
    rows = parallel_map(run_pipeline_seed, tasks, workers)
    table = _with_median(rows, "seed", PIPELINE_NUMERIC)
    columns = ["seed", "status"] + PIPELINE_NUMERIC + ["config_hash"]
    path = write_csv(table, os.path.join(out_root, SUMMARY_FILE), columns)
    errors = sum(1 for r in rows if r["status"] != "ok")
    return CommandResult("Pipeline (median over seeds)", table, columns, path, errors)


# ---------------------------------------------------------------------------
# analyze-replacement
# ---------------------------------------------------------------------------

def _check_shared_map(config: RunConfigFile, predecessor: EncoderModel, hybrid: HybridModel) -> CompressionMap:
    cmap = hybrid.compression_map
    if hybrid.config != predecessor.config:
        raise ConfigError("hybrid and predecessor checkpoints were built from different encoder configs")
    try:
        cmap.validate(predecessor.config.n_layers)
    except TheseusError as exc:
        raise ConfigError(f"hybrid compression map does not fit the predecessor: {exc}") from None
    if "map.groups" in config.explicit and config["map.groups"] != cmap.groups:
        raise ConfigError(
            f"configured map {CompressionMap(config['map.groups']).describe()} differs from "
            f"the checkpoint's {cmap.describe()}"
        )
    return cmap


def cmd_analyze_replacement(config: RunConfigFile, predecessor_path: str, hybrid_path: str,
                            out_root: str, split: str = "dev") -> CommandResult:
    """
    Replace one module position at a time and report the change against
    the predecessor on ``split``.
    """
    predecessor = load_checkpoint(predecessor_path)
    hybrid = load_checkpoint(hybrid_path)
    if not isinstance(predecessor, EncoderModel) or not isinstance(hybrid, HybridModel):
        raise ConfigError("analyze-replacement needs an encoder and a hybrid checkpoint, in that order")
    cmap = _check_shared_map(config, predecessor, hybrid)
    data, _ = config.load_data()
    if split not in data:
        raise ConfigError(f"no {split!r} split configured")
    batch = config["eval.batch_size"]
    base = evaluate(predecessor, data[split], batch)

    rows = []
    for position, group in enumerate(cmap.groups):
        mask = ReplacementMask.one_hot(hybrid.n_modules, position)
        scored = evaluate(hybrid, data[split], batch, forward=hybrid_evaluator(hybrid, mask))
        rows.append({
            "position": position + 1,
            "layers": CompressionMap([group]).describe(),
            f"{split}_accuracy": scored["accuracy"],
            f"{split}_loss": scored["loss"],
            "delta_accuracy": scored["accuracy"] - base["accuracy"],
            "delta_loss": scored["loss"] - base["loss"],
            "config_hash": config.hash,
        })
        logger.info(f"module {position + 1} ({group}): accuracy delta {rows[-1]['delta_accuracy']:+.4f}")
    columns = ["position", "layers", f"{split}_accuracy", f"{split}_loss", "delta_accuracy", "delta_loss", "config_hash"]
    path = write_csv(rows, os.path.join(out_root, SUMMARY_FILE), columns)
    notes = [f"predecessor {split} accuracy {base['accuracy']:.4f}, loss {base['loss']:.4f}"]
    return CommandResult("Single-module replacement", rows, columns, path, 0, notes)


# ---------------------------------------------------------------------------
# Grid runs shared by sweep-rate / compare-schedulers / depth-sweep
# ---------------------------------------------------------------------------

@dataclass
class GridTask:
    """One compression run from a saved predecessor."""

    config: RunConfigFile
    seed: int
    predecessor_path: str
    run_dir: str
    out_root: str
    label: Dict[str, Any]
    scheduler: Optional[ReplacementScheduler] = None
    compression_map: Optional[CompressionMap] = None
    compress_lr: Optional[float] = None
    finetune: bool = True
    truncated: bool = False


@timed
def run_grid_point(task: GridTask) -> Dict[str, Any]:
    """
    Compress (or truncate) the saved predecessor and score the result on dev.

    Truncated tasks skip compression and fine-tune the bottom layers of the
    predecessor directly.
    """
    config, seed = task.config, task.seed
    row = {**task.label, "seed": seed}
    stage = "load"
    _reset_metrics(task.run_dir)
    try:
        data, _ = config.load_data()
        predecessor = load_checkpoint(task.predecessor_path)
        cmap = task.compression_map or config.compression_map()
        if task.truncated:
            stage = "finetune"
            model = truncate_predecessor(predecessor, cmap.successor_depth)
            result = finetune_successor(model, data, config.train_config("finetune", seed))
            _write_metrics(result, task.run_dir)
            final_model = result.model
        else:
            stage = "compress"
            changes = {} if task.compress_lr is None else {"lr": task.compress_lr}
            result = compress(predecessor, data, cmap, task.scheduler or config.scheduler(),
                              config.train_config("compress", seed, **changes))
            _write_metrics(result, task.run_dir)
            final_model = result.model
            if task.finetune:
                stage = "finetune"
                result = finetune_successor(final_model, data, config.train_config("finetune", seed))
                _write_metrics(result, task.run_dir)
                final_model = result.model
        stage = "eval"
        scored = _score(final_model, data["dev"], config["eval.batch_size"])
    except Exception as exc:
        return _record_error(task.out_root, {**row, "stage": stage}, exc)
    return {**row, "status": "ok", "dev_accuracy": scored["accuracy"], "dev_loss": scored["loss"]}


@dataclass
class PredecessorTask:
    config: RunConfigFile
    seed: int
    run_dir: str


def run_predecessor(task: PredecessorTask) -> str:
    data, _ = task.config.load_data()
    _train_or_load_predecessor(task.config, task.seed, task.run_dir, data)
    return os.path.join(task.run_dir, "predecessor.ckpt")


def _predecessors(config: RunConfigFile, out_root: str, workers: int,
                  predecessor_path: Optional[str] = None) -> Dict[int, str]:
    """Predecessor checkpoint per seed: a given checkpoint, or one trained per seed."""
    seeds = config.seeds()
    if predecessor_path:
        return {seed: predecessor_path for seed in seeds}
    tasks = [PredecessorTask(config, seed, os.path.join(out_root, "predecessors", f"seed_{seed}")) for seed in seeds]
    return dict(zip(seeds, parallel_map(run_predecessor, tasks, workers)))


def _aggregate(rows: List[Dict[str, Any]], keys: Sequence[str]) -> List[Dict[str, Any]]:
    """Median dev accuracy/loss per distinct value of ``keys``."""
    grouped: Dict[tuple, List[Dict[str, Any]]] = {}
    for row in rows:
        grouped.setdefault(tuple(row[k] for k in keys), []).append(row)
    table = []
    for key, members in grouped.items():
        ok = [m for m in members if m.get("status") == "ok"]
        table.append({
            **dict(zip(keys, key)),
            "median_dev_accuracy": median(m.get("dev_accuracy") for m in ok),
            "median_dev_loss": median(m.get("dev_loss") for m in ok),
            "seeds_ok": len(ok),
            "seeds": len(members),
        })
    return table


# ---------------------------------------------------------------------------
# sweep-rate
# ---------------------------------------------------------------------------

def cmd_sweep_rate(config: RunConfigFile, out_root: str, workers: int = 1,
                   predecessor_path: Optional[str] = None) -> CommandResult:
    """
    Constant-rate compression for every (mode, rate, seed).

    ``fixed-lr`` keeps ``compress.lr``; ``fixed-equivalent-lr`` uses
    ``compress.lr / p`` so that ``p * lr`` stays at ``compress.lr``.
    """
    base_lr = config["compress.lr"]
    predecessors = _predecessors(config, out_root, workers, predecessor_path)
    tasks = []
    for mode in config["sweep.modes"]:
        for rate in config["sweep.rates"]:
            lr = base_lr if mode == "fixed-lr" else lr_for_equivalent(base_lr, rate)
            for seed, path in predecessors.items():
                tasks.append(GridTask(
                    config, seed, path,
                    os.path.join(out_root, f"{mode}_p{rate:g}", f"seed_{seed}"), out_root,
                    {"mode": mode, "rate": rate, "lr": lr},
                    scheduler=ReplacementScheduler.constant(rate),
                    compress_lr=lr,
                    finetune=False,
                ))
    runs = parallel_map(run_grid_point, tasks, workers)
    write_csv(runs, os.path.join(out_root, RUNS_FILE))

    low, high = RECOMMENDED_RATE_RANGE
    table = _aggregate(runs, ["mode", "rate", "lr"])
    for row in table:
        row["recommended_range"] = "yes" if low <= row["rate"] <= high else ""
        row["config_hash"] = config.hash
    columns = ["mode", "rate", "lr", "median_dev_accuracy", "median_dev_loss", "seeds_ok", "seeds",
               "recommended_range", "config_hash"]
    path = write_csv(table, os.path.join(out_root, SUMMARY_FILE), columns)
    errors = sum(1 for r in runs if r["status"] != "ok")
    notes = [f"rates in [{low}, {high}] are expected to perform well"]
    return CommandResult("Replacing-rate sweep", table, columns, path, errors, notes)


# ---------------------------------------------------------------------------
# compare-schedulers
# ---------------------------------------------------------------------------

def cmd_compare_schedulers(config: RunConfigFile, out_root: str, workers: int = 1,
                           predecessor_path: Optional[str] = None) -> CommandResult:
    """
    Best constant rate vs. linear curriculum vs. anti-curriculum.

    The linear and anti-linear schedulers share ``scheduler.k``/``b`` (or
    ``saturation_steps``); the constant rate is the best median over
    ``compare.constant_rates``.
    """
    predecessors = _predecessors(config, out_root, workers, predecessor_path)
    candidates = [(f"constant-{p:g}", "constant", config.scheduler("constant", p))
                  for p in config["compare.constant_rates"]]
    candidates += [(kind, kind, config.scheduler(kind)) for kind in ("linear", "anti-linear")]
    tasks = [
        GridTask(config, seed, path, os.path.join(out_root, name, f"seed_{seed}"), out_root,
                 {"scheduler": name, "kind": kind, "schedule": sched.describe()}, scheduler=sched)
        for name, kind, sched in candidates
        for seed, path in predecessors.items()
    ]
    runs = parallel_map(run_grid_point, tasks, workers)
    write_csv(runs, os.path.join(out_root, RUNS_FILE))

    table = _aggregate(runs, ["scheduler", "kind", "schedule"])
    constants = [r for r in table if r["kind"] == "constant"]
    finite = [r for r in constants if np.isfinite(r["median_dev_accuracy"])]
    best = max(finite, key=lambda r: r["median_dev_accuracy"]) if finite else None
    for row in table:
        row["selected"] = "yes" if row["kind"] != "constant" or row is best else ""
        reference = best["median_dev_accuracy"] if best else float("nan")
        row["delta_vs_constant"] = row["median_dev_accuracy"] - reference
        row["config_hash"] = config.hash
    columns = ["scheduler", "kind", "schedule", "median_dev_accuracy", "median_dev_loss", "delta_vs_constant",
               "selected", "seeds_ok", "seeds", "config_hash"]
    path = write_csv(table, os.path.join(out_root, SUMMARY_FILE), columns)
    errors = sum(1 for r in runs if r["status"] != "ok")
    return CommandResult("Scheduler comparison", table, columns, path, errors)


# ---------------------------------------------------------------------------
# depth-sweep
# ---------------------------------------------------------------------------

def cmd_depth_sweep(config: RunConfigFile, out_root: str, workers: int = 1,
                    predecessor_path: Optional[str] = None) -> CommandResult:
    """
    Compress at each ``depth.ratios`` group size and compare against
    fine-tuning the predecessor truncated to the same depth.
    """
    encoder = config.encoder_config()
    predecessors = _predecessors(config, out_root, workers, predecessor_path)
    tasks = []
    maps = {}
    for ratio in config["depth.ratios"]:
        cmap = CompressionMap.uniform(
            encoder.n_layers, ratio, config["map.successor_layers_per_group"], config["map.init"],
        )
        if encoder.n_layers % ratio:
            logger.warning(f"{encoder.n_layers} layers are not divisible by {ratio}; the last group absorbs the rest")
        maps[ratio] = cmap
        for seed, path in predecessors.items():
            for method in ("theseus", "truncated"):
                tasks.append(GridTask(
                    config, seed, path, os.path.join(out_root, f"ratio_{ratio}", method, f"seed_{seed}"), out_root,
                    {"ratio": ratio, "method": method},
                    compression_map=cmap, truncated=method == "truncated",
                ))
    runs = parallel_map(run_grid_point, tasks, workers)
    write_csv(runs, os.path.join(out_root, RUNS_FILE))

    by_key = {(r["ratio"], r["method"]): r for r in _aggregate(runs, ["ratio", "method"])}
    table = []
    for ratio, cmap in maps.items():
        successor = encoder.with_layers(cmap.successor_depth)
        theseus, truncated = by_key[(ratio, "theseus")], by_key[(ratio, "truncated")]
        table.append({
            "ratio": f"{ratio}:1",
            "successor_layers": cmap.successor_depth,
            "theseus_median_dev_accuracy": theseus["median_dev_accuracy"],
            "truncated_median_dev_accuracy": truncated["median_dev_accuracy"],
            "delta": theseus["median_dev_accuracy"] - truncated["median_dev_accuracy"],
            "flop_ratio": _flop_ratio(encoder, successor),
            "layer_param_ratio": count_params(encoder)["layers"] / max(1, count_params(successor)["layers"]),
            "config_hash": config.hash,
        })
    columns = list(table[0].keys()) if table else ["ratio"]
    path = write_csv(table, os.path.join(out_root, SUMMARY_FILE), columns)
    errors = sum(1 for r in runs if r["status"] != "ok")
    return CommandResult("Depth sweep", table, columns, path, errors)


# ---------------------------------------------------------------------------
# speed-bench
# ---------------------------------------------------------------------------

def _as_encoder(model) -> EncoderModel:
    return assemble_successor(model) if isinstance(model, HybridModel) else model


def cmd_speed_bench(config: RunConfigFile, out_root: str, predecessor_path: Optional[str] = None,
                    successor_path: Optional[str] = None, batch_size: Optional[int] = None,
                    reps: Optional[int] = None) -> CommandResult:
    """
    Median forward wall-clock of predecessor vs. successor on one random batch.

    Without checkpoints, freshly initialized models of the configured sizes
    are timed (the forward cost does not depend on the weights).
    """
    batch_size = batch_size or config["bench.batch_size"]
    reps = reps or config["bench.reps"]
    if reps < 10:
        raise ConfigError(f"speed-bench needs at least 10 repetitions, got {reps}")
    encoder = config.encoder_config()
    predecessor = _as_encoder(load_checkpoint(predecessor_path)) if predecessor_path else init_encoder(encoder, config["seed"])
    if successor_path:
        successor = _as_encoder(load_checkpoint(successor_path))
    else:
        successor = init_encoder(encoder.with_layers(config.compression_map().successor_depth), config["seed"])

    seq = predecessor.config.max_seq_len
    rng = np.random.default_rng(config["seed"])
    tokens = rng.integers(3, predecessor.config.vocab_size, size=(batch_size, seq))
    mask = np.ones((batch_size, seq), dtype=np.int64)

    def forward(model: EncoderModel) -> Callable[[], Any]:
        def run():
            with no_grad():
                return encoder_forward(model, tokens, mask)
        return run

    timings = {}
    for name, model in (("predecessor", predecessor), ("successor", successor)):
        timings[name] = bench(forward(model), reps, config["bench.warmup"])
        logger.info(f"{name}: median forward {timings[name]['median_s'] * 1000:.3f} ms")

    rows = []
    for name, model in (("predecessor", predecessor), ("successor", successor)):
        rows.append({
            "model": name,
            "layers": model.config.n_layers,
            "median_ms": timings[name]["median_s"] * 1000.0,
            "flops": count_flops(model.config, seq),
            "params": count_params(model.config)["total"],
            "config_hash": config.hash,
        })
    rows.append({
        "model": "ratio",
        "layers": predecessor.config.n_layers / max(1, successor.config.n_layers),
        "median_ms": timings["predecessor"]["median_s"] / timings["successor"]["median_s"],
        "flops": _flop_ratio(predecessor.config, successor.config),
        "params": count_params(predecessor.config)["total"] / count_params(successor.config)["total"],
        "config_hash": config.hash,
    })
    columns = ["model", "layers", "median_ms", "flops", "params", "config_hash"]
    path = write_csv(rows, os.path.join(out_root, SUMMARY_FILE), columns)
    host = get_system_info()
    notes = [f"batch {batch_size}, seq {seq}, {reps} reps",
             ", ".join(f"{k}={v}" for k, v in host.items())]
    return CommandResult("Inference speed (ratio row: predecessor / successor)", rows, columns, path, 0, notes)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(config: RunConfigFile, checkpoint_path: str, out_root: str,
             splits: Sequence[str] = ("dev", "test")) -> CommandResult:
    """Score a checkpoint; hybrids are scored with every module replaced."""
    model = load_checkpoint(checkpoint_path)
    data, _ = config.load_data()
    rows = []
    for name in splits:
        if name not in data:
            logger.warning(f"no {name} split configured; skipping")
            continue
        scored = _score(model, data[name], config["eval.batch_size"])
        rows.append({"split": name, "examples": len(data[name]), "accuracy": scored["accuracy"],
                     "loss": scored["loss"], "config_hash": config.hash})
    columns = ["split", "examples", "accuracy", "loss", "config_hash"]
    path = write_csv(rows, os.path.join(out_root, SUMMARY_FILE), columns)
    return CommandResult(f"Evaluation of {os.path.basename(checkpoint_path)}", rows, columns, path)
