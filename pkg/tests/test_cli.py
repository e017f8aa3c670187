"""End-to-end tests for the command-line interface on a toy configuration."""

import json

import pytest
from rich.console import Console

from tests.test_data_generator import load_jsonl, read_csv
from theseus.core.checkpoint_manager import save_checkpoint
from theseus.core.constants import ERRORS_FILE, LOG_FILE, METRICS_FILE, RUNS_FILE, SUMMARY_FILE
from theseus.core.model import init_encoder
from theseus.core.replacement import CompressionMap, build_hybrid
from theseus.core.run_config import RunConfigFile
from theseus.interfaces.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, TheseusCLI

TOY_RUN = """
model.vocab_size = 16
model.max_seq_len = 8
model.d_model = 8
model.n_heads = 2
model.d_ff = 16
model.n_layers = 4
data.task = majority-token
data.train_size = 32
data.dev_size = 16
data.test_size = 16
data.seq_len = 8
predecessor.batch_size = 8
predecessor.max_steps = 4
predecessor.eval_every = 2
compress.batch_size = 8
compress.max_steps = 4
compress.eval_every = 2
finetune.batch_size = 8
finetune.max_steps = 2
finetune.eval_every = 2
scheduler.saturation_steps = 4
eval.batch_size = 8
bench.batch_size = 2
bench.reps = 10
bench.warmup = 1
"""


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.conf"
    path.write_text(TOY_RUN, encoding="utf-8")
    return str(path)


@pytest.fixture
def cli():
    return TheseusCLI(console=Console(quiet=True))


@pytest.fixture
def toy_predecessor(toy_config, tmp_path):
    config = RunConfigFile.load(toy_config)
    model = init_encoder(config.encoder_config(), 5)
    return save_checkpoint(model, tmp_path / "models" / "predecessor.ckpt"), model


class TestUsage:
    """Argument handling and exit codes."""

    def test_no_command(self, cli):
        assert cli.run([]) == EXIT_USAGE

    def test_unknown_config_key(self, cli, toy_config, tmp_path):
        args = ["eval", "--config", toy_config, "--out", str(tmp_path / "out"),
                "--checkpoint", "x.ckpt", "--set", "model.depth=3"]
        assert cli.run(args) == EXIT_USAGE
        assert not (tmp_path / "out").exists()

    def test_malformed_set(self, cli, toy_config, tmp_path):
        args = ["eval", "--config", toy_config, "--out", str(tmp_path / "out"), "--checkpoint", "x.ckpt",
                "--set", "seed"]
        assert cli.run(args) == EXIT_USAGE

    def test_missing_config_file(self, cli, tmp_path):
        args = ["pipeline", "--config", str(tmp_path / "absent.conf"), "--out", str(tmp_path / "out")]
        assert cli.run(args) == EXIT_USAGE

    def test_refuses_nonempty_output(self, cli, toy_config, toy_predecessor, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / "keep.txt").write_text("previous run", encoding="utf-8")
        path, _ = toy_predecessor
        args = ["eval", "--config", toy_config, "--out", str(out), "--checkpoint", path]
        assert cli.run(args) == EXIT_USAGE
        assert not (out / SUMMARY_FILE).exists()
        assert cli.run(args + ["--overwrite"]) == EXIT_OK
        assert (out / "keep.txt").read_text(encoding="utf-8") == "previous run"

    def test_failure_is_recorded(self, cli, toy_config, tmp_path):
        out = tmp_path / "out"
        args = ["eval", "--config", toy_config, "--out", str(out), "--checkpoint", str(tmp_path / "absent.ckpt")]
        assert cli.run(args) == EXIT_FAILURE
        record = json.loads((out / ERRORS_FILE).read_text(encoding="utf-8").splitlines()[0])
        assert record["command"] == "eval"
        assert record["config_hash"] == RunConfigFile.load(toy_config).hash

    def test_undecodable_tsv_is_recorded(self, cli, toy_config, tmp_path):
        for name in ("train", "dev"):
            (tmp_path / f"{name}.tsv").write_bytes(b"sentence\tlabel\n\xff\xfe bad\t1\n")
        out = tmp_path / "out"
        args = ["pipeline", "--config", toy_config, "--out", str(out), "--set", "data.task=tsv",
                "--set", f"data.train={tmp_path / 'train.tsv'}", "--set", f"data.dev={tmp_path / 'dev.tsv'}"]
        assert cli.run(args) == EXIT_FAILURE
        record = load_jsonl(str(out / ERRORS_FILE))[0]
        assert record["error"] == "FormatError"
        assert record["stage"] == "data"
        assert read_csv(out / SUMMARY_FILE)[-1]["status"] == "0/1 ok"

    def test_unexpected_error_is_recorded(self, cli, toy_config, tmp_path, mocker):
        mocker.patch("theseus.core.experiments.compress", side_effect=RuntimeError("out of memory"))
        out = tmp_path / "out"
        assert cli.run(["pipeline", "--config", toy_config, "--out", str(out)]) == EXIT_FAILURE
        record = load_jsonl(str(out / ERRORS_FILE))[0]
        assert (record["error"], record["stage"]) == ("RuntimeError", "compress")
        assert record["message"] == "out of memory"

    def test_unexpected_command_error_is_recorded(self, cli, toy_config, toy_predecessor, tmp_path, mocker):
        mocker.patch("theseus.interfaces.cli.cmd_eval", side_effect=KeyError("split"))
        path, _ = toy_predecessor
        out = tmp_path / "out"
        assert cli.run(["eval", "--config", toy_config, "--out", str(out), "--checkpoint", path]) == EXIT_FAILURE
        record = load_jsonl(str(out / ERRORS_FILE))[0]
        assert (record["command"], record["error"]) == ("eval", "KeyError")


class TestEval:
    """Scoring saved checkpoints."""

    def test_eval_splits(self, cli, toy_config, toy_predecessor, tmp_path):
        path, _ = toy_predecessor
        out = tmp_path / "out"
        assert cli.run(["eval", "--config", toy_config, "--out", str(out), "--checkpoint", path]) == EXIT_OK
        rows = read_csv(out / SUMMARY_FILE)
        assert [r["split"] for r in rows] == ["dev", "test"]
        assert all(r["examples"] == "16" for r in rows)
        assert all(0.0 <= float(r["accuracy"]) <= 1.0 for r in rows)
        assert (out / LOG_FILE).exists()

    def test_missing_split_is_skipped(self, cli, toy_config, toy_predecessor, tmp_path):
        path, _ = toy_predecessor
        out = tmp_path / "out"
        args = ["eval", "--config", toy_config, "--out", str(out), "--checkpoint", path, "--split", "dev", "extra"]
        assert cli.run(args) == EXIT_OK
        assert [r["split"] for r in read_csv(out / SUMMARY_FILE)] == ["dev"]


class TestAnalyzeReplacement:
    """Single-module replacement reports."""

    def test_identity_map_changes_nothing(self, cli, toy_config, toy_predecessor, tmp_path):
        path, predecessor = toy_predecessor
        hybrid = build_hybrid(predecessor, CompressionMap.identity(4))
        hybrid_path = save_checkpoint(hybrid, tmp_path / "models" / "hybrid.ckpt")
        out = tmp_path / "out"
        args = ["analyze-replacement", "--config", toy_config, "--out", str(out),
                "--predecessor", path, "--compressed", hybrid_path]
        assert cli.run(args) == EXIT_OK
        rows = read_csv(out / SUMMARY_FILE)
        assert [r["position"] for r in rows] == ["1", "2", "3", "4"]
        assert [r["layers"] for r in rows] == ["0", "1", "2", "3"]
        assert all(float(r["delta_accuracy"]) == 0.0 for r in rows)
        assert all(float(r["delta_loss"]) == 0.0 for r in rows)

    def test_arguments_in_wrong_order(self, cli, toy_config, toy_predecessor, tmp_path):
        path, predecessor = toy_predecessor
        hybrid_path = save_checkpoint(build_hybrid(predecessor, CompressionMap.uniform(4, 2)),
                                      tmp_path / "models" / "hybrid.ckpt")
        args = ["analyze-replacement", "--config", toy_config, "--out", str(tmp_path / "out"),
                "--predecessor", hybrid_path, "--compressed", path]
        assert cli.run(args) == EXIT_USAGE

    def test_configured_map_must_match(self, cli, toy_config, toy_predecessor, tmp_path):
        path, predecessor = toy_predecessor
        hybrid_path = save_checkpoint(build_hybrid(predecessor, CompressionMap.uniform(4, 2)),
                                      tmp_path / "models" / "hybrid.ckpt")
        args = ["analyze-replacement", "--config", toy_config, "--out", str(tmp_path / "out"),
                "--predecessor", path, "--compressed", hybrid_path, "--set", "map.groups=0|1-3"]
        assert cli.run(args) == EXIT_USAGE


class TestSpeedBench:
    """Forward timing of predecessor against successor."""

    def test_fresh_models(self, cli, toy_config, tmp_path):
        out = tmp_path / "out"
        assert cli.run(["speed-bench", "--config", toy_config, "--out", str(out)]) == EXIT_OK
        rows = {r["model"]: r for r in read_csv(out / SUMMARY_FILE)}
        assert set(rows) == {"predecessor", "successor", "ratio"}
        assert rows["predecessor"]["layers"] == "4"
        assert rows["successor"]["layers"] == "2"
        assert float(rows["ratio"]["flops"]) > 1.0
        assert float(rows["ratio"]["params"]) > 1.0
        assert float(rows["successor"]["median_ms"]) > 0.0

    @pytest.mark.slow
    def test_default_encoder_speedup(self, cli, tmp_path):
        out = tmp_path / "out"
        assert cli.run(["speed-bench", "--out", str(out), "--batch", "32", "--reps", "20"]) == EXIT_OK
        ratio = {r["model"]: r for r in read_csv(out / SUMMARY_FILE)}["ratio"]
        assert float(ratio["median_ms"]) >= 1.6
        assert float(ratio["flops"]) == pytest.approx(2.0, abs=0.01)
        assert float(ratio["params"]) > 1.5

    def test_too_few_reps(self, cli, toy_config, tmp_path):
        assert cli.run(["speed-bench", "--config", toy_config, "--out", str(tmp_path / "out"), "--reps", "5"]) == EXIT_USAGE


class TestPipeline:
    """The full predecessor -> compress -> finetune chain."""

    def test_two_seeds(self, cli, toy_config, tmp_path):
        out = tmp_path / "out"
        assert cli.run(["pipeline", "--config", toy_config, "--out", str(out), "--seeds", "2"]) == EXIT_OK

        rows = read_csv(out / SUMMARY_FILE)
        assert [r["seed"] for r in rows] == ["0", "1", "median"]
        assert rows[-1]["status"] == "2/2 ok"
        assert [float(r["successor_layers"]) for r in rows] == [2.0, 2.0, 2.0]
        assert 1.0 < float(rows[0]["flop_ratio"]) < 2.0
        assert len({r["config_hash"] for r in rows}) == 1

        for seed in (0, 1):
            run_dir = out / f"seed_{seed}"
            for tag in ("predecessor", "hybrid", "successor"):
                assert (run_dir / f"{tag}.ckpt").exists()
                assert (run_dir / f"{tag}_final.ckpt").exists()
                assert (run_dir / f"{tag}.ckpt.manifest.json").exists()
            records = load_jsonl(str(run_dir / METRICS_FILE))
            assert [r["stage"] for r in records if r["split"] == "dev"][:2] == ["predecessor", "predecessor"]
            assert {r["stage"] for r in records} == {"predecessor", "compress", "finetune"}
        assert not (out / ERRORS_FILE).exists()

    def test_same_seed_same_results(self, cli, toy_config, tmp_path):
        for name in ("a", "b"):
            assert cli.run(["pipeline", "--config", toy_config, "--out", str(tmp_path / name)]) == EXIT_OK
        a = (tmp_path / "a" / SUMMARY_FILE).read_text(encoding="utf-8")
        b = (tmp_path / "b" / SUMMARY_FILE).read_text(encoding="utf-8")
        assert a == b

    def test_eval_of_pipeline_successor(self, cli, toy_config, tmp_path):
        assert cli.run(["pipeline", "--config", toy_config, "--out", str(tmp_path / "run")]) == EXIT_OK
        successor = tmp_path / "run" / "seed_0" / "successor.ckpt"
        out = tmp_path / "eval"
        assert cli.run(["eval", "--config", toy_config, "--out", str(out), "--checkpoint", str(successor),
                        "--split", "test"]) == EXIT_OK
        pipeline_row = read_csv(tmp_path / "run" / SUMMARY_FILE)[0]
        eval_row = read_csv(out / SUMMARY_FILE)[0]
        assert float(eval_row["accuracy"]) == float(pipeline_row["successor_test_accuracy"])


@pytest.mark.slow
class TestGridCommands:
    """Sweeps over a shared saved predecessor."""

    def test_sweep_rate(self, cli, toy_config, toy_predecessor, tmp_path):
        path, _ = toy_predecessor
        out = tmp_path / "out"
        args = ["sweep-rate", "--config", toy_config, "--out", str(out), "--predecessor", path,
                "--rates", "0.5,1.0", "--mode", "both"]
        assert cli.run(args) == EXIT_OK
        rows = read_csv(out / SUMMARY_FILE)
        assert [(r["mode"], float(r["rate"])) for r in rows] == [
            ("fixed-lr", 0.5), ("fixed-lr", 1.0), ("fixed-equivalent-lr", 0.5), ("fixed-equivalent-lr", 1.0),
        ]
        equivalent = [r for r in rows if r["mode"] == "fixed-equivalent-lr"]
        assert float(equivalent[0]["lr"]) == pytest.approx(2 * float(equivalent[1]["lr"]))
        assert [r["recommended_range"] for r in rows] == ["yes", "", "yes", ""]
        assert len(read_csv(out / RUNS_FILE)) == 4

    def test_compare_schedulers(self, cli, toy_config, toy_predecessor, tmp_path):
        path, _ = toy_predecessor
        out = tmp_path / "out"
        args = ["compare-schedulers", "--config", toy_config, "--out", str(out), "--predecessor", path]
        assert cli.run(args) == EXIT_OK
        rows = {r["scheduler"]: r for r in read_csv(out / SUMMARY_FILE)}
        assert set(rows) == {"constant-0.5", "constant-0.7", "constant-0.9", "linear", "anti-linear"}
        assert sum(1 for r in rows.values() if r["kind"] == "constant" and r["selected"] == "yes") == 1
        assert rows["linear"]["selected"] == "yes"

    def test_depth_sweep(self, cli, toy_config, toy_predecessor, tmp_path):
        path, _ = toy_predecessor
        out = tmp_path / "out"
        args = ["depth-sweep", "--config", toy_config, "--out", str(out), "--predecessor", path, "--ratios", "2,4"]
        assert cli.run(args) == EXIT_OK
        rows = read_csv(out / SUMMARY_FILE)
        assert [r["ratio"] for r in rows] == ["2:1", "4:1"]
        assert [r["successor_layers"] for r in rows] == ["2", "1"]
        assert float(rows[1]["flop_ratio"]) > float(rows[0]["flop_ratio"])

    def test_trains_predecessors_per_seed(self, cli, toy_config, tmp_path):
        out = tmp_path / "out"
        args = ["sweep-rate", "--config", toy_config, "--out", str(out), "--seeds", "2",
                "--rates", "1.0", "--mode", "fixed-lr"]
        assert cli.run(args) == EXIT_OK
        for seed in (0, 1):
            assert (out / "predecessors" / f"seed_{seed}" / "predecessor.ckpt").exists()
        assert read_csv(out / SUMMARY_FILE)[0]["seeds_ok"] == "2"
