"""Tests for the shared utility helpers."""

import math
import os

from tests.test_data_generator import load_jsonl, read_csv
from theseus.utils.common import (
    append_jsonl,
    config_hash,
    ensure_dir_exists,
    format_size,
    is_nonempty_dir,
    median,
    write_csv,
)
from theseus.utils.performance import bench, get_system_info, parallel_map


def _square(x):
    return x * x


class TestCommon:
    """File and table helpers."""

    def test_ensure_dir_exists(self, temp_dir):
        target = os.path.join(temp_dir, "a", "b")
        ensure_dir_exists(target)
        assert os.path.isdir(target)
        assert not is_nonempty_dir(target)
        assert is_nonempty_dir(os.path.join(temp_dir, "a"))

    def test_jsonl_appends(self, temp_dir):
        path = os.path.join(temp_dir, "log", "records.jsonl")
        append_jsonl({"step": 1}, path)
        append_jsonl({"step": 2}, path)
        assert load_jsonl(path) == [{"step": 1}, {"step": 2}]

    def test_write_csv_columns(self, temp_dir):
        rows = [{"a": 1, "b": 0.1}, {"a": 2, "c": [1, 0, 1]}]
        path = write_csv(rows, os.path.join(temp_dir, "t.csv"))
        table = read_csv(path)
        assert list(table[0]) == ["a", "b", "c"]
        assert float(table[0]["b"]) == 0.1
        assert table[1]["c"] == "1 0 1"
        assert table[1]["b"] == ""

    def test_write_csv_explicit_columns(self, temp_dir):
        path = write_csv([{"a": 1, "b": 2}], os.path.join(temp_dir, "t.csv"), ["b"])
        assert read_csv(path) == [{"b": "2"}]

    def test_median_skips_missing(self):
        assert median([3.0, None, float("nan"), 1.0, 2.0]) == 2.0
        assert math.isnan(median([None, float("inf")]))

    def test_config_hash(self):
        assert config_hash("seed = 0\n") == config_hash("seed = 0\n")
        assert config_hash("seed = 0\n") != config_hash("seed = 1\n")
        assert len(config_hash("")) == 16

    def test_format_size(self):
        assert format_size(0) == "0 B"
        assert format_size(2048) == "2.00 KB"


class TestPerformance:
    """Timing and parallel helpers."""

    def test_parallel_map_serial(self):
        assert parallel_map(_square, [1, 2, 3], 1) == [1, 4, 9]
        assert parallel_map(_square, [], 4) == []

    def test_parallel_map_processes_keep_order(self):
        assert parallel_map(_square, list(range(6)), 2) == [x * x for x in range(6)]

    def test_bench(self):
        calls = []
        result = bench(lambda: calls.append(1), reps=10, warmup=2)
        assert len(calls) == 12
        assert result["reps"] == 10
        assert result["min_s"] <= result["median_s"] <= result["max_s"]

    def test_system_info(self):
        info = get_system_info()
        assert "system" in info
        assert info.get("cpu_logical", 1) >= 1

    def test_system_info_degrades(self, mocker):
        mocker.patch("theseus.utils.performance.psutil.virtual_memory", side_effect=OSError("no /proc"))
        info = get_system_info()
        assert info["error"] == "no /proc"
