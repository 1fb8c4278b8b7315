import json
import os

import numpy as np
import pytest

from star import __version__
from star.cli import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_UNKNOWN_KEY,
    EXIT_VALIDATION,
    ConfigValidationError,
    UnknownKeyError,
    config_digest,
    load_config,
    main,
    parallel_map,
)
from star.fxp import FxFormat


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)
    return str(path)


SMALL_CONFIG = {
    "engine": {"input_format": {"total_bits": 9, "frac_bits": 3}, "max_seq_len": 64},
    "attention": {"seq_len": 8, "d_model": 16, "n_heads": 2, "matmul_tile": 8},
    "corpus": {"kind": "gaussian", "mean": 0.0, "std": 2.0, "vectors": 4},
    "seed": 7,
}


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg.engine.input_format == FxFormat(9, 3)
        assert cfg.engine.divider_frac_bits == 16
        assert cfg.engine.max_seq_len == 512
        assert cfg.attention.d_model == 768
        assert cfg.seed == 0

    def test_empty_object_applies_all_defaults(self, tmp_path):
        path = write_json(tmp_path / "empty.json", {})
        cfg = load_config(path)
        assert cfg.resolved == load_config(None).resolved

    def test_partial_override_merges(self, tmp_path):
        path = write_json(tmp_path / "cfg.json", {"engine": {"divider_frac_bits": 12}})
        cfg = load_config(path)
        assert cfg.engine.divider_frac_bits == 12
        assert cfg.engine.input_format == FxFormat(9, 3)  # untouched default

    def test_invalid_format_names_field(self, tmp_path):
        path = write_json(
            tmp_path / "bad.json", {"engine": {"input_format": {"total_bits": 4, "frac_bits": 6}}}
        )
        with pytest.raises(ConfigValidationError, match="engine.input_format"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_json(tmp_path / "bad.json", {"engine": {"voltage": 1.2}})
        with pytest.raises(UnknownKeyError, match="engine.voltage"):
            load_config(path)

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = write_json(tmp_path / "bad.json", {"quantum": True})
        with pytest.raises(UnknownKeyError, match="quantum"):
            load_config(path)

    def test_seq_len_cross_check(self, tmp_path):
        path = write_json(
            tmp_path / "bad.json",
            {"engine": {"max_seq_len": 4}, "attention": {"seq_len": 8, "d_model": 16, "n_heads": 2}},
        )
        with pytest.raises(ConfigValidationError, match="attention.seq_len"):
            load_config(path)

    def test_digest_depends_on_seed(self, tmp_path):
        a = load_config(write_json(tmp_path / "a.json", {"seed": 1}))
        b = load_config(write_json(tmp_path / "b.json", {"seed": 2}))
        assert config_digest(a) != config_digest(b)


class TestExitCodes:
    def test_missing_config_file_is_parse_error(self, tmp_path, capsys):
        rc = main(["softmax", "--config", str(tmp_path / "nope.json"), "--input", "x.csv"])
        assert rc == EXIT_PARSE
        assert "parse error" in capsys.readouterr().err

    def test_malformed_json_is_parse_error(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        rc = main(["softmax", "--config", str(path), "--input", "x.csv"])
        assert rc == EXIT_PARSE

    def test_validation_error_exit_code(self, tmp_path, capsys):
        path = write_json(tmp_path / "bad.json", {"engine": {"divider_frac_bits": 0}})
        rc = main(["softmax", "--config", str(path), "--input", "x.csv"])
        assert rc == EXIT_VALIDATION
        assert "divider_frac_bits" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        path = write_json(tmp_path / "bad.json", {"engine": {"volts": 3}})
        rc = main(["softmax", "--config", str(path), "--input", "x.csv"])
        assert rc == EXIT_UNKNOWN_KEY

    def test_experiment_failure_exit_code(self, tmp_path, capsys):
        rc = main(["softmax", "--input", str(tmp_path / "missing.csv"), "--out-dir", str(tmp_path)])
        assert rc == EXIT_FAILURE
        assert "error" in capsys.readouterr().err

    def test_bad_star_threads_is_validation_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("STAR_THREADS", "many")
        logits = tmp_path / "l.csv"
        logits.write_text("1.0,2.0\n")
        rc = main(["softmax", "--input", str(logits), "--out-dir", str(tmp_path), "--quiet"])
        assert rc == EXIT_VALIDATION


class TestSoftmaxCommand:
    def test_probabilities_csv(self, tmp_path, capsys):
        logits = tmp_path / "logits.csv"
        logits.write_text("# comment line\n0.5,1.0,0.0,0.5\n-2.0,3.5\n")
        out = tmp_path / "probs.csv"
        rc = main(["softmax", "--input", str(logits), "--out", str(out), "--quiet"])
        assert rc == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0].startswith(f"# star {__version__} config=")
        rows = [np.array([float(t) for t in line.split(",")]) for line in lines[1:]]
        assert len(rows) == 2
        for row in rows:
            assert abs(row.sum() - 1.0) <= len(row) * 2.0**-16

    def test_trace_dump(self, tmp_path):
        logits = tmp_path / "logits.csv"
        logits.write_text("0.5,1.0\n")
        trace = tmp_path / "trace.json"
        rc = main(
            ["softmax", "--input", str(logits), "--out", str(tmp_path / "p.csv"), "--trace", str(trace), "--quiet"]
        )
        assert rc == EXIT_OK
        payload = json.loads(trace.read_text())
        assert payload["_meta"]["version"] == __version__
        t = payload["traces"][0]
        assert t["histogram"] and t["denominator"]["raw"] == sum(t["numerator_raws"])

    def test_byte_identical_reruns(self, tmp_path):
        logits = tmp_path / "logits.csv"
        logits.write_text("0.25,0.5,0.75\n1.0,2.0,3.0\n")
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["softmax", "--input", str(logits), "--out", str(out1), "--quiet"]) == EXIT_OK
        assert main(["softmax", "--input", str(logits), "--out", str(out2), "--quiet"]) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()


class TestSweepCommand:
    def test_three_formats_three_rows(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--config", cfg, "--out", str(out), "--quiet"])
        assert rc == EXIT_OK
        lines = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
        assert lines[0] == "total_bits,frac_bits,max_abs_err,mean_abs_err,mean_kl,argmax_agreement,saturation_events"
        assert len(lines) == 1 + 3

    def test_identical_across_thread_settings(self, tmp_path, monkeypatch):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        outputs = []
        for threads in ("1", "4", "0"):
            monkeypatch.setenv("STAR_THREADS", threads)
            out = tmp_path / f"sweep_{threads}.csv"
            assert main(["sweep", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        assert main(["sweep", "--config", cfg, "--out", str(out1), "--quiet"]) == EXIT_OK
        assert main(["sweep", "--config", cfg, "--seed", "1234", "--out", str(out2), "--quiet"]) == EXIT_OK
        assert out1.read_bytes() != out2.read_bytes()

    def test_bad_format_spec_fails(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        rc = main(["sweep", "--config", cfg, "--formats", "9-3", "--quiet", "--out-dir", str(tmp_path)])
        assert rc == EXIT_FAILURE


class TestAttentionCommand:
    def test_report_contents(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        report_path = tmp_path / "report.json"
        rc = main(["attention", "--config", cfg, "--report", str(report_path), "--quiet"])
        assert rc == EXIT_OK
        report = json.loads(report_path.read_text())
        assert report["softmax_errors"]["max_abs_error"] >= 0
        assert report["output_max_abs_error"] < 0.5
        assert report["seed"] == 7
        assert report["_meta"]["config_digest"]

    def test_deterministic(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", SMALL_CONFIG)
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert main(["attention", "--config", cfg, "--report", str(r1), "--quiet"]) == EXIT_OK
        assert main(["attention", "--config", cfg, "--report", str(r2), "--quiet"]) == EXIT_OK
        assert r1.read_bytes() == r2.read_bytes()


class TestCostCommand:
    def test_report_with_shipped_calibration(self, tmp_path):
        out = tmp_path / "cost.json"
        rc = main(["cost", "--out", str(out), "--quiet"])
        assert rc == EXIT_OK
        payload = json.loads(out.read_text())
        report = payload["report"]
        assert report["total_area_um2"] > 0
        assert report["ratios"]["area_vs_cmos_softmax"] > 0
        assert "calibration" in payload["params_source"]

    def test_attention_override_file(self, tmp_path):
        acfg = write_json(tmp_path / "acfg.json", {"seq_len": 16, "d_model": 32, "n_heads": 2})
        out = tmp_path / "cost.json"
        rc = main(["cost", "--attention", acfg, "--out", str(out), "--quiet"])
        assert rc == EXIT_OK
        report = json.loads(out.read_text())["report"]
        assert report["ops"]["matmul_ops"] == 4 * 16 * 16 * 32


class TestPipelineCommand:
    def test_schedule_csv(self, tmp_path):
        out = tmp_path / "sched.csv"
        rc = main(["pipeline", "--vectors", "3", "--length", "4", "--schedule", str(out), "--quiet"])
        assert rc == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[1] == "vector_id,stage,start_ns,end_ns"
        assert len(lines) == 2 + 3 * 5
        first = lines[2].split(",")
        assert first[0] == "0" and first[1] == "cam_search"

    def test_exclusive_flag_accepted(self, tmp_path):
        out = tmp_path / "sched.csv"
        rc = main(
            ["pipeline", "--vectors", "2", "--length", "2", "--schedule", str(out), "--exclusive-crossbars", "--quiet"]
        )
        assert rc == EXIT_OK


class TestParallelMap:
    def test_order_preserved(self, monkeypatch):
        monkeypatch.setenv("STAR_THREADS", "4")
        assert parallel_map(lambda x: x * x, range(20)) == [x * x for x in range(20)]

    def test_serial_fallback(self, monkeypatch):
        monkeypatch.setenv("STAR_THREADS", "1")
        assert parallel_map(lambda x: -x, [3, 1]) == [-3, -1]
