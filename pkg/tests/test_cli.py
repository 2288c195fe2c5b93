"""CLI behavior: subcommands, exit codes, determinism, file formats."""

import json
from pathlib import Path

import numpy as np
import pytest

from noise_lab.cli import fixture_table_text, main
from noise_lab.config import SCHEMA, ConfigError, validate_config
from noise_lab.reporting import dump_json, emit_csv, emit_jsonl

DATA = Path(__file__).parent / "data"

SMALL_VERIFY = {
    "master_seed": 2024,
    "verify": {
        "ensemble_seeds": 30,
        "ensemble_steps": 40,
        "noise_steps": 400,
        "variance_draws": 5000,
        "identity_triples": 500,
        "replicas": 2000,
    },
}

SWEEP_CFG = {
    "master_seed": 11,
    "problem": {"kind": "noisy-quadratic", "dim": 2, "variance": 4.0,
                "params": {"x0": [2.0, -1.0]}},
    "optimizer": {"algo": "sgd", "eta": 0.1, "batch_size": 1},
    "sweep": {"batch_grid": [4, 8, 16], "epsilon": 0.4, "seeds": 2,
              "max_steps": 3000},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestDefaults:
    def test_default_batch_grid_is_the_power_ladder(self):
        from noise_lab.cli import DEFAULT_BATCH_GRID
        assert DEFAULT_BATCH_GRID == [2 ** k for k in range(3, 14)]

    def test_output_dir_from_config_when_out_flag_missing(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cfg = dict(SWEEP_CFG)
        cfg["output_dir"] = "artifacts"
        cfg["run"] = {"max_steps": 2}
        path = write_cfg(tmp_path, cfg)
        assert main(["run", "--config", path]) == 0
        assert (tmp_path / "artifacts" / "run.jsonl").exists()


class TestTableFixture:
    def test_stdout_matches_frozen_fixture(self, capsys):
        assert main(["table1"]) == 0
        out = capsys.readouterr().out
        assert out == (DATA / "table1_expected.txt").read_text()

    def test_file_output_byte_identical(self, tmp_path, capsys):
        assert main(["table1", "--out", str(tmp_path)]) == 0
        written = (tmp_path / "table1.txt").read_bytes()
        assert written == (DATA / "table1_expected.txt").read_bytes()

    def test_fixture_values(self):
        text = fixture_table_text()
        for value in ("12800", "1280", "256", "128", "10", "20"):
            assert value in text


class TestExitCodes:
    def test_verify_default_suite_passes(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL_VERIFY)
        assert main(["verify", "--config", cfg, "--out", str(tmp_path)]) == 0

    def test_sweep_epsilon_zero_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SWEEP_CFG)
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path),
                     "--epsilon", "0"]) == 2
        err = capsys.readouterr().err
        assert "epsilon" in err

    def test_malformed_config_names_path(self, tmp_path, capsys):
        bad = dict(SWEEP_CFG)
        bad["optimizer"] = {"algo": "sgd", "eta": -1.0}
        cfg = write_cfg(tmp_path, bad)
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2
        err = capsys.readouterr().err
        assert "$.optimizer.eta" in err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        bad = dict(SWEEP_CFG)
        bad["learning_rate"] = 0.1
        cfg = write_cfg(tmp_path, bad)
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_missing_config(self, capsys):
        assert main(["run"]) == 2

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["run", "--config", str(path)]) == 2


class TestConfigSchema:
    def test_valid_config_passes(self):
        validate_config(SWEEP_CFG)

    def test_nested_unknown_key(self):
        bad = json.loads(json.dumps(SWEEP_CFG))
        bad["sweep"]["threads"] = 4
        with pytest.raises(ConfigError) as err:
            validate_config(bad)
        assert "sweep" in str(err.value)

    def test_schema_is_published(self):
        assert SCHEMA["properties"]["problem"]["properties"]["kind"]["enum"]


class TestEmitters:
    def test_header_only_csv(self, tmp_path):
        path = emit_csv([], tmp_path / "empty.csv", ["a", "b"])
        assert path.read_text() == "a,b\n"

    def test_column_order_and_17_digits(self, tmp_path):
        path = emit_csv([{"b": 8, "seed": 0, "steps": 3, "sfo": 24,
                          "exit_reason": "converged", "x": 0.1}],
                        tmp_path / "rows.csv",
                        ["b", "seed", "steps", "sfo", "exit_reason", "x"])
        lines = path.read_text().splitlines()
        assert lines[0] == "b,seed,steps,sfo,exit_reason,x"
        assert lines[1] == "8,0,3,24,converged,0.10000000000000001"

    def test_csv_byte_deterministic(self, tmp_path):
        rows = [{"v": 1.0 / 3.0, "n": k} for k in range(5)]
        a = emit_csv(rows, tmp_path / "a.csv", ["v", "n"]).read_bytes()
        b = emit_csv(rows, tmp_path / "b.csv", ["v", "n"]).read_bytes()
        assert a == b

    def test_jsonl_one_object_per_line(self, tmp_path):
        recs = [{"t": 0, "x": [1.0, 2.0]}, {"t": 1, "x": [3.0, 4.0]}]
        path = emit_jsonl(recs, tmp_path / "r.jsonl")
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0]) == recs[0]

    def test_json_sorted_and_numpy_safe(self, tmp_path):
        path = dump_json({"z": np.float64(0.5), "a": np.arange(3)}, tmp_path / "o.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"z"')
        assert json.loads(text) == {"a": [0, 1, 2], "z": 0.5}


class TestRunSubcommand:
    def test_trace_record_field_names(self, tmp_path, capsys):
        cfg = dict(SWEEP_CFG)
        cfg["run"] = {"max_steps": 4}
        path = write_cfg(tmp_path, cfg)
        assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "run.jsonl").read_text().splitlines()
        assert len(lines) == 4
        record = json.loads(lines[0])
        assert set(record) == {"t", "f_value", "grad", "search_direction",
                               "minibatch_grad", "x_snapshot", "dist_to_ref"}

    def test_epsilon_stop(self, tmp_path, capsys):
        cfg = dict(SWEEP_CFG)
        cfg["run"] = {"max_steps": 500, "epsilon": 0.5}
        path = write_cfg(tmp_path, cfg)
        assert main(["run", "--config", path, "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "exit converged" in out


class TestInnerProductSweep:
    def test_sweep_with_inner_product_rule(self, tmp_path, capsys):
        """stop_kind inner-product with no explicit reference falls back to
        the objective minimizer (known for the quadratic)."""
        cfg = json.loads(json.dumps(SWEEP_CFG))
        cfg["sweep"].update({"stop_kind": "inner-product", "epsilon": 0.6,
                             "batch_grid": [4, 16], "max_steps": 5000})
        path = write_cfg(tmp_path, cfg)
        assert main(["sweep", "--config", path, "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()[1:]
        assert all(r.endswith("converged") for r in rows)

    def test_inner_product_without_reference_rejected(self, tmp_path, capsys):
        cfg = {
            "master_seed": 1,
            "problem": {"kind": "constant-gradient", "dim": 2, "variance": 1.0},
            "optimizer": {"algo": "sgd", "eta": 0.1, "batch_size": 1},
            "sweep": {"batch_grid": [2], "epsilon": 0.5, "seeds": 1,
                      "max_steps": 100, "stop_kind": "inner-product"},
        }
        path = write_cfg(tmp_path, cfg)
        assert main(["sweep", "--config", path, "--out", str(tmp_path)]) == 2


class TestNoiseSubcommand:
    def test_outputs(self, tmp_path, capsys):
        cfg = dict(SWEEP_CFG)
        cfg["optimizer"] = {"algo": "nshb", "eta": 0.05, "beta": 0.9, "batch_size": 1}
        cfg["noise"] = {"steps": 400}
        path = write_cfg(tmp_path, cfg)
        assert main(["noise", "--config", path, "--out", str(tmp_path)]) == 0
        header = (tmp_path / "noise.csv").read_text().splitlines()[0]
        assert header == "t,grad_noise_sq,omega_sq"
        summary = json.loads((tmp_path / "noise.json").read_text())["summary"]
        for key in ("mean_omega_sq", "bound_c2_over_b", "direction_noise_bound_holds",
                    "buffer_lag_lhs", "buffer_lag_rhs", "buffer_lag_bound_holds"):
            assert key in summary


class TestSmoothSubcommand:
    def test_gap_report(self, tmp_path, capsys):
        cfg = {
            "master_seed": 3,
            "problem": {"kind": "constant-gradient", "dim": 2, "variance": 0.0,
                        "params": {"coefficient": [1.0, 1.0]}},
            "smooth": {"delta": 0.3, "samples": 4000, "points": [[0.0, 0.0], [1.0, 2.0]]},
        }
        path = write_cfg(tmp_path, cfg)
        assert main(["smooth", "--config", path, "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "smooth.json").read_text())
        assert report["all_pass"] is True
        assert len(report["points"]) == 2
        assert set(report["points"][0]) == {"point", "f", "f_hat", "std_error",
                                            "gap", "bound", "pass"}
        assert report["config"]["smooth"]["delta"] == 0.3


class TestSharpnessSubcommand:
    def test_quadratic_reference(self, tmp_path, capsys):
        cfg = {
            "master_seed": 5,
            "problem": {"kind": "noisy-quadratic", "dim": 1, "variance": 0.0,
                        "params": {"x0": [0.0]}},
            "sharpness": {"rho": 1.0, "p": "inf", "iters": 50,
                          "method": "sign-ascent", "point": [0.0]},
        }
        path = write_cfg(tmp_path, cfg)
        assert main(["sharpness", "--config", path, "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "sharpness.json").read_text())
        assert report["value"] == pytest.approx(0.5, rel=0.02)


class TestDeterminism:
    def artifacts(self, d):
        return sorted(p.name for p in Path(d).iterdir())

    def test_sweep_jobs_and_reruns_byte_identical(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SWEEP_CFG)
        outs = [tmp_path / f"out{i}" for i in range(3)]
        assert main(["sweep", "--config", cfg, "--out", str(outs[0]), "--jobs", "1"]) == 0
        assert main(["sweep", "--config", cfg, "--out", str(outs[1]), "--jobs", "8"]) == 0
        assert main(["sweep", "--config", cfg, "--out", str(outs[2]), "--jobs", "1"]) == 0
        for name in ("sweep.csv", "summary.csv", "critical.json"):
            ref = (outs[0] / name).read_bytes()
            assert (outs[1] / name).read_bytes() == ref
            assert (outs[2] / name).read_bytes() == ref

    def test_verify_jobs_byte_identical(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL_VERIFY)
        out1, out2 = tmp_path / "v1", tmp_path / "v2"
        assert main(["verify", "--config", cfg, "--out", str(out1), "--jobs", "1"]) == 0
        assert main(["verify", "--config", cfg, "--out", str(out2), "--jobs", "8"]) == 0
        assert (out1 / "verify.json").read_bytes() == (out2 / "verify.json").read_bytes()

    def test_seed_env_override_changes_rows(self, tmp_path, capsys, monkeypatch):
        cfg = write_cfg(tmp_path, SWEEP_CFG)
        out1, out2 = tmp_path / "e1", tmp_path / "e2"
        assert main(["sweep", "--config", cfg, "--out", str(out1)]) == 0
        monkeypatch.setenv("NOISE_LAB_SEED", "99")
        assert main(["sweep", "--config", cfg, "--out", str(out2)]) == 0
        assert (out1 / "sweep.csv").read_bytes() != (out2 / "sweep.csv").read_bytes()
        critical = json.loads((out2 / "critical.json").read_text())
        assert critical["config"]["master_seed"] == 99

    def test_single_run_subcommands_byte_identical(self, tmp_path, capsys):
        cfg = dict(SWEEP_CFG)
        cfg["optimizer"] = {"algo": "nshb", "eta": 0.05, "beta": 0.9, "batch_size": 1}
        cfg["run"] = {"max_steps": 50}
        cfg["noise"] = {"steps": 300}
        path = write_cfg(tmp_path, cfg)
        for cmd, name in (("run", "run.jsonl"), ("noise", "noise.csv"),
                          ("noise", "noise.json")):
            out1, out2 = tmp_path / f"{cmd}{name}1", tmp_path / f"{cmd}{name}2"
            assert main([cmd, "--config", path, "--out", str(out1)]) == 0
            assert main([cmd, "--config", path, "--out", str(out2)]) == 0
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_config_round_trip_reproduces_report(self, tmp_path, capsys):
        """Re-running from the config embedded in critical.json reproduces
        the artifacts byte for byte."""
        cfg = write_cfg(tmp_path, SWEEP_CFG)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["sweep", "--config", cfg, "--out", str(out1)]) == 0
        embedded = json.loads((out1 / "critical.json").read_text())["config"]
        cfg2 = write_cfg(tmp_path, embedded, name="embedded.json")
        assert main(["sweep", "--config", cfg2, "--out", str(out2)]) == 0
        for name in ("sweep.csv", "summary.csv", "critical.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
