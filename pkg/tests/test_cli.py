import json
import struct

import numpy as np
import pytest

from gluemix.checkpoint import MAGIC
from gluemix.cli import main

from test_experiment import tiny_config


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    path.write_text(json.dumps(tiny_config().as_dict()))
    return str(path)


def run_cli(*args):
    return main(list(args))


class TestPipelineStages:
    def test_synth_split_train_learn_finetune_evaluate(self, tmp_path, config_file, capsys):
        data = str(tmp_path / "data.npz")
        assert run_cli("synth", "--config", config_file, "--out", data) == 0
        splits = str(tmp_path / "splits.npz")
        assert run_cli("split", "--config", config_file, "--data", data, "--out", splits) == 0
        experts = str(tmp_path / "experts")
        assert run_cli("train-experts", "--config", config_file, "--splits", splits,
                       "--out", experts, "--epochs", "3") == 0
        rundir = str(tmp_path / "alpha")
        assert run_cli("learn-alpha", "--method", "glue", "--config", config_file,
                       "--experts", experts, "--data", data, "--out", rundir,
                       "--steps", "15", "--mu", "0.02", "--m", "2") == 0
        payload = json.loads((tmp_path / "alpha" / "alpha.json").read_text())
        assert payload["method"] == "glue"
        assert payload["counters"]["forwards"] == 2 * 2 * 15
        assert payload["counters"]["backwards"] == 0
        assert abs(sum(payload["alpha"]) - 1.0) <= 1e-12
        assert (tmp_path / "alpha" / "curves.csv").exists()

        ftdir = str(tmp_path / "ft")
        assert run_cli("finetune", "--config", config_file,
                       "--params", str(tmp_path / "alpha" / "theta_star.ckpt"),
                       "--data", data, "--out", ftdir, "--epochs", "2") == 0
        assert (tmp_path / "ft" / "finetuned.ckpt").exists()

        capsys.readouterr()
        assert run_cli("evaluate", "--params", str(tmp_path / "ft" / "finetuned.ckpt"),
                       "--data", data, "--split", "test_set") == 0
        out = json.loads(capsys.readouterr().out)
        assert 0.0 <= out["accuracy"] <= 1.0

    @pytest.mark.parametrize("method", ["data-size", "proxy", "full-grad"])
    def test_other_methods(self, tmp_path, config_file, method):
        data = str(tmp_path / "data.npz")
        run_cli("synth", "--config", config_file, "--out", data)
        splits = str(tmp_path / "splits.npz")
        run_cli("split", "--config", config_file, "--data", data, "--out", splits)
        experts = str(tmp_path / "experts")
        run_cli("train-experts", "--config", config_file, "--splits", splits,
                "--out", experts, "--epochs", "2")
        rundir = str(tmp_path / method)
        assert run_cli("learn-alpha", "--method", method, "--config", config_file,
                       "--experts", experts, "--data", data, "--out", rundir,
                       "--steps", "10") == 0

    def test_run_full_pipeline(self, tmp_path, config_file, capsys):
        out = str(tmp_path / "run")
        assert run_cli("run", "--config", config_file, "--out", out, "--seed", "0") == 0
        summary = json.loads(capsys.readouterr().out)
        assert set(summary) == {"data-size", "proxy", "full-grad", "glue"}


class TestAnalyzeCommands:
    def test_bias(self, tmp_path, capsys):
        out = str(tmp_path / "bias.json")
        assert run_cli("analyze", "bias", "--out", out) == 0
        payload = json.loads((tmp_path / "bias.json").read_text())
        assert payload["checks"]["quadratic_exact"]
        assert payload["checks"]["quartic_slope_in_range"]

    def test_variance(self, tmp_path, capsys):
        out = str(tmp_path / "var.json")
        assert run_cli("analyze", "variance", "--samples", "20000", "--out", out) == 0
        payload = json.loads((tmp_path / "var.json").read_text())
        assert set(payload) == {"inputs", "outputs", "checks"}
        assert payload["checks"]["mlp_within_bound"]

    def test_cost(self, tmp_path, capsys):
        out = str(tmp_path / "cost.json")
        assert run_cli("analyze", "cost", "--steps", "100", "--out", out) == 0
        payload = json.loads((tmp_path / "cost.json").read_text())
        assert payload["checks"]["glue_faster_measured"]
        assert payload["outputs"]["gamma"] >= 1.0


class TestExitCodes:
    def test_usage_error_is_2(self, capsys):
        assert run_cli("learn-alpha", "--method", "nonsense") == 2

    def test_missing_config_file_is_2(self, tmp_path, capsys):
        assert run_cli("synth", "--config", str(tmp_path / "no.json"),
                       "--out", str(tmp_path / "d.npz")) == 2

    def test_bad_config_json_is_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert run_cli("synth", "--config", str(bad), "--out", str(tmp_path / "d.npz")) == 2

    def test_corrupt_data_file_is_3(self, tmp_path, capsys):
        bad = tmp_path / "data.npz"
        bad.write_bytes(b"not-an-npz")
        assert run_cli("evaluate", "--params", str(bad), "--data", str(bad)) == 3

    def test_truncated_checkpoint_is_3(self, tmp_path, config_file, capsys):
        data = str(tmp_path / "data.npz")
        run_cli("synth", "--config", config_file, "--out", data)
        ckpt = tmp_path / "x.ckpt"
        ckpt.write_bytes(MAGIC + struct.pack("<I", 10))
        assert run_cli("evaluate", "--params", str(ckpt), "--data", data) == 3

    def test_nan_checkpoint_is_4(self, tmp_path, config_file, capsys):
        from gluemix import ArchSpec, save_checkpoint

        data = str(tmp_path / "data.npz")
        run_cli("synth", "--config", config_file, "--out", data)
        arch = ArchSpec([6, 12, 3])
        path = tmp_path / "nan.ckpt"
        save_checkpoint(path, arch, np.zeros(arch.param_count))
        raw = bytearray(path.read_bytes())
        (hlen,) = struct.unpack("<I", bytes(raw[8:12]))
        raw[12 + hlen : 16 + hlen] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        assert run_cli("evaluate", "--params", str(path), "--data", data) == 4

    def test_success_is_0(self, tmp_path, config_file):
        assert run_cli("synth", "--config", config_file, "--out", str(tmp_path / "ok.npz")) == 0
