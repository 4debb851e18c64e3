"""Entry point: config resolution, output schemas, determinism, exit codes."""

import json

import numpy as np
import pytest

from mfvi import DataModel, TrainConfig, train
from mfvi.cli import ConfigError, DEFAULT_CONFIG, resolve_config, run_cli

FAST = [
    "--set", "n_neurons=12",
    "--set", "horizon=0.5",
    "--set", "data.dim=3",
    "--set", "expectation.q_nodes=16",
    "--set", "eval.n_data=20",
    "--set", "eval.n_draws=10",
]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# mfvi-")
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return header, rows


class TestConfigResolution:
    def test_defaults_complete(self):
        config = resolve_config(None)
        assert config == DEFAULT_CONFIG

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"n_nuerons": 10}))
        with pytest.raises(ConfigError, match="n_nuerons"):
            resolve_config(str(path))

    def test_unknown_nested_key_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sweep": {"n_value": [10]}}))
        with pytest.raises(ConfigError, match="sweep.n_value"):
            resolve_config(str(path))

    def test_overrides_parse_json_values(self):
        config = resolve_config(None, ["eta=0.25", "sweep.n_values=[10,20]",
                                       "expectation.method=monte_carlo"])
        assert config["eta"] == 0.25
        assert config["sweep"]["n_values"] == [10, 20]
        assert config["expectation"]["method"] == "monte_carlo"

    def test_bad_override_key(self):
        with pytest.raises(ConfigError, match="etaa"):
            resolve_config(None, ["etaa=0.25"])

    def test_seed_flag_wins(self):
        assert resolve_config(None, ["seed=5"], seed=9)["seed"] == 9

    def test_unparsable_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            resolve_config(str(path))


class TestExitCodes:
    def test_bad_config_key_exits_2(self, tmp_path, capsys):
        code = run_cli(["train", "--out", str(tmp_path / "o"), "--set", "bogus=1"])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_invalid_value_exits_2(self, tmp_path, capsys):
        code = run_cli(["train", "--out", str(tmp_path / "o"),
                        "--set", "scheme=newton"])
        assert code == 2

    def test_run_failure_exits_1(self, tmp_path, capsys):
        # dimension 0 passes config validation but the run cannot start
        code = run_cli(["train", "--out", str(tmp_path / "o"), "--set", "data.dim=0"])
        assert code == 1

    def test_success_exits_0(self, tmp_path):
        code = run_cli(["train", "--out", str(tmp_path / "o"), *FAST])
        assert code == 0


class TestTrainCommand:
    def test_short_horizon_keeps_only_t0(self, tmp_path):
        out = tmp_path / "o"
        code = run_cli(["train", "--out", str(out), *FAST,
                        "--set", "horizon=0.01", "--set", "n_neurons=10"])
        assert code == 0
        header, rows = read_csv(out / "trajectory.csv")
        assert header == ["t", "neuron_index", "m_1", "m_2", "m_3", "rho"]
        assert {row[0] for row in rows} == {"0"}
        assert len(rows) == 10

    def test_values_roundtrip_at_17_digits(self, tmp_path):
        out = tmp_path / "o"
        assert run_cli(["train", "--out", str(out), *FAST, "--seed", "4"]) == 0
        config = json.loads((out / "resolved_config.json").read_text())
        data = DataModel.with_random_teacher(3, 0)
        cfg = TrainConfig(scheme=config["scheme"], n_neurons=12, horizon=0.5, seed=4,
                          expectation=__import__("mfvi").ExpectationConfig(q_nodes=16))
        traj = train(cfg, data)
        _, rows = read_csv(out / "trajectory.csv")
        final = [r for r in rows if float(r[0]) == 0.5]
        for row in final:
            i = int(row[1])
            np.testing.assert_array_equal(
                np.array([float(v) for v in row[2:5]]), traj.final_cloud.means[i])
            assert float(row[5]) == traj.final_cloud.rhos[i]


class TestDeterminismContracts:
    def test_compare_twice_is_byte_identical(self, tmp_path):
        args = ["compare", *FAST, "--set", "compare.n_seeds=2",
                "--set", "limit.n_particles=12", "--set", "limit.pi_samples=50",
                "--set", "limit.step_h=0.05"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli(args + ["--out", str(out1)]) == 0
        assert run_cli(args + ["--out", str(out2)]) == 0
        for name in ("functionals.csv", "agreement.csv", "resolved_config.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_rerun_from_resolved_config_is_byte_identical(self, tmp_path):
        out1 = tmp_path / "a"
        assert run_cli(["train", "--out", str(out1), *FAST, "--seed", "3"]) == 0
        out2 = tmp_path / "b"
        assert run_cli(["train", "--out", str(out2), "--config",
                        str(out1 / "resolved_config.json")]) == 0
        assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()
        assert (out1 / "resolved_config.json").read_bytes() == \
            (out2 / "resolved_config.json").read_bytes()


class TestSweepCommand:
    def test_small_sweep_schema(self, tmp_path):
        out = tmp_path / "o"
        code = run_cli(["sweep", "--out", str(out), *FAST,
                        "--set", 'sweep.schemes=["bbb","minimal_vi"]',
                        "--set", "sweep.n_values=[8,16]",
                        "--set", "sweep.n_seeds=2",
                        "--set", 'functionals=["mean_norm","g_rho"]'])
        assert code == 0
        header, rows = read_csv(out / "functionals.csv")
        assert header == ["scheme", "N", "seed", "t", "functional", "value"]
        schemes = {r[0] for r in rows}
        assert schemes == {"bbb", "minimal_vi"}
        header, rows = read_csv(out / "summary.csv")
        assert header == ["scheme", "N", "functional", "t", "mean", "std",
                          "q025", "q25", "q50", "q75", "q975"]
        # every (scheme, N, functional, t) cell aggregated
        assert {r[1] for r in rows} == {"8", "16"}

    def test_threads_flag_matches_serial(self, tmp_path):
        args = ["sweep", *FAST, "--set", 'sweep.schemes=["minimal_vi"]',
                "--set", "sweep.n_values=[8]", "--set", "sweep.n_seeds=2"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(args + ["--out", str(a), "--threads", "1"]) == 0
        assert run_cli(args + ["--out", str(b), "--threads", "2"]) == 0
        assert (a / "functionals.csv").read_bytes() == (b / "functionals.csv").read_bytes()

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        args = ["sweep", *FAST, "--set", 'sweep.schemes=["minimal_vi"]',
                "--set", "sweep.n_values=[8]", "--set", "sweep.n_seeds=2"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(args + ["--out", str(a)]) == 0
        monkeypatch.setenv("MFVI_THREADS", "2")
        assert run_cli(args + ["--out", str(b)]) == 0
        assert (a / "functionals.csv").read_bytes() == (b / "functionals.csv").read_bytes()


class TestFiguresDataCommand:
    def test_hist_and_series_outputs(self, tmp_path):
        out = tmp_path / "o"
        code = run_cli(["figures-data", "--out", str(out), *FAST,
                        "--set", "hist.bins=6", "--set", "time_grid=5",
                        "--set", 'compare.schemes=["bbb","minimal_vi"]'])
        assert code == 0
        header, rows = read_csv(out / "hist.csv")
        assert header == ["scheme", "N", "t", "functional", "bin_left", "bin_right",
                          "count"]
        by_cell = {}
        for r in rows:
            by_cell.setdefault((r[0], r[2], r[3]), []).append(int(r[6]))
        for counts in by_cell.values():
            assert len(counts) == 6
            assert sum(counts) == 12  # every unit lands in a bin
        header, rows = read_csv(out / "functionals.csv")
        names = {r[4] for r in rows}
        assert {"neg_elbo", "neg_elbo_loss", "neg_elbo_kl"} <= names
