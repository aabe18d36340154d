import json
from pathlib import Path

import numpy as np
import pytest

from graphem import io
from graphem.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestSimulate:
    def test_dataset_a_files(self, tmp_path):
        out = tmp_path / "a1"
        assert run_cli("simulate", "--dataset", "A", "--seed", 1, "--out", out,
                       "--k-steps", 50) == 0
        obs = np.loadtxt(out / "observations.csv", delimiter=",", skiprows=1)
        assert obs.shape == (50, 10)  # k column + 9 series
        assert (out / "A_true.csv").exists()
        man = json.loads((out / "manifest.json").read_text())
        assert man["command"] == "simulate"

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli("simulate", "--dataset", "A")
        assert exc.value.code == 2

    def test_rerun_same_seed_identical_bytes(self, tmp_path):
        a, b = tmp_path / "r1", tmp_path / "r2"
        run_cli("simulate", "--dataset", "A", "--seed", 3, "--out", a, "--k-steps", 20)
        run_cli("simulate", "--dataset", "A", "--seed", 3, "--out", b, "--k-steps", 20)
        for name in ("A_true.csv", "states.csv", "observations.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "a"
    run_cli("simulate", "--dataset", "A", "--seed", 2, "--out", out, "--k-steps", 200)
    return out


class TestFit:
    def test_graphem_outputs(self, data_dir, tmp_path):
        out = tmp_path / "fit"
        assert run_cli("fit", "--data", data_dir, "--method", "graphem",
                       "--kappa", 10, "--out", out) == 0
        A_hat = io.read_matrix(out / "A_hat.csv")
        assert A_hat.shape == (9, 9)
        trace = np.loadtxt(out / "loss_trace.csv", delimiter=",", skiprows=1, ndmin=2)
        assert trace.shape[1] == 3  # iter, loss, rmse (truth available)
        assert (out / "smoothed_means.csv").exists()
        man = json.loads((out / "manifest.json").read_text())
        assert man["config"]["method"] == "GraphEM"

    def test_mlem_loss_trace_nonincreasing(self, data_dir, tmp_path):
        out = tmp_path / "mlem"
        assert run_cli("fit", "--data", data_dir, "--method", "mlem", "--out", out) == 0
        trace = np.loadtxt(out / "loss_trace.csv", delimiter=",", skiprows=1, ndmin=2)
        assert np.all(np.diff(trace[:, 1]) <= 1e-8)

    def test_unknown_method_is_usage_error(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("fit", "--data", data_dir, "--method", "ridge", "--out", tmp_path / "x")
        assert exc.value.code == 2

    def test_oracleem_without_mask_usage_error(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli("fit", "--data", data_dir, "--method", "oracleem", "--out", tmp_path / "x")
        assert exc.value.code == 2

    def test_config_file_with_flag_override(self, data_dir, tmp_path):
        cfg = tmp_path / "fit.cfg"
        cfg.write_text("method = mlem\nmax_em_iters = 3\n")
        out = tmp_path / "cfgfit"
        assert run_cli("fit", "--data", data_dir, "--config", cfg, "--out", out) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["config"]["method"] == "MLEM"
        assert man["config"]["max_em_iters"] == 3

    def test_unknown_config_key_names_it(self, data_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("stepsize = 3\n")
        with pytest.raises(SystemExit) as exc:
            run_cli("fit", "--data", data_dir, "--config", cfg, "--out", tmp_path / "x")
        assert exc.value.code == 2


class TestGranger:
    def test_adjacency_csv(self, data_dir, tmp_path):
        out = tmp_path / "gc"
        assert run_cli("granger", "--data", data_dir, "--mode", "cgc", "--out", out) == 0
        adj = io.read_matrix(out / "adjacency.csv")
        assert adj.shape == (9, 9)
        assert set(np.unique(adj)) <= {0.0, 1.0}
        assert np.all(np.diag(adj) == 1.0)

    def test_runtime_failure_emits_machine_readable_line(self, tmp_path, capsys):
        short = tmp_path / "short"
        run_cli("simulate", "--dataset", "A", "--seed", 0, "--out", short, "--k-steps", 30)
        rc = run_cli("granger", "--data", short, "--out", tmp_path / "gc2")
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ")
        payload = json.loads(err.split("error: ", 1)[1])
        assert payload["command"] == "granger"
        assert "too short" in payload["message"]


class TestBench:
    def test_small_bench_and_plots(self, tmp_path):
        out = tmp_path / "bench"
        rc = run_cli("bench", "--datasets", "A", "--methods", "mlem,pgc",
                     "--n", 2, "--k-steps", 120, "--out", out, "--seed", 0)
        assert rc == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0].startswith("dataset,method,kappa,rmse,accuracy")
        assert len(lines) == 3
        pgc_row = [l for l in lines if ",PGC," in l][0]
        assert pgc_row.split(",")[3] == "-"  # no RMSE for Granger methods
        assert (out / "trace_A_MLEM.png").exists()
        assert (out / "timings.csv").exists()

    def test_determinism_across_runs(self, tmp_path):
        r1, r2 = tmp_path / "b1", tmp_path / "b2"
        for out in (r1, r2):
            run_cli("bench", "--datasets", "A", "--methods", "mlem",
                    "--n", 1, "--k-steps", 100, "--out", out, "--seed", 5)
        assert (r1 / "results.csv").read_bytes() == (r2 / "results.csv").read_bytes()
        assert (r1 / "results_runs.csv").read_bytes() == (r2 / "results_runs.csv").read_bytes()


class TestChannel:
    def test_tiny_channel_sweep(self, tmp_path):
        out = tmp_path / "chan"
        rc = run_cli("channel", "--dataset", "E", "--kappa", "100,200",
                     "--antennas", 2, "--pilots", 2,
                     "--k-train", 80, "--test-steps", 20, "--symbols-per-step", 10,
                     "--out", out, "--seed", 0)
        assert rc == 0
        rows = (out / "ber_vs_kappa.csv").read_text().splitlines()
        assert rows[0] == "kappa,ber_graphem,ber_mlem"
        assert len(rows) == 3
        assert (out / "ber_vs_kappa.png").exists()
        assert (out / "rmse_vs_kappa.csv").exists()
