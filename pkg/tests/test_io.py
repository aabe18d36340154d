import json

import numpy as np
import pytest

from graphem import io
from graphem.ssm import ModelParams, Trajectory, simulate

from conftest import random_model


class TestMatrixRoundTrip:
    def test_exact_float_round_trip(self, rng, tmp_path):
        M = rng.standard_normal((4, 3)) * np.exp(rng.uniform(-30, 30, (4, 3)))
        p = tmp_path / "m.csv"
        io.write_matrix(p, M)
        np.testing.assert_array_equal(io.read_matrix(p), M)
        assert open(p).readline().strip() == "c0,c1,c2"

    def test_vector_round_trip(self, rng, tmp_path):
        v = rng.standard_normal(5)
        io.write_vector(tmp_path / "v.csv", v)
        np.testing.assert_array_equal(io.read_vector(tmp_path / "v.csv"), v)


class TestSequenceLayouts:
    def test_stacked_layout(self, rng, tmp_path):
        seq = rng.standard_normal((5, 3, 2))
        p = tmp_path / "seq.csv"
        io.write_matrix_seq_stacked(p, seq, k_start=1)
        got, k0 = io.read_matrix_seq_stacked(p)
        assert k0 == 1
        np.testing.assert_array_equal(got, seq)

    def test_one_file_per_step_layout(self, rng, tmp_path):
        seq = rng.standard_normal((4, 2, 2))
        io.write_matrix_seq_files(tmp_path, "H", seq, k_start=1)
        got, k0 = io.read_matrix_seq_files(tmp_path, "H")
        assert k0 == 1
        np.testing.assert_array_equal(got, seq)

    def test_both_layouts_agree(self, rng, tmp_path):
        seq = rng.standard_normal((3, 2, 4))
        io.write_matrix_seq_stacked(tmp_path / "s.csv", seq)
        io.write_matrix_seq_files(tmp_path / "files", "s", seq)
        a, _ = io.read_matrix_seq_stacked(tmp_path / "s.csv")
        b, _ = io.read_matrix_seq_files(tmp_path / "files", "s")
        np.testing.assert_array_equal(a, b)


class TestTrajectoryAndParams:
    def test_trajectory_round_trip(self, rng, tmp_path):
        params, A = random_model(rng, Nx=3, Ny=2, K=7)
        traj = simulate(params, A, seed=5)
        io.write_trajectory(tmp_path, traj)
        got = io.read_trajectory(tmp_path)
        np.testing.assert_array_equal(got.states, traj.states)
        np.testing.assert_array_equal(got.observations, traj.observations)

    @pytest.mark.parametrize("time_varying", [False, True])
    def test_params_round_trip(self, rng, tmp_path, time_varying):
        params, _ = random_model(rng, Nx=2, Ny=3, K=4, time_varying=time_varying)
        io.write_params(tmp_path, params)
        got = io.read_params(tmp_path)
        assert (got.Nx, got.Ny, got.K) == (params.Nx, params.Ny, params.K)
        np.testing.assert_array_equal(got.Q, params.Q)
        np.testing.assert_array_equal(got.H, params.H)
        np.testing.assert_array_equal(got.R, params.R)
        np.testing.assert_array_equal(got.P0, params.P0)


class TestConfigFormat:
    def test_parse_dotted_keys_and_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# fit settings\n"
            "method = graphem\n"
            "kappa = 30  # weight\n"
            "ms.lambda = 0.25\n"
            "\n"
        )
        cfg = io.load_config(p)
        assert cfg == {"method": "graphem", "kappa": "30", "ms.lambda": "0.25"}
        assert io.coerce(cfg["kappa"]) == 30
        assert io.coerce(cfg["ms.lambda"]) == 0.25
        assert io.coerce("true") is True
        assert io.coerce("l21") == "l21"

    def test_malformed_line_rejected(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("method graphem\n")
        with pytest.raises(ValueError, match="key = value"):
            io.load_config(p)


class TestManifest:
    def test_manifest_contents(self, tmp_path):
        io.write_manifest(tmp_path, "simulate", config={"dataset": "A"},
                          seeds=[1], outputs=[tmp_path / "x.csv"], wall_time_s=0.5)
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["command"] == "simulate"
        assert man["config"] == {"dataset": "A"}
        assert man["seeds"] == [1]
        assert man["backend"] in ("pure", "compiled")
        assert man["version"]
