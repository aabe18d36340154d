"""CSV/JSON serialization and the flat config-file format.

Matrices are written as one header row followed by row-major entries,
formatted with %.17g so float64 values round-trip exactly.  Sequences of
matrices come in two interchangeable layouts, both readable here: one file
per step, or a single file whose leading column carries the step index.
"""
from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from .ssm import ModelParams, Trajectory


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_rows(path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_matrix(path, M: np.ndarray) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _write_rows(path, [f"c{j}" for j in range(M.shape[1])], M)


def read_matrix(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


def write_matrix_seq_stacked(path, seq: np.ndarray, k_start: int = 0) -> None:
    """Single-file layout: each matrix contributes its rows under one k value."""
    seq = np.asarray(seq, dtype=float)
    K, r, c = seq.shape
    with open(path, "w") as fh:
        fh.write("k," + ",".join(f"c{j}" for j in range(c)) + "\n")
        for k in range(K):
            for i in range(r):
                fh.write(_fmt(k_start + k) + "," + ",".join(_fmt(v) for v in seq[k, i]) + "\n")


def read_matrix_seq_stacked(path) -> tuple[np.ndarray, int]:
    """Returns (seq, k_start); steps must be contiguous."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ks = data[:, 0].astype(int)
    uniq = np.unique(ks)
    if not np.array_equal(uniq, np.arange(uniq[0], uniq[0] + uniq.size)):
        raise ValueError(f"non-contiguous step indices in {path}")
    rows_per_k = np.count_nonzero(ks == uniq[0])
    seq = data[:, 1:].reshape(uniq.size, rows_per_k, data.shape[1] - 1)
    return seq, int(uniq[0])


def write_matrix_seq_files(dirpath, stem: str, seq: np.ndarray, k_start: int = 0) -> list[str]:
    """One-file-per-step layout: <stem>_<k>.csv under dirpath."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, M in enumerate(np.asarray(seq, dtype=float)):
        p = dirpath / f"{stem}_{k_start + k:05d}.csv"
        write_matrix(p, M)
        paths.append(str(p))
    return paths


def read_matrix_seq_files(dirpath, stem: str) -> tuple[np.ndarray, int]:
    dirpath = Path(dirpath)
    files = sorted(dirpath.glob(f"{stem}_*.csv"))
    if not files:
        raise FileNotFoundError(f"no files matching {stem}_*.csv in {dirpath}")
    ks = [int(f.stem.split("_")[-1]) for f in files]
    seq = np.stack([read_matrix(f) for f in files])
    if ks != list(range(ks[0], ks[0] + len(ks))):
        raise ValueError(f"non-contiguous step files for {stem} in {dirpath}")
    return seq, ks[0]


def write_vector(path, v: np.ndarray, name: str = "v") -> None:
    v = np.asarray(v, dtype=float).ravel()
    _write_rows(path, [name], v[:, None])


def read_vector(path) -> np.ndarray:
    return read_matrix(path).ravel()


def write_trajectory(dirpath, traj: Trajectory) -> None:
    dirpath = Path(dirpath)
    states = traj.states
    obs = traj.observations
    _write_rows(
        dirpath / "states.csv",
        ["k"] + [f"x{j}" for j in range(states.shape[1])],
        ([k, *states[k]] for k in range(states.shape[0])),
    )
    _write_rows(
        dirpath / "observations.csv",
        ["k"] + [f"y{j}" for j in range(obs.shape[1])],
        ([k + 1, *obs[k]] for k in range(obs.shape[0])),
    )


def read_trajectory(dirpath, seed: int = -1) -> Trajectory:
    dirpath = Path(dirpath)
    states = np.loadtxt(dirpath / "states.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
    obs = np.loadtxt(dirpath / "observations.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:]
    return Trajectory(states=states, observations=obs, seed=seed)


def write_params(dirpath, params: ModelParams) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    write_matrix(dirpath / "Q.csv", params.Q)
    write_matrix(dirpath / "P0.csv", params.P0)
    write_vector(dirpath / "x0_mean.csv", params.x0_mean, name="x0")
    h_const = params.H.shape[0] == 1
    r_const = params.R.shape[0] == 1
    if h_const:
        write_matrix(dirpath / "H.csv", params.H[0])
    else:
        write_matrix_seq_stacked(dirpath / "H.csv", params.H, k_start=1)
    if r_const:
        write_matrix(dirpath / "R.csv", params.R[0])
    else:
        write_matrix_seq_stacked(dirpath / "R.csv", params.R, k_start=1)
    meta = {
        "Nx": params.Nx,
        "Ny": params.Ny,
        "K": params.K,
        "H_layout": "constant" if h_const else "stacked",
        "R_layout": "constant" if r_const else "stacked",
    }
    with open(dirpath / "params.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_params(dirpath) -> ModelParams:
    dirpath = Path(dirpath)
    with open(dirpath / "params.json") as fh:
        meta = json.load(fh)
    H = read_matrix(dirpath / "H.csv") if meta["H_layout"] == "constant" \
        else read_matrix_seq_stacked(dirpath / "H.csv")[0]
    R = read_matrix(dirpath / "R.csv") if meta["R_layout"] == "constant" \
        else read_matrix_seq_stacked(dirpath / "R.csv")[0]
    return ModelParams(
        Nx=meta["Nx"],
        Ny=meta["Ny"],
        Q=read_matrix(dirpath / "Q.csv"),
        H=H,
        R=R,
        x0_mean=read_vector(dirpath / "x0_mean.csv"),
        P0=read_matrix(dirpath / "P0.csv"),
        K=meta["K"],
    )


# -- flat key/value configuration ---------------------------------------

def load_config(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment; keys may be dotted."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


def coerce(value: str):
    """Best-effort scalar coercion used when merging config values."""
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def write_manifest(dirpath, command: str, config: dict, seeds, outputs, wall_time_s: float) -> None:
    from . import __version__
    from ._backend import backend_name

    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "version": __version__,
        "backend": backend_name(),
        "outputs": sorted(os.fspath(p) for p in outputs),
        "wall_time_s": wall_time_s,
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    with open(Path(dirpath) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
