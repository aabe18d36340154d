"""Command-line entry point.

Subcommands: simulate, fit, bench, channel, granger.  Flags override
values from an optional flat config file (--config); every run writes a
manifest sufficient to reproduce it.  Verbosity comes from GRAPHEM_LOG
(DEBUG/INFO/...; default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io
from ._backend import backend_name
from .baselines import GrangerConfig, granger_graph
from .benchmark import DEFAULT_KAPPA_GRID, run_benchmark
from .datasets import DatasetSpec, make_dataset, MIMO_DATASETS
from .em import FitConfig, fit
from .mimo import MimoConfig, channel_block_map, kappa_sweep
from .metrics import rmse as rel_rmse


class UsageError(Exception):
    pass


_FIT_CONFIG_KEYS = {
    "method", "kappa", "delta", "epsilon", "xi", "max_em_iters", "init_seed",
    "penalty", "blocks", "mask_file", "ms.lambda", "ms.gamma", "ms.xi", "ms.max_iters",
}


def _setup_logging() -> None:
    level = os.environ.get("GRAPHEM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")


def _load_config(path, allowed: set[str]) -> dict:
    if path is None:
        return {}
    cfg = io.load_config(path)
    for key in cfg:
        if key not in allowed:
            raise UsageError(f"unknown config key {key!r} in {path}")
    return {k: io.coerce(v) for k, v in cfg.items()}


def _parse_blocks(value: str, nx: int) -> np.ndarray:
    """Block map from 'channel:<L>' or from a CSV of block ids."""
    if value.startswith("channel:"):
        L = int(value.split(":", 1)[1])
        return channel_block_map(L)
    path = Path(value)
    if not path.exists():
        raise UsageError(f"blocks file {value!r} not found")
    ids = io.read_matrix(path).astype(np.intp)
    if ids.shape != (nx, nx):
        raise UsageError(f"blocks file has shape {ids.shape}, expected ({nx}, {nx})")
    return ids


def _float_list(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


# -- subcommands ---------------------------------------------------------

def cmd_simulate(args) -> list:
    t0 = time.perf_counter()
    spec = DatasetSpec.from_name(args.dataset, seed=args.seed, K=args.k_steps)
    params, A_true, traj = make_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_params(out, params)
    io.write_matrix(out / "A_true.csv", A_true)
    io.write_trajectory(out, traj)
    outputs = [out / n for n in
               ("A_true.csv", "states.csv", "observations.csv", "params.json")]
    io.write_manifest(out, "simulate",
                      config={"dataset": spec.name, "K": spec.K, "sigma_q": spec.sigma_q,
                              "sigma_r": spec.sigma_r, "sigma_p": spec.sigma_p},
                      seeds=[args.seed], outputs=outputs,
                      wall_time_s=time.perf_counter() - t0)
    print(f"wrote dataset {spec.name} (K={spec.K}) to {out}")
    return outputs


def cmd_fit(args) -> list:
    t0 = time.perf_counter()
    cfg_file = _load_config(args.config, _FIT_CONFIG_KEYS)
    data = Path(args.data)
    if not (data / "params.json").exists():
        raise UsageError(f"no params.json under {args.data!r}; run simulate first")
    params = io.read_params(data)
    traj = io.read_trajectory(data)

    method = args.method or cfg_file.get("method")
    if method is None:
        raise UsageError("missing method (flag --method or config key 'method')")

    def pick(flag_val, key, default):
        return flag_val if flag_val is not None else cfg_file.get(key, default)

    penalty = pick(args.penalty, "penalty", "l1")
    mask_file = pick(args.mask_file, "mask_file", None)
    blocks = pick(args.blocks, "blocks", None)

    support_mask = None
    if str(method).lower() == "oracleem":
        if mask_file is None:
            raise UsageError("method oracleem requires --mask-file (config key 'mask_file')")
        mask_path = Path(mask_file)
        if not mask_path.exists():
            mask_path = data / mask_file
        if not mask_path.exists():
            raise UsageError(f"mask file {mask_file!r} not found")
        support_mask = io.read_matrix(mask_path) != 0.0

    block_map = None
    if penalty == "l21":
        if blocks is None:
            raise UsageError("penalty 'l21' requires --blocks (config key 'blocks')")
        block_map = _parse_blocks(str(blocks), params.Nx)

    try:
        fit_cfg = FitConfig(
            method=method,
            kappa=float(pick(args.kappa, "kappa", 1.0)),
            delta=float(pick(args.delta, "delta", 0.99)),
            epsilon=float(pick(args.epsilon, "epsilon", 1e-3)),
            xi=float(pick(args.xi, "xi", 1e-4)),
            max_em_iters=int(pick(args.max_em_iters, "max_em_iters", 200)),
            init_seed=int(pick(args.init_seed, "init_seed", args.seed)),
            penalty=penalty,
            block_map=block_map,
            support_mask=support_mask,
            ms_lambda=cfg_file.get("ms.lambda"),
            ms_gamma=cfg_file.get("ms.gamma"),
            ms_max_iters=int(cfg_file.get("ms.max_iters", 50000)),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    a_true = io.read_matrix(data / "A_true.csv") if (data / "A_true.csv").exists() else None
    result = fit(params, traj.observations, fit_cfg, a_true=a_true)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(out / "A_hat.csv", result.A_hat)
    if result.rmse_trace is not None:
        io._write_rows(out / "loss_trace.csv", ["iter", "loss", "rmse"],
                       ([i, result.loss_trace[i], result.rmse_trace[i]]
                        for i in range(len(result.loss_trace))))
    else:
        io._write_rows(out / "loss_trace.csv", ["iter", "loss"],
                       ([i, result.loss_trace[i]] for i in range(len(result.loss_trace))))
    io._write_rows(out / "smoothed_means.csv",
                   ["k"] + [f"x{j}" for j in range(params.Nx)],
                   ([k, *result.smoother.m_smooth[k]]
                    for k in range(result.smoother.m_smooth.shape[0])))
    io.write_matrix_seq_stacked(out / "smoothed_covs.csv", result.smoother.P_smooth, k_start=0)

    outputs = [out / n for n in ("A_hat.csv", "loss_trace.csv", "smoothed_means.csv",
                                 "smoothed_covs.csv")]
    io.write_manifest(out, "fit",
                      config={"method": fit_cfg.method, "kappa": fit_cfg.kappa,
                              "delta": fit_cfg.delta, "epsilon": fit_cfg.epsilon,
                              "xi": fit_cfg.xi, "max_em_iters": fit_cfg.max_em_iters,
                              "init_seed": fit_cfg.init_seed, "penalty": fit_cfg.penalty,
                              "data": str(data), "em_iters": result.em_iters,
                              "converged": result.converged,
                              "ms_not_converged": result.ms_not_converged},
                      seeds=[fit_cfg.init_seed], outputs=outputs,
                      wall_time_s=time.perf_counter() - t0)
    msg = f"{fit_cfg.method}: {result.em_iters} EM iterations, converged={result.converged}"
    if a_true is not None:
        msg += f", rmse={rel_rmse(result.A_hat, a_true):.4f}"
    print(msg)
    return outputs


def cmd_bench(args) -> list:
    kappa = None
    if args.kappa:
        if "=" in args.kappa:
            kappa = {p.split("=")[0].upper(): float(p.split("=")[1])
                     for p in args.kappa.split(",")}
        else:
            kappa = float(args.kappa)
    grid = tuple(_float_list(args.kappa_grid)) if args.kappa_grid else DEFAULT_KAPPA_GRID
    mean_rows, _ = run_benchmark(
        datasets=[d.strip().upper() for d in args.datasets.split(",")],
        methods=[m.strip() for m in args.methods.split(",")],
        n_realizations=args.n,
        out_dir=args.out,
        base_seed=args.seed,
        kappa=kappa,
        kappa_grid=grid,
        jobs=args.jobs,
        k_steps=args.k_steps,
        max_em_iters=args.max_em_iters,
    )
    _plot_first_traces(Path(args.out))
    for row in mean_rows:
        rm = "-" if row["rmse"] is None else f"{row['rmse']:.4f}"
        print(f"{row['dataset']} {row['method']:<9s} rmse={rm} f1={row['f1']:.4f} "
              f"({row['n_ok']} ok, {row['n_fail']} failed)")
    return [Path(args.out) / "results.csv"]


def cmd_channel(args) -> list:
    t0 = time.perf_counter()
    cfg = MimoConfig(
        L=args.antennas,
        n_pilots=args.pilots,
        ebn0_db=args.ebn0,
        k_train=args.k_train,
        k_test=args.test_steps,
        symbols_per_step=args.symbols_per_step,
        kappas=tuple(_float_list(args.kappa)),
        seed=args.seed,
        dataset=args.dataset.upper(),
    )
    if cfg.dataset not in MIMO_DATASETS:
        raise UsageError(f"channel dataset must be one of {MIMO_DATASETS}, got {args.dataset!r}")
    rows = kappa_sweep(cfg, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io._write_rows(out / "ber_vs_kappa.csv", ["kappa", "ber_graphem", "ber_mlem"],
                   ([r["kappa"], r["ber_graphem"], r["ber_mlem"]] for r in rows))
    io._write_rows(out / "rmse_vs_kappa.csv", ["kappa", "rmse_graphem", "rmse_mlem"],
                   ([r["kappa"], r["rmse_graphem"], r["rmse_mlem"]] for r in rows))
    _plot_channel(out, rows)
    outputs = [out / "ber_vs_kappa.csv", out / "rmse_vs_kappa.csv"]
    io.write_manifest(out, "channel", config=cfg.echo(), seeds=[args.seed],
                      outputs=outputs, wall_time_s=time.perf_counter() - t0)
    for r in rows:
        print(f"kappa={r['kappa']:g}: BER graphem={r['ber_graphem']:.3e} "
              f"mlem={r['ber_mlem']:.3e}")
    return outputs


def cmd_granger(args) -> list:
    t0 = time.perf_counter()
    data = Path(args.data)
    if not (data / "observations.csv").exists():
        raise UsageError(f"no observations.csv under {args.data!r}")
    traj = io.read_trajectory(data)
    cfg = GrangerConfig(ar_order=args.order, alpha=args.alpha, mode=args.mode)
    adj = granger_graph(traj.observations, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(out / "adjacency.csv", adj.astype(float))
    io.write_manifest(out, "granger",
                      config={"mode": cfg.mode, "alpha": cfg.alpha, "ar_order": cfg.ar_order,
                              "data": str(data)},
                      seeds=[], outputs=[out / "adjacency.csv"],
                      wall_time_s=time.perf_counter() - t0)
    print(f"{cfg.mode}: {int(adj.sum() - adj.shape[0])} off-diagonal edges declared")
    return [out / "adjacency.csv"]


# -- plotting (Agg backend; line plots only) ------------------------------

def _plot_first_traces(out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for trace in sorted(out_dir.glob("runs/*/*/r000/loss_trace.csv")):
        dataset, method = trace.parts[-4], trace.parts[-3]
        data = np.loadtxt(trace, delimiter=",", skiprows=1, ndmin=2)
        with open(trace) as fh:
            cols = fh.readline().strip().split(",")
        fig, axes = plt.subplots(1, len(cols) - 1, figsize=(4 * (len(cols) - 1), 3))
        axes = np.atleast_1d(axes)
        for j, name in enumerate(cols[1:]):
            axes[j].plot(data[:, 0], data[:, j + 1])
            axes[j].set_xlabel("EM iteration")
            axes[j].set_ylabel(name)
        fig.suptitle(f"{dataset} / {method}")
        fig.tight_layout()
        fig.savefig(out_dir / f"trace_{dataset}_{method}.png", dpi=100)
        plt.close(fig)


def _plot_channel(out_dir: Path, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kap = [r["kappa"] for r in rows]
    for quantity in ("ber", "rmse"):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(kap, [r[f"{quantity}_graphem"] for r in rows], "o-", label="GraphEM")
        ax.plot(kap, [r[f"{quantity}_mlem"] for r in rows], "s--", label="MLEM")
        ax.set_xlabel("kappa")
        ax.set_ylabel(quantity.upper())
        if quantity == "ber":
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / f"{quantity}_vs_kappa.png", dpi=100)
        plt.close(fig)


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphem",
        description="Sparse transition-graph estimation in linear-Gaussian state-space models",
    )
    parser.add_argument("--version", action="version", version=f"graphem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=needs_out, help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for realization/kappa grids")

    p = sub.add_parser("simulate", help="generate a dataset realization")
    p.add_argument("--dataset", required=True, help="A|B|C|D|E|F")
    p.add_argument("--k-steps", type=int, default=None, help="override horizon length")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate the transition matrix from a data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--method", default=None, help="graphem|stableem|oracleem|mlem")
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--max-em-iters", type=int, default=None)
    p.add_argument("--init-seed", type=int, default=None)
    p.add_argument("--penalty", choices=("l1", "l21"), default=None)
    p.add_argument("--blocks", default=None, help="'channel:<L>' or a block-id CSV")
    p.add_argument("--mask-file", default=None, help="0/1 CSV support mask (oracleem)")
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="multi-realization benchmark over datasets and methods")
    p.add_argument("--datasets", required=True, help="comma list, e.g. A,B")
    p.add_argument("--methods", required=True, help="comma list, e.g. graphem,mlem,pgc")
    p.add_argument("--n", type=int, default=10, help="realizations per cell")
    p.add_argument("--kappa", default=None, help="float or A=30,B=30 per-dataset list")
    p.add_argument("--kappa-grid", default=None, help="comma list for the tuning search")
    p.add_argument("--k-steps", type=int, default=None)
    p.add_argument("--max-em-iters", type=int, default=200)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("channel", help="channel-tracking BER study versus kappa")
    p.add_argument("--dataset", required=True, help="E|F")
    p.add_argument("--kappa", default="50,100,200", help="comma list of weights")
    p.add_argument("--antennas", type=int, default=4, help="antennas per side (L)")
    p.add_argument("--pilots", type=int, default=4, help="pilot vectors per step")
    p.add_argument("--ebn0", type=float, default=38.0)
    p.add_argument("--k-train", type=int, default=200)
    p.add_argument("--test-steps", type=int, default=1000)
    p.add_argument("--symbols-per-step", type=int, default=100)
    common(p)
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("granger", help="Granger-causality adjacency from observations")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("pgc", "cgc"), default="pgc")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--order", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_granger)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.exit(2, f"usage error: {exc}\n")
    except Exception as exc:  # runtime failure: machine-readable line, exit 1
        sys.stderr.write("error: " + json.dumps(
            {"command": args.command, "type": type(exc).__name__, "message": str(exc)}
        ) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
