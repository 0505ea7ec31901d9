"""Command line entry point: ``clusterckm <command> ...``.

Flags mirror :class:`ExperimentConfig` fields; values from ``--config``
override flags.  Results go to ``--out``/``--output-dir``, the config's
``output_dir``, ``$CLUSTERCKM_OUTPUT_DIR`` or ``./results``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .bench import (
    SCHEMES,
    ConfigError,
    ExperimentConfig,
    csv_text,
    historical_samples,
    load_config,
    output_dir,
    sweep_pf,
    table_configs,
    table_environments,
    target_channel,
    trial_environment,
    trial_seed,
    write_outputs,
)
from .ckm import CkmError, ClusterCkm, build_ckm, query
from .estimators import LinkGrid, estimate_clusterckm, estimate_ls, estimate_omp, rmse_db
from .scene import PilotConfig, assemble_channel, first_arrival, pilot_matrix, snr_to_noise_var, transmit

log = logging.getLogger("clusterckm")


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON experiment file; explicit flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr-db", type=float, nargs="+", dest="snr_db")
    p.add_argument("--p-f", type=int, nargs="+", dest="p_f")
    p.add_argument("--schemes", nargs="+", choices=SCHEMES)
    p.add_argument("--n-obs", type=int, dest="n_obs")
    p.add_argument("--hist-error-db", type=float, dest="hist_error_db")
    p.add_argument("--cluster-std", type=float, dest="cluster_std")
    p.add_argument("--n-scatterers", type=int, dest="n_scatterers")
    p.add_argument("--workers", type=int)
    p.add_argument("--aggregate", choices=("linear", "db"))
    p.add_argument("--fixed-environment", action="store_true", default=None, dest="fixed_environment")
    p.add_argument("--output-dir", dest="output_dir")


_FLAG_FIELDS = (
    "seed", "trials", "snr_db", "p_f", "schemes", "n_obs", "hist_error_db", "cluster_std",
    "n_scatterers", "workers", "aggregate", "fixed_environment", "output_dir",
)


def experiment_config(args) -> ExperimentConfig:
    flags = {k: getattr(args, k, None) for k in _FLAG_FIELDS}
    flags = {k: v for k, v in flags.items() if v is not None}
    if getattr(args, "config", None):
        return load_config(args.config, **flags)
    return ExperimentConfig.from_dict(flags)


def _trial_context(cfg: ExperimentConfig, trial: int):
    seed = trial_seed(cfg.seed, trial)
    return seed, trial_environment(cfg, seed)


# -- commands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = experiment_config(args)
    _, env = _trial_context(cfg, args.trial)
    rx, tx = cfg.arrays()
    p_tx = np.asarray(args.tx if args.tx else cfg.target_tx, dtype=float)
    p_rx = np.asarray(args.rx if args.rx else cfg.target_rx, dtype=float)
    ofdm = cfg.ofdm_construct() if args.construction_grid else cfg.ofdm_comm()
    ref = first_arrival(env, p_tx, p_rx)
    h = assemble_channel(env, p_tx, p_rx, tx, rx, ofdm, ref)
    out = args.out or os.path.join(output_dir(cfg), "channel.npz")
    np.savez(
        out, h=h, p_tx=p_tx, p_rx=p_rx, delay_ref=ref, delta_f=ofdm.delta_f,
        scatterers=env.positions(), config_hash=cfg.hash(),
    )
    print(json.dumps({"path": out, "shape": list(h.shape), "delay_ref_s": ref}))
    return 0


def cmd_build_ckm(args) -> int:
    cfg = experiment_config(args)
    seed, env = _trial_context(cfg, args.trial)
    samples = historical_samples(cfg, env, seed)
    ckm = build_ckm(samples, cfg.ckm_config(), coarse=args.coarse)
    ckm.metadata.update({"experiment_seed": cfg.seed, "trial": args.trial, "config_hash": cfg.hash()})
    out = args.out or os.path.join(output_dir(cfg), "coarse_ckm.json" if args.coarse else "ckm.json")
    ckm.save(out)
    print(json.dumps({"path": out, "groups": ckm.K, "points": ckm.n_points,
                      "centroids": np.round(ckm.centroids(), 3).tolist()}))
    return 0


def cmd_estimate(args) -> int:
    cfg = experiment_config(args)
    ckm = ClusterCkm.load(args.ckm)
    seed, env = _trial_context(cfg, args.trial)
    rx, tx = cfg.arrays()
    h, ref = target_channel(cfg, env)
    ofdm = cfg.ofdm_comm()
    X = pilot_matrix(cfg.n_tx, cfg.pilot_len, seed)
    noise_var = snr_to_noise_var(h, args.snr)
    y, _ = transmit(h, PilotConfig(X, args.pilot_period), noise_var, seed + 1)
    grid = LinkGrid(rx, tx, ofdm, args.pilot_period, ref)
    est_cfg = cfg.estimation_config()
    out = {"p_f": args.pilot_period, "snr_db": args.snr}
    ranges = query(ckm, cfg.target_tx, cfg.target_rx, tx, rx, cfg.margin)
    out["CKM"] = rmse_db(estimate_clusterckm(y, ranges, X, est_cfg, grid, noise_var=noise_var), h)
    if args.baselines:
        out["LS"] = rmse_db(estimate_ls(y, X, args.pilot_period, ofdm.n_sc), h)
        out["OMP"] = rmse_db(estimate_omp(y, X, est_cfg, args.pilot_period, ofdm.n_sc, noise_var), h)
    print(json.dumps(out))
    return 0


def cmd_sweep_pf(args) -> int:
    cfg = experiment_config(args)
    res = sweep_pf(cfg)
    paths = write_outputs(res, [cfg.to_dict()], output_dir(cfg, args.out), args.stem)
    sys.stdout.write(csv_text(res))
    log.info("wrote %s", paths)
    return 0 if not res.failed_trials else 3


def cmd_table_env(args) -> int:
    base = experiment_config(args)
    snrs = args.snr_db if args.snr_db else [20.0, 0.0]
    cfgs = table_configs(base, snrs)
    res = table_environments(cfgs)
    paths = write_outputs(res, [c.to_dict() for c in cfgs.values()], output_dir(base, args.out), args.stem)
    sys.stdout.write(csv_text(res))
    log.info("wrote %s", paths)
    return 0 if not res.failed_trials else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterckm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="dump one channel tensor to .npz")
    _add_experiment_flags(s)
    s.add_argument("--trial", type=int, default=0, help="trial index selecting the environment")
    s.add_argument("--tx", type=float, nargs=2, help="Tx position (default: target link)")
    s.add_argument("--rx", type=float, nargs=2, help="Rx position (default: target link)")
    s.add_argument("--construction-grid", action="store_true", help="use the construction subcarrier grid")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("build-ckm", help="historical samples -> CKM file")
    _add_experiment_flags(s)
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--coarse", action="store_true", help="skip channel division")
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_ckm)

    s = sub.add_parser("estimate", help="CKM file + target link -> RMSE (dB)")
    _add_experiment_flags(s)
    s.add_argument("--ckm", required=True)
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--snr", type=float, default=10.0)
    s.add_argument("--pilot-period", type=int, default=16)
    s.add_argument("--baselines", action="store_true", help="also report LS and OMP")
    s.set_defaults(func=cmd_estimate)

    bench = sub.add_parser("bench", help="Monte-Carlo experiments")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    s = bsub.add_parser("sweep-pf", help="RMSE versus pilot period")
    _add_experiment_flags(s)
    s.add_argument("--out", help="output directory")
    s.add_argument("--stem", default="sweep_pf")
    s.set_defaults(func=cmd_sweep_pf)
    s = bsub.add_parser("table-env", help="RMSE across the four reference environments")
    _add_experiment_flags(s)
    s.add_argument("--out", help="output directory")
    s.add_argument("--stem", default="table_env")
    s.set_defaults(func=cmd_table_env)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose == 0:
        warnings.simplefilter("ignore", UserWarning)
    try:
        return args.func(args)
    except (ConfigError, CkmError, OSError) as exc:
        print(f"clusterckm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
