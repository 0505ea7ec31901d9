"""Seeded Monte-Carlo experiments: p_f sweeps and the environment table.

One trial samples a scatterer environment, builds the knowledge maps from
noisy historical channels, then estimates a target link at every requested
(SNR, p_f) with each scheme.  Trials only depend on their own derived seed,
so serial and process-parallel runs give identical numbers.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ckm import CkmConfig, HistoricalSample, build_ckm, query
from .estimators import (
    EstimationConfig,
    LinkGrid,
    estimate_clusterckm,
    estimate_ls,
    estimate_omp,
    rmse_db,
)
from .scene import (
    ArrayConfig,
    Environment,
    OfdmConfig,
    PilotConfig,
    assemble_channel,
    first_arrival,
    perturb_channel,
    pilot_matrix,
    sample_environment,
    snr_to_noise_var,
    transmit,
)

log = logging.getLogger(__name__)

SCHEMES = ("ClusterCKM", "CoarseCKM", "LS", "OMP")
CSV_COLUMNS = ("scheme", "p_f", "snr_db", "rmse_db_mean", "rmse_db_std", "trials", "seed")
OUTPUT_DIR_ENV = "CLUSTERCKM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; defaults reproduce the reference scenario."""

    name: str = "default"
    # environment
    centers: list = field(default_factory=lambda: [[0.0, 200.0], [0.0, -200.0], [150.0, -100.0], [150.0, 100.0]])
    n_scatterers: int = 50
    cluster_std: float = 10.0
    fixed_environment: bool = False
    # arrays and OFDM
    n_rx: int = 16
    n_tx: int = 3
    spacing: float = 0.05
    wavelength: float = 0.1
    array_axis: list = field(default_factory=lambda: [0.0, -1.0])
    bandwidth: float = 100e6
    n_sc_construct: int = 210
    n_sc_comm: int = 1680
    pilot_len: int = 3
    # historical observations
    n_obs: int = 5
    hist_error_db: float = 10.0
    hist_rx: list = field(default_factory=lambda: [-150.0, 0.0])
    hist_region: list = field(default_factory=lambda: [[-100.0, -100.0], [100.0, 100.0]])
    hist_exclusion: float = 60.0
    # target link
    target_tx: list = field(default_factory=lambda: [50.0, 150.0])
    target_rx: list = field(default_factory=lambda: [-150.0, 50.0])
    # sweep
    snr_db: list = field(default_factory=lambda: [10.0])
    p_f: list = field(default_factory=lambda: [1, 8, 16, 24, 32, 48, 60])
    trials: int = 15
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    seed: int = 2024
    margin: float = 0.1
    aggregate: str = "linear"
    workers: int = 1
    output_dir: str | None = None
    ckm: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.schemes:
            raise ConfigError("schemes must be non-empty")
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if self.aggregate not in ("linear", "db"):
            raise ConfigError("aggregate must be 'linear' or 'db'")
        if any(int(p) < 1 for p in self.p_f) or not self.p_f:
            raise ConfigError("p_f values must be >= 1")
        if self.n_obs < 1:
            raise ConfigError("n_obs must be >= 1")
        self.schemes = [s for s in SCHEMES if s in self.schemes]
        self.p_f = [int(p) for p in self.p_f]
        self.snr_db = [float(s) for s in self.snr_db]
        # fail early on bad nested overrides
        self.ckm_config()
        self.estimation_config()

    # -- derived objects -----------------------------------------------------

    def arrays(self) -> tuple[ArrayConfig, ArrayConfig]:
        axis = tuple(float(a) for a in self.array_axis)
        return (
            ArrayConfig(self.n_rx, self.spacing, self.wavelength, axis),
            ArrayConfig(self.n_tx, self.spacing, self.wavelength, axis),
        )

    def ofdm_construct(self) -> OfdmConfig:
        return OfdmConfig.from_bandwidth(self.n_sc_construct, self.bandwidth)

    def ofdm_comm(self) -> OfdmConfig:
        return OfdmConfig.from_bandwidth(self.n_sc_comm, self.bandwidth)

    def ckm_config(self) -> CkmConfig:
        rx, tx = self.arrays()
        try:
            return CkmConfig(rx, tx, self.ofdm_construct(), **self.ckm)
        except TypeError as exc:
            raise ConfigError(f"bad ckm options: {exc}") from None

    def estimation_config(self) -> EstimationConfig:
        opts = dict(self.estimation)
        if "omp_oversample" in opts:
            opts["omp_oversample"] = tuple(opts["omp_oversample"])
        try:
            return EstimationConfig(**opts)
        except TypeError as exc:
            raise ConfigError(f"bad estimation options: {exc}") from None

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def hash(self) -> str:
        """Digest of the settings that influence results (not workers or paths)."""
        d = self.to_dict()
        for key in ("workers", "output_dir"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment file; non-None ``overrides`` take precedence."""
    import yaml

    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(merged)


# -- environments of the comparison table ------------------------------------

TABLE_ENVIRONMENTS = {
    "Sparse": {"n_scatterers": 1, "cluster_std": 10.0, "p_f": [20]},
    "1 large cluster": {"centers": [[0.0, -200.0]], "n_scatterers": 50, "cluster_std": 20.0, "p_f": [20]},
    "4 small clusters": {"n_scatterers": 50, "cluster_std": 10.0, "p_f": [20]},
    "4 large clusters": {"n_scatterers": 50, "cluster_std": 20.0, "p_f": [15]},
}


def table_configs(base: ExperimentConfig, snr_db=(20.0, 0.0)) -> dict[str, ExperimentConfig]:
    return {
        name: base.replace(name=name, snr_db=list(snr_db), **opts)
        for name, opts in TABLE_ENVIRONMENTS.items()
    }


# -- seeds ---------------------------------------------------------------------


def trial_seed(master: int, index: int) -> int:
    """Per-trial seed derived from ``(master, index)`` only."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _streams(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


# -- one trial -------------------------------------------------------------------


def trial_environment(cfg: ExperimentConfig, seed: int) -> Environment:
    env_seed = cfg.seed if cfg.fixed_environment else _streams(seed, 1)[0]
    return sample_environment(cfg.centers, cfg.n_scatterers, cfg.cluster_std, env_seed)


def historical_positions(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    """``n_obs`` Tx positions uniform in the region, away from cluster centres."""
    rng = np.random.default_rng(_streams(seed, 2)[1])
    lo, hi = np.asarray(cfg.hist_region, dtype=float)
    centers = np.asarray(cfg.centers, dtype=float).reshape(-1, 2)
    out = []
    for _ in range(100_000):
        p = rng.uniform(lo, hi)
        if np.min(np.hypot(*(centers - p).T)) >= cfg.hist_exclusion:
            out.append(p)
            if len(out) == cfg.n_obs:
                return np.array(out)
    raise ConfigError("historical region leaves no room outside the exclusion discs")


def historical_samples(cfg: ExperimentConfig, env: Environment, seed: int) -> list[HistoricalSample]:
    rx, tx = cfg.arrays()
    ofdm = cfg.ofdm_construct()
    p_rx = np.asarray(cfg.hist_rx, dtype=float)
    err_seeds = np.random.SeedSequence(_streams(seed, 3)[2]).generate_state(cfg.n_obs)
    samples = []
    for p_tx, s in zip(historical_positions(cfg, seed), err_seeds):
        ref = first_arrival(env, p_tx, p_rx)
        h = assemble_channel(env, p_tx, p_rx, tx, rx, ofdm, ref)
        samples.append(HistoricalSample(perturb_channel(h, cfg.hist_error_db, int(s)), p_tx, p_rx, ref))
    return samples


def target_channel(cfg: ExperimentConfig, env: Environment):
    """Full-band target channel and its timing reference."""
    rx, tx = cfg.arrays()
    ref = first_arrival(env, cfg.target_tx, cfg.target_rx)
    return assemble_channel(env, cfg.target_tx, cfg.target_rx, tx, rx, cfg.ofdm_comm(), ref), ref


def run_trial(cfg: ExperimentConfig, index: int) -> dict:
    """Run trial ``index``; returns ``{"index", "seed", "records", "error"}``.

    ``records`` maps ``(scheme, p_f, snr_db)`` to the RMSE in dB.  Failures
    are captured in ``error`` rather than raised.
    """
    seed = trial_seed(cfg.seed, index)
    out = {"index": index, "seed": seed, "records": {}, "error": None}
    try:
        out["records"] = _trial_records(cfg, seed)
    except Exception as exc:  # a broken trial must not sink the sweep
        log.exception("trial %d failed", index)
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _trial_records(cfg: ExperimentConfig, seed: int) -> dict:
    rx, tx = cfg.arrays()
    env = trial_environment(cfg, seed)
    ranges = {}
    if {"ClusterCKM", "CoarseCKM"} & set(cfg.schemes):
        samples = historical_samples(cfg, env, seed)
        ckm_cfg = cfg.ckm_config()
        for scheme, coarse in (("ClusterCKM", False), ("CoarseCKM", True)):
            if scheme in cfg.schemes:
                ckm = build_ckm(samples, ckm_cfg, coarse=coarse)
                ranges[scheme] = query(ckm, cfg.target_tx, cfg.target_rx, tx, rx, cfg.margin)
    h, ref = target_channel(cfg, env)
    ofdm = cfg.ofdm_comm()
    est_cfg = cfg.estimation_config()
    pilot_seed, noise_seed = _streams(seed, 5)[3:5]
    X = pilot_matrix(cfg.n_tx, cfg.pilot_len, pilot_seed)
    noise_seeds = np.random.SeedSequence(noise_seed).generate_state(len(cfg.snr_db) * len(cfg.p_f))
    records = {}
    k = 0
    for snr in cfg.snr_db:
        noise_var = snr_to_noise_var(h, snr)
        for p_f in cfg.p_f:
            y, _ = transmit(h, PilotConfig(X, p_f), noise_var, int(noise_seeds[k]))
            k += 1
            grid = LinkGrid(rx, tx, ofdm, p_f, ref)
            for scheme in cfg.schemes:
                if scheme in ranges:
                    est = estimate_clusterckm(y, ranges[scheme], X, est_cfg, grid, noise_var=noise_var)
                elif scheme == "LS":
                    est = estimate_ls(y, X, p_f, ofdm.n_sc)
                else:
                    est = estimate_omp(y, X, est_cfg, p_f, ofdm.n_sc, noise_var)
                records[(scheme, p_f, snr)] = rmse_db(est, h)
    return records


# -- aggregation and results -----------------------------------------------------


def round_sig(x: float, digits: int = 6) -> float:
    return float(f"{x:.{digits}g}")


@dataclass
class ResultRow:
    scheme: str
    p_f: int
    snr_db: float
    rmse_db_mean: float
    rmse_db_std: float
    trials: int
    seed: int
    environment: str = ""


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    config_hash: str = ""
    seed: int = 0
    timestamp: str = ""
    failed_trials: list = field(default_factory=list)
    trial_seeds: list = field(default_factory=list)

    def lookup(self, scheme: str, p_f: int, snr_db: float, environment: str = "") -> ResultRow:
        for r in self.rows:
            if (r.scheme, r.p_f, r.snr_db, r.environment) == (scheme, p_f, float(snr_db), environment):
                return r
        raise KeyError((scheme, p_f, snr_db, environment))

    def mean(self, scheme: str, p_f: int, snr_db: float, environment: str = "") -> float:
        return self.lookup(scheme, p_f, snr_db, environment).rmse_db_mean


def aggregate_db(values, mode: str = "linear") -> tuple[float, float]:
    """Mean RMSE in dB (of the linear ratios by default) and the std of the dB values."""
    v = np.asarray(values, dtype=float)
    if mode == "linear":
        mean = 10 * math.log10(float(np.mean(10 ** (v / 10))))
    else:
        mean = float(np.mean(v))
    return mean, float(np.std(v))


def summarize(cfg: ExperimentConfig, trials: list[dict], environment: str = "") -> list[ResultRow]:
    ok = [t for t in sorted(trials, key=lambda t: t["index"]) if t["error"] is None]
    rows = []
    for snr in cfg.snr_db:
        for p_f in cfg.p_f:
            for scheme in cfg.schemes:
                vals = [t["records"][(scheme, p_f, snr)] for t in ok]
                if not vals:
                    continue
                mean, std = aggregate_db(vals, cfg.aggregate)
                rows.append(
                    ResultRow(scheme, p_f, snr, round_sig(mean), round_sig(std), len(vals), cfg.seed, environment)
                )
    return rows


def run_trials(cfg: ExperimentConfig) -> list[dict]:
    indices = list(range(cfg.trials))
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_trial, [cfg] * len(indices), indices))
    else:
        results = [run_trial(cfg, i) for i in indices]
    return sorted(results, key=lambda t: t["index"])


def _result(cfg: ExperimentConfig, rows, trials) -> ExperimentResult:
    return ExperimentResult(
        rows=rows,
        config_hash=cfg.hash(),
        seed=cfg.seed,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        failed_trials=[{"index": t["index"], "error": t["error"]} for t in trials if t["error"]],
        trial_seeds=[t["seed"] for t in trials],
    )


def sweep_pf(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean RMSE per (scheme, p_f, SNR) over ``cfg.trials`` trials."""
    trials = run_trials(cfg)
    return _result(cfg, summarize(cfg, trials), trials)


def table_environments(cfgs: dict[str, ExperimentConfig]) -> ExperimentResult:
    """Run every named environment config; rows carry the environment name."""
    rows, trials_all, failed = [], [], []
    first = None
    for name, cfg in cfgs.items():
        first = first or cfg
        trials = run_trials(cfg)
        rows += summarize(cfg, trials, environment=name)
        trials_all += trials
        failed += [{"environment": name, "index": t["index"], "error": t["error"]} for t in trials if t["error"]]
    digest = hashlib.sha256("".join(c.hash() for c in cfgs.values()).encode()).hexdigest()[:16]
    res = _result(first, rows, [])
    res.config_hash = digest
    res.failed_trials = failed
    res.trial_seeds = sorted({t["seed"] for t in trials_all})
    return res


# -- emission --------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def csv_text(result: ExperimentResult, with_environment: bool | None = None) -> str:
    if with_environment is None:
        with_environment = any(r.environment for r in result.rows)
    cols = (("environment",) if with_environment else ()) + CSV_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in result.rows:
        w.writerow([_fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


def emit_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(result))


def read_csv(path) -> list[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = []
        for d in csv.DictReader(fh):
            rows.append(
                ResultRow(
                    scheme=d["scheme"],
                    p_f=int(d["p_f"]),
                    snr_db=float(d["snr_db"]),
                    rmse_db_mean=float(d["rmse_db_mean"]),
                    rmse_db_std=float(d["rmse_db_std"]),
                    trials=int(d["trials"]),
                    seed=int(d["seed"]),
                    environment=d.get("environment", ""),
                )
            )
    return rows


def plotdata(result: ExperimentResult) -> dict:
    """Per-scheme ``x = p_f``, ``y = mean RMSE`` series, one per (environment, SNR)."""
    series = {}
    for r in result.rows:
        key = r.scheme if not r.environment else f"{r.environment}/{r.scheme}"
        s = series.setdefault((key, r.snr_db), {"scheme": r.scheme, "environment": r.environment,
                                                 "snr_db": r.snr_db, "x": [], "y": []})
        s["x"].append(r.p_f)
        s["y"].append(r.rmse_db_mean)
    return {"x_label": "p_f", "y_label": "RMSE (dB)", "series": list(series.values())}


def emit_plotdata(result: ExperimentResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plotdata(result), fh, indent=1)
        fh.write("\n")


def manifest(result: ExperimentResult, cfg_dicts) -> dict:
    return {
        "config_hash": result.config_hash,
        "seed": result.seed,
        "timestamp": result.timestamp,
        "trial_seeds": result.trial_seeds,
        "failed_trials": result.failed_trials,
        "configs": cfg_dicts,
    }


def output_dir(cfg: ExperimentConfig | None = None, explicit=None) -> str:
    """Explicit path, else the config's, else ``$CLUSTERCKM_OUTPUT_DIR``, else ``./results``."""
    path = explicit or (cfg.output_dir if cfg else None) or os.environ.get(OUTPUT_DIR_ENV) or "results"
    os.makedirs(path, exist_ok=True)
    return path


def write_outputs(result: ExperimentResult, cfg_dicts, directory: str, stem: str) -> dict:
    paths = {
        "csv": os.path.join(directory, f"{stem}.csv"),
        "plotdata": os.path.join(directory, f"{stem}.plot.json"),
        "manifest": os.path.join(directory, f"{stem}.manifest.json"),
    }
    emit_csv(result, paths["csv"])
    emit_plotdata(result, paths["plotdata"])
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest(result, cfg_dicts), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
