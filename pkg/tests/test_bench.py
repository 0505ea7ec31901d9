import json
import math

import numpy as np
import pytest

from clusterckm.bench import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    ResultRow,
    aggregate_db,
    csv_text,
    emit_csv,
    load_config,
    plotdata,
    read_csv,
    run_trial,
    sweep_pf,
    table_configs,
    trial_seed,
    write_outputs,
)

# small enough to run in a few seconds per trial
SMALL = dict(n_sc_comm=420, p_f=[4, 12], snr_db=[10.0], trials=2, n_obs=2, n_scatterers=10)


def test_trial_seed_depends_only_on_master_and_index():
    assert trial_seed(7, 3) == trial_seed(7, 3)
    seeds = {trial_seed(7, i) for i in range(50)}
    assert len(seeds) == 50
    assert trial_seed(7, 0) != trial_seed(8, 0)


def test_aggregate_linear_and_db():
    m, s = aggregate_db([-10.0, -20.0], "linear")
    assert abs(m - 10 * math.log10((0.1 + 0.01) / 2)) < 1e-12
    assert abs(s - 5.0) < 1e-12
    m, _ = aggregate_db([-10.0, -20.0], "db")
    assert m == -15.0


def test_config_validation_and_overrides(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(trials=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(schemes=["nope"])
    with pytest.raises(ConfigError):
        ExperimentConfig(p_f=[0])
    with pytest.raises(ConfigError):
        ExperimentConfig(aggregate="median")
    path = tmp_path / "c.yaml"
    path.write_text("trials: 3\np_f: [8]\nestimation:\n  refine_steps: 2\n")
    cfg = load_config(path, seed=5, trials=4, p_f=None)
    assert cfg.trials == 4 and cfg.p_f == [8] and cfg.seed == 5
    assert cfg.estimation_config().refine_steps == 2
    assert ExperimentConfig.from_dict(cfg.to_dict()).hash() == cfg.hash()
    envs = table_configs(ExperimentConfig())
    assert envs["1 large cluster"].centers == [[0.0, -200.0]]
    assert envs["4 large clusters"].p_f == [15]


def test_csv_roundtrip_and_header_only(tmp_path):
    rows = [
        ResultRow("LS", 8, 10.0, -9.81234567, 0.5, 3, 1),
        ResultRow("ClusterCKM", 8, 10.0, -20.0, 1.25, 3, 1),
    ]
    path = tmp_path / "r.csv"
    emit_csv(ExperimentResult(rows), path)
    back = read_csv(path)
    assert [r.scheme for r in back] == ["LS", "ClusterCKM"]
    assert back[0].rmse_db_mean == pytest.approx(-9.81235, abs=1e-9)
    assert back[1] == rows[1]
    empty = csv_text(ExperimentResult([]))
    assert empty == ",".join(CSV_COLUMNS) + "\n"


def test_plotdata_series():
    rows = [ResultRow("LS", p, 10.0, -p / 2, 0.0, 1, 0) for p in (1, 8)]
    rows += [ResultRow("OMP", 1, 10.0, -3.0, 0.0, 1, 0)]
    pd = plotdata(ExperimentResult(rows))
    by = {s["scheme"]: s for s in pd["series"]}
    assert by["LS"]["x"] == [1, 8] and by["LS"]["y"] == [-0.5, -4.0]
    assert by["OMP"]["x"] == [1]
    json.dumps(pd)


def test_run_trial_records_every_scheme():
    cfg = ExperimentConfig(**SMALL)
    out = run_trial(cfg, 0)
    assert out["error"] is None
    assert set(out["records"]) == {(s, p, 10.0) for s in cfg.schemes for p in cfg.p_f}
    assert all(np.isfinite(v) for v in out["records"].values())


def test_sweep_is_deterministic_serial_and_parallel(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    a = sweep_pf(cfg)
    b = sweep_pf(cfg)
    c = sweep_pf(cfg.replace(workers=2))
    assert csv_text(a) == csv_text(b) == csv_text(c)
    assert not a.failed_trials
    paths = write_outputs(a, [cfg.to_dict()], str(tmp_path), "s")
    man = json.loads(open(paths["manifest"]).read())
    assert man["trial_seeds"] == [trial_seed(cfg.seed, i) for i in range(cfg.trials)]
    assert len(read_csv(paths["csv"])) == len(cfg.schemes) * len(cfg.p_f)
