import json

import numpy as np
import pytest

from streamcl import cli, datagen, experiment, metrics
from streamcl.dataio import load_csv

TINY = """\
experiment.instance = C
experiment.seed = 3
data.length = 400
data.supervised = true
phases.warm_up = 100
phases.update = 250
phases.evaluation = 50
model.encoder = 6
model.predictor = 6
buffer.novelty_capacity = 40
train.epochs_a_1 = 4
train.epochs_p_1 = 4
train.epochs_a_2 = 2
train.epochs_p_2 = 2
"""

FULL_A = """\
experiment.instance = A
model.encoder = 6
model.predictor = 6
train.epochs_a_1 = 1
train.epochs_p_1 = 1
output.sample_errors = true
data.supervised = true
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_lines(path):
    return [json.loads(l) for l in open(path).read().splitlines() if l.strip()]


# ---- generate


def test_generate_writes_series(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert cli.main(["generate", "--out", str(out), "--seed", "5"]) == 0
    data = load_csv(out)
    assert len(data) == 12000 and data.dims == 7 and not data.supervised
    cfg, phases = datagen.parse_provenance(data.meta["comments"][0])
    assert cfg.seed == 5 and cfg.length == 12000
    np.testing.assert_array_equal(datagen.generate_series(cfg, phases).X, data.X)


def test_generate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cfg = write(tmp_path, "g.cfg", "data.length = 200\ndata.seed = 2\n")
    for p in (a, b):
        assert cli.main(["generate", "--config", cfg, "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


# ---- run


def test_run_frozen_instance_has_no_forgetting(tmp_path):
    cfg = write(tmp_path, "a.cfg", TINY.replace("instance = C", "instance = A"))
    out = tmp_path / "r.jsonl"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 0
    (rec,) = read_lines(out)
    m = rec["metrics"]
    assert m["update_count_ae"] == 0 and m["update_count_pred"] == 0
    assert not any(k.startswith("forgetting") for k in m)


def test_run_writes_checkpoint(tmp_path):
    from streamcl import engine
    ckpt = tmp_path / "model.pkl"
    cfg = write(tmp_path, "c.cfg", TINY + f"output.checkpoint = {ckpt}\n")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "r.jsonl")]) == 0
    model = engine.load_checkpoint(ckpt)
    (rec,) = read_lines(tmp_path / "r.jsonl")
    assert model.autoencoder.update_count == rec["metrics"]["update_count_ae"]


def test_run_twice_is_identical(tmp_path):
    cfg = write(tmp_path, "c.cfg", TINY)
    out = tmp_path / "r.jsonl"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 0
    a, b = read_lines(out)
    assert a["metrics"] == b["metrics"] and a["updates"] == b["updates"]
    assert a["metrics"]["update_count_ae"] >= 1 and "forgetting_ratio_pred" in a["metrics"]


def test_config_hash_ignores_seed_and_formatting():
    a = experiment.ExperimentConfig.from_text(TINY)
    b = experiment.ExperimentConfig.from_text("# comment\n" + TINY.replace(" = ", "=")
                                              .replace("seed=3", "seed=9"))
    c = a.replace({"ewc.gamma": "0.8"})
    d = a.replace({"output.sample_errors": "true"})
    assert a.hash == b.hash == d.hash != c.hash and b.seed == 9


def test_experiment_defaults():
    ecfg = experiment.ExperimentConfig.from_dict({}).engine_config()
    assert (ecfg.gamma, ecfg.lambda_a, ecfg.epochs_a_1, ecfg.epochs_p_2) == (0.9, 200.0, 512, 512)
    assert (ecfg.batch_1, ecfg.batch_2, ecfg.capacity_a, ecfg.alpha_a) == (32, 16, 1000, 0.95)


def test_config_errors_exit_one(tmp_path, capsys):
    assert cli.main(["run"]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert cli.main(["run", "--config", write(tmp_path, "x.cfg", "bogus.key = 1\n")]) == 1
    assert cli.main(["run", "--config", write(tmp_path, "y.cfg", "ewc.gamma = 2\n")]) == 1


def test_runtime_failure_exits_two(tmp_path, monkeypatch, capsys):
    def boom(cfg, data=None):
        raise FloatingPointError("diverged")
    monkeypatch.setattr(experiment, "run_experiment", boom)
    assert cli.main(["run", "--config", write(tmp_path, "c.cfg", TINY)]) == 2
    assert "diverged" in capsys.readouterr().err


# ---- grid


def test_table_grid_cell_count():
    text = TINY + ("grid.buffer.novelty_capacity = 400, 600, 800, 1000, 1200, 1400, 1600, 1800\n"
                   "grid.threshold.alpha = 0.5, 0.65, 0.8, 0.95, 1.1, 1.25, 1.4\n"
                   "grid.repeats = 20\n")
    cells = experiment.GridConfig.from_text(text).cells()
    assert len(cells) == 1120
    assert len({(c.hash, c.seed) for c in cells}) == 1120
    assert sorted({c.seed for c in cells}) == list(range(3, 23))


def test_singleton_grid_equals_repeated_runs(tmp_path):
    grid = write(tmp_path, "g.cfg", TINY + "grid.ewc.gamma = 0.9\ngrid.repeats = 2\n")
    out = tmp_path / "grid.jsonl"
    assert cli.main(["grid", "--config", grid, "--out", str(out)]) == 0
    recs = read_lines(out)
    assert [r["seed"] for r in recs] == [3, 4]
    single = experiment.run_experiment(experiment.ExperimentConfig.from_text(TINY))
    assert recs[0]["metrics"] == single["metrics"]
    assert not (tmp_path / "grid.jsonl.partial").exists()
    assert len(read_lines(tmp_path / "grid.jsonl.timing")) == 2


def test_failed_cells_are_recorded(tmp_path):
    grid = write(tmp_path, "g.cfg",
                 TINY + f"grid.data.source = generated, {tmp_path / 'nope.csv'}\n")
    out = tmp_path / "grid.jsonl"
    assert cli.main(["grid", "--config", grid, "--out", str(out)]) == 0
    status = sorted(r["status"] for r in read_lines(out))
    assert status == ["failed", "ok"]


def test_grid_rejects_unknown_axis():
    with pytest.raises(Exception):
        experiment.GridConfig.from_text("grid.nope = 1, 2\n")


# ---- report


def test_report_single_run(tmp_path, capsys):
    cfg = write(tmp_path, "a.cfg", FULL_A)
    res = tmp_path / "r.jsonl"
    assert cli.main(["run", "--config", cfg, "--out", str(res)]) == 0
    (rec,) = read_lines(res)
    rep = experiment.report(res, tmp_path / "rep")
    stats = rep["summary"]["A"]
    for k, v in rec["metrics"].items():
        assert stats[k][0] == float(v) and stats[k][3] == 1
    ae = rep["windows"][(rec["config_hash"], rec["seed"], "ae")]
    assert len(ae) == 12
    # independent second pass over the stored per-sample errors
    errs = rec["sample_errors"]["ae"]
    for i, v in enumerate(ae):
        chunk = errs[i * 1000:(i + 1) * 1000]
        assert abs(v - sum(chunk) / len(chunk)) < 1e-12
    assert abs(np.mean(errs[11000:]) - rec["metrics"]["prediction_error_ae"]) < 1e-12
    for name in ("summary.csv", "windows.csv", "parallel.csv"):
        assert (tmp_path / "rep" / name).stat().st_size > 0
    assert cli.main(["report", str(res), "--out", str(tmp_path / "rep2")]) == 0


def test_report_empty_file_errors(tmp_path, capsys):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert cli.main(["report", str(empty), "--out", str(tmp_path / "o")]) != 0
    assert "empty" in capsys.readouterr().err


def test_window_means_helper_agrees_with_metrics():
    e = np.random.default_rng(0).uniform(size=3000)
    rec = {"sample_errors": {"ae": e.tolist()}, "windows": {}}
    assert experiment.record_windows(rec)["ae"] == metrics.window_means(e)
