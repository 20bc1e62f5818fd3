import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gcsl import checkpoint
from gcsl.calibration import read_predictions
from gcsl.cli import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    UsageError,
    boundary_grid,
    build_train_config,
    load_trial_data,
    main,
    validate_run_config,
    worker_count,
)
from gcsl.data import read_csv
from gcsl.layer import GenerativeParams, associate, posterior_disc
from gcsl.model import HybridModel
from gcsl.numerics import CholFactor
from gcsl.trainer import evaluate, init_model

from builders import random_model

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def small_config(tmp_path, **train):
    doc = {
        "name": "small",
        "trials": 2,
        "data": {"source": "two_gaussians", "n_train": 40, "n_test": 200, "seed": 3, "mask": "extremal:5"},
        "train": {"mode": "standalone_tractable", "epochs": 50, "learning_rate": 0.1, "lambda": 10.0, "seed": 1,
                  **train},
    }
    return write_json(tmp_path / "run.json", doc)


def two_class_model():
    gen = GenerativeParams(np.zeros(2), [[0.0, -0.5], [0.0, 0.5]], CholFactor.from_matrix(2 * np.eye(2)))
    return HybridModel(associate(gen), gen)


@pytest.fixture
def ckpt(tmp_path):
    path = tmp_path / "model.json"
    checkpoint.save(two_class_model(), path)
    return str(path)


def test_gen_data_two_gaussian_setup(tmp_path, capsys):
    code = main(["gen-data", "--n-train", "100", "--n-test", "1000", "--mask", "extremal:5", "--seed", "1",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    tr, te = read_csv(tmp_path / "train.csv"), read_csv(tmp_path / "test.csv")
    assert len(tr) == 100 and tr.n_labeled == 10 and len(te) == 1000 and te.n_labeled == 1000
    assert "10 labeled" in capsys.readouterr().out


def test_gen_data_empty_and_deterministic(tmp_path):
    assert main(["gen-data", "--n-train", "0", "--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert (tmp_path / "a" / "train.csv").read_text() == "f1,f2,label\n"
    for d in ("b", "c"):
        main(["gen-data", "--seed", "7", "--mask", "random:3", "--out-dir", str(tmp_path / d)])
    for name in ("train.csv", "test.csv"):
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_gen_data_bad_mask(tmp_path, capsys):
    assert main(["gen-data", "--mask", "top:3", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert "usage:" in capsys.readouterr().err


def test_train_writes_outputs(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", cfg, "--out-dir", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "mean accuracy" in text and "over 2 trials" in text
    summary = json.loads((out / "summary.json").read_text())
    assert summary["trials"] == 2 and 0 <= summary["mean_accuracy"] <= 1
    for t in range(2):
        tdir = out / f"trial_{t:03d}"
        assert len((tdir / "history.csv").read_text().splitlines()) == 51
        assert len(read_predictions(tdir / "predictions.csv")) == 200
        assert checkpoint.load_config(tdir / "checkpoint.json")["trial"] == t
    rows = (out / "trials.csv").read_text().splitlines()
    assert rows[0] == "trial,seed,accuracy" and rows[1].startswith("0,1,") and rows[2].startswith("1,2,")


def test_train_zero_epochs_checkpoint_is_init(tmp_path):
    cfg = small_config(tmp_path, epochs=0)
    out = tmp_path / "out"
    assert main(["train", cfg, "--out-dir", str(out), "--trials", "1"]) == EXIT_OK
    doc = json.loads(open(cfg).read())
    data, _ = load_trial_data(doc, 0, str(tmp_path))
    want = init_model(data, build_train_config(doc, 0))
    got = checkpoint.load(out / "trial_000" / "checkpoint.json")
    for k, v in want.arrays().items():
        assert np.array_equal(got.arrays()[k], v), k


def test_train_missing_config(tmp_path, capsys):
    assert main(["train", str(tmp_path / "nope.json")]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage: gcsl train" in err


def test_train_invalid_config(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", {"data": {"source": "two_gaussians"}, "train": {"epochs": -1}})
    assert main(["train", bad]) == EXIT_USAGE
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["train", str(tmp_path / "broken.json")]) == EXIT_USAGE


def test_train_divergence_names_epoch(tmp_path, capsys):
    cfg = small_config(tmp_path, learning_rate=1e6)
    assert main(["train", cfg, "--out-dir", str(tmp_path / "out"), "--trials", "1"]) == EXIT_RUNTIME
    assert "epoch" in capsys.readouterr().err


def test_train_csv_source_relative_to_config(tmp_path):
    main(["gen-data", "--n-train", "30", "--n-test", "50", "--mask", "extremal:3", "--out-dir", str(tmp_path / "d")])
    doc = {"trials": 1, "data": {"source": "csv", "train": "d/train.csv", "test": "d/test.csv"},
           "train": {"epochs": 5}}
    cfg = write_json(tmp_path / "csvrun.json", doc)
    assert main(["train", cfg, "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "trial_000" / "checkpoint.json").exists()


def test_eval_matches_evaluate(tmp_path, ckpt):
    main(["gen-data", "--n-test", "300", "--seed", "2", "--out-dir", str(tmp_path)])
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "test.csv"), "--out-dir", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    acc, _ = evaluate(two_class_model(), read_csv(tmp_path / "test.csv"))
    assert metrics["accuracy"] == acc and metrics["n"] == 300
    assert len(read_predictions(tmp_path / "predictions.csv")) == 300


def test_eval_errors(tmp_path, ckpt):
    (tmp_path / "empty.csv").write_text("f1,f2,label\n")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "empty.csv")]) == EXIT_RUNTIME
    (tmp_path / "three.csv").write_text("f1,f2,f3,label\n1,2,3,1\n")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(tmp_path / "three.csv")]) == EXIT_RUNTIME
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(tmp_path / "three.csv")]) == 1


def _calibrate(tmp_path, body, bins):
    path = tmp_path / "pred.csv"
    path.write_text("confidence,predicted,true\n" + body)
    code = main(["calibrate", "--predictions", str(path), "--bins", str(bins), "--out-dir", str(tmp_path)])
    ece_row = (tmp_path / "ece.csv").read_text().splitlines()[1].split(",") if code == 0 else None
    return code, ece_row


def test_calibrate_examples(tmp_path):
    code, row = _calibrate(tmp_path, "1,1,1\n1,2,2\n", 10)
    assert code == 0 and float(row[2]) == 0.0
    code, row = _calibrate(tmp_path, "0.3,1,2\n0.4,2,2\n0.9,1,1\n0.8,2,1\n", 2)
    assert float(row[2]) == 0.25
    code, row = _calibrate(tmp_path, "0.6,1,1\n0.7,1,2\n0.95,2,2\n", 1)
    assert float(row[2]) == pytest.approx(abs(2 / 3 - 0.75), abs=1e-15)
    assert len((tmp_path / "reliability.csv").read_text().splitlines()) == 2


def test_calibrate_errors(tmp_path, capsys):
    code, _ = _calibrate(tmp_path, "0.5,1,1\nx,1,1\n", 10)
    assert code == EXIT_RUNTIME and ":3:" in capsys.readouterr().err
    code, _ = _calibrate(tmp_path, "0.5,1,1\n", 0)
    assert code == EXIT_USAGE


def test_boundary_symmetry_and_values(tmp_path, ckpt):
    out = tmp_path / "b.csv"
    assert main(["boundary", "--checkpoint", ckpt, "--x1=-2:2:5", "--x2=-1:1:3", "--out", "b.csv",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (15, 3)
    assert np.array_equal(rows[:3, 0], [-2, -2, -2])
    on_axis = rows[rows[:, 1] == 0.0]
    np.testing.assert_allclose(on_axis[:, 2], 0.5, atol=1e-10)
    m = two_class_model()
    for x1, x2, p in rows:
        assert p == posterior_disc([x1, x2], m.disc)[0]


def test_boundary_empty_and_errors(tmp_path, ckpt):
    assert main(["boundary", "--checkpoint", ckpt, "--x1=0:1:0", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "boundary.csv").read_text() == "x1,x2,p_class1\n"
    assert main(["boundary", "--checkpoint", ckpt, "--x1", "bad", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    path3 = tmp_path / "m3.json"
    checkpoint.save(random_model(np.random.default_rng(0), 2, 3), path3)
    assert main(["boundary", "--checkpoint", str(path3), "--out-dir", str(tmp_path)]) == EXIT_RUNTIME
    with pytest.raises(Exception):
        boundary_grid(random_model(np.random.default_rng(0), 2, 3), [0.0], [0.0])


def test_generate(tmp_path, ckpt):
    base = ["generate", "--checkpoint", ckpt, "--out-dir", str(tmp_path)]
    assert main(base + ["--n", "0", "--out", "e.csv"]) == EXIT_OK
    assert (tmp_path / "e.csv").read_text() == "f1,f2,label\n"
    for c, mean in ((1, [0.0, -0.5]), (2, [0.0, 0.5])):
        assert main(base + ["--n", "2000", "--class", str(c), "--seed", "4", "--out", f"s{c}.csv"]) == EXIT_OK
        ds = read_csv(tmp_path / f"s{c}.csv")
        assert np.all(ds.labels == c - 1)
        assert np.linalg.norm(ds.features.mean(axis=0) - mean) < 0.15
    main(base + ["--n", "50", "--seed", "9", "--out", "r1.csv"])
    main(base + ["--n", "50", "--seed", "9", "--out", "r2.csv"])
    assert (tmp_path / "r1.csv").read_bytes() == (tmp_path / "r2.csv").read_bytes()


def test_generate_errors(tmp_path, ckpt, capsys):
    base = ["generate", "--checkpoint", ckpt, "--out-dir", str(tmp_path)]
    assert main(base + ["--class", "3"]) == EXIT_USAGE
    assert main(base + ["--step-size", "0"]) == EXIT_USAGE
    assert main(base + ["--n", "2", "--step-size", "50", "--noise-std", "0", "--steps", "2000"]) == EXIT_RUNTIME
    assert "step" in capsys.readouterr().err


def test_gradcheck(tmp_path, capsys):
    assert main(["gradcheck", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    for block in ("disc.weights", "disc.biases", "gen.mix_logits", "gen.means", "gen.precision"):
        assert block in out
    assert "passed" in out
    assert main(["gradcheck", "--tolerance", "0", "--out-dir", str(tmp_path)]) == EXIT_RUNTIME
    rows = (tmp_path / "gradcheck.csv").read_text().splitlines()
    assert len(rows) == 6 and all(r.endswith(",0") for r in rows[1:])
    assert main(["gradcheck", "--config", small_config(tmp_path), "--out-dir", str(tmp_path)]) == EXIT_OK


def test_inputs_are_not_mutated(tmp_path, ckpt):
    before = open(ckpt, "rb").read()
    main(["generate", "--checkpoint", ckpt, "--n", "5", "--out-dir", str(tmp_path)])
    main(["boundary", "--checkpoint", ckpt, "--x1=0:1:2", "--x2=0:1:2", "--out-dir", str(tmp_path)])
    assert open(ckpt, "rb").read() == before


def test_checkpoint_round_trip(tmp_path):
    for m in (random_model(np.random.default_rng(1), 3, 2),
              random_model(np.random.default_rng(2), 2, 3, net_sizes=[4, 2], activation="relu")):
        path = tmp_path / "c.json"
        checkpoint.save(m, path, {"note": "x"})
        back = checkpoint.load(path)
        for k, v in m.arrays().items():
            assert np.array_equal(back.arrays()[k], v)
        assert checkpoint.load_config(path) == {"note": "x"}


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(Exception):
        checkpoint.load(path)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("GCSL_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("GCSL_THREADS", "0")
    assert 1 <= worker_count(100) <= (os.cpu_count() or 1)
    monkeypatch.setenv("GCSL_THREADS", "many")
    with pytest.raises(UsageError):
        worker_count(4)


def test_parallel_trials_match_serial(tmp_path, monkeypatch):
    cfg = small_config(tmp_path)
    monkeypatch.setenv("GCSL_THREADS", "1")
    main(["train", cfg, "--out-dir", str(tmp_path / "s")])
    monkeypatch.setenv("GCSL_THREADS", "2")
    main(["train", cfg, "--out-dir", str(tmp_path / "p")])
    assert (tmp_path / "s" / "trials.csv").read_text() == (tmp_path / "p" / "trials.csv").read_text()


def test_shipped_configs_validate():
    for name in sorted(os.listdir(os.path.join(REPO, "configs"))):
        with open(os.path.join(REPO, "configs", name)) as fh:
            doc = json.load(fh)
        validate_run_config(doc, name)
        build_train_config(doc)


def test_adaptive_moment_alias():
    doc = {"data": {"source": "two_gaussians"}, "train": {"optimizer": "adaptive_moment", "seed": 5}}
    cfg = build_train_config(doc, 2)
    assert cfg.optimizer == "adam" and cfg.seed == 7


def test_console_script_usage_error():
    proc = subprocess.run([sys.executable, "-m", "gcsl.cli", "train"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "usage:" in proc.stderr
