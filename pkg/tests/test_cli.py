import csv
import json

import numpy as np
import pytest
import yaml

from ddse.checkpoint import write_checkpoint
from ddse.cli import main
from ddse.model import Arch, EncoderModel
from ddse.pca import PcaBasis
from ddse.projection import project_model
from ddse.sparse_coding import SparseCodingProblem, objective, soft_shrink
from ddse.sparse_store import theoretical_op_ratio

SMALL = ["--m", "32", "--k", "1", "--s", "4", "--batch-size", "64"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--arch", "ddse", "--synthetic", "--epochs", "2", "--seed", "7",
                 "--out", str(out), *SMALL])
    assert code == 0
    return out


def test_train_smoke(trained):
    assert (trained / "model.ckpt").exists()
    rows = list(csv.reader(open(trained / "history.csv")))
    assert rows[0] == ["epoch", "train_loss", "val_error", "lr", "nonzeros"]
    assert len(rows) == 3


def test_train_default_dims_smoke(tmp_path):
    code = main(["train", "--arch", "ddse", "--synthetic", "--epochs", "2", "--seed", "7",
                 "--out", str(tmp_path)])
    assert code == 0
    assert len(list(csv.reader(open(tmp_path / "history.csv")))) == 3


def test_train_is_byte_deterministic(trained, tmp_path):
    code = main(["train", "--arch", "ddse", "--synthetic", "--epochs", "2", "--seed", "7",
                 "--out", str(tmp_path), *SMALL])
    assert code == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()


def test_train_missing_mnist(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("DDSE_MNIST_DIR", raising=False)
    assert main(["train", "--mnist", "--out", str(tmp_path)]) == 2
    assert "--mnist" in capsys.readouterr().err
    assert main(["train", "--mnist", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert "--mnist" in capsys.readouterr().err


def test_train_bad_config(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("learning_rat: 0.1\n")
    assert main(["train", "--config", str(cfg), "--synthetic", "--out", str(tmp_path)]) == 2


def test_eval_matches_training_record(trained, capsys):
    summary = json.loads((trained / "summary.json").read_text())
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--split", "train"]) == 0
    dense = capsys.readouterr().out.strip()
    assert dense == f"error_rate {summary['train_error']:.4f}"
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--sparse"]) == 0
    assert capsys.readouterr().out.strip() == dense


def test_eval_csv_and_missing_split(trained, tmp_path):
    out = tmp_path / "e.csv"
    ckpt = str(trained / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--split", "val", "--csv", str(out)]) == 0
    assert main(["eval", "--checkpoint", ckpt, "--split", "train", "--csv", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][:4] == ["checkpoint", "split", "path", "error_rate"]
    assert len(rows) == 3
    assert main(["eval", "--checkpoint", ckpt, "--split", "test"]) == 2


def test_eval_corrupt_checkpoint(trained, tmp_path):
    data = (trained / "model.ckpt").read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(data[: len(data) - 100])
    assert main(["eval", "--checkpoint", str(bad)]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "absent.ckpt")]) == 2


def write_csv(path, arr):
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def test_solve_identity(tmp_path, rng):
    x = rng.standard_normal(5)
    write_csv(tmp_path / "d.csv", np.eye(5))
    write_csv(tmp_path / "x.csv", x)
    out = tmp_path / "o"
    assert main(["solve", "--dictionary", str(tmp_path / "d.csv"), "--input",
                 str(tmp_path / "x.csv"), "--lam", "0.3", "--out", str(out)]) == 0
    np.testing.assert_allclose(np.loadtxt(out / "z.csv"), soft_shrink(x, 0.3), atol=1e-14)


def test_solve_huge_lambda(tmp_path, rng):
    write_csv(tmp_path / "d.csv", rng.standard_normal((4, 6)))
    write_csv(tmp_path / "x.csv", rng.standard_normal(4))
    out = tmp_path / "o"
    assert main(["solve", "--dictionary", str(tmp_path / "d.csv"), "--input",
                 str(tmp_path / "x.csv"), "--lam", "1e6", "--out", str(out)]) == 0
    np.testing.assert_array_equal(np.loadtxt(out / "z.csv"), np.zeros(6))
    assert len(list(csv.reader(open(out / "trace.csv")))) == 3  # header, z0, z1


def test_solve_objective_recomputed(tmp_path, rng):
    d = rng.standard_normal((8, 16))
    x = rng.standard_normal(8)
    write_csv(tmp_path / "d.csv", d)
    write_csv(tmp_path / "x.csv", x)
    out = tmp_path / "o"
    assert main(["solve", "--dictionary", str(tmp_path / "d.csv"), "--input",
                 str(tmp_path / "x.csv"), "--lam", "0.1", "--tol", "1e-10",
                 "--out", str(out)]) == 0
    z = np.loadtxt(out / "z.csv")
    last = float(list(csv.reader(open(out / "trace.csv")))[-1][1])
    # recompute the objective straight from the written files
    dn = d / np.linalg.svd(d, compute_uv=False)[0]
    recomputed = 0.5 * np.sum((x - dn @ z) ** 2) + 0.1 * np.sum(np.abs(z))
    assert abs(recomputed - last) < 1e-10
    assert abs(objective(SparseCodingProblem(d, 0.1), x, z) - last) < 1e-10


def test_solve_dimension_mismatch(tmp_path, capsys):
    write_csv(tmp_path / "d.csv", np.eye(3))
    write_csv(tmp_path / "x.csv", np.ones(4))
    assert main(["solve", "--dictionary", str(tmp_path / "d.csv"), "--input",
                 str(tmp_path / "x.csv"), "--lam", "0.1", "--out", str(tmp_path)]) == 2
    assert "dimension mismatch" in capsys.readouterr().err


def test_gradcheck_commands(capsys):
    assert main(["gradcheck", "--arch", "ddse", "--k", "1", "--n", "12", "--m", "16",
                 "--s", "3"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["gradcheck", "--arch", "fc_plain", "--k", "2"]) == 0
    assert main(["gradcheck", "--arch", "ddse", "--corrupt-backward"]) == 1
    assert "FAIL" in capsys.readouterr().out


def sweep_spec(tmp_path, **extra):
    doc = dict(archs=["ddse"], param="sparsity_ratio", values=[0.25], seeds=[0],
               m=8, k=1, max_epochs=2, batch_size=64, synth_n=16, synth_per_class=40,
               val_fraction=0.2, output_dir=str(tmp_path / "sweep"))
    doc.update(extra)
    path = tmp_path / "spec.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_sweep_single_cell(tmp_path):
    assert main(["sweep", str(sweep_spec(tmp_path))]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "runs.csv")))
    assert len(rows) == 1
    assert list(rows[0])[:5] == ["arch", "param", "value", "seed", "error"]
    summary = list(csv.DictReader(open(tmp_path / "sweep" / "summary.csv")))
    assert summary[0]["runs"] == "1"


def test_sweep_rejects_duplicate_seeds(tmp_path, capsys):
    assert main(["sweep", str(sweep_spec(tmp_path, seeds=[1, 1]))]) == 2
    assert "duplicate" in capsys.readouterr().err


def test_sweep_failed_run_exits_nonzero(tmp_path):
    # s above n passes spec validation but fails inside the run
    spec = sweep_spec(tmp_path, param="feature_dim", values=[4], s=40)
    assert main(["sweep", str(spec)]) == 1
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "runs.csv")))
    assert rows[0]["status"].startswith("failed")


@pytest.fixture(scope="module")
def default_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "default.ckpt"
    model = EncoderModel.random(Arch.DDSE, 784, 1024, 2, s=196, seed=0)
    project_model(model)
    write_checkpoint(path, model, PcaBasis.identity(784))
    return path


def test_bench_default_ratio(default_ckpt, tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--checkpoint", str(default_ckpt), "--repeats", "3", "--samples", "2",
                 "--csv", str(out)]) == 0
    assert "theoretical op ratio       0.346" in capsys.readouterr().out
    row = list(csv.DictReader(open(out)))[0]
    assert float(row["theoretical_ratio"]) == pytest.approx(1_003_520 / 2_899_968)


def test_bench_identity_pattern(tmp_path, capsys):
    s_mat = np.eye(6)
    model = EncoderModel.ddse_from_dictionary(s_mat, 1, 0.1, s=1)
    path = tmp_path / "id.ckpt"
    write_checkpoint(path, model, PcaBasis.identity(6))
    assert main(["bench", "--checkpoint", str(path), "--repeats", "3", "--samples", "4"]) == 0
    expected = theoretical_op_ratio(6, 6, 1, 1)
    assert expected == pytest.approx(3 * 1 * 6 / (36 + 36))
    assert f"theoretical op ratio       {expected:.6g}" in capsys.readouterr().out


def test_bench_rejects_few_repeats(default_ckpt):
    assert main(["bench", "--checkpoint", str(default_ckpt), "--repeats", "1"]) == 2
