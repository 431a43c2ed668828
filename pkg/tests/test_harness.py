import csv
import hashlib

import numpy as np
import pytest

from fedks import datastore as ds
from fedks import neuralnet as nn
from fedks import pod
from fedks.errors import InvalidArgument
from fedks.fedcore import TrainingHistory
from fedks.harness import (
    build_config,
    cmd_evaluate,
    cmd_generate,
    cmd_pod,
    cmd_train,
    evaluate,
    evaluate_checkpoint,
    main,
)
from fedks.harness.commands import error_field
from fedks.harness.config import parse_config_text

TINY = dict(transient_start=-5, t_production=5, t_test=2.5, seed=3)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# -- configuration -------------------------------------------------------------------------------


def test_defaults_follow_full_protocol():
    c = build_config()
    assert (c.L, c.N, c.dt, c.transient_start, c.t_production, c.t_test) == (22.0, 64, 2.5e-3, -250.0, 2500.0, 1250.0)
    assert (c.K, c.E, c.B, c.central_batch) == (10, 1, 32, 320)
    assert c.central_config().B == 320 and c.central_config().K == 1


def test_desk_preset():
    c = build_config("desk")
    assert c.t_production == 625 and c.rounds == 100


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nrounds = 7\nlatent_dim = 4  # trailing\nscheme = strided\n")
    c = build_config("desk", path, {"rounds": "9", "dealias": "true"})
    assert (c.rounds, c.latent_dim, c.scheme, c.dealias, c.t_production) == (9, 4, "strided", True, 625.0)


@pytest.mark.parametrize(
    "text", ["rounds 5", "nonsense = 1", "dealias = maybe", "latent_dim = 64", "r_sweep = 0,8", "mode = async"]
)
def test_config_errors(text, tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises((InvalidArgument, ValueError)):
        build_config(None, path)


def test_config_text_round_trip():
    c = build_config("desk", overrides={"hidden_dims": "32,16"})
    assert build_config(overrides=parse_config_text(c.to_text())) == c
    assert c.architecture().hidden_dims == (32, 16)


def test_unknown_preset():
    with pytest.raises(InvalidArgument):
        build_config("huge")


# -- generate -------------------------------------------------------------------------------------


def test_generate_same_seed_same_bytes(tmp_path, capsys):
    a = cmd_generate(build_config(overrides=TINY), str(tmp_path / "a.ksds"))
    b = cmd_generate(build_config(overrides=TINY), str(tmp_path / "b.ksds"))
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()  # noqa: E731
    assert digest(a) == digest(b)
    c = cmd_generate(build_config(overrides={**TINY, "seed": 4}), str(tmp_path / "c.ksds"))
    assert digest(a) != digest(c)
    splits = ds.load_dataset(a)
    assert (len(splits.train), len(splits.validation), len(splits.test)) == (16, 4, 10)
    assert "20 train+validation samples" in capsys.readouterr().out


def test_generate_reduced_run_counts(tmp_path):
    out = cmd_generate(build_config(overrides={"t_production": 250, "t_test": 25}), str(tmp_path / "r.ksds"))
    splits = ds.load_dataset(out)
    assert len(splits.train) + len(splits.validation) == 1_000
    assert len(splits.test) == 100


@pytest.mark.slow
def test_generate_defaults_counts(full_dataset):
    path, splits = full_dataset
    assert (len(splits.train), len(splits.validation), len(splits.test)) == (8_000, 2_000, 5_000)
    assert path.stat().st_size == ds.HEADER_BYTES + 8 * 64 * 15_000


def test_desk_counts(desk_splits):
    assert (len(desk_splits.train), len(desk_splits.validation), len(desk_splits.test)) == (2_000, 500, 1_000)


# -- pod ---------------------------------------------------------------------------------------------


def test_pod_csv(desk_dataset, desk_splits, tmp_path):
    out = cmd_pod(build_config("desk"), desk_dataset, str(tmp_path / "pod.csv"))
    rows = read_csv(out)
    assert rows[0] == ["R", "train_mse", "test_mse"]
    R = [int(r[0]) for r in rows[1:]]
    train = np.array([float(r[1]) for r in rows[1:]])
    test = np.array([float(r[2]) for r in rows[1:]])
    assert R == build_config().r_list and R[-1] == 64
    assert test[-1] < 1e-9
    assert np.all(np.diff(train) <= 0) and np.all(np.diff(test) <= 1e-15)
    basis = pod.compute_pod(desk_splits.train)
    for r, mse in zip(R[:-1], train[:-1]):
        oracle = pod.truncated_energy_mse(basis, r)
        assert abs(mse - oracle) <= 1e-8 * oracle


# -- train / evaluate ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(desk_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    cfg = build_config("desk", overrides={"rounds": 5, "latent_dim": 8, "output_dir": str(out)})
    central = cmd_train(cfg.replace(mode="central"), desk_dataset)
    fed = cmd_train(cfg.replace(mode="federated"), desk_dataset)
    return cfg, central, fed


def test_train_outputs(trained):
    cfg, (ck_c, hist_c), (ck_f, hist_f) = trained
    assert ck_c.name == "central_R8.fwts" and hist_f.name == "federated_R8_history.csv"
    for hist in (hist_c, hist_f):
        rows = read_csv(hist)
        assert rows[0] == ["round", "train_loss", "val_loss", "wall_ms"]
        assert len(rows) == 1 + cfg.rounds
    h = TrainingHistory.from_csv(hist_f)
    assert h.val_loss[-1] < h.val_loss[0]


def test_train_rerun_is_byte_identical(trained, desk_dataset, tmp_path):
    cfg, _, (ck_f, hist_f) = trained
    ck2, hist2 = cmd_train(cfg.replace(mode="federated"), desk_dataset, str(tmp_path / "again"))
    assert ck2.read_bytes() == ck_f.read_bytes()
    assert hist2.read_bytes() == hist_f.read_bytes()


def test_checkpoint_on_train_matches_logged_loss(trained, desk_splits):
    _, (ck_c, hist_c), (ck_f, hist_f) = trained
    for ck, hist in ((ck_c, hist_c), (ck_f, hist_f)):
        logged = TrainingHistory.from_csv(hist).train_loss[-1]
        got = evaluate_checkpoint(nn.load_checkpoint(ck), desk_splits, "train", "scaled")
        assert abs(got - logged) <= 1e-9


def test_evaluate_report(trained, desk_dataset, tmp_path):
    cfg, (ck_c, _), (ck_f, _) = trained
    out = cmd_evaluate(cfg, desk_dataset, {"ae_central": [str(ck_c)], "ae_federated": [str(ck_f)]}, [4], tmp_path)
    rows = read_csv(out)
    assert rows[0] == ["method", "R", "test_mse_physical"]
    keys = {(m, int(r)) for m, r, _ in rows[1:]}
    assert {("pod", 8), ("ae_central", 8), ("ae_federated", 8), ("pod", 4)} <= keys
    assert all(float(v) >= 0 for *_, v in rows[1:])
    err = ds.load_matrix(tmp_path / "ae_federated_R8_error.ksef")
    assert err.shape == (1_000, 64) and np.all(err >= 0)


def test_error_field_of_perfect_model(desk_splits):
    assert np.all(error_field(desk_splits.test, desk_splits.test) == 0.0)


def test_evaluate_pod_matches_module(desk_splits):
    report = evaluate(desk_splits, {}, [8])
    b = pod.compute_pod(desk_splits.train)
    assert report.mse[("pod", 8)] == pytest.approx(pod.reconstruction_mse(b, desk_splits.test, 8), rel=1e-12)


# -- CLI ----------------------------------------------------------------------------------------------------


def test_cli_round_trip(tmp_path, capsys):
    ds_path = tmp_path / "d.ksds"
    flags = ["--transient-start", "-5", "--t-production", "10", "--t-test", "5"]
    assert main(["generate", *flags, "--out", str(ds_path)]) == 0
    assert main(["pod", "--dataset", str(ds_path), "--out", str(tmp_path / "pod.csv"), "--r-sweep", "2,8,64"]) == 0
    common = ["--dataset", str(ds_path), "--rounds", "2", "--K", "4", "--hidden-dims", "16"]
    assert main(["train", *common, "--mode", "central", "--out", str(tmp_path / "c")]) == 0
    assert main(["train", *common, "--mode", "federated", "--scheme", "strided", "--out", str(tmp_path / "f")]) == 0
    assert main([
        "evaluate", "--dataset", str(ds_path),
        "--checkpoint", f"ae_central={tmp_path / 'c.fwts'}",
        "--checkpoint", f"ae_federated={tmp_path / 'f.fwts'}",
        "--outdir", str(tmp_path / "eval"),
    ]) == 0
    assert (tmp_path / "eval" / "report.csv").exists()
    assert "test MSE" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["pod", "--dataset", str(tmp_path / "missing.ksds")]) == 2
    assert main(["generate", "--latent-dim", "99"]) == 2
    assert main(["evaluate", "--dataset", str(tmp_path / "x"), "--checkpoint", "nopath"]) == 2
    assert "error" in capsys.readouterr().err
