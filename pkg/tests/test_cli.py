import csv
import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from mapcon import losses as L
from mapcon.cli import main, read_config_file
from mapcon.mesh_io import load_mesh
from mapcon.synthetic import read_manifest
from mapcon.tensor_core import ops
from mapcon.tensor_core.ops import KERNELS

SMALL = ["--dims-scale", "0.125"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_data")
    assert main(["gen-data", "--n-ids", "4", "--n-poses", "4", "--seed", "2", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_tiny")
    assert main(["gen-data", "--n-ids", "3", "--n-poses", "3", "--rings", "3", "--sides", "6",
                 "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli_run")
    code = main(["train", "--data", str(data_dir), "--epochs", "2", "--out", str(out), *SMALL])
    assert code == 0
    return out


# -- gen-data ------------------------------------------------------------------------

def test_gen_data_counts(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--n-ids", 4, "--n-poses", 4, "--split", 1.0,
                       "--out-dir", tmp_path)
    assert code == 0 and "wrote 16 meshes" in out
    ds = read_manifest(tmp_path)
    assert len(ds.entries) == 16 and all(e.labelled for e in ds.entries)
    assert len(os.listdir(tmp_path / "meshes")) == 16


def test_gen_data_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen-data", "--seed", 9, "--noise", 0.01, "--out", tmp_path / name)[0] == 0
    names = sorted(os.listdir(tmp_path / "a" / "meshes"))
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "meshes", tmp_path / "b" / "meshes",
                                               names, shallow=False)
    assert not mismatch and not errors and len(match) == 16
    assert filecmp.cmp(tmp_path / "a" / "manifest.csv", tmp_path / "b" / "manifest.csv", shallow=False)


def test_gen_data_split_half(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--split", 0.5, "--out", tmp_path)
    assert code == 0
    assert len(read_manifest(tmp_path).labelled) == 4


@pytest.mark.parametrize("flags", [["--n-ids", "1"], ["--split", "2"], ["--noise", "-1"],
                                   ["--n-ids", "x"]])
def test_gen_data_bad_flags(tmp_path, capsys, flags):
    assert run(capsys, "gen-data", "--out", tmp_path, *flags)[0] == 2


def test_gen_data_io_failure(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(capsys, "gen-data", "--out", blocker / "sub")[0] == 1


def test_no_subcommand(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2


# -- train --------------------------------------------------------------------------

def test_train_header_defaults(trained):
    log = (trained / "train_log.csv").read_text().splitlines()
    header = dict(ln[2:].split("=", 1) for ln in log if ln.startswith("# "))
    assert float(header["lambda_rec"]) == 1000 and float(header["lambda_edge"]) == 0.5
    assert float(header["margin"]) == 1 and float(header["lr"]) == 1e-4
    assert int(header["batch"]) == 2


def test_train_smoke_finite(trained):
    rows = [r for r in read_csv(trained / "train_log.csv") if not r[0].startswith("#")]
    assert rows[0] == ["epoch", "iter", "mode", "lr", "l_rec", "l_edge", "l_mesh_cc", "l_mesh_ss",
                       "l_point", "total"]
    vals = np.array([[float(x) for x in r[4:]] for r in rows[1:]])
    assert len(vals) == 16 and np.isfinite(vals).all()
    assert (trained / "final.ckpt").exists()


def test_train_baseline_toggles(tmp_path, tiny_dir, capsys):
    code, out, _ = run(capsys, "train", "--data", tiny_dir, "--epochs", 1, "--lambda-mesh-ss", 0,
                       "--lambda-point", 0, "--out", tmp_path, *SMALL)
    assert code == 0
    assert "# lambda_mesh_ss=0.0" in out and "# lambda_point=0.0" in out
    rows = [r for r in read_csv(tmp_path / "train_log.csv") if not r[0].startswith("#")][1:]
    for r in rows:
        # with the contrastive terms off the total is the weighted baseline
        l_rec, l_edge, total = float(r[4]), float(r[5]), float(r[9])
        assert total == pytest.approx(1000 * l_rec + 0.5 * l_edge, rel=1e-5)


def test_train_non_finite_exit_3(tmp_path, tiny_dir, capsys, monkeypatch):
    real = L.rec_loss
    calls = {"n": 0}

    def poisoned(pred, gt):
        calls["n"] += 1
        out = real(pred, gt)
        return ops.mul_scalar(out, float("nan")) if calls["n"] > 10 else out

    monkeypatch.setattr(L, "rec_loss", poisoned)
    code, _, err = run(capsys, "train", "--data", tiny_dir, "--epochs", 3, "--checkpoint-every", 1,
                       "--out", tmp_path, *SMALL)
    assert code == 3
    assert "non-finite" in err
    assert f"last good checkpoint: {tmp_path / 'epoch0001.ckpt'}" in err
    assert (tmp_path / "epoch0001.ckpt").exists() and not (tmp_path / "final.ckpt").exists()


def test_train_bad_flags(tmp_path, tiny_dir, capsys):
    assert run(capsys, "train", "--data", tiny_dir, "--epochs", 0, "--out", tmp_path)[0] == 2
    assert run(capsys, "train", "--data", tiny_dir, "--mode", "weird", "--out", tmp_path)[0] == 2
    assert run(capsys, "train", "--data", tmp_path / "nope", "--out", tmp_path)[0] == 1


def test_train_resume_continues(tmp_path, tiny_dir, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "train", "--data", tiny_dir, "--epochs", 2, "--out", a, *SMALL)[0] == 0
    assert run(capsys, "train", "--data", tiny_dir, "--epochs", 2, "--checkpoint-every", 1,
               "--out", b, *SMALL)[0] == 0
    c = tmp_path / "c"
    assert run(capsys, "train", "--data", tiny_dir, "--epochs", 2, "--resume", b / "epoch0001.ckpt",
               "--out", c, *SMALL)[0] == 0
    assert (a / "final.ckpt").read_bytes() == (c / "final.ckpt").read_bytes()


def test_config_file_precedence(tmp_path, tiny_dir, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nepochs = 1\nlambda-edge=0.25\nlr=3e-4\ndims_scale=0.125\n")
    assert read_config_file(cfg)["lambda_edge"] == "0.25"
    code, out, _ = run(capsys, "train", "--config", cfg, "--data", tiny_dir, "--lr", "2e-4",
                       "--out", tmp_path / "o")
    assert code == 0
    assert "# epochs=1" in out and "# lambda_edge=0.25" in out and "# lr=0.0002" in out
    cfg.write_text("bogus=1\n")
    assert run(capsys, "train", "--config", cfg, "--data", tiny_dir, "--out", tmp_path / "p")[0] == 2


# -- transfer ------------------------------------------------------------------------

def test_transfer_outputs(tmp_path, trained, data_dir, capsys):
    ds = read_manifest(data_dir)
    pose, ident = ds.entries[0], ds.entries[-1]
    out = tmp_path / "x.ply"
    code, stdout, _ = run(capsys, "transfer", "--checkpoint", trained / "final.ckpt",
                          "--pose-mesh", data_dir / pose.path, "--id-mesh", data_dir / ident.path,
                          "--out", out, "--emit-warped")
    assert code == 0
    src = load_mesh(data_dir / ident.path)
    result = load_mesh(out)
    warped = load_mesh(tmp_path / "x_warped.ply")
    assert result.n_vertices == src.n_vertices
    assert np.array_equal(result.faces, src.faces) and np.array_equal(warped.faces, src.faces)
    assert np.array_equal(warped.edges, result.edges)


def test_transfer_dims_mismatch(tmp_path, trained, data_dir, capsys):
    ds = read_manifest(data_dir)
    args = ["transfer", "--checkpoint", trained / "final.ckpt", "--pose-mesh",
            data_dir / ds.entries[0].path, "--id-mesh", data_dir / ds.entries[1].path,
            "--out", tmp_path / "o.obj"]
    assert run(capsys, *args, "--dims-scale", 0.25)[0] == 4
    assert run(capsys, *args, "--dims-scale", 0.125, "--no-disentangle")[0] == 4


def test_transfer_bad_checkpoint(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + bytes(20))
    ds = read_manifest(data_dir)
    code, _, err = run(capsys, "transfer", "--checkpoint", bad, "--pose-mesh",
                       data_dir / ds.entries[0].path, "--id-mesh", data_dir / ds.entries[1].path,
                       "--out", tmp_path / "o.obj")
    assert code == 1 and "bad_magic" in err


# -- eval -------------------------------------------------------------------------------

def test_eval_oracle_zero(tmp_path, data_dir, capsys):
    code, _, _ = run(capsys, "eval", "--oracle", "--data", data_dir, "--out", tmp_path / "o.csv")
    assert code == 0
    rows = read_csv(tmp_path / "o.csv")
    assert rows[0] == ["pair_id", "pmd", "cd", "emd", "n_points", "seconds"]
    assert len(rows) == 2 + 16
    for r in rows[1:]:
        assert float(r[1]) == float(r[2]) == float(r[3]) == 0.0


def test_eval_deterministic_and_mean(tmp_path, trained, data_dir, capsys):
    args = ["eval", "--checkpoint", trained / "final.ckpt", "--data", data_dir, "--poses",
            "pose00,pose01", "--no-timing"]
    assert run(capsys, *args, "--out", tmp_path / "a.csv")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b.csv")[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_csv(tmp_path / "a.csv")
    body, summary = rows[1:-1], rows[-1]
    assert len(body) == 8 and summary[0] == "mean"
    for col in (1, 2, 3):
        assert float(summary[col]) == pytest.approx(np.mean([float(r[col]) for r in body]), abs=1e-6)
    assert int(summary[4]) == 8


def test_eval_seed_env_and_flag(tmp_path, trained, data_dir, capsys, monkeypatch):
    args = ["eval", "--checkpoint", trained / "final.ckpt", "--data", data_dir, "--poses",
            "pose02", "--no-timing"]
    run(capsys, *args, "--out", tmp_path / "default.csv")
    monkeypatch.setenv("MAPCON_SEED", "17")
    run(capsys, *args, "--out", tmp_path / "env.csv")
    run(capsys, *args, "--seed", "17", "--out", tmp_path / "flag17.csv")
    run(capsys, *args, "--seed", "9001", "--out", tmp_path / "flag9001.csv")
    read = lambda n: (tmp_path / n).read_bytes()  # noqa: E731
    assert read("env.csv") == read("flag17.csv")
    assert read("flag9001.csv") == read("default.csv")
    assert read("env.csv") != read("default.csv")
    monkeypatch.setenv("MAPCON_SEED", "abc")
    assert run(capsys, *args, "--out", tmp_path / "x.csv")[0] == 2


def test_eval_missing_ground_truth(tmp_path, data_dir, capsys):
    ds = read_manifest(data_dir)
    pairs = tmp_path / "pairs.csv"
    a, b = ds.entries[0], ds.entries[5]
    pairs.write_text(f"ok,{data_dir / a.path},{data_dir / b.path},{data_dir / a.path}\n"
                     f"lost,{data_dir / a.path},{data_dir / b.path},{tmp_path / 'gone.obj'}\n"
                     f"none,{data_dir / a.path},{data_dir / b.path}\n")
    code, _, err = run(capsys, "eval", "--oracle", "--pairs", pairs, "--out", tmp_path / "o.csv")
    assert code == 0 and "lost" in err and "none" in err
    rows = read_csv(tmp_path / "o.csv")
    assert [r[1] for r in rows[1:4]] == ["0.000000", "nan", "nan"]
    assert rows[-1][0] == "mean" and float(rows[-1][1]) == 0.0
    assert run(capsys, "eval", "--oracle", "--pairs", pairs, "--strict",
               "--out", tmp_path / "s.csv")[0] == 1


def test_eval_flag_errors(tmp_path, data_dir, capsys):
    assert run(capsys, "eval", "--data", data_dir, "--out", tmp_path / "o.csv")[0] == 2
    assert run(capsys, "eval", "--oracle", "--out", tmp_path / "o.csv")[0] == 2


# -- gradcheck --------------------------------------------------------------------------

def test_gradcheck_losses_pass(capsys):
    code, out, _ = run(capsys, "gradcheck", "--which", "losses", "--tol", "1e-4")
    assert code == 0 and "edge_loss" in out


def test_gradcheck_ops_cover_every_kernel_once(capsys):
    code, out, _ = run(capsys, "gradcheck", "--which", "ops")
    assert code == 0
    names = [ln.split()[1] for ln in out.splitlines() if ln.startswith("ops ")]
    assert sorted(names) == sorted(KERNELS) and len(names) == len(set(names))


def test_gradcheck_catches_corrupted_edge_loss(capsys, monkeypatch):
    real = L.edge_loss

    def corrupted(pred, ref, edges):
        # same forward value, gradient biased by +0.5 per coordinate
        s = ops.sum_axis(pred)
        return ops.add(real(pred, ref, edges), ops.mul_scalar(ops.sub(s, ops.stop_gradient(s)), 0.5))

    monkeypatch.setattr(L, "edge_loss", corrupted)
    code, out, err = run(capsys, "gradcheck", "--which", "losses")
    assert code == 5
    assert "edge_loss" in err
    assert any(ln.split()[1] == "edge_loss" and ln.endswith("FAIL") for ln in out.splitlines())


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mapcon", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen-data", "train", "transfer", "eval", "gradcheck"):
        assert sub in proc.stdout


def test_gradcheck_seeds_cover_three_shapes():
    from mapcon.verification import _kernel_cases, _loss_cases
    rng = np.random.default_rng
    kernel_shapes = {_kernel_cases(rng(0), s)["matmul"][1][0].shape for s in range(3)}
    loss_shapes = {_loss_cases(rng(0), s)["mesh_triplet"][1][0].shape for s in range(3)}
    assert len(kernel_shapes) == 3 and len(loss_shapes) == 3
