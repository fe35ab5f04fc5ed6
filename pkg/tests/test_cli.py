import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from vba import _rng, cli, engine, scm_discrete, scm_gaussian as sg
from vba.nn import checkpoint

FAST_TRAIN = ["--epochs", "2", "--hidden", "8", "--batch-size", "128"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digest(root):
    return {str(p.relative_to(root)): digest(p) for p in sorted(root.rglob("*")) if p.is_file()}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data -> train -> finetune -> eval on a small 2-d problem."""
    root = tmp_path_factory.mktemp("cli")
    data, ckpt, res = root / "data", root / "ckpt", root / "results"
    assert run("gen-data", "--dim", 2, "--n", 400, "--n-eval", 100, "--seed", 5, "--out-dir", data, "--csv") == 0
    assert run("train", "--data-dir", data, "--ckpt-dir", ckpt, "--seed", 5, *FAST_TRAIN) == 0
    assert run("finetune", "--data-dir", data, "--ckpt-dir", ckpt, "--seed", 5,
               "--finetune-epochs", 6, "--batch-size", 128, "--lr", 3e-3) == 0
    assert run("eval", "--data-dir", data, "--ckpt-dir", ckpt, "--ckpt-dir", ckpt / "finetuned",
               "--out-dir", res, "--seed", 5, "--k-eval", 16) == 0
    return root


def test_gen_data_files_and_fingerprints(workspace):
    data = workspace / "data"
    config = sg.ScmConfig.from_json((data / "config.json").read_text())
    obs, ood = sg.load_dataset(data / "observational.vbad"), sg.load_dataset(data / "ood.vbad")
    assert obs.config_fingerprint == ood.config_fingerprint == config.fingerprint()
    assert (obs.n, ood.n, config.dim) == (400, 100, 2)
    assert np.all(np.abs(ood.z) <= 7)
    assert read_csv(data / "ood.csv")[0] == ["x_0", "x_1", "y_0", "y_1", "z_0", "z_1"]


def test_gen_data_byte_identical(workspace, tmp_path):
    assert run("gen-data", "--dim", 2, "--n", 400, "--n-eval", 100, "--seed", 5, "--out-dir", tmp_path, "--csv") == 0
    assert tree_digest(tmp_path) == tree_digest(workspace / "data")


def test_train_outputs(workspace):
    ckpt = workspace / "ckpt"
    rows = read_csv(ckpt / "train_loss.csv")
    assert rows[0] == ["epoch", "loss_prior", "loss_decoder", "loss_encoder"] and len(rows) == 3
    manifest = json.loads((ckpt / "model.json").read_text())
    assert manifest["mode"] == "separate"
    comp, dec, _ = checkpoint.load(ckpt / "decoder.ckpt")
    assert comp == "decoder" and dec.sizes == (4, 8, 4)


def test_train_zero_epochs_roundtrips_initial_params(workspace, tmp_path):
    data = workspace / "data"
    assert run("train", "--data-dir", data, "--ckpt-dir", tmp_path, "--seed", 9, "--epochs", 0, "--hidden", 8) == 0
    ds = sg.load_dataset(data / "observational.vbad")
    fresh = engine.VbaModel.initialize(2, _rng.derive_seed(9, 10), (8,), data=ds)
    for name in engine.COMPONENTS:
        _, module, _ = checkpoint.load(tmp_path / f"{name}.ckpt")
        np.testing.assert_array_equal(module.params, fresh.component(name).params)
    assert len(read_csv(tmp_path / "train_loss.csv")) == 1


def test_finetune_outputs(workspace):
    src, dst = workspace / "ckpt", workspace / "ckpt" / "finetuned"
    for name in ("prior", "decoder"):
        assert digest(src / f"{name}.ckpt") == digest(dst / f"{name}.ckpt")
    assert digest(src / "encoder.ckpt") != digest(dst / "encoder.ckpt")
    curve = [float(r[1]) for r in read_csv(dst / "finetune_elbo.csv")[1:]]
    assert len(curve) == 6 and np.mean(curve[-2:]) > np.mean(curve[:2])
    assert json.loads((dst / "model.json").read_text())["mode"] == "finetune"


def test_eval_outputs(workspace):
    res = workspace / "results"
    rows = read_csv(res / "metrics.csv")
    assert tuple(rows[0]) == cli.METRICS_COLUMNS
    body = [dict(zip(rows[0], r)) for r in rows[1:]]
    assert [(r["dataset"], r["mode"]) for r in body] == [
        ("in_distribution", "separate"), ("out_of_distribution", "separate"),
        ("in_distribution", "finetune"), ("out_of_distribution", "finetune"),
    ]
    for r in body:
        total = float(r["term_prior"]) + float(r["term_decoder"]) + float(r["term_encoder_entropy"])
        assert float(r["elbo_mean"]) == pytest.approx(total, abs=1e-9)
        assert float(r["ground_truth_mae"]) >= 0
        assert r["seed"] == "5" and r["k"] == "16"
    text = (res / "metrics_finetune_out_of_distribution.txt").read_text().splitlines()
    assert [ln.split(",")[0] for ln in text] == list(engine.Metrics.KEYS)
    doc = json.loads((res / "metrics_separate_in_distribution.json").read_text())
    assert doc["elbo_mean"] == float(body[0]["elbo_mean"])


def test_pipeline_rerun_is_byte_identical(workspace, tmp_path):
    data, ckpt, res = workspace / "data", tmp_path / "ckpt", tmp_path / "results"
    run("train", "--data-dir", data, "--ckpt-dir", ckpt, "--seed", 5, *FAST_TRAIN)
    run("finetune", "--data-dir", data, "--ckpt-dir", ckpt, "--seed", 5, "--finetune-epochs", 6,
        "--batch-size", 128, "--lr", 3e-3)
    run("eval", "--data-dir", data, "--ckpt-dir", ckpt, "--ckpt-dir", ckpt / "finetuned",
        "--out-dir", res, "--seed", 5, "--k-eval", 16)
    assert tree_digest(ckpt) == tree_digest(workspace / "ckpt")
    assert tree_digest(res) == tree_digest(workspace / "results")


def test_eval_fingerprint_mismatch(workspace, tmp_path, capsys):
    other = tmp_path / "other"
    run("gen-data", "--dim", 2, "--n", 50, "--n-eval", 20, "--seed", 6, "--out-dir", other)
    (tmp_path / "mixed").mkdir()
    for f in ("observational.vbad", "ood.vbad"):
        (tmp_path / "mixed" / f).write_bytes((workspace / "data" / f).read_bytes())
    (tmp_path / "mixed" / "config.json").write_text((other / "config.json").read_text())
    capsys.readouterr()
    code = run("eval", "--data-dir", tmp_path / "mixed", "--ckpt-dir", workspace / "ckpt", "--out-dir", tmp_path / "r")
    err = capsys.readouterr().err
    assert code == 2
    a = sg.ScmConfig.from_json((other / "config.json").read_text()).fingerprint().hex()
    b = sg.load_dataset(workspace / "data" / "observational.vbad").config_fingerprint.hex()
    assert a in err and b in err


def test_sweep_rows_and_determinism(tmp_path):
    args = ["sweep", "--dims", 1, 2, "--repeats", 2, "--n", 200, "--n-eval", 50, "--epochs", 1,
            "--finetune-epochs", 1, "--hidden", 4, "--k-eval", 8, "--seed", 3]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    rows = read_csv(tmp_path / "a" / "sweep.csv")
    assert tuple(rows[0]) == ("dim", "repeat", "method", "mae", "estimate_mean", "truth_mean")
    assert len(rows) - 1 == 2 * 2 * 3
    assert {r[2] for r in rows[1:]} == {"naive_mc", "vba_separate", "vba_finetuned"}
    assert digest(tmp_path / "a" / "sweep.csv") == digest(tmp_path / "b" / "sweep.csv")


def test_pitfall_csv(tmp_path):
    args = ["pitfall", "--n", 300, "--n-eval", 100, "--epochs", 3, "--finetune-epochs", 2,
            "--hidden", 4, "--k-eval", 8, "--seed", 2]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    rows = read_csv(tmp_path / "a" / "pitfall.csv")
    assert tuple(rows[0]) == ("epoch", "joint_estimate", "finetuned_estimate",
                              "analytic_observational", "analytic_interventional")
    assert len(rows) == 4
    assert len({(r[3], r[4]) for r in rows[1:]}) == 1
    assert digest(tmp_path / "a" / "pitfall.csv") == digest(tmp_path / "b" / "pitfall.csv")


def test_discrete_check_default(tmp_path, capsys):
    out = tmp_path / "report.txt"
    assert run("discrete-check", "--out", out) == 0
    report = out.read_text()
    obs, do = scm_discrete.default_closed_forms()
    assert repr(obs) in report and repr(do) in report
    assert "match" in report and report.strip().endswith("PASS")


def test_discrete_check_unconfounded():
    flags = ["--p-x-given-z", 0.3, 0.3]
    assert run("discrete-check", *flags, "--expect", "equal") == 0
    assert run("discrete-check", *flags) == 1


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"dim": 3, "n": 30, "n_eval": 10, "seed": 1}))
    assert run("gen-data", "--config", cfg_file, "--out-dir", tmp_path / "a") == 0
    assert sg.load_dataset(tmp_path / "a" / "observational.vbad").dim == 3
    assert run("gen-data", "--config", cfg_file, "--dim", 2, "--out-dir", tmp_path / "b") == 0
    ds = sg.load_dataset(tmp_path / "b" / "observational.vbad")
    assert (ds.dim, ds.n) == (2, 30)
    cfg_file.write_text(json.dumps({"bogus": 1}))
    assert run("gen-data", "--config", cfg_file, "--out-dir", tmp_path / "c") == 2


def test_exit_codes(tmp_path):
    assert run("train", "--data-dir", tmp_path / "missing", "--ckpt-dir", tmp_path / "ck") == 3
    assert run("finetune", "--data-dir", tmp_path, "--ckpt-dir", tmp_path / "missing") == 3
    assert run("gen-data", "--dim", 0, "--out-dir", tmp_path) == 2
    assert run("gen-data", "--seed", -1, "--out-dir", tmp_path) == 2
    with pytest.raises(SystemExit) as err:
        run("gen-data", "--dim", "abc")
    assert err.value.code == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("gen-data", "--n", 5, "--out-dir", blocker / "sub") == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vba.cli", "discrete-check"], capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "vba.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
