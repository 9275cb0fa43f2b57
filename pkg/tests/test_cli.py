import json
import os

import numpy as np
import pytest

from modsparse.cli import main


@pytest.fixture
def tiny_config(tmp_path):
    cfg = {
        "task": "adding",
        "data": {"seq_len": 6},
        "model": {"hidden": 16},
        "regularizer": {"mode": "moduli", "manifold": {"kind": "torus2"},
                        "inhibitor": {"kind": "dog"}, "lambda": 1e-3},
        "pruning": {"enabled": True, "target_percent": 50, "epochs": 2},
        "optimizer": {"kind": "adam", "lr": 1e-3, "grad_clip": 0.5},
        "run": {"seed": 1, "epochs": 2, "batches_per_epoch": 3,
                "batch_size": 4, "eval_every": 3, "eval_batches": 1},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_train_verb_writes_artifacts(tiny_config, tmp_path, capsys):
    out = tmp_path / "run1"
    assert main(["train", str(tiny_config), "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["out_dir"] == str(out)
    assert np.isfinite(payload["final_eval_metric"])
    for artifact in ("config.json", "metrics.csv", "metrics.png",
                     "summary.json", "checkpoint/manifest.json",
                     "embedding_layer0.json", "coefficients_layer0.bin",
                     "coefficients_layer0.json"):
        assert (out / artifact).exists(), artifact
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ("epoch,batch,train_loss,penalty_value,sparsity_percent,"
                      "eval_metric,wall_time_s,seed")


def test_lottery_verb(tiny_config, tmp_path, capsys):
    base = tmp_path / "base"
    assert main(["train", str(tiny_config), "--out", str(base)]) == 0
    capsys.readouterr()
    lot = tmp_path / "lot"
    rc = main(["lottery", str(tiny_config), "--from", str(base),
               "--seed", "42", "--out", str(lot)])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert np.isfinite(payload["final_eval_metric"])
    assert (lot / "checkpoint" / "manifest.json").exists()


def test_sweep_verb(tiny_config, tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", str(tiny_config), "--lambdas", "0.001", "0.01",
               "--trials", "2", "--out", str(out)])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["rows"]) == 2
    assert (out / "sweep.csv").exists() and (out / "sweep.png").exists()


def test_heatmap_and_eval_verbs(tiny_config, tmp_path, capsys):
    base = tmp_path / "base"
    main(["train", str(tiny_config), "--out", str(base)])
    capsys.readouterr()
    assert main(["heatmap", str(base), "--layer", "0"]) == 0
    csv_path = json.loads(capsys.readouterr().out)["csv"]
    assert os.path.exists(csv_path)
    assert os.path.exists(os.path.splitext(csv_path)[0] + ".png")
    assert main(["eval", str(base)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert np.isfinite(payload["eval_metric"])


def test_error_exit_is_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "adding", "typo": True}))
    assert main(["train", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert "typo" in err["message"]


def test_missing_checkpoint_errors(tmp_path, capsys, tiny_config):
    rc = main(["eval", str(tmp_path / "nope")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert "error" in err


def test_output_root_env_var(tiny_config, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MODSPARSE_OUT", str(tmp_path / "root"))
    monkeypatch.chdir(tmp_path)
    assert main(["train", str(tiny_config)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["out_dir"].startswith(str(tmp_path / "root"))
    # a second run must not clobber the first
    assert main(["train", str(tiny_config)]) == 0
    second = json.loads(capsys.readouterr().out)["out_dir"]
    assert second != payload["out_dir"]
