import json
import subprocess
import sys

import pytest

CONFIG = {
    "run_id": "cli",
    "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "max_seq_len": 96},
    "datasets": [
        {"id": "da", "generator": "kvr", "params": {"n": 5, "key_len": 2, "val_len": 2, "seed": 1}},
        {"id": "db", "generator": "kvr", "params": {"n": 5, "key_len": 2, "val_len": 2, "seed": 2}},
    ],
    "stages": [
        {"dataset": "da", "stop": {"mode": "fixed_epochs", "max_epochs": 1},
         "optimizer": {"batch_size": 4}},
        {"dataset": "db", "stop": {"mode": "fixed_epochs", "max_epochs": 1},
         "optimizer": {"batch_size": 4}},
    ],
    "eval_on": "da",
    "seeds": [1],
}


def forge(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "factoid_forge.cli", *args],
        capture_output=True, text=True, env=env,
    )


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG))
    return str(path)


def test_full_cli_workflow(tmp_path, config_path):
    out = str(tmp_path / "out")

    r = forge("gen-data", "--config", config_path, "--out", out)
    assert r.returncode == 0, r.stderr
    data_dir = tmp_path / "out" / "cli" / "datasets"
    assert (data_dir / "da.jsonl").exists()
    assert (data_dir / "tokenizer.json").exists()

    r = forge("run", "--config", config_path, "--out", out)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "out" / "cli" / "results.csv").exists()

    ckpt = str(tmp_path / "out" / "cli" / "seed1" / "stage1.ckpt")
    tok = str(data_dir / "tokenizer.json")
    da = str(data_dir / "da.jsonl")
    db = str(data_dir / "db.jsonl")

    r = forge("eval", "--ckpt", ckpt, "--data", da, "--tokenizer", tok)
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    assert payload["n"] == 5 and 0.0 <= payload["accuracy"] <= 1.0

    r = forge("probe", "--ckpt", ckpt, "--data", da, "--tokenizer", tok, "--k", "5")
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    assert len(payload["per_layer_frequency"]) == 2

    r = forge("grad", "--ckpt", ckpt, "--data-a", da, "--data-b", db,
              "--tokenizer", tok, "--sample", "3")
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    assert -1.0 <= payload["cosine"] <= 1.0

    r = forge("report", "--csv", str(tmp_path / "out" / "cli" / "results.csv"))
    assert r.returncode == 0, r.stderr
    assert "accuracy" in r.stdout


def test_config_error_exit_code_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**CONFIG, "bogus_key": 1}))
    r = forge("run", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "unknown key" in r.stderr


def test_runtime_error_exit_code_1(tmp_path):
    r = forge("eval", "--ckpt", "/nonexistent.ckpt", "--data", "/nope.jsonl",
              "--tokenizer", "/nope.json")
    assert r.returncode == 1


def test_env_var_overrides_default_out(tmp_path, config_path):
    import os

    env = {**os.environ, "FACTOID_FORGE_OUT": str(tmp_path / "envout")}
    r = forge("gen-data", "--config", config_path, env=env)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "envout" / "cli" / "datasets" / "da.jsonl").exists()
