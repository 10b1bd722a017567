import json
import subprocess
import sys

import pytest
import yaml

from conftest import CONFIGS
from quasireg.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize(
    "blocks,text",
    [("1,2", "lambda = 1 (= 1/2 + 1/2), m = 2"), ("1,1,1", "lambda = 3/2, m = 1"), ("2,2,2,2", "lambda = 2 (= 1/2 + 1/2 + 1/2 + 1/2), m = 5")],
)
def test_rlct(capsys, blocks, text):
    code, out, _ = run(capsys, "rlct", "--blocks", blocks)
    assert code == 0 and out.strip() == text
    assert "." not in out


@pytest.mark.parametrize("bad", ["1,,2", "a", "0,1", ""])
def test_rlct_malformed(capsys, bad):
    code, _, err = run(capsys, "rlct", "--blocks", bad)
    assert code == 2 and "blocks" in err


def test_list_models(capsys):
    code, out, _ = run(capsys, "list-models")
    assert code == 0
    line = next(ln for ln in out.splitlines() if ln.startswith("example2"))
    assert "not quasi-regular" in line and "lambda unknown" in line
    assert any(ln.startswith("example3") and " 8 " in ln for ln in out.splitlines())


def test_sandwich(capsys):
    code, out, _ = run(capsys, "sandwich", "example1", "--trials", "2000")
    assert code == 0 and "holds = True" in out
    code, out, _ = run(capsys, "sandwich", "example2", "--blocks", "1,2", "--trials", "2000")
    assert code == 1 and "holds = False" in out
    code, _, err = run(capsys, "sandwich", "example2")
    assert code == 2 and "block structure" in err


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "run")[0] == 2
    code, _, err = run(capsys, "run", "does/not/exist.yaml")
    assert code == 2 and "not found" in err


def test_invalid_config(capsys, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("model: {name: canonical, blocks: [1, 2]}\nn: 100\nbetas: [1]\ncolour: red\n")
    code, _, err = run(capsys, "run", str(path))
    assert code == 2 and "colour" in err


def _smoke(tmp_path, **changes):
    raw = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    raw.update(changes)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_run_writes_outputs(capsys, tmp_path):
    cfg = _smoke(tmp_path)
    out_dir = tmp_path / "res"
    code, out, _ = run(capsys, "run", "--config", str(cfg), "--out", str(out_dir), "--seed", "3")
    assert code in (0, 1)
    assert code == (0 if all("[PASS]" in ln for ln in out.splitlines() if ln.strip().startswith("[")) else 1)
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["config"]["master_seed"] == 3
    assert (out_dir / "records.csv").exists() and (out_dir / "plots.gp").exists()


def test_run_idempotent(capsys, tmp_path):
    cfg = _smoke(tmp_path)
    run(capsys, "run", str(cfg), "--out", str(tmp_path / "a"))
    run(capsys, "run", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2")
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


def test_laplace(capsys, tmp_path):
    cfg = _smoke(tmp_path, laplace={"mc_per_t": 20000})
    code, out, _ = run(capsys, "laplace", str(cfg))
    assert code == 0 and "lambda_hat" in out and "theory: lambda = 1" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "quasireg", "rlct", "--blocks", "1,2"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "lambda = 1 (= 1/2 + 1/2), m = 2"
