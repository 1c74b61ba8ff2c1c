import json
import shutil
import subprocess
import sys

import pytest
import yaml

from pssf.cli import main
from pssf.io import read_json

TINY = {
    "master_seed": 3,
    "cohort": {"n_subjects": 30, "n_knees": 40},
    "ml": {"k_grid": [4], "l1_grid": [0.02], "l2_grid": [0.1], "forest": {"n_trees": 8},
           "boosting": {"n_rounds": 10}},
    "analysis": {"subset_size": 6, "n_repeats": 2},
}


def _write(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _write(root / "tiny.yaml", TINY)
    out = root / "out"
    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def test_pipeline_outputs_and_provenance(tiny_run):
    cfg, out = tiny_run
    for rel in ("manifest.jsonl", "features.csv", "split.json", "summary.json", "stability.csv",
                "reports/within_protocol.json", "importance.csv"):
        assert (out / rel).exists(), rel
    meta = read_json(out / "features.csv.meta.json")
    assert meta["stage"] == "extract" and meta["config_hash"] == read_json(out / ".stages/extract.json")["config_hash"]
    assert all(read_json(out / ".stages" / f"{s}.json")["stage"] == s
               for s in ("simulate", "extract", "train", "evaluate", "stability"))
    models = [p for p in (out / "models").glob("*.json") if not p.name.endswith(".meta.json")]
    assert len(models) == 2 * 2 * 3


def test_second_run_is_a_full_skip(tiny_run, capsys):
    cfg, out = tiny_run
    assert main(["pipeline", "--config", str(cfg), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.split("\n")
    assert [l for l in lines if l] == [f"{s}: skipped" for s in ("simulate", "extract", "train", "evaluate", "stability")]


def test_jobs_do_not_invalidate_markers(tiny_run, capsys):
    cfg, out = tiny_run
    assert main(["extract", "--config", str(cfg), "--out", str(out), "--jobs", "2"]) == 0
    assert "extract: skipped" in capsys.readouterr().out


def test_corrupt_image_fails_extract(tiny_run, tmp_path, capsys):
    cfg, src = tiny_run
    out = tmp_path / "copy"
    shutil.copytree(src, out)
    victim = next((out / "images").rglob("*.png"))
    data = bytearray(victim.read_bytes())
    data[-20] ^= 0xFF
    victim.write_bytes(bytes(data))
    assert main(["extract", "--config", str(cfg), "--out", str(out), "--force"]) == 3
    rep = read_json(out / "error_report.json")
    assert rep["stage"] == "extract"
    assert victim.name in json.dumps(rep)
    # re-simulating repairs the file; the next success clears the report
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["extract", "--config", str(cfg), "--out", str(out)]) == 0
    assert not (out / "error_report.json").exists()
    assert "extract: ran" in capsys.readouterr().out


def test_missing_inputs_is_a_stage_failure(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 3
    assert read_json(tmp_path / "error_report.json")["stage"] == "train"


@pytest.mark.parametrize(
    "data",
    [{"bogus": 1}, {"cohort": {"n_knees": 999}}, {"ml": {"forest": {"n_leaves": 3}}}, {"profile": "huge"},
     {"cohort": {"grade_fractions": [0.5, 0.5, 0.5]}}, ["not", "a", "mapping"]],
)
def test_config_errors_exit_2(tmp_path, data):
    cfg = _write(tmp_path / "bad.yaml", data)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_and_output(tmp_path, monkeypatch):
    monkeypatch.delenv("PSSF_OUT", raising=False)
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    assert main(["simulate"]) == 2


def test_env_output_fallback(tmp_path, monkeypatch):
    from pssf.config import load_config

    monkeypatch.setenv("PSSF_OUT", str(tmp_path / "env"))
    assert load_config().out_dir == str(tmp_path / "env")
    assert load_config(out_dir="elsewhere").out_dir == "elsewhere"


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "pssf.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("pssf ")
