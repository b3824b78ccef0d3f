import json
import subprocess
import sys

import pytest

from weather_experts.cli import EXIT_ABORT, EXIT_CONFIG, EXIT_OK, main

SMALL = {"steps_per_task": 2, "image_size": 16, "eval_samples": 2, "replay_size": 2, "signature_batches": 2,
         "use_valve": False}


def write_config(path, **kw):
    path.write_text(json.dumps({**SMALL, **kw}))
    return str(path)


def test_exit_codes_are_distinct():
    assert (EXIT_OK, EXIT_CONFIG, EXIT_ABORT) == (0, 2, 3)


def test_run_eval_verify(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", task_sequence=["rain", "haze"])
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert [t["family"] for t in result["tasks"]] == ["rain", "haze"]
    assert (out / "checkpoint" / "meta.json").exists()

    assert main(["eval", "--checkpoint", str(out / "checkpoint"), "--task", "1"]) == EXIT_OK
    res = json.loads(capsys.readouterr().out)["results"]
    assert [r["task"] for r in res] == [1]
    assert main(["verify", "--checkpoint", str(out / "checkpoint")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["outputs_match"] is True


def test_overrides_apply(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", task_sequence=["snow"])
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out), "--seed", "7", "--steps", "1"]) == EXIT_OK
    saved = json.loads((out / "config.json").read_text())
    assert saved["seed"] == 7 and saved["steps_per_task"] == 1


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", bogus=1)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_bad_arguments_exit_2(capsys):
    assert main(["sweep", "--axis", "width"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run", "--steps", "0", "--out", "x"]) == EXIT_CONFIG


def test_capacity_abort_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", task_sequence=["haze", "rain"], capacity=1)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_ABORT
    assert "capacity" in capsys.readouterr().err.lower()


def test_corrupt_checkpoint_exits_3(tmp_path, capsys):
    (tmp_path / "meta.json").write_text(json.dumps({"format_version": 99}))
    assert main(["verify", "--checkpoint", str(tmp_path)]) == EXIT_ABORT
    assert main(["eval", "--checkpoint", str(tmp_path / "missing")]) == EXIT_ABORT


def test_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", task_sequence=["haze", "rain"], steps_per_task=1)
    assert main(["sweep", "--axis", "losses", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["rows"] == 5


def test_dump_samples(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["dump-samples", "--family", "snow", "--n", "3", "--out", str(out), "--size", "16"]) == EXIT_OK
    manifest = json.loads(capsys.readouterr().out)["manifest"]
    assert len(list(out.glob("*.ppm"))) == 6
    assert manifest.endswith(".json")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "weather_experts", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "dump-samples" in proc.stdout
