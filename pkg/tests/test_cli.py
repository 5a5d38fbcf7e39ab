import json
import subprocess
import sys

import pytest

from jumpforms.cli import run
from jumpforms.harness import SEED_ENV

TORUS = {"builder": "torus_stable", "params": {"n": 8, "alpha": 1.0}}

CONFIGS = {
    "space-build": ({"space_spec": TORUS}, ["space", "build"]),
    "check": ({"space_spec": TORUS, "field_family": "nonneg_exp", "n_trials": 5, "seed": 4}, ["check"]),
    "estimate": (
        {"space_spec": TORUS, "n_trials": 5, "p_values": [2.0], "estimate": {"operators": ["H_nabla", "G"], "n_values": [6, 8]}},
        ["estimate"],
    ),
    "mosco-sweep": (
        {"space_spec": TORUS, "mosco": {"count": 6, "field": {"family": "spikes"}, "refine": {"n_list": [8, 16], "alpha": 1.0}}},
        ["mosco-sweep"],
    ),
    "simulate": (
        {"space_spec": {"builder": "two_state", "params": {"beta": 1.0}},
         "stochastic": {"field": [1.0, -1.0], "T": 0.5, "n_paths": 10000, "checks": ["expected_square", "bracket"]}},
        ["simulate"],
    ),
}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def only_json(folder):
    files = sorted(folder.glob("*.json"))
    assert len(files) == 1, files
    return files[0]


@pytest.mark.parametrize("command", sorted(CONFIGS))
def test_commands_pass_and_rerun_identically(tmp_path, monkeypatch, command):
    monkeypatch.delenv(SEED_ENV, raising=False)
    doc, argv = CONFIGS[command]
    cfg = write_config(tmp_path, doc)
    texts = []
    for k, threads in enumerate(("1", "3")):
        out = tmp_path / f"out{k}"
        assert run(argv + ["--config", cfg, "--out", str(out), "--threads", threads]) == 0
        path = only_json(out / command)
        texts.append(path.read_bytes())
        csvs = {p.name.split(".")[1] for p in path.parent.glob("*.csv")}
        report = json.loads(texts[-1])
        assert report["schema_version"] == 1 and report["command"] == command
        assert report["passed"] is True
        if command != "space-build":
            assert csvs
    assert texts[0] == texts[1]


def test_global_flags_before_subcommand(tmp_path):
    assert run(["--out", str(tmp_path), "--seed", "3", "check"]) == 0
    report = json.loads(only_json(tmp_path / "check").read_text())
    assert report["seed"] == 3 and report["seed_source"] == "cli"
    assert only_json(tmp_path / "check").name.endswith("-3.json")


def test_env_seed_is_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "21")
    assert run(["check", "--out", str(tmp_path)]) == 0
    report = json.loads(only_json(tmp_path / "check").read_text())
    assert report["seed"] == 21 and report["seed_source"] == "env"
    assert report["config"]["seed"] == 21


def test_failing_assertion_exits_one(tmp_path):
    doc = {"space_spec": TORUS, "n_trials": 5, "p_values": [2.0], "estimate": {"operators": ["H_nabla"], "upper_bounds": {"H_nabla": {"2.0": 0.1}}}}
    assert run(["estimate", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == 1
    report = json.loads(only_json(tmp_path / "estimate").read_text())
    assert report["passed"] is False and report["result"]["constants"][0]["within_bound"] is False


@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        [],
        ["check", "--config", "/nonexistent/cfg.json"],
        ["check", "--threads", "0"],
        ["check", "--tol", "-1"],
        ["report", "/nonexistent.json"],
    ],
)
def test_usage_errors_exit_two(tmp_path, argv, capsys):
    assert run(argv + ["--out", str(tmp_path)] if argv and argv[0] != "bogus" else argv) == 2


def test_bad_config_contents_exit_two(tmp_path):
    for doc in ({"space_spec": {"builder": "moebius"}}, {"space_spec": TORUS, "n_trials": -2}, [1, 2]):
        assert run(["check", "--config", write_config(tmp_path, doc), "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert run(["check", "--config", str(tmp_path / "broken.json")]) == 2


def test_missing_config_names_the_path(capsys):
    assert run(["check", "--config", "/nonexistent/cfg.json"]) == 2
    assert "/nonexistent/cfg.json" in capsys.readouterr().err


def test_report_renders_tables(tmp_path, capsys):
    assert run(["check", "--out", str(tmp_path)]) == 0
    stored = only_json(tmp_path / "check")
    capsys.readouterr()
    assert run(["report", str(stored), "--table", "checks"]) == 0
    text = capsys.readouterr().out
    assert {"inequality", "family", "worst_slack", "passed"} <= set(text.splitlines()[0].split(","))
    assert text == (stored.parent / f"{stored.stem}.checks.csv").read_text()
    assert run(["report", str(stored), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report" / f"{stored.stem}.checks.csv").is_file()
    assert run(["report", str(stored), "--table", "nope"]) == 2


def test_space_build_stores_loadable_space(tmp_path):
    from jumpforms.space import Space

    assert run(["space", "build", "--config", write_config(tmp_path, {"space_spec": TORUS}), "--out", str(tmp_path)]) == 0
    report = json.loads(only_json(tmp_path / "space-build").read_text())
    assert Space.from_dict(report["result"]["space"]).n == 8
    assert list((tmp_path / "space-build").glob("*.points.csv"))


def test_console_script_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "jumpforms.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mosco-sweep" in proc.stdout
