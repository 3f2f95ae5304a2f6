import json

import pytest
from click.testing import CliRunner

from tidyhet.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def tasks_file(runner, workdir):
    out = workdir / "tasks.jsonl"
    res = runner.invoke(main, ["gen", "--n", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "wrote 6 tasks" in res.output
    return out


def test_demo_train_eval_replay(runner, workdir, tasks_file):
    demos = workdir / "demos.jsonl"
    res = runner.invoke(main, ["demo", "--tasks", str(tasks_file), "--starts", "1", "--out", str(demos)])
    assert res.exit_code == 0, res.output
    model = workdir / "model.json"
    res = runner.invoke(main, ["train", "--demos", str(demos), "--epochs", "5", "--out", str(model)])
    assert res.exit_code == 0, res.output
    assert "agent 2: sub-goal accuracy" in res.output
    out = workdir / "eval"
    res = runner.invoke(main, ["eval", "--tasks", str(tasks_file), "--protocol", "BroadComm", "--no-baselines",
                               "--trajectories", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "metrics.csv").exists() and "BroadComm" in (out / "table.txt").read_text()
    logs = sorted((out / "trajectories").glob("*.jsonl"))
    assert len(logs) == 6
    res = runner.invoke(main, ["replay", str(logs[0]), "--no-frames"])
    assert res.exit_code == 0, res.output
    summary = json.loads(res.output.strip().splitlines()[-1])
    episodes = [json.loads(line) for line in (out / "episodes.jsonl").read_text().splitlines()]
    assert summary["final_hash"] in {e["final_hash"] for e in episodes}


def test_usage_errors(runner, workdir, tasks_file):
    base = ["eval", "--tasks", str(tasks_file), "--out", str(workdir / "x")]
    assert runner.invoke(main, base + ["--policy", "learned"]).exit_code == 2
    assert runner.invoke(main, base + ["--setting", "custom"]).exit_code == 2
    assert runner.invoke(main, base + ["--roster", "1,1,1"]).exit_code == 2
    assert runner.invoke(main, base + ["--setting", "custom", "--roster", "1,x"]).exit_code == 2
    assert runner.invoke(main, base + ["--max-steps", "301"]).exit_code == 2
    assert runner.invoke(main, base + ["--protocol", "NoComm"]).exit_code == 2


def test_custom_roster_eval(runner, workdir, tasks_file):
    out = workdir / "custom"
    res = runner.invoke(main, ["eval", "--tasks", str(tasks_file), "--setting", "custom", "--roster", "1,1,1;1,0,0",
                               "--protocol", "IntenComm", "--no-baselines", "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = (out / "metrics.csv").read_text().splitlines()
    assert any(r.startswith("IntenComm") and ",10.0," in r for r in rows)
