import csv
import json
import math

import numpy as np
import pytest

from _graphs import building
from hagemu.attack_graph import Hag
from hagemu.building import DATA_DIR, BuildingScenario
from hagemu.cli import main
from hagemu.environment import NullScenario
from hagemu.experiments import (
    ExperimentConfig,
    evaluate,
    make_problem,
    read_episodes,
    read_sweep,
    summarize,
    sweep,
    write_episodes,
    write_sweep,
)
from hagemu.greedy import GreedyPolicy

BUILDING = str(DATA_DIR / "building.hag.json")
FIG1 = str(DATA_DIR / "fig1.hag.json")


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(train_episodes=-1)
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(graph_path=str(tmp_path / "missing.json"))
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="dqn")


def test_make_problem_regrids_building():
    hag, sc = make_problem(ExperimentConfig(graph_path=BUILDING, delta=1 / 3))
    assert sum(a.is_physical for a in hag.actions) == 13 and isinstance(sc, BuildingScenario)


def test_certain_chain_time_to_root_four(tmp_path):
    hag = building(all_certain=True)
    path = tmp_path / "certain.json"
    hag.save(path)
    cfg = ExperimentConfig(graph_path=str(path), algorithm="greedy", test_episodes=20)
    hag, sc = make_problem(cfg)
    rows, _ = evaluate(hag, sc, GreedyPolicy(hag, sc), 20, 0, 48)
    assert {r.time_to_root for r in rows} == {4}


def test_summary_recomputable_from_csv(tmp_path):
    hag, sc = make_problem(ExperimentConfig(delta=1 / 3))
    rows, _ = evaluate(hag, sc, GreedyPolicy(hag, sc), 40, 3, 48)
    path = tmp_path / "ep.csv"
    write_episodes(path, rows)
    again = read_episodes(path)
    for flag in (True, False):
        a, b = summarize("greedy", rows, flag), summarize("greedy", again, flag)
        assert a.to_json() == b.to_json()


def test_sentinel_flag():
    hag, sc = make_problem(ExperimentConfig())
    rows, _ = evaluate(hag, sc, GreedyPolicy(hag, sc), 5, 0, 3)  # too short to reach the root
    assert all(r.time_to_root == 4 and not r.reached_root for r in rows)
    assert summarize("g", rows, True).mean_time_to_root == 4.0
    assert math.isnan(summarize("g", rows, False).mean_time_to_root)


def test_empty_evaluation():
    rep = summarize("greedy", [])
    assert rep.episodes == 0 and math.isnan(rep.mean_reward)


def test_parallel_matches_serial():
    hag, sc = make_problem(ExperimentConfig())
    pol = GreedyPolicy(hag, sc)
    a, _ = evaluate(hag, sc, pol, 12, 5, 48, workers=1)
    b, _ = evaluate(hag, sc, pol, 12, 5, 48, workers=3)
    assert [r.row() for r in a] == [r.row() for r in b]


def test_sweep_shape_and_reload(tmp_path):
    cfg = ExperimentConfig(train_episodes=0, test_episodes=10)
    table = sweep(cfg, [1.0, 1 / 3], ["greedy"])
    assert [row["actions"] for row in table] == [5, 13]
    path = tmp_path / "sweep.csv"
    write_sweep(path, table)
    again = read_sweep(path)
    assert [sorted(r) for r in again] == [sorted(r) for r in table]
    for a, b in zip(again, table):
        for k in a:
            assert a[k] == b[k] or (isinstance(b[k], float) and math.isnan(a[k]) and math.isnan(b[k]))
    single = sweep(cfg, [1.0], ["greedy"])
    assert len(single) == 1 and {k for k in single[0] if k.startswith("mean_")} == {"mean_greedy"}


def test_cli_train_eval_round_trip(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--algo", "adp", "--graph", BUILDING, "--episodes", "3", "--seed", "7",
                 "--out", str(out)]) == 0
    first = (out / "weights_adp.bin").read_bytes()
    assert main(["train", "--algo", "adp", "--graph", BUILDING, "--episodes", "3", "--seed", "7",
                 "--out", str(out)]) == 0
    assert (out / "weights_adp.bin").read_bytes() == first
    rows = list(csv.DictReader(open(out / "training_curve.csv")))
    assert [int(r["episode"]) for r in rows] == [0, 1, 2]
    assert main(["eval", "--algo", "adp", "--weights", str(out / "weights_adp.bin"), "--test-episodes", "4",
                 "--traces", "2", "--out", str(out), "--seed", "1"]) == 0
    summary = json.loads((out / "summary_adp.json").read_text())
    assert summary["episodes"] == 4 and summary["config"]["seed"] == 1
    assert len(list(out.glob("trace_adp_*.csv"))) == 2


def test_cli_zero_episode_train(tmp_path, caplog):
    out = tmp_path / "z"
    assert main(["train", "--algo", "ac", "--episodes", "0", "--out", str(out)]) == 0
    from hagemu.function_approx import load_weights
    _, meta, theta, psi = load_weights(out / "weights_ac.bin")
    assert not theta.any() and not psi.any() and meta["episodes"] == 0
    assert "zero training episodes" in caplog.text


def test_cli_incompatible_weights(tmp_path, capsys):
    out = tmp_path / "w"
    assert main(["train", "--algo", "adp", "--episodes", "1", "--out", str(out)]) == 0
    code = main(["eval", "--algo", "adp", "--weights", str(out / "weights_adp.bin"), "--delta", "1/3",
                 "--test-episodes", "1", "--out", str(out)])
    assert code != 0 and "different graph" in capsys.readouterr().err


def test_cli_eval_zero_episodes(tmp_path):
    assert main(["eval", "--algo", "greedy", "--test-episodes", "0", "--out", str(tmp_path)]) == 0


def test_cli_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("HAGEMU_SEED", "31")
    assert main(["eval", "--test-episodes", "2", "--traces", "0", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "summary_greedy.json").read_text())["config"]["seed"] == 31


def test_cli_inspect(capsys):
    assert main(["inspect", BUILDING]) == 0
    text = capsys.readouterr().out
    assert "nodes: 5" in text and "edges: 5" in text and "entry points: 1" in text and "roots: 5" in text
    assert main(["inspect", FIG1]) == 0
    assert "R[a_3,5] = {a_3,5, a_5,4, a_4,6, a_5,7} (4 actions)" in capsys.readouterr().out


def test_cli_inspect_malformed(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  nodes: []\n}\n")
    assert main(["inspect", str(bad)]) != 0
    assert "bad.json:2:" in capsys.readouterr().err


def test_cli_greedy_certify(capsys):
    assert main(["greedy", "--graph", FIG1, "--scenario", "null", "--ell", "1", "--certify"]) == 0
    assert "ratio 1.000000" in capsys.readouterr().out


def test_cli_sweep(tmp_path):
    assert main(["sweep", "--deltas", "1", "1/3", "--algos", "greedy", "--test-episodes", "5",
                 "--out", str(tmp_path)]) == 0
    table = read_sweep(tmp_path / "sweep.csv")
    assert [r["actions"] for r in table] == [5, 13] and table[1]["delta"] == "1/3"
