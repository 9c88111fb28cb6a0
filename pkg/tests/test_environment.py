import csv

import numpy as np
import pytest

from _graphs import building, chain, edge
from hagemu.attack_graph import Hag, Node, NodeKind
from hagemu.building import BuildingParams, BuildingScenario, discomfort_reward, threshold_control, zone_step
from hagemu.environment import (
    TRACE_COLUMNS,
    HorizonExceeded,
    IllegalAction,
    NullScenario,
    SystemState,
    episode_streams,
    initial_state,
    outcomes,
    rollout,
    step,
)


def two_node(p, r=1.0, c=0.1):
    nodes = [Node(1, NodeKind.CYBER, entry_point=True), Node(2, NodeKind.PHYSICAL)]
    return Hag(nodes, [edge(1, 2, p, r, c)])


def test_certain_exploit():
    hag = two_node(1.0)
    s = SystemState(0, (1, 0))
    res = step(hag, NullScenario(), s, hag.edge_action(1, 2), np.random.default_rng(0))
    assert res.success and res.reward == pytest.approx(0.9, abs=1e-15)
    assert res.next_state.security == (1, 1)


def test_impossible_exploit():
    hag = two_node(0.0)
    s = SystemState(0, (1, 0))
    res = step(hag, NullScenario(), s, hag.edge_action(1, 2), np.random.default_rng(0))
    assert not res.success and res.reward == pytest.approx(-0.1, abs=1e-15)
    assert res.next_state.security == (1, 0)


def test_building_physical_success_reward():
    hag = building()
    sc = BuildingScenario()
    s = SystemState(3, (1, 1, 1, 1, 1), (24.0,), (24.0,), 26.0)
    a2 = [a for a in hag.node_actions(5) if a.magnitude == 2.0][0]

    class Always:
        def random(self):
            return 0.0

        def uniform(self, lo, hi):
            return 0.0

    res = step(hag, sc, s, a2, Always())
    z, m = threshold_control(26.0, 24.0)
    x1 = zone_step(24.0, z, m, 26.0)
    assert res.success
    assert res.reward == pytest.approx(discomfort_reward(x1) - 2.0, abs=1e-12)
    assert res.next_state.physical == (pytest.approx(x1, abs=1e-12),)
    assert res.measured == 26.0 and res.control == (z, m)


def test_building_physical_failure_uses_true_reading():
    hag = building()
    sc = BuildingScenario()
    s = SystemState(3, (1, 1, 1, 1, 1), (24.0,), (24.0,), 26.0)
    a2 = [a for a in hag.node_actions(5) if a.magnitude == 2.0][0]

    class Never:
        def random(self):
            return 0.999

        def uniform(self, lo, hi):
            return 0.0

    res = step(hag, sc, s, a2, Never())
    assert not res.success and res.reward == -2.0
    assert res.measured == 24.0 and res.control == (24.0, 0.0)
    assert res.next_state.physical[0] == pytest.approx(24.0 + 0.1 * 2.0, abs=1e-12)


def test_illegal_action():
    hag = building()
    s = SystemState(0, (1, 0, 0, 0, 0), (24.0,), (24.0,), 24.0)
    with pytest.raises(IllegalAction):
        step(hag, BuildingScenario(), s, hag.edge_action(4, 5), np.random.default_rng(0))


def test_horizon_exceeded():
    hag = building()
    s = SystemState(48, (1, 0, 0, 0, 0), (24.0,), (24.0,), 24.0)
    with pytest.raises(HorizonExceeded):
        step(hag, BuildingScenario(), s, hag.noop, np.random.default_rng(0))


def noop_policy(state, actions, rng):
    return actions[0]


def sole_exploit(state, actions, rng):
    ex = [a for a in actions if a.is_exploit]
    return ex[-1] if ex else actions[0]


def test_noop_rollout_zero():
    hag = building()
    sc = BuildingScenario()
    rng = np.random.default_rng(1)
    tr = rollout(hag, sc, noop_policy, initial_state(hag, sc, rng), 48, rng)
    assert len(tr) == 48 and tr.total_reward == 0.0
    assert [r.t for r in tr.records] == list(range(48))


def test_certain_chain_reaches_root_at_4():
    hag = building(all_certain=True)
    sc = BuildingScenario()

    def chain_policy(state, actions, rng):
        for a in actions:
            if a.is_exploit and a.edge.key in {(1, 2), (2, 3), (3, 4), (4, 5)}:
                return a
        return actions[0]

    for seed in range(5):
        rng = np.random.default_rng(seed)
        tr = rollout(hag, sc, chain_policy, initial_state(hag, sc, rng), 48, rng)
        assert tr.time_to_root == 4


def test_rollout_reproducible():
    hag = building()
    sc = BuildingScenario()

    def randomish(state, actions, rng):
        return actions[int(rng.integers(len(actions)))]

    def run():
        rng = np.random.default_rng(42)
        return rollout(hag, sc, randomish, initial_state(hag, sc, rng), 48, rng)

    a, b = run(), run()
    assert a.records == b.records


def test_initial_state_building():
    hag = building()
    sc = BuildingScenario()
    s = initial_state(hag, sc, np.random.default_rng(0))
    assert s.security == (1, 0, 0, 0, 0) and 23.0 <= s.physical[0] <= 25.0


def test_initial_state_fixed_temp():
    hag = building()
    sc = BuildingScenario(BuildingParams(initial_temp=24.0))
    assert initial_state(hag, sc, np.random.default_rng(0)).physical == (24.0,)


def test_initial_state_seeds_differ():
    hag = building()
    sc = BuildingScenario()
    x0 = initial_state(hag, sc, np.random.default_rng(1)).physical
    x1 = initial_state(hag, sc, np.random.default_rng(2)).physical
    assert x0 != x1


def test_success_frequency_binomial():
    p = 0.37
    hag = two_node(p)
    s = SystemState(0, (1, 0))
    a = hag.edge_action(1, 2)
    n = 10_000
    hits = sum(step(hag, NullScenario(), s, a, rng).success for rng in episode_streams(11, n))
    assert abs(hits / n - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_outcomes_match_step_branches():
    hag = building(1 / 3)
    sc = BuildingScenario()
    s = SystemState(12, (1, 1, 1, 1, 1), (24.3,), (15.0,), 25.7)
    acts = hag.available_actions(s.mask)
    out = outcomes(hag, sc, s, acts)
    for row, a in enumerate(acts):
        for hit, u in ((True, 0.0), (False, 0.9999)):
            class R:
                def random(self):
                    return u

                def uniform(self, lo, hi):
                    return 0.0
            res = step(hag, sc, s, a, R(), next_outside=24.0)
            expect = out.reward_succ[row] if (hit or a.is_noop) else out.reward_fail[row]
            assert res.reward == expect


def test_trace_csv(tmp_path):
    hag = building()
    sc = BuildingScenario()
    rng = np.random.default_rng(0)
    tr = rollout(hag, sc, sole_exploit, initial_state(hag, sc, rng), 10, rng)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == 10
    assert sum(float(r["reward"]) for r in rows) == pytest.approx(tr.total_reward, abs=1e-12)


def test_null_scenario_constant_physical_reward():
    hag = chain(1, phys_reward=0.5, phys_cost=0.1)
    s = SystemState(0, (1, 1), (0.0,), (0.0,))
    act = hag.node_actions(2)[0]
    res = step(hag, NullScenario(3), s, act, np.random.default_rng(0))
    assert res.reward == pytest.approx(0.4, abs=1e-15) and res.attack_reward == 0.5
