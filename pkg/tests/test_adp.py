import numpy as np
import pytest

from _graphs import chain, edge
from hagemu import adp, exact
from hagemu.attack_graph import Hag, Node, NodeKind
from hagemu.environment import NullScenario, SystemState
from hagemu.function_approx import ValueWeights, value


def two_node(p=0.9):
    nodes = [Node(1, NodeKind.CYBER, entry_point=True), Node(2, NodeKind.PHYSICAL)]
    return Hag(nodes, [edge(1, 2, p)])


def setup(hag, horizon=3):
    sc = NullScenario(horizon)
    cfg = adp.AdpConfig(episodes=0, horizon=horizon)
    feat = cfg.tiles.featurizer(hag, sc, horizon)
    return sc, cfg, feat, ValueWeights.zeros(feat.size)


def st(t, bits, n_phys=1):
    return SystemState(t, bits, (0.0,) * n_phys, (0.0,) * n_phys)


def test_backup_hand_expectation():
    hag = two_node()
    sc, cfg, feat, w = setup(hag)
    b = adp.greedy_backup(hag, sc, st(0, (1, 0)), w, feat, cfg)
    assert b.v_hat == pytest.approx(0.80, abs=1e-12)
    assert b.action == hag.edge_action(1, 2)


def test_backup_noop_only():
    hag = two_node()
    sc, cfg, feat, w = setup(hag)
    b = adp.greedy_backup(hag, sc, st(0, (1, 1)), w, feat, cfg)
    assert b.v_hat == 0.0 and b.action.is_noop


def test_backup_terminal_ignores_successor():
    hag = two_node()
    sc, cfg, feat, w = setup(hag)
    w.theta[:] = 5.0
    b = adp.greedy_backup(hag, sc, st(2, (1, 0)), w, feat, cfg)
    assert b.v_hat == pytest.approx(0.80, abs=1e-12)


def test_sgd_update_algebra():
    w = ValueWeights.zeros(64)
    idx = np.arange(0, 64, 8)
    adp.sgd_update(w, idx, 1.0, 0.1)
    assert value(w, idx) == pytest.approx(0.8, abs=1e-15)


def test_sgd_update_zero_gap():
    w = ValueWeights(np.linspace(0, 1, 16))
    idx = np.array([1, 5, 9])
    before = w.theta.copy()
    adp.sgd_update(w, idx, value(w, idx), 0.1)
    assert np.array_equal(w.theta, before)


def test_sgd_update_geometric():
    w = ValueWeights.zeros(64)
    idx = np.arange(0, 64, 8)
    errs = [abs(adp.sgd_update(w, idx, 2.0, 0.05)) for _ in range(10)]
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    assert np.allclose(ratios, 1 - 0.05 * 8, atol=1e-12)


def test_sgd_update_rejects_bad_step():
    with pytest.raises(ValueError):
        adp.sgd_update(ValueWeights.zeros(4), np.array([0]), 1.0, 0.0)


def test_zero_episodes_zero_weights():
    hag = two_node()
    res = adp.train(hag, NullScenario(3), adp.AdpConfig(episodes=0))
    assert not res.weights.theta.any() and res.returns == []


def test_training_reproducible():
    hag = chain(2, probs=[0.8, 0.6])
    cfg = adp.AdpConfig(episodes=200, seed=4)
    a = adp.train(hag, NullScenario(3), cfg)
    b = adp.train(hag, NullScenario(3), cfg)
    assert np.array_equal(a.weights.theta, b.weights.theta) and a.returns == b.returns


def test_certain_chain_matches_dp():
    hag = chain(2)
    horizon = 3
    res = adp.train(hag, NullScenario(horizon), adp.AdpConfig(episodes=300, seed=1))
    v = exact.optimal_values(hag, horizon)
    for (t, mask) in res.visits:
        s = st(t, tuple((mask >> i) & 1 for i in range(3)))
        assert value(res.weights, res.featurizer(s)) == pytest.approx(v(t, mask), rel=0.05)


def test_policy_picks_positive_exploit_and_breaks_ties_low():
    hag = two_node()
    sc, cfg, feat, w = setup(hag)
    pol = adp.extract_policy(hag, sc, w, feat, cfg)
    assert pol(st(0, (1, 0))) == hag.edge_action(1, 2)
    zero = two_node(p=0.1)  # expected net 0.1 - 0.1 = 0 ties the no-op
    pol = adp.extract_policy(zero, sc, w, feat, cfg)
    assert pol(st(2, (1, 0))).is_noop
    assert pol(st(2, (1, 0))) == pol(st(2, (1, 0)))


def test_monte_carlo_converges_to_exact():
    from hagemu.building import BuildingScenario, build_building_hag
    hag = build_building_hag(1.0)
    sc = BuildingScenario()
    cfg = adp.AdpConfig(episodes=0)
    feat = cfg.tiles.featurizer(hag, sc, 48)
    rng = np.random.default_rng(0)
    w = ValueWeights(rng.normal(0, 0.3, feat.size))
    s = SystemState(6, (1, 1, 1, 1, 1), (24.6,), (24.0,), 26.0)
    exact_b = adp.greedy_backup(hag, sc, s, w, feat, cfg, next_outside=25.0)
    mc = adp.AdpConfig(episodes=0, expectation="monte_carlo", mc_samples=10_000)
    mc_b = adp.greedy_backup(hag, sc, s, w, feat, mc, next_outside=25.0, rng=rng)
    assert np.allclose(mc_b.q, exact_b.q, rtol=0.02, atol=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        adp.AdpConfig(smoothing=1.5)
    with pytest.raises(ValueError):
        adp.AdpConfig(expectation="guess")
    harm = adp.AdpConfig(schedule="harmonic", harmonic_a=10, step_size=0.1)
    assert harm.step_at(0) == 0.1 and harm.step_at(10) == pytest.approx(0.05)
