"""Model-based approximate dynamic programming with forward-sampled trajectories.

Each visited state gets a one-step lookahead target (expected net reward plus
the current approximation at the successor states), and the linear value
weights take a stochastic-gradient step toward it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from hagemu.attack_graph import Action, Hag
from hagemu.environment import (
    Scenario,
    SystemState,
    episode_streams,
    initial_state,
    Outcomes,
    outcomes,
    realize,
)
from hagemu.function_approx import (
    DivergedWeights,
    StateFeaturizer,
    ValueWeights,
    sgd_step,
    value,
)

log = logging.getLogger(__name__)


@dataclass
class TileConfig:
    num_tilings: int = 8
    tiles_per_dim: int = 8
    time_tiles: int | None = None
    phys_tiles: int | None = None

    def featurizer(self, hag, scenario, horizon) -> StateFeaturizer:
        return StateFeaturizer.build(hag, scenario, horizon, self.num_tilings, self.tiles_per_dim,
                                     self.time_tiles, self.phys_tiles)


@dataclass
class AdpConfig:
    episodes: int = 10_000
    # SGD step; None means 0.1 / num_tilings
    step_size: float | None = None
    # "constant" or "harmonic": step * a / (a + k) at episode k
    schedule: str = "constant"
    harmonic_a: float = 1000.0
    # target smoothing: v <- alpha * v_hat + (1 - alpha) * J; 1 disables it
    smoothing: float = 1.0
    discount: float = 1.0
    expectation: str = "exact"  # "exact" | "monte_carlo"
    mc_samples: int = 100
    seed: int = 0
    horizon: int | None = None
    tiles: TileConfig = field(default_factory=TileConfig)

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        if not 0.0 <= self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in [0, 1]")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.expectation not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown expectation mode {self.expectation!r}")
        if self.schedule not in ("constant", "harmonic"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def base_step(self) -> float:
        return self.step_size if self.step_size is not None else 0.1 / self.tiles.num_tilings

    def step_at(self, episode: int) -> float:
        eps = self.base_step()
        if self.schedule == "harmonic":
            return eps * self.harmonic_a / (self.harmonic_a + episode)
        return eps


@dataclass
class Backup:
    v_hat: float
    action: Action
    q: np.ndarray
    actions: list
    # lookahead pieces reused by the trainer
    outcomes: Outcomes | None = None
    row: int = 0
    current_idx: np.ndarray | None = None


def greedy_backup(hag: Hag, scenario: Scenario, state: SystemState, weights: ValueWeights,
                  featurizer: StateFeaturizer, config: AdpConfig, next_outside: float | None = None,
                  rng=None, horizon: int | None = None, with_current: bool = False) -> Backup:
    """Best one-step lookahead value over the available actions.

    Without ``next_outside`` the successor disturbance is its noise-free mean
    (exact mode) or freshly sampled (Monte Carlo mode).  ``with_current`` also
    returns the tile indices of ``state`` itself, computed in the same batch.
    """
    horizon = horizon or config.horizon or scenario.horizon
    acts = hag.available_actions(state.mask)
    out = outcomes(hag, scenario, state, acts)
    gamma = config.discount
    terminal = state.t + 1 >= horizon
    k = len(acts)
    cur = None

    if config.expectation == "exact":
        if terminal:
            j_succ, j_fail = 0.0, 0.0
            if with_current:
                cur = featurizer(state)
        else:
            w = next_outside if next_outside is not None else scenario.mean_outside(state.t + 1, state.phase)
            # rows: successes, failure, then (optionally) the current state
            n = k + 1 + with_current
            masks = np.empty(n, dtype=np.int64)
            masks[:k] = out.mask_succ
            masks[k] = out.mask_fail
            phys = np.empty((n, out.x_succ.shape[1]))
            phys[:k] = out.x_succ
            phys[k] = out.x_fail
            t = np.full(n, state.t + 1.0)
            ws = np.full(n, float(w))
            if with_current:
                masks[-1] = state.mask
                phys[-1] = state.physical
                t[-1] = state.t
                ws[-1] = state.outside
            idx = featurizer.batch(t, masks, phys, ws)
            vals = weights.theta[idx].sum(axis=1)
            j_succ, j_fail = vals[:k], vals[k]
            if with_current:
                cur = idx[-1]
        q = out.prob * (out.reward_succ + gamma * j_succ) + (1.0 - out.prob) * (out.reward_fail + gamma * j_fail)
    else:
        if rng is None:
            raise ValueError("Monte Carlo expectation needs an rng")
        n = config.mc_samples
        hits = rng.random((n, k)) < out.prob[None, :]
        if terminal:
            js = np.zeros((n, k))
            jf = np.zeros((n, 1))
        else:
            if next_outside is not None:
                ws = np.full(n, float(next_outside))
            else:
                ws = np.array([scenario.outside(state.t + 1, state.phase, rng) for _ in range(n)])
            w_rep = np.repeat(ws, k)
            idx_s = featurizer.batch(state.t + 1, np.tile(out.mask_succ, n), np.tile(out.x_succ, (n, 1)), w_rep)
            js = value(weights, idx_s).reshape(n, k)
            idx_f = featurizer.batch(state.t + 1, np.full(n, out.mask_fail), np.tile(out.x_fail, (n, 1)), ws)
            jf = value(weights, idx_f).reshape(n, 1)
        samples = np.where(hits, out.reward_succ[None, :] + gamma * js, out.reward_fail[None, :] + gamma * jf)
        q = samples.mean(axis=0)
        if with_current:
            cur = featurizer(state)

    best = int(np.argmax(q))  # first maximum -> lowest action index
    return Backup(float(q[best]), acts[best], q, list(acts), out, best, cur)


def sgd_update(weights: ValueWeights, idx, v_hat: float, step_size: float) -> float:
    """Move J(s) toward ``v_hat`` along its gradient; returns the pre-update error ``v_hat - J``."""
    if step_size <= 0:
        raise ValueError("step size must be positive")
    err = v_hat - value(weights, idx)
    sgd_step(weights, idx, err, step_size)
    return err


@dataclass
class TrainResult:
    weights: ValueWeights
    featurizer: StateFeaturizer
    returns: list[float] = field(default_factory=list)
    mean_abs_td: list[float] = field(default_factory=list)
    visits: dict = field(default_factory=dict)


def sample_outside_path(scenario: Scenario, s0: SystemState, horizon: int, rng) -> list[float]:
    return [s0.outside] + [scenario.outside(t, s0.phase, rng) for t in range(1, horizon + 1)]


def train(hag: Hag, scenario: Scenario, config: AdpConfig,
          featurizer: StateFeaturizer | None = None) -> TrainResult:
    horizon = config.horizon or scenario.horizon
    featurizer = featurizer or config.tiles.featurizer(hag, scenario, horizon)
    weights = ValueWeights.zeros(featurizer.size)
    result = TrainResult(weights, featurizer)
    streams = episode_streams(config.seed, config.episodes)
    mc_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    for k, rng in enumerate(streams):
        eps = config.step_at(k)
        phase = scenario.train_phase(k, rng)
        state = initial_state(hag, scenario, rng, phase)
        path = sample_outside_path(scenario, state, horizon, rng)
        total, td = 0.0, 0.0
        for t in range(horizon):
            backup = greedy_backup(hag, scenario, state, weights, featurizer, config,
                                   next_outside=path[t + 1], rng=mc_rng, horizon=horizon,
                                   with_current=True)
            idx = backup.current_idx
            target = backup.v_hat
            if config.smoothing < 1.0:
                target = config.smoothing * target + (1.0 - config.smoothing) * value(weights, idx)
            try:
                err = sgd_update(weights, idx, target, eps)
            except DivergedWeights:
                log.error("ADP diverged at episode %d, t=%d", k, t)
                raise
            td += abs(err)
            key = (state.t, state.mask)
            result.visits[key] = result.visits.get(key, 0) + 1
            # same draw order as step(): one uniform for the success test
            success = bool(rng.random() < backup.outcomes.prob[backup.row])
            res = realize(state, backup.outcomes, backup.row, success, path[t + 1])
            total += res.reward
            state = res.next_state
        result.returns.append(total)
        result.mean_abs_td.append(td / horizon)
        if (k + 1) % 2000 == 0:
            log.info("ADP episode %d: mean return (last 2000) %.3f", k + 1,
                     float(np.mean(result.returns[-2000:])))
    return result


class AdpPolicy:
    """Greedy lookahead policy on frozen weights (ties go to the lowest action index)."""

    def __init__(self, hag: Hag, scenario: Scenario, weights: ValueWeights,
                 featurizer: StateFeaturizer, config: AdpConfig):
        self.hag, self.scenario = hag, scenario
        self.weights, self.featurizer = weights, featurizer
        self.config = AdpConfig(**{**config.__dict__, "expectation": "exact"})
        self.horizon = config.horizon or scenario.horizon

    def __call__(self, state, actions=None, rng=None) -> Action:
        return greedy_backup(self.hag, self.scenario, state, self.weights, self.featurizer,
                             self.config, horizon=self.horizon).action


def extract_policy(hag: Hag, scenario: Scenario, weights: ValueWeights, featurizer: StateFeaturizer,
                   config: AdpConfig) -> AdpPolicy:
    return AdpPolicy(hag, scenario, weights, featurizer, config)
