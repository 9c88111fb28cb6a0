"""One-step actor-critic: TD(0) critic on tile features, softmax actor with per-action blocks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from hagemu.adp import TileConfig
from hagemu.attack_graph import Action, Hag
from hagemu.environment import Scenario, episode_streams, initial_state, step
from hagemu.function_approx import (
    PreferenceWeights,
    ScoreGradient,
    StateFeaturizer,
    ValueWeights,
    apply_score,
    sgd_step,
    softmax_policy,
    value,
)

log = logging.getLogger(__name__)


@dataclass
class AcConfig:
    episodes: int = 10_000
    # None means 0.1 / num_tilings (critic) and 0.01 / num_tilings (actor)
    critic_step: float | None = None
    actor_step: float | None = None
    discount: float = 1.0
    seed: int = 0
    horizon: int | None = None
    tiles: TileConfig = field(default_factory=TileConfig)

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if not self.alpha_theta > self.alpha_psi > 0:
            raise ValueError("need critic step > actor step > 0")

    @property
    def alpha_theta(self) -> float:
        return self.critic_step if self.critic_step is not None else 0.1 / self.tiles.num_tilings

    @property
    def alpha_psi(self) -> float:
        return self.actor_step if self.actor_step is not None else 0.01 / self.tiles.num_tilings


def td_error(weights: ValueWeights, reward: float, idx, idx_next, terminal: bool,
             gamma: float) -> float:
    theta = weights.theta
    j_next = 0.0 if terminal else float(theta[idx_next].sum())
    return reward + gamma * j_next - float(theta[idx].sum())


def critic_update(weights: ValueWeights, delta: float, idx, step_size: float) -> None:
    sgd_step(weights, idx, delta, step_size)


def actor_update(prefs: PreferenceWeights, delta: float, score: ScoreGradient, step_size: float,
                 discount_weight: float = 1.0) -> None:
    apply_score(prefs, score, step_size * discount_weight * delta)


@dataclass
class AcResult:
    weights: ValueWeights
    prefs: PreferenceWeights
    featurizer: StateFeaturizer
    returns: list[float] = field(default_factory=list)
    mean_abs_td: list[float] = field(default_factory=list)
    discount_weights: list[float] = field(default_factory=list)


def _sample(pi: np.ndarray, rng) -> int:
    i = int(np.searchsorted(np.cumsum(pi), rng.random() * pi.sum(), side="right"))
    return min(i, len(pi) - 1)


def train(hag: Hag, scenario: Scenario, config: AcConfig,
          featurizer: StateFeaturizer | None = None) -> AcResult:
    horizon = config.horizon or scenario.horizon
    featurizer = featurizer or config.tiles.featurizer(hag, scenario, horizon)
    weights = ValueWeights.zeros(featurizer.size)
    prefs = PreferenceWeights.zeros(len(hag.actions), featurizer.size)
    result = AcResult(weights, prefs, featurizer)
    gamma = config.discount
    for k, rng in enumerate(episode_streams(config.seed, config.episodes)):
        phase = scenario.train_phase(k, rng)
        state = initial_state(hag, scenario, rng, phase)
        discount_weight = 1.0
        total, td_sum = 0.0, 0.0
        idx = featurizer(state)
        for t in range(horizon):
            acts = hag.available_actions(state.mask)
            ids = hag.available_ids(state.mask)
            pi = softmax_policy(prefs, idx, ids)
            choice = _sample(pi, rng)
            res = step(hag, scenario, state, acts[choice], rng, horizon=horizon, check=False)
            nxt = res.next_state
            terminal = nxt.t >= horizon
            idx_next = featurizer(nxt)
            delta = td_error(weights, res.reward, idx, idx_next, terminal, gamma)
            coef = -pi
            coef[choice] += 1.0
            score = ScoreGradient(ids, coef, idx)
            critic_update(weights, delta, idx, config.alpha_theta)
            actor_update(prefs, delta, score, config.alpha_psi, discount_weight)
            discount_weight = gamma ** (t + 1)
            total += res.reward
            td_sum += abs(delta)
            state, idx = nxt, idx_next
        result.returns.append(total)
        result.mean_abs_td.append(td_sum / horizon)
        result.discount_weights.append(discount_weight)
        if (k + 1) % 2000 == 0:
            log.info("AC episode %d: mean return (last 2000) %.3f", k + 1,
                     float(np.mean(result.returns[-2000:])))
    return result


class SoftmaxActor:
    """Frozen actor; samples from the softmax unless ``greedy`` (argmax, lowest index on ties)."""

    def __init__(self, hag: Hag, prefs: PreferenceWeights, featurizer: StateFeaturizer,
                 greedy: bool = False):
        self.hag, self.prefs, self.featurizer, self.greedy = hag, prefs, featurizer, greedy

    def probabilities(self, state, actions=None):
        if actions is None:
            actions = self.hag.available_actions(state.mask)
        ids = np.array([a.index for a in actions], dtype=np.int64)
        return actions, softmax_policy(self.prefs, self.featurizer(state), ids)

    def __call__(self, state, actions=None, rng=None) -> Action:
        actions, pi = self.probabilities(state, actions)
        if self.greedy:
            return actions[int(np.argmax(pi))]
        return actions[_sample(pi, rng)]
