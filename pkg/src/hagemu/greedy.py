"""Two-phase greedy attack baseline.

Phase 1 keeps the ``ell`` entry exploits whose root-reaching action sets are
jointly most valuable (weighted coverage, built greedily).  Phase 2 plays the
best nominal net reward among the surviving exploits, any owned physical
actions, and the no-op.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from hagemu.attack_graph import Action, Hag, HagError, action_space, available_edges, reachable_actions
from hagemu.environment import Scenario, SystemState, outcomes

BOUND = 1.0 - 1.0 / math.e


class NoEntryExploits(HagError):
    pass


class TooLargeForExhaustive(HagError):
    pass


def expected_net(hag: Hag, action: Action, t: int) -> float:
    """Success-weighted net reward of an exploit (failure pays the no-op reward)."""
    e = action.edge
    p = e.prob.at(t)
    return p * (e.reward - e.cost) + (1.0 - p) * (hag.noop_reward - e.cost)


def path_value(hag: Hag, a, state: SystemState) -> float:
    act = hag.action(a)
    return sum(expected_net(hag, b, state.t) for b in reachable_actions(hag, act))


def covered(hag: Hag, A) -> frozenset[Action]:
    out: set[Action] = set()
    for a in A:
        out |= reachable_actions(hag, a)
    return frozenset(out)


def set_value(hag: Hag, A, state: SystemState) -> float:
    """Value of the union of root-reaching sets; each action counted once."""
    return sum(expected_net(hag, b, state.t) for b in sorted(covered(hag, [hag.action(a) for a in A]),
                                                             key=lambda x: x.index))


@dataclass(frozen=True)
class PrunedSet:
    actions: tuple[Action, ...]
    budget: int
    pool: frozenset[Action]


def entry_exploits(hag: Hag, state: SystemState) -> list[Action]:
    return [hag.edge_action(e.src, e.dst) for e in available_edges(hag, state.security, state.t)]


def prune(hag: Hag, s0: SystemState, ell: int) -> PrunedSet:
    if ell < 1:
        raise ValueError("budget must be at least 1")
    candidates = entry_exploits(hag, s0)
    if not candidates:
        raise NoEntryExploits("no exploit is available from the initial state")
    chosen: list[Action] = []
    while len(chosen) < ell:
        rest = [a for a in candidates if a not in chosen]
        if not rest:
            break
        best, best_val = None, -math.inf
        for a in rest:  # index order, strict > keeps the lowest index on ties
            v = set_value(hag, chosen + [a], s0)
            if v > best_val + 1e-12:
                best, best_val = a, v
        chosen.append(best)
    return PrunedSet(tuple(chosen), ell, covered(hag, chosen))


def myopic_action(hag: Hag, scenario: Scenario, pruned: PrunedSet, state: SystemState) -> Action:
    """Highest nominal net reward (success assumed) in the reduced action set."""
    acts = [a for a in action_space(hag, state.security, state.t)
            if a.is_noop or a.is_physical or a in pruned.pool]
    out = outcomes(hag, scenario, state, acts)
    return acts[int(np.argmax(out.reward_succ))]


class GreedyPolicy:
    """Prunes once from the initial compromise state, or at every step with ``reprune``."""

    def __init__(self, hag: Hag, scenario: Scenario, ell: int = 1, reprune: bool = False):
        self.hag, self.scenario, self.ell, self.reprune = hag, scenario, ell, reprune
        self.initial_state = SystemState(0, tuple(int(b) for b in hag.initial_security()))
        self.initial = prune(hag, self.initial_state, ell)
        self._cache: dict[tuple, PrunedSet] = {}

    def pruned_for(self, state: SystemState) -> PrunedSet:
        if not self.reprune:
            return self.initial
        key = (state.security, state.t)
        if key not in self._cache:
            if entry_exploits(self.hag, state):
                self._cache[key] = prune(self.hag, state, self.ell)
            else:
                self._cache[key] = PrunedSet((), self.ell, frozenset())
        return self._cache[key]

    def __call__(self, state, actions=None, rng=None) -> Action:
        return myopic_action(self.hag, self.scenario, self.pruned_for(state), state)


@dataclass
class Certificate:
    greedy_value: float
    optimal_value: float
    ratio: float
    greedy_set: tuple
    optimal_set: tuple


def certify_bound(hag: Hag, s0: SystemState, ell: int, max_candidates: int = 20) -> Certificate:
    """Compare the greedy selection with an exhaustive search over all size-``ell`` subsets."""
    candidates = entry_exploits(hag, s0)
    if len(candidates) > max_candidates:
        raise TooLargeForExhaustive(f"{len(candidates)} entry exploits > {max_candidates}")
    pruned = prune(hag, s0, ell)
    g = set_value(hag, pruned.actions, s0)
    size = min(ell, len(candidates))
    best, best_set = -math.inf, ()
    for combo in itertools.combinations(candidates, size):
        v = set_value(hag, combo, s0)
        if v > best:
            best, best_set = v, combo
    ratio = 1.0 if best <= 0 else g / best
    return Certificate(g, best, ratio, pruned.actions, best_set)
