"""Exact finite-horizon dynamic programming on graphs without continuous state.

Used as an oracle for the learners: the state is ``(t, mask)`` and every
transition is enumerated directly from the graph definition.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable


def _branches(hag, t: int, mask: int):
    """Yield ``(action_index, [(prob, reward, next_mask), ...])`` for every available action."""
    r0 = hag.noop_reward
    yield 0, [(1.0, r0, mask)]
    for i, e in enumerate(hag.edges):
        if (mask >> (e.src - 1)) & 1 and not (mask >> (e.dst - 1)) & 1:
            p = e.prob.at(t)
            yield 1 + i, [(p, e.reward - e.cost, mask | (1 << (e.dst - 1))),
                          (1.0 - p, r0 - e.cost, mask)]
    base = 1 + len(hag.edges)
    j = base
    for nd in hag.nodes:
        for spec in nd.physical_actions:
            if (mask >> (nd.id - 1)) & 1:
                p = spec.prob.at(t)
                yield j, [(p, spec.reward - spec.cost, mask), (1.0 - p, r0 - spec.cost, mask)]
            j += 1


def optimal_values(hag, horizon: int, gamma: float = 1.0) -> Callable[[int, int], float]:
    """``V(t, mask)``: optimal expected return from ``t`` to the horizon."""

    @lru_cache(maxsize=None)
    def v(t: int, mask: int) -> float:
        if t >= horizon:
            return 0.0
        return max(sum(p * (r + gamma * v(t + 1, m)) for p, r, m in br)
                   for _, br in _branches(hag, t, mask))

    return v


def optimal_q(hag, horizon: int, t: int, mask: int, gamma: float = 1.0) -> dict[int, float]:
    v = optimal_values(hag, horizon, gamma)
    return {a: sum(p * (r + gamma * v(t + 1, m)) for p, r, m in br)
            for a, br in _branches(hag, t, mask)}


def policy_value(hag, horizon: int, policy: Callable[[int, int, list[int]], dict[int, float]],
                 t: int = 0, mask: int | None = None, gamma: float = 1.0) -> float:
    """Expected return of a (possibly stochastic) policy ``(t, mask, available) -> {action: prob}``."""
    if mask is None:
        mask = sum(1 << (n - 1) for n in hag.entry_nodes)

    @lru_cache(maxsize=None)
    def v(t: int, mask: int) -> float:
        if t >= horizon:
            return 0.0
        branches = dict(_branches(hag, t, mask))
        dist = policy(t, mask, sorted(branches))
        total = 0.0
        for a, w in dist.items():
            if w:
                total += w * sum(p * (r + gamma * v(t + 1, m)) for p, r, m in branches[a])
        return total

    return v(t, mask)
