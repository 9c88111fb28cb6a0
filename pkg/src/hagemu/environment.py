"""Finite-horizon attack MDP over a hybrid attack graph.

One action per time step.  An exploit on edge ``(i, j)`` sets bit ``j`` with its
own success probability; a physical action perturbs the dynamics at its node
and succeeds with the action's probability.  Net reward per step is
``r^a - c^a`` on success and ``r^noop - c^a`` on failure; the no-op always pays
``r^noop``.  Physical states advance every step whatever the action.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hagemu.attack_graph import Action, Hag, HagError, action_space


class IllegalAction(HagError):
    pass


class HorizonExceeded(HagError):
    pass


def episode_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-episode generators spawned from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class Scenario:
    """Continuous side of the MDP.  The base class has no dynamics.

    Each physical node carries one scalar state.  ``advance`` works on one node
    and must accept either a float perturbation or an array of candidates.
    """

    name = "null"
    horizon = 48

    def initial_physical(self, hag: Hag, rng) -> np.ndarray:
        return np.zeros(len(hag.physical_nodes))

    def initial_control(self, hag: Hag) -> np.ndarray:
        return np.zeros(len(hag.physical_nodes))

    def outside(self, t: int, phase: float, rng) -> float:
        return 0.0

    def mean_outside(self, t: int, phase: float) -> float:
        return 0.0

    def advance(self, x, z_prev, w, perturbation):
        """Return ``(x_next, measured, supply, airflow)`` for one physical node."""
        zero = 0.0 * perturbation
        return x + zero, x + perturbation, z_prev + zero, zero

    def physical_reward(self, action: Action, x_next):
        """Success-branch reward r^a of a physical action (cost excluded)."""
        return action.spec.reward + 0.0 * np.asarray(x_next)

    def discomfort(self, x) -> float:
        return 0.0

    def feature_bounds(self) -> list[tuple[float, float]]:
        return []

    def fill_features(self, out, physical, outside) -> None:
        """Write the continuous feature columns (besides time) into ``out`` (B, d)."""

    def train_phase(self, episode: int, rng) -> float:
        return 0.0

    def test_phase(self, episode: int, rng) -> float:
        return 0.0


class NullScenario(Scenario):
    """Cyber-only scenario: physical actions pay their constant declared reward."""

    def __init__(self, horizon: int = 48):
        self.horizon = horizon


@dataclass(frozen=True)
class SystemState:
    t: int
    security: tuple[int, ...]
    physical: tuple[float, ...] = ()
    last_control: tuple[float, ...] = ()
    # outside disturbance acting on this step's dynamics
    outside: float = 0.0
    # episode-level phase of the disturbance process
    phase: float = 0.0
    mask: int = field(default=-1, compare=False)

    def __post_init__(self):
        if self.mask < 0:
            object.__setattr__(self, "mask", sum(1 << i for i, b in enumerate(self.security) if b))

    @property
    def security_array(self) -> np.ndarray:
        return np.array(self.security, dtype=bool)

    def compromised(self, node_id: int) -> bool:
        return bool(self.security[node_id - 1])


@dataclass
class _Block:
    """Per-action-set constants, cached on the graph."""

    ids: np.ndarray
    dstbit: np.ndarray
    r_succ: np.ndarray
    r_fail: np.ndarray
    # (column, rows, magnitudes, costs, first action, uniform reward model?)
    groups: list


def _block(hag: Hag, actions: Sequence[Action]) -> _Block:
    key = tuple(a.index for a in actions)
    blk = hag._block_cache.get(key)
    if blk is not None:
        return blk
    r0 = hag.noop_reward
    k = len(actions)
    dstbit = np.zeros(k, dtype=np.int64)
    rs = np.full(k, r0)
    rf = np.full(k, r0)
    by_node: dict[int, list[int]] = {}
    for row, a in enumerate(actions):
        if a.is_exploit:
            dstbit[row] = 1 << (a.edge.dst - 1)
            rs[row] = a.edge.reward - a.edge.cost
            rf[row] = r0 - a.edge.cost
        elif a.is_physical:
            rs[row] = a.spec.reward - a.spec.cost
            rf[row] = r0 - a.spec.cost
            by_node.setdefault(a.node, []).append(row)
    groups = []
    for node, rows in by_node.items():
        acts = [actions[r] for r in rows]
        models = {a.spec.reward_model for a in acts}
        groups.append((hag.physical_nodes.index(node), np.array(rows),
                       np.array([a.spec.magnitude for a in acts]),
                       np.array([a.spec.cost for a in acts]), acts,
                       len(models) == 1 and None not in models))
    blk = _Block(np.array(key, dtype=np.int64), dstbit, rs, rf, groups)
    hag._block_cache[key] = blk
    return blk


@dataclass
class Outcomes:
    """Success/failure branches of a batch of candidate actions from one state."""

    actions: Sequence[Action]
    prob: np.ndarray  # (K,)
    reward_succ: np.ndarray  # (K,)
    reward_fail: np.ndarray  # (K,)
    mask_succ: np.ndarray  # (K,) int
    mask_fail: int
    x_succ: np.ndarray  # (K, P)
    x_fail: list  # (P,)
    y_succ: np.ndarray  # (K, P) measured values
    y_fail: list  # (P,)
    ctrl_succ: np.ndarray  # (K, P, 2) supply temp, airflow
    ctrl_fail: list  # (P,) of (supply temp, airflow)
    attack_reward: np.ndarray  # (K,) success-branch r^a of physical actions, else 0

    def expected_reward(self) -> np.ndarray:
        return self.prob * self.reward_succ + (1.0 - self.prob) * self.reward_fail


def outcomes(hag: Hag, scenario: Scenario, state: SystemState, actions: Sequence[Action]) -> Outcomes:
    """Rewards and successor pieces for each action's success and failure branch."""
    blk = _block(hag, actions)
    k = len(actions)
    w = state.outside
    x_fail, y_fail, ctrl_fail = [], [], []
    for x, z in zip(state.physical, state.last_control):
        xn, yn, zn, mn = scenario.advance(x, z, w, 0.0)
        x_fail.append(float(xn))
        y_fail.append(float(yn))
        ctrl_fail.append((float(zn), float(mn)))
    p = len(x_fail)

    prob = hag.prob_row(state.t)[blk.ids]
    mask_succ = state.mask | blk.dstbit
    r_succ = blk.r_succ
    attack = np.zeros(k)
    x_succ = np.empty((k, p))
    x_succ[:] = x_fail
    y_succ = np.empty((k, p))
    y_succ[:] = y_fail
    ctrl_succ = np.empty((k, p, 2))
    ctrl_succ[:] = np.reshape(ctrl_fail, (p, 2))
    if blk.groups:
        r_succ = r_succ.copy()
        for col, rows, mags, costs, acts, uniform in blk.groups:
            xn, yn, zn, mn = scenario.advance(state.physical[col], state.last_control[col], w, mags)
            x_succ[rows, col] = xn
            y_succ[rows, col] = yn
            ctrl_succ[rows, col, 0] = zn
            ctrl_succ[rows, col, 1] = mn
            if uniform:
                gains = scenario.physical_reward(acts[0], x_succ[rows, col])
            else:
                gains = np.array([float(scenario.physical_reward(a, x_succ[r, col]))
                                  for a, r in zip(acts, rows)])
            attack[rows] = gains
            r_succ[rows] = gains - costs
    return Outcomes(actions, prob, r_succ, blk.r_fail, mask_succ, state.mask, x_succ, x_fail,
                    y_succ, y_fail, ctrl_succ, ctrl_fail, attack)


@dataclass
class StepResult:
    next_state: SystemState
    reward: float
    success: bool
    control: tuple[float, float]
    measured: float
    attack_reward: float


def initial_state(hag: Hag, scenario: Scenario, rng, phase: float = 0.0) -> SystemState:
    """Entry points owned, everything else clear; physical values drawn by the scenario."""
    x = scenario.initial_physical(hag, rng)
    z = scenario.initial_control(hag)
    w = scenario.outside(0, phase, rng)
    return SystemState(0, tuple(int(b) for b in hag.initial_security()),
                       tuple(float(v) for v in x), tuple(float(v) for v in z), float(w), float(phase))


def realize(state: SystemState, out: Outcomes, row: int, success: bool,
            next_outside: float) -> StepResult:
    """Build the step result for branch ``success`` of candidate ``row``."""
    n = len(state.security)
    if success:
        mask = int(out.mask_succ[row])
        x = tuple(out.x_succ[row].tolist())
        ctrl = out.ctrl_succ[row].tolist()
        reward = float(out.reward_succ[row])
        y = out.y_succ[row].tolist()
        gain = float(out.attack_reward[row])
    else:
        mask = out.mask_fail
        x = tuple(out.x_fail)
        ctrl = out.ctrl_fail
        reward = float(out.reward_fail[row])
        y = out.y_fail
        gain = 0.0
    security = state.security if mask == state.mask else tuple((mask >> i) & 1 for i in range(n))
    nxt = SystemState(state.t + 1, security, x, tuple(c[0] for c in ctrl), float(next_outside),
                      state.phase, mask)
    first = tuple(ctrl[0]) if ctrl else (float("nan"), 0.0)
    return StepResult(nxt, reward, success, first, y[0] if y else float("nan"), gain)


def step(hag: Hag, scenario: Scenario, state: SystemState, action: Action, rng,
         next_outside: float | None = None, horizon: int | None = None,
         check: bool = True) -> StepResult:
    """Advance one step.  ``next_outside`` pins the next disturbance (sample-path mode)."""
    horizon = scenario.horizon if horizon is None else horizon
    if state.t >= horizon:
        raise HorizonExceeded(f"t={state.t} >= horizon {horizon}")
    if check and action not in action_space(hag, state.security, state.t):
        raise IllegalAction(f"{action!r} not available at t={state.t}")
    out = outcomes(hag, scenario, state, (action,))
    success = bool(rng.random() < out.prob[0])
    if next_outside is None:
        next_outside = scenario.outside(state.t + 1, state.phase, rng)
    return realize(state, out, 0, success, next_outside)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("t", "zone_temp", "measured_temp", "outside_temp", "action", "success", "reward",
                 "supply_temp", "airflow", "security_mask", "magnitude", "attack_reward", "discomfort")


@dataclass
class TraceRecord:
    t: int
    zone_temp: float
    measured_temp: float
    outside_temp: float
    action: str
    success: bool
    reward: float
    supply_temp: float
    airflow: float
    security_mask: int
    magnitude: float = 0.0
    attack_reward: float = 0.0
    discomfort: float = 0.0
    is_physical: bool = False


@dataclass
class EpisodeTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final_state: SystemState | None = None
    time_to_root: int | None = None

    @property
    def total_reward(self) -> float:
        return float(sum(r.reward for r in self.records))

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for r in self.records:
                writer.writerow([r.t, repr(r.zone_temp), repr(r.measured_temp), repr(r.outside_temp),
                                 r.action, int(r.success), repr(r.reward), repr(r.supply_temp),
                                 repr(r.airflow), r.security_mask, repr(r.magnitude),
                                 repr(r.attack_reward), repr(r.discomfort)])


Policy = Callable[[SystemState, list, np.random.Generator], Action]


def root_reached(hag: Hag, state: SystemState) -> bool:
    return any(state.security[n - 1] for n in hag.physical_nodes)


def rollout(hag: Hag, scenario: Scenario, policy: Policy, s0: SystemState, horizon: int | None,
            rng, outside_path: Sequence[float] | None = None) -> EpisodeTrace:
    """Run ``policy(state, available_actions, rng)`` from ``s0`` until ``t == horizon``."""
    horizon = scenario.horizon if horizon is None else horizon
    trace = EpisodeTrace()
    state = s0
    if root_reached(hag, state):
        trace.time_to_root = state.t
    while state.t < horizon:
        acts = hag.available_actions(state.mask)
        action = policy(state, acts, rng)
        if action not in acts:
            raise IllegalAction(f"policy chose {action!r} at t={state.t}")
        nxt_w = None if outside_path is None else outside_path[state.t + 1]
        res = step(hag, scenario, state, action, rng, next_outside=nxt_w, horizon=horizon, check=False)
        trace.records.append(TraceRecord(
            t=state.t,
            zone_temp=state.physical[0] if state.physical else float("nan"),
            measured_temp=res.measured, outside_temp=state.outside,
            action=action.label, success=res.success, reward=res.reward,
            supply_temp=res.control[0], airflow=res.control[1], security_mask=state.mask,
            magnitude=action.magnitude, attack_reward=res.attack_reward,
            discomfort=float(scenario.discomfort(res.next_state.physical[0])) if state.physical else 0.0,
            is_physical=action.is_physical,
        ))
        state = res.next_state
        if trace.time_to_root is None and root_reached(hag, state):
            trace.time_to_root = state.t
    trace.final_state = state
    return trace
