"""Single-zone building under sensor deception.

The adversary, once it owns the zone node, adds a perturbation ``a`` to the
zone temperature reading.  A threshold AHU controller reacts to the (possibly
falsified) reading and the zone evolves under outside-air exchange.  The
attacker is paid for occupant discomfort and pays ``0.5 a**2`` per attempt.

All formulas accept numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from hagemu.attack_graph import (
    ExploitEdge,
    Hag,
    HagError,
    Node,
    NodeKind,
    PhysicalActionSpec,
    ProbSpec,
    register_prob,
)
from hagemu.environment import Scenario

X_LOW = 23.0
X_HIGH = 25.0
SUPPLY_HEAT = 30.0
SUPPLY_COOL = 15.0
MAX_AIRFLOW = 10.0
AIRFLOW_GAIN = 0.01
AMBIENT_GAIN = 0.1
ACTION_BOUND = 2.0
HORIZON = 48

# Table of cyber exploits: (src, dst, success probability)
CYBER_EXPLOITS = ((1, 2, 0.9), (1, 3, 0.7), (2, 3, 0.9), (3, 4, 0.8), (4, 5, 0.5))
EXPLOIT_REWARD = 1.0
EXPLOIT_COST = 0.1
ZONE_NODE = 5
ALLOWED_GRID_STEPS = (1, 3, 5, 7, 9)


class BadGridStep(HagError):
    pass


class ZeroCostTrace(ValueError):
    """The trace spent nothing on perturbations, so return on investment is undefined."""


def grid_steps(delta: float, bound: float = ACTION_BOUND) -> int:
    """Number of points on the symmetric grid ``-bound, -bound+delta, ..., bound``."""
    s = round(1.0 / delta)
    if s not in ALLOWED_GRID_STEPS or not math.isclose(delta * s, 1.0, rel_tol=1e-9):
        raise BadGridStep(f"grid step {delta} is not 1/s for s in {ALLOWED_GRID_STEPS}")
    return int(round(2 * bound * s)) + 1


def perturbation_grid(delta: float, bound: float = ACTION_BOUND) -> np.ndarray:
    count = grid_steps(delta, bound)
    s = round(1.0 / delta)
    return np.array([(-bound * s + i) / s for i in range(count)])


@dataclass(frozen=True)
class BuildingParams:
    x_low: float = X_LOW
    x_high: float = X_HIGH
    airflow_gain: float = AIRFLOW_GAIN
    ambient_gain: float = AMBIENT_GAIN
    supply_heat: float = SUPPLY_HEAT
    supply_cool: float = SUPPLY_COOL
    max_airflow: float = MAX_AIRFLOW
    action_bound: float = ACTION_BOUND
    delta: float = 1.0
    horizon: int = HORIZON
    outside_amplitude: float = 4.0
    outside_frequency: float = 0.125
    outside_noise: float = 1.0
    # fixed initial temperature; None samples uniformly on [x_low, x_high]
    initial_temp: float | None = None
    # cyber exploits follow the same decaying success schedule as the zone perturbation
    cyber_decay: bool = False

    def __post_init__(self):
        if not self.x_low < self.x_high:
            raise ValueError("x_low must be below x_high")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        grid_steps(self.delta, self.action_bound)

    @property
    def x_mid(self) -> float:
        return 0.5 * (self.x_low + self.x_high)


def load_params(path) -> BuildingParams:
    """Read a TOML scenario file (``[building]`` table, keys as in BuildingParams)."""
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    table = dict(doc.get("building", doc))
    if isinstance(table.get("delta"), str):
        table["delta"] = float(Fraction(table["delta"]))
    return BuildingParams(**table)


# ---------------------------------------------------------------------------
# formulas
# ---------------------------------------------------------------------------


def outside_air(t, k, rng=None, params: BuildingParams = BuildingParams(), noise=None):
    """Outside-air temperature: mid-band + sinusoid with phase ``k`` + U(-1, 1) noise.

    Pass ``noise`` explicitly to evaluate deterministically.
    """
    if noise is None:
        noise = 0.0 if rng is None else rng.uniform(-params.outside_noise, params.outside_noise)
    return params.x_mid + params.outside_amplitude * np.sin(params.outside_frequency * t + k) + noise


@register_prob("building_decay")
def attack_success_prob(t: int) -> float:
    """Perturbation success probability; drops by 0.1 every ten steps."""
    return 0.5 - 0.1 * math.floor(t / 10)


def threshold_control(y, z_prev, params: BuildingParams = BuildingParams()):
    """AHU threshold law on the measured temperature ``y``; returns ``(supply_temp, airflow)``."""
    if isinstance(y, (float, int)):
        if y < params.x_low:
            return params.supply_heat, params.max_airflow * min(params.x_low - y, 1.0)
        if y > params.x_high:
            return params.supply_cool, params.max_airflow * min(y - params.x_high, 1.0)
        return float(z_prev), 0.0
    y = np.asarray(y, dtype=float)
    cold = y < params.x_low
    hot = y > params.x_high
    z = np.where(cold, params.supply_heat, np.where(hot, params.supply_cool, z_prev))
    m = np.where(
        cold,
        params.max_airflow * np.minimum(params.x_low - y, 1.0),
        np.where(hot, params.max_airflow * np.minimum(y - params.x_high, 1.0), 0.0),
    )
    if z.ndim == 0:
        return float(z), float(m)
    return z, m


def zone_step(x, z, m, w, params: BuildingParams = BuildingParams()):
    return x + params.airflow_gain * m * (z - x) + params.ambient_gain * (w - x)


def discomfort_reward(x_next, params: BuildingParams = BuildingParams()):
    """Degrees outside the comfort band (zero inside it)."""
    if isinstance(x_next, float):
        return max(params.x_low - x_next, 0.0) + max(x_next - params.x_high, 0.0)
    out = np.maximum(params.x_low - x_next, 0.0) + np.maximum(x_next - params.x_high, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def net_reward(a, success, x_next, params: BuildingParams = BuildingParams()):
    cost = 0.5 * np.asarray(a, dtype=float) ** 2
    out = np.where(success, discomfort_reward(x_next, params) - cost, -cost)
    return float(out) if np.ndim(out) == 0 else out


def roi_metric(trace) -> float:
    """Observed discomfort reward over total quadratic perturbation cost."""
    gained = sum(rec.attack_reward for rec in trace.records if rec.is_physical)
    spent = sum(0.5 * rec.magnitude ** 2 for rec in trace.records if rec.is_physical)
    if spent <= 0.0:
        raise ZeroCostTrace("trace has no perturbation cost")
    return gained / spent


# ---------------------------------------------------------------------------
# graph + scenario
# ---------------------------------------------------------------------------


def build_building_hag(delta: float = 1.0, params: BuildingParams | None = None) -> Hag:
    """Four cyber nodes (node 1 is the entry point) and the zone node 5."""
    bound = params.action_bound if params else ACTION_BOUND
    grid = perturbation_grid(delta, bound)
    decay = ProbSpec(named="building_decay")
    zone_actions = tuple(
        PhysicalActionSpec(label=f"{a:+.4f}", magnitude=float(a), cost=0.5 * float(a) ** 2,
                           prob=decay, reward_model="building_discomfort")
        for a in grid
    )
    nodes = [Node(1, NodeKind.CYBER, entry_point=True)]
    nodes += [Node(i, NodeKind.CYBER) for i in (2, 3, 4)]
    nodes.append(Node(ZONE_NODE, NodeKind.PHYSICAL, physical_actions=zone_actions))
    cyber_decay = params is not None and params.cyber_decay
    edges = [ExploitEdge(i, j, EXPLOIT_REWARD, EXPLOIT_COST, decay if cyber_decay else ProbSpec(const=p))
             for i, j, p in CYBER_EXPLOITS]
    return Hag(nodes, edges, noop_reward=0.0)


class BuildingScenario(Scenario):
    """Zone thermal dynamics behind the physical node of the building graph."""

    name = "building"

    def __init__(self, params: BuildingParams | None = None):
        self.params = params or BuildingParams()
        self.horizon = self.params.horizon

    def with_delta(self, delta: float) -> "BuildingScenario":
        return BuildingScenario(replace(self.params, delta=delta))

    def build_hag(self) -> Hag:
        return build_building_hag(self.params.delta, self.params)

    def initial_physical(self, hag, rng):
        p = self.params
        n = len(hag.physical_nodes)
        if p.initial_temp is not None:
            return np.full(n, float(p.initial_temp))
        return rng.uniform(p.x_low, p.x_high, size=n)

    def initial_control(self, hag):
        # supply temperature only matters while airflow is positive
        return np.full(len(hag.physical_nodes), self.params.x_mid)

    def outside(self, t, phase, rng):
        return float(outside_air(t, phase, rng, self.params))

    def mean_outside(self, t, phase):
        return float(outside_air(t, phase, None, self.params))

    def advance(self, x, z_prev, w, perturbation):
        y = x + perturbation
        z, m = threshold_control(y, z_prev, self.params)
        return zone_step(x, z, m, w, self.params), y, z, m

    def physical_reward(self, action, x_next):
        if action.spec.reward_model in (None, "constant"):
            return np.full(np.shape(x_next), action.spec.reward)
        return discomfort_reward(x_next, self.params)

    def discomfort(self, x):
        return discomfort_reward(x, self.params)

    def feature_bounds(self):
        p = self.params
        lo = p.x_mid - p.outside_amplitude - p.outside_noise - 1.0
        hi = p.x_mid + p.outside_amplitude + p.outside_noise + 1.0
        return [(lo, hi), (lo, hi)]

    def fill_features(self, out, physical, outside):
        out[:, 0] = physical[:, 0]
        out[:, 1] = outside

    def train_phase(self, episode: int, rng) -> float:
        return float(episode)

    def test_phase(self, episode: int, rng) -> float:
        return float(rng.uniform(0.0, 2.0 * math.pi))


DATA_DIR = Path(__file__).parent / "data"
