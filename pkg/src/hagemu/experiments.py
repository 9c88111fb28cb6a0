"""Training, evaluation and sweep drivers shared by the CLI and the acceptance tests.

Everything written here is plain CSV/JSON.  Floats go out with ``repr`` so the
summary statistics can be recomputed bit-for-bit from the per-episode file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from hagemu import actor_critic, adp
from hagemu.attack_graph import Hag, load_hag
from hagemu.building import DATA_DIR, BuildingParams, BuildingScenario, ZeroCostTrace, load_params, roi_metric
from hagemu.environment import EpisodeTrace, NullScenario, Scenario, episode_streams, initial_state, rollout
from hagemu.function_approx import (
    IncompatibleWeights,
    PreferenceWeights,
    StateFeaturizer,
    TileCoder,
    ValueWeights,
    load_weights,
    save_weights,
)
from hagemu.greedy import GreedyPolicy

log = logging.getLogger(__name__)

ALGORITHMS = ("adp", "ac", "greedy")
SCENARIOS = ("building", "null")


@dataclass
class ExperimentConfig:
    graph_path: str | None = None
    scenario: str = "building"
    algorithm: str = "adp"
    train_episodes: int = 10_000
    test_episodes: int = 2_000
    horizon: int = 48
    delta: float = 1.0
    ell: int = 1
    seed: int = 0
    out_dir: str = "runs"
    # stochastic actor is sampled at test time unless this is set
    greedy_eval: bool = False
    # count never-reached episodes as T+1 in the mean time-to-root
    include_sentinel: bool = True
    trace_samples: int = 3
    workers: int = 1
    scenario_path: str | None = None
    tiles: adp.TileConfig = field(default_factory=adp.TileConfig)

    def __post_init__(self):
        if self.train_episodes < 0 or self.test_episodes < 0:
            raise ValueError("episode counts must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        for p in (self.graph_path, self.scenario_path):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(p)
        if self.ell < 1:
            raise ValueError("ell must be at least 1")

    def echo(self) -> dict:
        doc = asdict(self)
        doc["tiles"] = asdict(self.tiles)
        return doc


def make_problem(config: ExperimentConfig) -> tuple[Hag, Scenario]:
    """Graph + scenario for a config.  The building graph's zone actions follow ``delta``."""
    if config.scenario == "building":
        params = load_params(config.scenario_path) if config.scenario_path else BuildingParams()
        from dataclasses import replace
        scenario = BuildingScenario(replace(params, delta=config.delta, horizon=config.horizon))
        if config.graph_path is None:
            return scenario.build_hag(), scenario
        hag = load_hag(config.graph_path)
        if any(a.is_physical and a.spec.reward_model == "building_discomfort" for a in hag.actions):
            # the file fixes one grid; regenerate it for the requested step
            hag = _regrid(hag, scenario)
        return hag, scenario
    if config.graph_path is None:
        raise ValueError("the null scenario needs --graph")
    return load_hag(config.graph_path), NullScenario(config.horizon)


def _regrid(hag: Hag, scenario: BuildingScenario) -> Hag:
    from hagemu.attack_graph import Node
    grid_hag = scenario.build_hag()
    zone = grid_hag.node(grid_hag.physical_nodes[0]).physical_actions
    nodes = [Node(n.id, n.kind, n.entry_point, zone) if n.physical_actions and
             n.physical_actions[0].reward_model == "building_discomfort" else n for n in hag.nodes]
    return Hag(nodes, hag.edges, hag.noop_reward)


def graph_digest(hag: Hag) -> str:
    return hashlib.sha256(json.dumps(hag.to_json(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class Trained:
    algorithm: str
    policy: object
    featurizer: StateFeaturizer | None = None
    theta: np.ndarray | None = None
    psi: np.ndarray | None = None
    returns: list = field(default_factory=list)
    mean_abs_td: list = field(default_factory=list)
    wall_clock: float = 0.0


def train_policy(config: ExperimentConfig, hag: Hag, scenario: Scenario) -> Trained:
    t0 = time.perf_counter()
    if config.algorithm == "greedy":
        return Trained("greedy", GreedyPolicy(hag, scenario, config.ell))
    if config.algorithm == "adp":
        cfg = adp.AdpConfig(episodes=config.train_episodes, seed=config.seed, horizon=config.horizon,
                            tiles=config.tiles)
        res = adp.train(hag, scenario, cfg)
        pol = adp.extract_policy(hag, scenario, res.weights, res.featurizer, cfg)
        return Trained("adp", pol, res.featurizer, res.weights.theta, None, res.returns,
                       res.mean_abs_td, time.perf_counter() - t0)
    cfg = actor_critic.AcConfig(episodes=config.train_episodes, seed=config.seed, horizon=config.horizon,
                                tiles=config.tiles)
    res = actor_critic.train(hag, scenario, cfg)
    pol = actor_critic.SoftmaxActor(hag, res.prefs, res.featurizer, greedy=config.greedy_eval)
    return Trained("ac", pol, res.featurizer, res.weights.theta, res.prefs.psi, res.returns,
                   res.mean_abs_td, time.perf_counter() - t0)


def write_training_curve(path, trained: Trained) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("episode", "return", "mean_abs_td"))
        for k, (r, d) in enumerate(zip(trained.returns, trained.mean_abs_td)):
            w.writerow((k, repr(float(r)), repr(float(d))))


def weights_meta(config: ExperimentConfig, hag: Hag) -> dict:
    return {"algorithm": config.algorithm, "scenario": config.scenario, "delta": config.delta,
            "horizon": config.horizon, "seed": config.seed, "episodes": config.train_episodes,
            "graph": graph_digest(hag), "n_actions": len(hag.actions)}


def save_trained(path, trained: Trained, config: ExperimentConfig, hag: Hag) -> None:
    save_weights(path, trained.featurizer.coder.spec, weights_meta(config, hag), trained.theta, trained.psi)


def load_trained(path, config: ExperimentConfig, hag: Hag, scenario: Scenario) -> Trained:
    """Rebuild a frozen policy from a weights file, refusing files made for another problem."""
    spec, meta, theta, psi = load_weights(path)
    expected = config.tiles.featurizer(hag, scenario, config.horizon).coder.spec
    if spec != expected:
        raise IncompatibleWeights(f"tile coder in {path} does not match this graph/scenario")
    if meta.get("graph") != graph_digest(hag) or meta.get("n_actions") != len(hag.actions):
        raise IncompatibleWeights(f"{path} was trained on a different graph or action grid")
    featurizer = StateFeaturizer(TileCoder(spec), scenario, config.horizon)
    algo = meta["algorithm"]
    if algo == "adp":
        cfg = adp.AdpConfig(episodes=0, horizon=config.horizon, tiles=config.tiles)
        pol = adp.extract_policy(hag, scenario, ValueWeights(theta), featurizer, cfg)
    elif algo == "ac":
        if psi is None:
            raise IncompatibleWeights("actor-critic weights need a preference block")
        pol = actor_critic.SoftmaxActor(hag, PreferenceWeights(psi), featurizer, greedy=config.greedy_eval)
    else:
        raise IncompatibleWeights(f"unknown algorithm {algo!r} in {path}")
    return Trained(algo, pol, featurizer, theta, psi)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

EPISODE_COLUMNS = ("episode", "phase", "net_reward", "time_to_root", "reached_root",
                   "attack_reward", "attack_cost", "rho", "physical_actions")


@dataclass
class EpisodeSummary:
    episode: int
    phase: float
    net_reward: float
    time_to_root: int  # first t with a root bit set, else horizon + 1
    reached_root: bool
    attack_reward: float
    attack_cost: float
    rho: float  # nan when no perturbation cost was spent
    physical_actions: int

    def row(self):
        return (self.episode, repr(self.phase), repr(self.net_reward), self.time_to_root,
                int(self.reached_root), repr(self.attack_reward), repr(self.attack_cost),
                repr(self.rho), self.physical_actions)


def summarize_trace(k: int, phase: float, trace: EpisodeTrace, horizon: int) -> EpisodeSummary:
    phys = [r for r in trace.records if r.is_physical]
    gained = float(sum(r.attack_reward for r in phys))
    spent = float(sum(0.5 * r.magnitude ** 2 for r in phys))
    try:
        rho = roi_metric(trace)
    except ZeroCostTrace:
        rho = math.nan
    reached = trace.time_to_root is not None
    return EpisodeSummary(k, phase, trace.total_reward, trace.time_to_root if reached else horizon + 1,
                          reached, gained, spent, rho, len(phys))


def _run_episodes(hag, scenario, policy, seed, n, horizon, keep, start=0, stop=None):
    streams = episode_streams(seed, n)
    stop = n if stop is None else stop
    out, traces = [], {}
    for k in range(start, stop):
        rng = streams[k]
        phase = scenario.test_phase(k, rng)
        s0 = initial_state(hag, scenario, rng, phase)
        trace = rollout(hag, scenario, policy, s0, horizon, rng)
        out.append(summarize_trace(k, phase, trace, horizon))
        if k < keep:
            traces[k] = trace
    return out, traces


def evaluate(hag: Hag, scenario: Scenario, policy, episodes: int, seed: int, horizon: int,
             keep_traces: int = 0, workers: int = 1):
    """Roll out a frozen policy; episode ``k`` always uses stream ``k`` so results ignore ``workers``."""
    if workers <= 1 or episodes < 2 * workers:
        return _run_episodes(hag, scenario, policy, seed, episodes, horizon, keep_traces)
    bounds = np.linspace(0, episodes, workers + 1).astype(int)
    rows, traces = [], {}
    with ProcessPoolExecutor(workers) as pool:
        futs = [pool.submit(_run_episodes, hag, scenario, policy, seed, episodes, horizon, keep_traces,
                            int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        for f in futs:
            r, tr = f.result()
            rows += r
            traces.update(tr)
    return rows, traces


@dataclass
class SummaryReport:
    policy: str
    episodes: int
    mean_reward: float
    var_reward: float
    mean_time_to_root: float
    include_sentinel: bool
    reached_fraction: float
    rho_mean: float
    rho_episodes: int
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_json(self) -> dict:
        doc = asdict(self)
        for k, v in doc.items():
            if isinstance(v, float) and not math.isfinite(v):
                doc[k] = None
        return doc

    def lines(self) -> list[str]:
        ttr = "sentinel included" if self.include_sentinel else "reached episodes only"
        return [f"policy            {self.policy}",
                f"episodes          {self.episodes}",
                f"net reward        mean {self.mean_reward:.4f}  variance {self.var_reward:.4f}",
                f"time to root      {self.mean_time_to_root:.3f} ({ttr}, reached {self.reached_fraction:.3f})",
                f"rho               {self.rho_mean:.4f} over {self.rho_episodes} episodes"]


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan


def summarize(policy: str, rows: list[EpisodeSummary], include_sentinel: bool = True,
              config: dict | None = None, wall_clock: float = 0.0) -> SummaryReport:
    """Statistics over episode rows.  Variance is the population variance; rho averages defined episodes."""
    rewards = np.array([r.net_reward for r in rows], dtype=float)
    ttr = [r.time_to_root for r in rows if include_sentinel or r.reached_root]
    rhos = [r.rho for r in rows if not math.isnan(r.rho)]
    return SummaryReport(
        policy=policy, episodes=len(rows), mean_reward=_mean(rewards),
        var_reward=float(np.var(rewards)) if len(rows) else math.nan,
        mean_time_to_root=_mean(ttr), include_sentinel=include_sentinel,
        reached_fraction=_mean([r.reached_root for r in rows]),
        rho_mean=_mean(rhos), rho_episodes=len(rhos), config=config or {}, wall_clock=wall_clock)


def write_episodes(path, rows: list[EpisodeSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_COLUMNS)
        for r in rows:
            w.writerow(r.row())


def read_episodes(path) -> list[EpisodeSummary]:
    with open(path, newline="") as fh:
        return [EpisodeSummary(int(d["episode"]), float(d["phase"]), float(d["net_reward"]),
                               int(d["time_to_root"]), bool(int(d["reached_root"])),
                               float(d["attack_reward"]), float(d["attack_cost"]), float(d["rho"]),
                               int(d["physical_actions"])) for d in csv.DictReader(fh)]


def write_report(out_dir: Path, report: SummaryReport, rows, traces) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_episodes(out_dir / f"episodes_{report.policy}.csv", rows)
    for k, tr in sorted(traces.items()):
        tr.write_csv(out_dir / f"trace_{report.policy}_{k:05d}.csv")
    (out_dir / f"summary_{report.policy}.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# sweep over the perturbation grid
# ---------------------------------------------------------------------------

SWEEP_STATS = ("mean", "var")


def sweep(config: ExperimentConfig, deltas, algorithms=ALGORITHMS) -> list[dict]:
    """Train and evaluate every algorithm at every grid step; one row per action count."""
    table = []
    for delta in deltas:
        cfg = ExperimentConfig(**{**config.__dict__, "delta": float(delta)})
        hag, scenario = make_problem(cfg)
        row = {"delta": _fraction(delta), "actions": sum(1 for a in hag.actions if a.is_physical)}
        for algo in algorithms:
            cfg.algorithm = algo
            trained = train_policy(cfg, hag, scenario)
            rows, _ = evaluate(hag, scenario, trained.policy, cfg.test_episodes, cfg.seed + 1,
                               cfg.horizon, 0, cfg.workers)
            rep = summarize(algo, rows, cfg.include_sentinel)
            row[f"mean_{algo}"] = rep.mean_reward
            row[f"var_{algo}"] = rep.var_reward
            row[f"time_to_root_{algo}"] = rep.mean_time_to_root
            row[f"rho_{algo}"] = rep.rho_mean
            log.info("delta=%s %s: mean %.3f var %.3f", row["delta"], algo, rep.mean_reward, rep.var_reward)
        table.append(row)
    return table


def _fraction(delta) -> str:
    return str(Fraction(float(delta)).limit_denominator(100))


def write_sweep(path, table: list[dict]) -> None:
    cols = list(table[0]) if table else ["delta", "actions"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in table:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in cols)])


def read_sweep(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for d in csv.DictReader(fh):
            out.append({k: (v if k == "delta" else int(v) if k == "actions" else float(v)) for k, v in d.items()})
        return out


def default_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("HAGEMU_SEED")
    return int(env) if env else 0


def builtin_graph(name: str) -> Path:
    return DATA_DIR / name
