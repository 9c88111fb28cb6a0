"""hag-emu: train, evaluate and sweep attack policies on hybrid attack graphs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

from hagemu.attack_graph import HagError, action_space, load_hag, reachable_actions
from hagemu.experiments import (
    ExperimentConfig,
    default_seed,
    evaluate,
    load_trained,
    make_problem,
    save_trained,
    summarize,
    sweep,
    train_policy,
    write_report,
    write_sweep,
    write_training_curve,
)
from hagemu.function_approx import DivergedWeights, IncompatibleWeights
from hagemu.greedy import GreedyPolicy, certify_bound, entry_exploits, set_value

log = logging.getLogger("hagemu")


def _delta(text: str) -> float:
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad grid step {text!r}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", help="graph JSON (defaults to the built-in building graph)")
    p.add_argument("--scenario", default="building", choices=("building", "null"))
    p.add_argument("--scenario-config", help="TOML file with a [building] table")
    p.add_argument("--horizon", type=int, default=48)
    p.add_argument("--delta", type=_delta, default=1.0, help="perturbation grid step, e.g. 1/3")
    p.add_argument("--ell", type=int, default=1, help="greedy pruning budget")
    p.add_argument("--seed", type=int, default=None, help="master seed (falls back to $HAGEMU_SEED)")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--tilings", type=int, default=8)
    p.add_argument("--tiles", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hag-emu", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an ADP or actor-critic policy")
    _common(p)
    p.add_argument("--algo", choices=("adp", "ac"), default="adp")
    p.add_argument("--episodes", type=int, default=10_000)

    p = sub.add_parser("eval", help="evaluate a trained or greedy policy")
    _common(p)
    p.add_argument("--algo", choices=("adp", "ac", "greedy"), default="greedy")
    p.add_argument("--weights", help="weights file written by train")
    p.add_argument("--test-episodes", type=int, default=2_000)
    p.add_argument("--traces", type=int, default=3, help="sample trace CSVs to write")
    p.add_argument("--greedy-eval", action="store_true", help="argmax instead of sampling the actor")
    p.add_argument("--exclude-sentinel", action="store_true",
                   help="average time-to-root over episodes that reached the root only")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep", help="train and evaluate all policies over several grid steps")
    _common(p)
    p.add_argument("--deltas", type=_delta, nargs="+", default=[1.0, 1 / 3, 1 / 5])
    p.add_argument("--algos", nargs="+", choices=("adp", "ac", "greedy"), default=["adp", "ac", "greedy"])
    p.add_argument("--episodes", type=int, default=10_000)
    p.add_argument("--test-episodes", type=int, default=2_000)
    p.add_argument("--greedy-eval", action="store_true")
    p.add_argument("--exclude-sentinel", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("greedy", help="show the greedy pruned set, optionally certify it")
    _common(p)
    p.add_argument("--certify", action="store_true", help="compare with exhaustive subset search")

    p = sub.add_parser("inspect", help="describe a graph file")
    p.add_argument("graph")
    return ap


def _config(args, **extra) -> ExperimentConfig:
    from hagemu.adp import TileConfig
    return ExperimentConfig(
        graph_path=args.graph, scenario=args.scenario, horizon=args.horizon, delta=args.delta,
        ell=args.ell, seed=default_seed(args.seed), out_dir=args.out, scenario_path=args.scenario_config,
        tiles=TileConfig(num_tilings=args.tilings, tiles_per_dim=args.tiles), **extra)


def cmd_train(args) -> int:
    cfg = _config(args, algorithm=args.algo, train_episodes=args.episodes)
    hag, scenario = make_problem(cfg)
    if cfg.train_episodes == 0:
        log.warning("zero training episodes: writing all-zero weights")
    trained = train_policy(cfg, hag, scenario)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    weights = out / f"weights_{cfg.algorithm}.bin"
    save_trained(weights, trained, cfg, hag)
    write_training_curve(out / "training_curve.csv", trained)
    (out / f"config_{cfg.algorithm}.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True))
    print(f"wrote {weights} ({trained.wall_clock:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args, algorithm=args.algo, test_episodes=args.test_episodes, greedy_eval=args.greedy_eval,
                  include_sentinel=not args.exclude_sentinel, trace_samples=args.traces, workers=args.workers)
    hag, scenario = make_problem(cfg)
    if cfg.algorithm == "greedy":
        policy = GreedyPolicy(hag, scenario, cfg.ell)
    else:
        if not args.weights:
            raise SystemExit("eval of a learned policy needs --weights")
        trained = load_trained(args.weights, cfg, hag, scenario)
        if trained.algorithm != cfg.algorithm:
            raise IncompatibleWeights(f"{args.weights} holds {trained.algorithm} weights")
        policy = trained.policy
    t0 = time.perf_counter()
    rows, traces = evaluate(hag, scenario, policy, cfg.test_episodes, cfg.seed, cfg.horizon,
                            cfg.trace_samples, cfg.workers)
    report = summarize(cfg.algorithm, rows, cfg.include_sentinel, cfg.echo(), time.perf_counter() - t0)
    write_report(Path(cfg.out_dir), report, rows, traces)
    print("\n".join(report.lines()))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args, train_episodes=args.episodes, test_episodes=args.test_episodes,
                  greedy_eval=args.greedy_eval, include_sentinel=not args.exclude_sentinel,
                  workers=args.workers)
    table = sweep(cfg, args.deltas, args.algos)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(out / "sweep.csv", table)
    for row in table:
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def cmd_greedy(args) -> int:
    cfg = _config(args, algorithm="greedy")
    hag, scenario = make_problem(cfg)
    pol = GreedyPolicy(hag, scenario, cfg.ell)
    s0 = pol.initial_state
    print("pruned set:", ", ".join(a.label for a in pol.initial.actions))
    print("pool:", ", ".join(sorted(a.label for a in pol.initial.pool)))
    print(f"Q(A, s0) = {set_value(hag, pol.initial.actions, s0):.6f}")
    if args.certify:
        cert = certify_bound(hag, s0, cfg.ell)
        print(f"greedy {cert.greedy_value:.6f}  optimal {cert.optimal_value:.6f}  ratio {cert.ratio:.6f}")
        print("optimal set:", ", ".join(a.label for a in cert.optimal_set))
    return 0


def cmd_inspect(args) -> int:
    hag = load_hag(args.graph)
    print(f"nodes: {hag.n}")
    for nd in hag.nodes:
        tag = " entry" if nd.entry_point else ""
        acts = f" actions={len(nd.physical_actions)}" if nd.physical_actions else ""
        print(f"  {nd.id} {nd.kind.value}{tag}{acts}")
    print(f"edges: {len(hag.edges)}")
    for e in hag.edges:
        print(f"  ({e.src},{e.dst}) r={e.reward:g} c={e.cost:g} prob={e.prob.to_json()}")
    print("entry points:", " ".join(map(str, hag.entry_nodes)))
    print("roots:", " ".join(map(str, hag.physical_nodes)))
    s0 = hag.initial_security()
    from hagemu.environment import SystemState
    state = SystemState(0, tuple(int(b) for b in s0))
    b0 = [a for a in action_space(hag, s0, 0) if a.is_exploit]
    print("B_0:", " ".join(a.label for a in b0) or "-")
    entries = set(entry_exploits(hag, state))
    for a in hag.actions:
        if not a.is_exploit:
            continue
        ra = sorted(reachable_actions(hag, a), key=lambda x: x.index)
        q = f", Q = {set_value(hag, [a], state):.6f}" if a in entries else ""
        print(f"  R[{a.label}] = {{{', '.join(b.label for b in ra)}}} ({len(ra)} actions){q}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "greedy": cmd_greedy,
            "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (HagError, IncompatibleWeights, DivergedWeights, OSError, ValueError) as exc:
        print(f"hag-emu: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
