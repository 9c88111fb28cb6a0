"""Hybrid attack graph: cyber/physical attribute nodes joined by exploit edges.

Nodes are numbered 1..N.  A security vector holds one bit per node, bit ``i-1``
for node ``i``.  Every node has an OR precondition: it can be attacked as soon
as any one predecessor is compromised.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class HagError(Exception):
    """Base class for attack-graph errors."""


class CycleDetected(HagError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"cycle through nodes {self.nodes}")


class DanglingEdge(HagError):
    def __init__(self, src, dst):
        self.src, self.dst = src, dst
        super().__init__(f"edge ({src},{dst}) references an unknown node or is a self-loop")


class BadProbability(HagError):
    def __init__(self, where, t, value):
        self.where, self.t, self.value = where, t, value
        super().__init__(f"success probability of {where} at t={t} is {value}, outside [0,1]")


class MissingPhysicalRoot(HagError):
    pass


class MissingEntryPoint(HagError):
    pass


class PhysicalNotSink(HagError):
    pass


class BadNodeIds(HagError):
    pass


class BadNodeKind(HagError):
    pass


class DimensionMismatch(HagError):
    pass


class UnknownNode(HagError):
    pass


class UnknownAction(HagError):
    pass


class HagParseError(HagError):
    pass


# ---------------------------------------------------------------------------
# success probabilities
# ---------------------------------------------------------------------------

NAMED_PROBS: dict[str, Callable[[int], float]] = {}


def register_prob(name: str):
    """Decorator registering a time-indexed success probability ``t -> [0,1]``."""

    def deco(fn):
        NAMED_PROBS[name] = fn
        return fn

    return deco


def _named_prob(name: str) -> Callable[[int], float]:
    if name not in NAMED_PROBS:
        # scenario modules register their functions on import
        import hagemu.building  # noqa: F401
    try:
        return NAMED_PROBS[name]
    except KeyError:
        raise HagError(f"unknown named probability {name!r}") from None


@dataclass(frozen=True)
class ProbSpec:
    """Either a constant probability or a reference to a registered function of t."""

    const: float | None = None
    named: str | None = None

    def __post_init__(self):
        if (self.const is None) == (self.named is None):
            raise HagError("ProbSpec needs exactly one of const / named")

    def at(self, t: int) -> float:
        if self.const is not None:
            return self.const
        return _named_prob(self.named)(t)

    def to_json(self) -> dict:
        return {"const": self.const} if self.const is not None else {"named": self.named}

    @classmethod
    def from_json(cls, obj) -> "ProbSpec":
        if isinstance(obj, (int, float)):
            return cls(const=float(obj))
        if "const" in obj:
            return cls(const=float(obj["const"]))
        if "named" in obj:
            return cls(named=str(obj["named"]))
        raise HagError(f"bad probability spec {obj!r}")


# ---------------------------------------------------------------------------
# graph elements
# ---------------------------------------------------------------------------


class NodeKind(str, Enum):
    CYBER = "cyber"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class PhysicalActionSpec:
    label: str
    magnitude: float
    cost: float
    reward: float = 0.0
    prob: ProbSpec = ProbSpec(const=1.0)
    # None: constant ``reward`` on success; otherwise the scenario computes it
    reward_model: str | None = None


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    entry_point: bool = False
    physical_actions: tuple[PhysicalActionSpec, ...] = ()

    @property
    def is_physical(self) -> bool:
        return self.kind is NodeKind.PHYSICAL


@dataclass(frozen=True)
class ExploitEdge:
    src: int
    dst: int
    reward: float
    cost: float
    prob: ProbSpec = ProbSpec(const=1.0)

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.dst)


@dataclass(frozen=True)
class Action:
    """One element of the global action set; ``index`` 0 is always the no-op."""

    index: int
    kind: str  # "noop" | "exploit" | "physical"
    edge: ExploitEdge | None = field(default=None, compare=False)
    node: int | None = field(default=None, compare=False)
    spec: PhysicalActionSpec | None = field(default=None, compare=False)

    @property
    def is_noop(self) -> bool:
        return self.kind == "noop"

    @property
    def is_exploit(self) -> bool:
        return self.kind == "exploit"

    @property
    def is_physical(self) -> bool:
        return self.kind == "physical"

    @property
    def magnitude(self) -> float:
        return self.spec.magnitude if self.spec is not None else 0.0

    @property
    def label(self) -> str:
        if self.is_noop:
            return "noop"
        if self.is_exploit:
            return f"a_{self.edge.src},{self.edge.dst}"
        return f"n{self.node}:{self.spec.label}"

    def __repr__(self):
        return f"Action({self.index}, {self.label})"


class Hag:
    """Directed acyclic hybrid attack graph.

    The global action list is ``[noop] + exploits (edge order) + physical
    actions (node order, then declaration order)``; ties anywhere in the
    package are broken by the lowest action index.
    """

    def __init__(self, nodes: Sequence[Node], edges: Sequence[ExploitEdge],
                 noop_reward: float = 0.0, check: bool = True):
        self.nodes = tuple(sorted(nodes, key=lambda n: n.id))
        self.edges = tuple(edges)
        self.noop_reward = float(noop_reward)
        if check:
            validate(self)
        self.n = len(self.nodes)
        self._node_by_id = {nd.id: nd for nd in self.nodes}
        self.physical_nodes = tuple(nd.id for nd in self.nodes if nd.is_physical)
        self.entry_nodes = tuple(nd.id for nd in self.nodes if nd.entry_point)

        acts = [Action(0, "noop")]
        for e in self.edges:
            acts.append(Action(len(acts), "exploit", edge=e))
        for nd in self.nodes:
            for spec in nd.physical_actions:
                acts.append(Action(len(acts), "physical", node=nd.id, spec=spec))
        self.actions = tuple(acts)
        self.noop = acts[0]
        self._edge_action = {a.edge.key: a for a in acts if a.is_exploit}
        self._node_actions = {nd.id: tuple(a for a in acts if a.is_physical and a.node == nd.id)
                              for nd in self.nodes}
        self.edge_src = np.array([e.src - 1 for e in self.edges], dtype=np.int64)
        self.edge_dst = np.array([e.dst - 1 for e in self.edges], dtype=np.int64)
        self._succ: dict[int, list[int]] = {nd.id: [] for nd in self.nodes}
        for e in self.edges:
            self._succ.setdefault(e.src, []).append(e.dst)
        self._reach_cache: dict[int, frozenset] = {}
        self._root_reaching: frozenset[int] | None = None
        self._avail_cache: dict[int, tuple[Action, ...]] = {}
        self._prob_cache: dict[int, np.ndarray] = {}
        self._block_cache: dict[tuple, object] = {}
        self._ids_cache: dict[int, np.ndarray] = {}

    # -- lookup ----------------------------------------------------------------
    def node(self, node_id: int) -> Node:
        try:
            return self._node_by_id[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def edge_action(self, src: int, dst: int) -> Action:
        try:
            return self._edge_action[(src, dst)]
        except KeyError:
            raise UnknownAction(f"no exploit on edge ({src},{dst})") from None

    def node_actions(self, node_id: int) -> tuple[Action, ...]:
        return self._node_actions[node_id]

    def action(self, ref) -> Action:
        """Resolve an Action, global index, or ``(src, dst)`` edge tuple."""
        if isinstance(ref, Action):
            if ref.index >= len(self.actions) or self.actions[ref.index] != ref:
                raise UnknownAction(repr(ref))
            return self.actions[ref.index]
        if isinstance(ref, ExploitEdge):
            return self.edge_action(ref.src, ref.dst)
        if isinstance(ref, tuple):
            return self.edge_action(*ref)
        if isinstance(ref, (int, np.integer)) and 0 <= ref < len(self.actions):
            return self.actions[int(ref)]
        raise UnknownAction(repr(ref))

    def available_actions(self, mask: int) -> tuple[Action, ...]:
        """Action set for a compromise bit mask (cached; masks are small ints)."""
        acts = self._avail_cache.get(mask)
        if acts is None:
            out = [self.noop]
            for a in self.actions:
                if a.is_exploit:
                    e = a.edge
                    if (mask >> (e.src - 1)) & 1 and not (mask >> (e.dst - 1)) & 1:
                        out.append(a)
                elif a.is_physical and (mask >> (a.node - 1)) & 1:
                    out.append(a)
            acts = self._avail_cache[mask] = tuple(out)
        return acts

    def available_ids(self, mask: int) -> np.ndarray:
        ids = self._ids_cache.get(mask)
        if ids is None:
            ids = self._ids_cache[mask] = np.array([a.index for a in self.available_actions(mask)],
                                                   dtype=np.int64)
        return ids

    def prob_row(self, t: int) -> np.ndarray:
        """Success probability of every action at time t (the no-op always succeeds)."""
        row = self._prob_cache.get(t)
        if row is None:
            row = np.array([self.success_prob(a, t) for a in self.actions])
            self._prob_cache[t] = row
        return row

    def success_prob(self, action: Action, t: int) -> float:
        if action.is_exploit:
            return action.edge.prob.at(t)
        if action.is_physical:
            return action.spec.prob.at(t)
        return 1.0

    # -- security vectors --------------------------------------------------------
    def security_vector(self, security) -> np.ndarray:
        if isinstance(security, (int, np.integer)):
            return np.array([(int(security) >> i) & 1 for i in range(self.n)], dtype=bool)
        vec = np.asarray(security, dtype=bool)
        if vec.shape != (self.n,):
            raise DimensionMismatch(f"security vector has shape {vec.shape}, graph has {self.n} nodes")
        return vec

    def mask(self, security) -> int:
        if isinstance(security, tuple) and len(security) == self.n:
            return sum(1 << i for i, b in enumerate(security) if b)
        vec = self.security_vector(security)
        return int(sum(1 << i for i in np.flatnonzero(vec)))

    def initial_security(self) -> np.ndarray:
        vec = np.zeros(self.n, dtype=bool)
        for nid in self.entry_nodes:
            vec[nid - 1] = True
        return vec

    # -- topology ----------------------------------------------------------------
    def successors(self, node_id: int) -> list[int]:
        return list(self._succ.get(node_id, ()))

    def topological_order(self) -> list[int]:
        return _toposort([nd.id for nd in self.nodes], self.edges)

    def root_reaching_nodes(self) -> frozenset[int]:
        """Nodes with a directed path to some physical root (roots included)."""
        if self._root_reaching is None:
            good = set(self.physical_nodes)
            for nid in reversed(self.topological_order()):
                if any(v in good for v in self._succ.get(nid, ())):
                    good.add(nid)
            self._root_reaching = frozenset(good)
        return self._root_reaching

    # -- (de)serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "noop_reward": self.noop_reward,
            "nodes": [
                {
                    "id": nd.id,
                    "kind": nd.kind.value,
                    "entry_point": nd.entry_point,
                    "actions": [_action_spec_json(s) for s in nd.physical_actions],
                }
                for nd in self.nodes
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "reward": e.reward, "cost": e.cost,
                 "prob": e.prob.to_json()}
                for e in self.edges
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Hag":
        try:
            nodes = [
                Node(
                    id=int(nd["id"]),
                    kind=NodeKind(nd["kind"]),
                    entry_point=bool(nd.get("entry_point", False)),
                    physical_actions=tuple(
                        PhysicalActionSpec(
                            label=str(a["label"]),
                            magnitude=float(a.get("magnitude", 0.0)),
                            cost=float(a.get("cost", 0.0)),
                            reward=float(a.get("reward", 0.0)),
                            prob=ProbSpec.from_json(a.get("prob", {"const": 1.0})),
                            reward_model=a.get("reward_model"),
                        )
                        for a in nd.get("actions", [])
                    ),
                )
                for nd in doc["nodes"]
            ]
            edges = [
                ExploitEdge(int(e["from"]), int(e["to"]), float(e["reward"]), float(e["cost"]),
                            ProbSpec.from_json(e["prob"]))
                for e in doc["edges"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise HagParseError(f"malformed graph document: {exc!r}") from exc
        return cls(nodes, edges, noop_reward=float(doc.get("noop_reward", 0.0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def __repr__(self):
        return f"Hag(nodes={self.n}, edges={len(self.edges)}, actions={len(self.actions)})"


def _action_spec_json(s: PhysicalActionSpec) -> dict:
    out = {"label": s.label, "magnitude": s.magnitude, "cost": s.cost, "reward": s.reward,
           "prob": s.prob.to_json()}
    if s.reward_model is not None:
        out["reward_model"] = s.reward_model
    return out


def load_hag(path) -> Hag:
    """Read a graph document, reporting JSON errors with line/column context."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise HagParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
    return Hag.from_json(doc)


def _toposort(ids: Iterable[int], edges: Iterable[ExploitEdge]) -> list[int]:
    ids = list(ids)
    indeg = {i: 0 for i in ids}
    succ: dict[int, list[int]] = {i: [] for i in ids}
    for e in edges:
        succ[e.src].append(e.dst)
        indeg[e.dst] += 1
    ready = sorted(i for i in ids if indeg[i] == 0)
    order = []
    while ready:
        u = ready.pop(0)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
        ready.sort()
    if len(order) != len(ids):
        raise CycleDetected(sorted(i for i in ids if indeg[i] > 0))
    return order


def validate(hag: Hag, horizon: int | None = None) -> None:
    """Raise a HagError subclass unless ``hag`` is a well-formed HAG.

    Named (time-varying) probabilities are range-checked over ``range(horizon)``
    when a horizon is given.
    """
    ids = [nd.id for nd in hag.nodes]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        raise BadNodeIds(f"node ids must be 1..N, got {sorted(ids)}")
    idset = set(ids)
    for e in hag.edges:
        if e.src not in idset or e.dst not in idset or e.src == e.dst:
            raise DanglingEdge(e.src, e.dst)
    if len({e.key for e in hag.edges}) != len(hag.edges):
        raise HagError("duplicate exploit edge")
    _toposort(ids, hag.edges)

    times = range(horizon) if horizon else (0,)
    for e in hag.edges:
        if e.prob.const is not None or horizon:
            for t in times:
                p = e.prob.at(t)
                if not (0.0 <= p <= 1.0) or math.isnan(p):
                    raise BadProbability((e.src, e.dst), t, p)

    by_id = {nd.id: nd for nd in hag.nodes}
    for nd in hag.nodes:
        if nd.kind is NodeKind.CYBER and nd.physical_actions:
            raise BadNodeKind(f"cyber node {nd.id} declares physical actions")
        for s in nd.physical_actions:
            if s.prob.const is not None or horizon:
                for t in times:
                    p = s.prob.at(t)
                    if not (0.0 <= p <= 1.0) or math.isnan(p):
                        raise BadProbability((nd.id, s.label), t, p)
    for e in hag.edges:
        if by_id[e.src].is_physical:
            raise PhysicalNotSink(f"physical node {e.src} has outgoing edge ({e.src},{e.dst})")
    if not any(nd.is_physical for nd in hag.nodes):
        raise MissingPhysicalRoot("graph has no physical root node")
    if not any(nd.entry_point and not nd.is_physical for nd in hag.nodes):
        raise MissingEntryPoint("graph has no cyber entry-point node")


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def available_edges(hag: Hag, security, t: int = 0) -> list[ExploitEdge]:
    """Edges whose source is compromised and whose target is not."""
    vec = hag.security_vector(security)
    return [e for e in hag.edges if vec[e.src - 1] and not vec[e.dst - 1]]


def action_space(hag: Hag, security, t: int = 0) -> list[Action]:
    """Available actions in index order: no-op, open exploits, actions at owned physical nodes."""
    return list(hag.available_actions(hag.mask(security)))


def compromise_probability(hag: Hag, target: int, security, t: int = 0) -> float:
    """Probability that at least one open exploit into ``target`` succeeds at time t."""
    hag.node(target)
    vec = hag.security_vector(security)
    if vec[target - 1]:
        return 0.0
    fail = 1.0
    any_open = False
    for e in hag.edges:
        if e.dst == target and vec[e.src - 1]:
            any_open = True
            fail *= 1.0 - e.prob.at(t)
    return 1.0 - fail if any_open else 0.0


def reachable_actions(hag: Hag, a) -> frozenset[Action]:
    """R_a: ``a`` plus every exploit on a directed path from its target to a physical root."""
    act = hag.action(a)
    if not act.is_exploit:
        raise UnknownAction(f"{act!r} is not an exploit")
    dst = act.edge.dst
    if dst not in hag._reach_cache:
        good = hag.root_reaching_nodes()
        seen = {dst}
        stack = [dst]
        while stack:
            u = stack.pop()
            for v in hag._succ.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        hag._reach_cache[dst] = frozenset(
            hag.edge_action(e.src, e.dst) for e in hag.edges if e.src in seen and e.dst in good
        )
    return hag._reach_cache[dst] | {act}
