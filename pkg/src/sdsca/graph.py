"""Abstract control graph: construction, non-spanning marks, transforms, loops, DOT."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import networkx as nx

from .classifier import Verdict
from .model import (
    CLAMP,
    BinOp,
    Call,
    DomainError,
    Model,
    Num,
    Var,
    children,
    evaluate,
    free_vars,
)
from .simulator import Evaluator, delay_alias_target, initial_state

RESTRICTING = {"MIN", "MAX", "EXP", "ABS"}
CYCLE_BUDGET = 10_000
GAIN_EPS = 1e-6
GAIN_ZERO = 1e-9


class NodeKind(str, enum.Enum):
    STOCK = "Stock"
    AUX = "Aux"
    INPUT = "Input"


class EdgeStyle(str, enum.Enum):
    SPANNING = "Spanning"
    NON_SPANNING = "NonSpanning"


class Polarity(str, enum.Enum):
    REINFORCING = "Reinforcing"
    BALANCING = "Balancing"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class Node:
    name: str
    kind: NodeKind
    hidden: bool = False


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    style: EdgeStyle = EdgeStyle.SPANNING


class CycleBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ControlGraph:
    """Immutable node/edge lists, kept sorted so equal graphs compare equal."""

    nodes: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.name))
        merged = {}
        for e in self.edges:
            key = (e.src, e.dst)
            prev = merged.get(key)
            # one spanning pathway keeps the merged link spanning
            if prev is None or e.style == EdgeStyle.SPANNING:
                merged[key] = e
        edges = tuple(merged[k] for k in sorted(merged))
        names = {n.name for n in nodes}
        if len(names) != len(nodes):
            raise ValueError("duplicate node names")
        kinds = {n.name: n.kind for n in nodes}
        for e in edges:
            if e.src not in names or e.dst not in names:
                raise ValueError(f"edge {e.src}->{e.dst} references a missing node")
            if kinds[e.dst] == NodeKind.INPUT:
                raise ValueError(f"input node {e.dst} cannot have incoming edges")
            if e.src == e.dst and kinds[e.src] != NodeKind.STOCK:
                raise ValueError(f"self-loop on non-stock node {e.src}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, kinds: dict, edges: Iterable, dashed: Iterable = (), hidden=()):
        """Convenience constructor: ``kinds`` maps name -> NodeKind (or its value)."""
        dashed = set(dashed)
        hidden = set(hidden)
        nodes = [Node(n, NodeKind(k), n in hidden) for n, k in kinds.items()]
        es = [
            Edge(u, v, EdgeStyle.NON_SPANNING if (u, v) in dashed else EdgeStyle.SPANNING)
            for u, v in edges
        ]
        return cls(tuple(nodes), tuple(es))

    @property
    def names(self) -> list:
        return [n.name for n in self.nodes]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def names_of(self, kind: NodeKind) -> list:
        return [n.name for n in self.nodes if n.kind == kind]

    @property
    def inputs(self) -> list:
        return self.names_of(NodeKind.INPUT)

    def successors(self, spanning_only=False) -> dict:
        out = {n.name: [] for n in self.nodes}
        for e in self.edges:
            if spanning_only and e.style != EdgeStyle.SPANNING:
                continue
            out[e.src].append(e.dst)
        return out

    def predecessors(self) -> dict:
        out = {n.name: [] for n in self.nodes}
        for e in self.edges:
            out[e.dst].append(e.src)
        return out

    @property
    def dashed_count(self) -> int:
        return sum(e.style == EdgeStyle.NON_SPANNING for e in self.edges)

    def without_dashed(self) -> "ControlGraph":
        return ControlGraph(
            self.nodes, tuple(e for e in self.edges if e.style == EdgeStyle.SPANNING)
        )

    def all_solid(self) -> "ControlGraph":
        return ControlGraph(self.nodes, tuple(replace(e, style=EdgeStyle.SPANNING) for e in self.edges))

    def subgraph(self, keep: Iterable) -> "ControlGraph":
        keep = set(keep)
        return ControlGraph(
            tuple(n for n in self.nodes if n.name in keep),
            tuple(e for e in self.edges if e.src in keep and e.dst in keep),
        )

    def with_edges(self, extra: Iterable) -> "ControlGraph":
        return ControlGraph(self.nodes, self.edges + tuple(extra))


# ---------------------------------------------------------------------------
# Construction


def _variable_nodes(model: Model) -> dict:
    """model variable name -> graph node name (delay aliases map onto their last stage)."""
    mapping = {s.name: s.name for s in model.stocks}
    for a in model.auxiliaries:
        mapping[a.name] = delay_alias_target(model, a) or a.name
    return mapping


def _definitions(model: Model) -> dict:
    """graph node -> defining expressions (stocks: inflow and outflow)."""
    defs = {s.name: s.flows() for s in model.stocks}
    for a in model.auxiliaries:
        if delay_alias_target(model, a) is None:
            defs[a.name] = (a.definition,)
    return defs


def build_graph(model: Model, classifications: Iterable) -> ControlGraph:
    """Stocks, auxiliaries and control inputs with dependency edges.

    Parameter and Inert exogenous variables are omitted; Undetermined ones are
    kept as inputs (conservative). Hidden delay stages carry no self-loop: the
    drain of an implicit stock is part of the delay, not a modelled feedback.
    """
    verdicts = {c.exo: c.verdict for c in classifications}
    missing = set(model.exo_values) - set(verdicts)
    if missing:
        raise ValueError(f"no classification for {sorted(missing)}")
    inputs = {
        name for name, v in verdicts.items()
        if v in (Verdict.CONTROL_INPUT, Verdict.UNDETERMINED) and name in model.exo_values
    }
    var_nodes = _variable_nodes(model)
    for name in inputs:
        var_nodes[name] = name
    nodes = [Node(s.name, NodeKind.STOCK, s.hidden) for s in model.stocks]
    nodes += [
        Node(a.name, NodeKind.AUX)
        for a in model.auxiliaries
        if delay_alias_target(model, a) is None
    ]
    nodes += [Node(n, NodeKind.INPUT) for n in sorted(inputs)]
    hidden = {s.name for s in model.stocks if s.hidden}

    edges = []
    for target, exprs in _definitions(model).items():
        refs = set()
        for e in exprs:
            refs |= free_vars(e)
        for ref in refs:
            src = var_nodes.get(ref)
            if src is None or (src == target and target in hidden):
                continue
            edges.append(Edge(src, target))
    return ControlGraph(tuple(nodes), tuple(edges))


def _restricting(node, model: Model) -> bool:
    if isinstance(node, Call):
        if node.func in RESTRICTING:
            return True
        if node.func == "LOOKUP":
            table = model.table_map.get(node.table)
            return table is not None and table.out_of_range == CLAMP
    if isinstance(node, BinOp) and node.op == "^" and isinstance(node.right, Num):
        p = node.right.value
        return p == int(p) and int(p) % 2 == 0
    return False


def _occurrences(expr, names: set, model: Model, guarded=False):
    """Yield, per occurrence of a name in ``names``, whether its path to the root is guarded."""
    if isinstance(expr, Var):
        if expr.name in names:
            yield guarded
        return
    if isinstance(expr, BinOp) and expr.op == "^" and _restricting(expr, model):
        # only the base passes through the even power
        yield from _occurrences(expr.left, names, model, True)
        yield from _occurrences(expr.right, names, model, guarded)
        return
    g = guarded or _restricting(expr, model)
    for child in children(expr):
        yield from _occurrences(child, names, model, g)


def mark_nonspanning(model: Model, graph: ControlGraph) -> ControlGraph:
    """Dash every link whose source only reaches the target through a range restriction."""
    var_nodes = _variable_nodes(model)
    for n in graph.inputs:
        var_nodes[n] = n
    aliases = {}
    for var, node in var_nodes.items():
        aliases.setdefault(node, set()).add(var)
    defs = _definitions(model)
    edges = []
    for e in graph.edges:
        occ = []
        for expr in defs.get(e.dst, ()):
            occ.extend(_occurrences(expr, aliases.get(e.src, {e.src}), model))
        dashed = bool(occ) and all(occ)
        edges.append(replace(e, style=EdgeStyle.NON_SPANNING if dashed else EdgeStyle.SPANNING))
    return ControlGraph(graph.nodes, tuple(edges))


def stockify(graph: ControlGraph) -> ControlGraph:
    """Re-kind every auxiliary node as a stock; edges and styles untouched."""
    return ControlGraph(
        tuple(replace(n, kind=NodeKind.STOCK) if n.kind == NodeKind.AUX else n for n in graph.nodes),
        graph.edges,
    )


def stock_projection(graph: ControlGraph) -> ControlGraph:
    """Collapse auxiliary chains: keep Stock/Input nodes, link s -> t when a path
    with only auxiliary interior nodes exists. The link is dashed only if every
    such path carries a dashed link.
    """
    kinds = {n.name: n.kind for n in graph.nodes}
    succ_all = graph.successors()
    succ_solid = graph.successors(spanning_only=True)
    keep = [n for n in graph.nodes if n.kind != NodeKind.AUX]
    edges = []
    for node in keep:
        reach_any = _reach_through_aux(node.name, succ_all, kinds)
        reach_solid = _reach_through_aux(node.name, succ_solid, kinds)
        for t in sorted(reach_any):
            style = EdgeStyle.SPANNING if t in reach_solid else EdgeStyle.NON_SPANNING
            edges.append(Edge(node.name, t, style))
    return ControlGraph(tuple(keep), tuple(edges))


def _reach_through_aux(start, succ, kinds) -> set:
    found = set()
    seen = set()
    queue = deque(succ[start])
    while queue:
        v = queue.popleft()
        if kinds[v] != NodeKind.AUX:
            found.add(v)
            continue
        if v in seen:
            continue
        seen.add(v)
        queue.extend(succ[v])
    return found


# ---------------------------------------------------------------------------
# Feedback loops


@dataclass(frozen=True)
class LoopFinding:
    cycle: tuple
    polarity: Polarity
    contains_delay: bool
    contains_nonspanning: bool


def _edge_gains(model: Model, graph: ControlGraph) -> dict:
    """d(target)/d(source) at the baseline state; None marks a kink or failure."""
    ev = Evaluator(model)
    env = model.exo_values
    try:
        env.update(initial_state(model))
        ev.auxiliaries(env)
    except DomainError:
        # no valid baseline: every polarity is undetermined
        return {(e.src, e.dst): None for e in graph.edges}
    var_nodes = _variable_nodes(model)
    for n in graph.inputs:
        var_nodes[n] = n
    aliases = {}
    for var, node in var_nodes.items():
        aliases.setdefault(node, []).append(var)
    rate = {s.name: s.net_rate() for s in model.stocks}
    aux_def = {a.name: a.definition for a in model.auxiliaries}
    tables = model.table_map

    gains = {}
    for e in graph.edges:
        expr = rate.get(e.dst, aux_def.get(e.dst))
        # a source may enter through its own name or through a delay alias
        total = 0.0
        ok = True
        for var in aliases.get(e.src, [e.src]):
            if var not in free_vars(expr):
                continue
            x = env[var]
            h = GAIN_EPS * max(1.0, abs(x))
            try:
                vals = []
                for dx in (-h, 0.0, h):
                    local = dict(env)
                    local[var] = x + dx
                    vals.append(evaluate(expr, local, tables))
            except DomainError:
                ok = False
                break
            fwd = (vals[2] - vals[1]) / h
            bwd = (vals[1] - vals[0]) / h
            if abs(fwd - bwd) > 1e-3 * max(1.0, abs(fwd), abs(bwd)):
                ok = False
                break
            total += (vals[2] - vals[0]) / (2 * h)
        gains[e.src, e.dst] = total if ok else None
    return gains


def find_loops(graph: ControlGraph, model: Model) -> list:
    """Simple cycles with polarity from the sign of the product of edge gains."""
    g = nx.DiGraph()
    g.add_nodes_from(graph.names)
    g.add_edges_from((e.src, e.dst) for e in graph.edges)
    styles = {(e.src, e.dst): e.style for e in graph.edges}
    hidden = {n.name for n in graph.nodes if n.hidden}
    gains = _edge_gains(model, graph)
    out = []
    for k, cycle in enumerate(nx.simple_cycles(g)):
        if k >= CYCLE_BUDGET:
            raise CycleBudgetExceeded(f"more than {CYCLE_BUDGET} simple cycles")
        # canonical rotation: start at the smallest name
        i = cycle.index(min(cycle))
        cycle = tuple(cycle[i:] + cycle[:i])
        links = list(zip(cycle, cycle[1:] + cycle[:1]))
        product = 1.0
        for link in links:
            gain = gains.get(link)
            if gain is None or abs(gain) < GAIN_ZERO:
                product = math.nan
                break
            product *= gain
        if math.isnan(product):
            polarity = Polarity.UNDETERMINED
        else:
            polarity = Polarity.REINFORCING if product > 0 else Polarity.BALANCING
        out.append(
            LoopFinding(
                cycle,
                polarity,
                any(n in hidden for n in cycle),
                any(styles[l] == EdgeStyle.NON_SPANNING for l in links),
            )
        )
    out.sort(key=lambda f: (len(f.cycle), f.cycle))
    return out


# ---------------------------------------------------------------------------
# DOT


_SHAPES = {
    NodeKind.STOCK: "shape=box,style=filled",
    NodeKind.AUX: "shape=ellipse",
    NodeKind.INPUT: "shape=square,color=red",
}


def to_dot(graph: ControlGraph, name: str = "G") -> str:
    if not graph.nodes:
        return f"digraph {name} {{ }}\n"
    lines = [f"digraph {name} {{"]
    for n in graph.nodes:
        attrs = _SHAPES[n.kind] + (",peripheries=2" if n.hidden else "")
        lines.append(f"  {n.name} [{attrs}];")
    for e in graph.edges:
        attr = " [style=dashed]" if e.style == EdgeStyle.NON_SPANNING else ""
        lines.append(f"  {e.src} -> {e.dst}{attr};")
    lines.append("}")
    return "\n".join(lines) + "\n"
