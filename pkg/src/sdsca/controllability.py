"""Accessibility, spanningness and structural controllability verdicts.

A graph (Stock/Input nodes) is structurally controllable iff every node is
reachable from an input and no node set S has a smaller in-neighbourhood
T(S) (a dilation). The dilation test runs through a maximum matching:
by Hall's theorem a dilation exists iff some non-input node stays unmatched.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import ControlGraph, EdgeStyle, NodeKind, stockify

BRUTE_FORCE_LIMIT = 16
PIVOT_TOL = 1e-9


class DashedMode(str, enum.Enum):
    SOLID = "solid"
    ABSENT = "absent"


class Conclusion(str, enum.Enum):
    CONTROLLABLE = "controllable"
    UNCONTROLLABLE = "uncontrollable"
    NO_CONCLUSION = "no conclusion"


class AuxNodesPresent(ValueError):
    pass


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ControlVerdict:
    mode: DashedMode
    accessible: frozenset
    non_accessible: frozenset
    spanning: frozenset
    non_spanning: frozenset
    dilation_witness: Optional[frozenset]
    structurally_controllable: bool
    theorem1_applicable: bool
    conclusion: Conclusion
    notes: tuple = ()


@dataclass(frozen=True)
class InputAnalysis:
    input: str
    mode: DashedMode
    reachable: frozenset
    single_input_controllable: bool
    controllable_stock_count: int
    notes: tuple = field(default=())


def accessible_set(graph: ControlGraph) -> set:
    succ = graph.successors()
    inputs = graph.inputs
    seen = set()
    queue = deque(inputs)
    while queue:
        v = queue.popleft()
        for w in succ[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen - set(inputs)


def structurally_spanning(graph: ControlGraph):
    """(spanning, non_spanning): accessible nodes with / without an all-solid input path."""
    accessible = accessible_set(graph)
    solid = accessible_set(graph.without_dashed())
    return solid, accessible - solid


# ---------------------------------------------------------------------------
# Matching


def _bipartite(graph: ControlGraph):
    """left (sources) -> sorted right (non-input targets)."""
    adj = {n: [] for n in graph.names}
    for e in graph.edges:
        adj[e.src].append(e.dst)
    for k in adj:
        adj[k].sort()
    right = [n.name for n in graph.nodes if n.kind != NodeKind.INPUT]
    return adj, right


def _hopcroft_karp(adj: dict, right: list):
    left = sorted(adj)
    match_l = {}
    match_r = {}
    inf = float("inf")

    def bfs():
        dist = {}
        queue = deque()
        for u in left:
            if u not in match_l:
                dist[u] = 0
                queue.append(u)
        found = False
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                w = match_r.get(v)
                if w is None:
                    found = True
                elif w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found, dist

    def dfs(u, dist):
        # explicit stack keeps deep alternating paths off the recursion limit
        stack = [(u, iter(adj[u]))]
        path = []
        while stack:
            node, it = stack[-1]
            advanced = False
            for v in it:
                w = match_r.get(v)
                if w is None:
                    path.append((node, v))
                    for a, b in path:
                        match_l[a] = b
                        match_r[b] = a
                    return True
                if dist.get(w, inf) == dist[node] + 1:
                    path.append((node, v))
                    stack.append((w, iter(adj[w])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                dist[node] = inf
                if path:
                    path.pop()
        return False

    while True:
        found, dist = bfs()
        if not found:
            break
        for u in left:
            if u not in match_l:
                dfs(u, dist)
    return match_l, match_r


def max_matching(graph: ControlGraph) -> set:
    """Maximum set of edges (u, v) with distinct sources and distinct non-input targets."""
    adj, right = _bipartite(graph)
    match_l, _ = _hopcroft_karp(adj, right)
    return {(u, v) for u, v in match_l.items()}


def has_dilation(graph: ControlGraph) -> Optional[frozenset]:
    """A Hall violator S (|T(S)| < |S|) among non-input nodes, or None."""
    adj, right = _bipartite(graph)
    match_l, match_r = _hopcroft_karp(adj, right)
    free = [v for v in right if v not in match_r]
    if not free:
        return None
    preds = graph.predecessors()
    start = free[0]
    s_set = {start}
    t_set = set()
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for u in preds[v]:
            if u in t_set:
                continue
            t_set.add(u)
            # u is matched, otherwise there would be an augmenting path
            partner = match_l[u]
            if partner not in s_set:
                s_set.add(partner)
                queue.append(partner)
    return frozenset(s_set)


def in_neighbourhood(graph: ControlGraph, nodes) -> set:
    nodes = set(nodes)
    return {e.src for e in graph.edges if e.dst in nodes}


def brute_force_dilation(graph: ControlGraph) -> Optional[frozenset]:
    """Smallest, then lexicographically first, S with |T(S)| < |S| (test oracle)."""
    right = sorted(n.name for n in graph.nodes if n.kind != NodeKind.INPUT)
    if len(right) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{len(right)} nodes exceeds {BRUTE_FORCE_LIMIT}")
    preds = graph.predecessors()
    for k in range(1, len(right) + 1):
        for subset in itertools.combinations(right, k):
            t = set()
            for v in subset:
                t.update(preds[v])
            if len(t) < k:
                return frozenset(subset)
    return None


# ---------------------------------------------------------------------------
# Verdicts


def _apply_mode(graph: ControlGraph, mode: DashedMode) -> ControlGraph:
    return graph.without_dashed() if DashedMode(mode) == DashedMode.ABSENT else graph


def theorem0_verdict(graph: ControlGraph, treat_dashed_as=DashedMode.SOLID) -> ControlVerdict:
    """Accessibility + dilation test on a graph of stocks and inputs."""
    mode = DashedMode(treat_dashed_as)
    if graph.names_of(NodeKind.AUX):
        raise AuxNodesPresent("stockify or project the graph first")
    spanning, non_spanning = structurally_spanning(graph)
    g = _apply_mode(graph, mode)
    targets = {n.name for n in g.nodes if n.kind != NodeKind.INPUT}
    accessible = accessible_set(g)
    non_accessible = targets - accessible
    witness = has_dilation(g)
    ok = not non_accessible and witness is None
    notes = []
    if non_accessible:
        notes.append(f"non-accessible: {', '.join(sorted(non_accessible))}")
    if witness is not None:
        t = in_neighbourhood(g, witness)
        notes.append(
            f"dilation: S={{{', '.join(sorted(witness))}}} has |T(S)|={len(t)} < {len(witness)}"
        )
    return ControlVerdict(
        mode=mode,
        accessible=frozenset(accessible),
        non_accessible=frozenset(non_accessible),
        spanning=frozenset(spanning),
        non_spanning=frozenset(non_spanning),
        dilation_witness=witness,
        structurally_controllable=ok,
        theorem1_applicable=False,
        conclusion=Conclusion.CONTROLLABLE if ok else Conclusion.UNCONTROLLABLE,
        notes=tuple(notes),
    )


def theorem1_verdict(graph: ControlGraph, treat_dashed_as=DashedMode.SOLID) -> ControlVerdict:
    """Sufficient test: controllable once every auxiliary is read as a stock.

    A failure is only conclusive when no auxiliary was re-read and dashed links
    were kept as free links (then the plain stock-level test applies exactly).
    """
    mode = DashedMode(treat_dashed_as)
    had_aux = bool(graph.names_of(NodeKind.AUX))
    v = theorem0_verdict(stockify(graph), mode)
    notes = list(v.notes)
    if v.structurally_controllable:
        notes.append("sufficient condition holds: structurally controllable")
        return ControlVerdict(**{**v.__dict__, "theorem1_applicable": True, "notes": tuple(notes)})
    if not had_aux and mode == DashedMode.SOLID:
        return ControlVerdict(**{**v.__dict__, "theorem1_applicable": True, "notes": tuple(notes)})
    notes.append("sufficient condition failed; no conclusion")
    if mode == DashedMode.ABSENT and graph.dashed_count:
        notes.append("partial control: non-spanning links restrict the inputs' reach")
    return ControlVerdict(
        **{
            **v.__dict__,
            "conclusion": Conclusion.NO_CONCLUSION,
            "notes": tuple(notes),
        }
    )


def per_input_analysis(graph: ControlGraph, treat_dashed_as=DashedMode.SOLID) -> list:
    """Single-input reach and controllability, ordered by input name."""
    mode = DashedMode(treat_dashed_as)
    inputs = sorted(graph.inputs)
    g_mode = _apply_mode(graph, mode)
    all_stocks = [n.name for n in graph.nodes if n.kind == NodeKind.STOCK and not n.hidden]
    out = []
    for name in inputs:
        others = set(inputs) - {name}
        single = g_mode.subgraph(set(g_mode.names) - others)
        reachable = accessible_set(single)
        sub = single.subgraph(reachable | {name})
        verdict = theorem1_verdict(sub, DashedMode.SOLID)
        reached_stocks = [
            n.name for n in sub.nodes if n.kind == NodeKind.STOCK and not n.hidden
        ]
        ok = verdict.structurally_controllable and bool(reachable)
        notes = []
        if not reachable:
            notes.append("reaches no variable")
        elif not ok:
            notes.append("; ".join(verdict.notes))
        if ok and len(reached_stocks) < len(all_stocks):
            notes.append(f"partial: reaches {len(reached_stocks)} of {len(all_stocks)} stocks")
        out.append(
            InputAnalysis(
                input=name,
                mode=mode,
                reachable=frozenset(reachable),
                single_input_controllable=ok,
                controllable_stock_count=len(reached_stocks) if ok else 0,
                notes=tuple(notes),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Numeric oracle


def _rank(c: np.ndarray, tol: float = PIVOT_TOL) -> int:
    """Row reduction with partial pivoting on column-normalised ``c``."""
    m = np.array(c, dtype=float)
    norms = np.linalg.norm(m, axis=0)
    nz = norms > 0
    m[:, nz] /= norms[nz]
    rows, cols = m.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivot = rank + int(np.argmax(np.abs(m[rank:, col])))
        if abs(m[pivot, col]) <= tol:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        m[rank + 1:] -= np.outer(m[rank + 1:, col] / m[rank, col], m[rank])
        rank += 1
    return rank


def kalman_rank_probe(graph: ControlGraph, trials: int = 5, seed: int = 0) -> float:
    """Fraction of random positive weightings whose controllability matrix has full rank."""
    if graph.names_of(NodeKind.AUX):
        raise AuxNodesPresent("stockify the graph first")
    states = [n.name for n in graph.nodes if n.kind == NodeKind.STOCK]
    inputs = graph.inputs
    n = len(states)
    if n == 0:
        return 1.0
    si = {s: k for k, s in enumerate(states)}
    ii = {u: k for k, u in enumerate(inputs)}
    rng = np.random.default_rng(seed)
    full = 0
    for _ in range(trials):
        a = np.zeros((n, n))
        b = np.zeros((n, max(1, len(inputs))))
        for e in graph.edges:
            w = rng.uniform(0.5, 1.5)
            if e.src in ii:
                b[si[e.dst], ii[e.src]] = w
            else:
                a[si[e.dst], si[e.src]] = w
        blocks = [b]
        for _ in range(n - 1):
            blocks.append(a @ blocks[-1])
        if _rank(np.hstack(blocks)) == n:
            full += 1
    return full / trials
