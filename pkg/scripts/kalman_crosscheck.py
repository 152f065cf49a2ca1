"""Compare the graph-theoretic verdict with a numeric Kalman rank probe.

Random stock-only graphs get random edge weights; a structurally controllable
graph should reach full rank for almost every draw, an uncontrollable one for
none. Prints a summary and every disagreement.

usage: python3 scripts/kalman_crosscheck.py [--count 200] [--seed 11] [--n-max 8] [--p 0.3]
"""

import argparse
import random
from dataclasses import dataclass

from sdsca.controllability import kalman_rank_probe, theorem0_verdict
from sdsca.graph import ControlGraph, Edge, Node, NodeKind


@dataclass
class Config:
    count: int = 200
    seed: int = 11
    n_max: int = 8
    p: float = 0.3
    trials: int = 5


def random_graph(rng: random.Random, n_max: int, p: float) -> ControlGraph:
    n = rng.randint(1, n_max)
    stocks = [f"S{i}" for i in range(n)]
    inputs = [f"U{i}" for i in range(rng.randint(1, 3))]
    nodes = [Node(s, NodeKind.STOCK) for s in stocks] + [Node(u, NodeKind.INPUT) for u in inputs]
    edges = [Edge(a, b) for a in stocks + inputs for b in stocks if rng.random() < p]
    return ControlGraph(tuple(nodes), tuple(edges))


def run(cfg: Config):
    rng = random.Random(cfg.seed)
    counts = {True: 0, False: 0}
    bad = []
    for _ in range(cfg.count):
        g = random_graph(rng, cfg.n_max, cfg.p)
        ok = theorem0_verdict(g).structurally_controllable
        frac = kalman_rank_probe(g, trials=cfg.trials, seed=rng.randrange(2**31))
        counts[ok] += 1
        if (ok and frac == 0) or (not ok and frac > 0):
            bad.append((g, ok, frac))
    return counts, bad


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=Config.count)
    ap.add_argument("--seed", type=int, default=Config.seed)
    ap.add_argument("--n-max", type=int, default=Config.n_max)
    ap.add_argument("--p", type=float, default=Config.p)
    a = ap.parse_args()
    counts, bad = run(Config(a.count, a.seed, a.n_max, a.p))
    print(f"graphs={a.count} controllable={counts[True]} uncontrollable={counts[False]} violations={len(bad)}")
    for g, ok, frac in bad:
        print(f"  verdict={ok} full-rank fraction={frac:.2f} edges={[(e.src, e.dst) for e in g.edges]}")


if __name__ == "__main__":
    main()
