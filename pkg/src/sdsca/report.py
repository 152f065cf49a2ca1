"""End-to-end analysis run and its text / JSON reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

from .classifier import (
    DEFAULT_SAMPLES,
    DEFAULT_SEED,
    ExoClassification,
    PorcEvidence,
    Verdict,
    classify_exogenous,
)
from .controllability import (
    Conclusion,
    ControlVerdict,
    DashedMode,
    InputAnalysis,
    per_input_analysis,
    theorem1_verdict,
)
from .graph import (
    ControlGraph,
    LoopFinding,
    NodeKind,
    Polarity,
    build_graph,
    find_loops,
    mark_nonspanning,
    stock_projection,
    to_dot,
)
from .model import DELAY_FUNCS, Call, Model
from .parser import parse_model
from .simulator import NonFiniteAbort, SimConfig, expand_delays, simulate
from .xmile import import_xmile

SCHEMA_VERSION = 1
FORMATS = ("sdm", "xmile")
DASHED_CHOICES = ("both", "solid", "absent")


@dataclass(frozen=True)
class RunConfig:
    input_path: str
    format: str = "sdm"
    dashed_mode: str = "both"
    dt: float = 0.25
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    dot_path: Optional[str] = None
    report_format: str = "text"
    delay_expansion: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.dashed_mode not in DASHED_CHOICES:
            raise ValueError(f"dashed mode must be one of {DASHED_CHOICES}")
        if self.report_format not in ("text", "json"):
            raise ValueError("report format must be text or json")

    @property
    def modes(self) -> tuple:
        if self.dashed_mode == "both":
            return (DashedMode.SOLID, DashedMode.ABSENT)
        return (DashedMode(self.dashed_mode),)


@dataclass(frozen=True)
class GraphSummary:
    nodes: tuple  # (name, kind, hidden)
    edges: tuple  # (src, dst, style)
    projection_edges: tuple
    delay_expansions: tuple
    node_count: int
    edge_count: int
    dashed_count: int


@dataclass(frozen=True)
class ScaReport:
    model_name: str
    seed: int
    samples: int
    delay_expansion: bool
    step1: tuple
    step2_3: GraphSummary
    step4: tuple
    step5_verdicts: tuple
    step5_loops: tuple
    notes: tuple = field(default=())


# ---------------------------------------------------------------------------
# Run


def load_model(path, fmt: str = "sdm") -> Model:
    text = Path(path).read_text(encoding="utf-8")
    return import_xmile(text) if fmt == "xmile" else parse_model(text)


def _summarize(graph: ControlGraph, projection: ControlGraph, delays: tuple) -> GraphSummary:
    return GraphSummary(
        nodes=tuple((n.name, n.kind.value, n.hidden) for n in graph.nodes),
        edges=tuple((e.src, e.dst, e.style.value) for e in graph.edges),
        projection_edges=tuple((e.src, e.dst, e.style.value) for e in projection.edges),
        delay_expansions=delays,
        node_count=len(graph.nodes),
        edge_count=len(graph.edges),
        dashed_count=graph.dashed_count,
    )


def _hidden_negativity(model: Model, dt: float) -> list:
    """Baseline run check: a hidden delay stage going negative flags a suspicious delay input."""
    try:
        traj = simulate(model, SimConfig(dt=dt, horizon=max(10.0, dt)))
    except NonFiniteAbort as exc:
        return [f"baseline simulation aborted: {exc}"]
    return [
        f"hidden stock {s.name} goes negative in the baseline run"
        for s in model.stocks
        if s.hidden and s.name in traj.values and traj[s.name].min() < 0
    ]


def analyze_model(model: Model, cfg: RunConfig):
    """All five steps on a parsed model; returns (report, graph)."""
    delays = tuple(
        sorted(
            a.name
            for a in model.auxiliaries
            if isinstance(a.definition, Call) and a.definition.func in DELAY_FUNCS
        )
    )
    expanded = expand_delays(model)
    classes = classify_exogenous(model, samples=cfg.samples, seed=cfg.seed)
    structural = expanded if cfg.delay_expansion else model
    graph = mark_nonspanning(structural, build_graph(structural, classes))
    projection = stock_projection(graph)

    notes = [
        "parallel links merge; a link is dashed only if every merged path is dashed",
        f"PorC sampling: K={cfg.samples}, seed={cfg.seed}",
        "Undetermined exogenous variables are kept as inputs",
    ]
    if not cfg.delay_expansion:
        notes.append("delay expansion disabled: hidden delay stocks are ignored (debug only)")
    step4 = []
    verdicts = []
    for mode in cfg.modes:
        verdicts.append(theorem1_verdict(projection, mode))
        step4.extend(per_input_analysis(projection, mode))
    if not graph.inputs:
        notes.append("no control inputs: model is fully endogenous")
    loops = find_loops(graph, expanded)
    notes.extend(_hidden_negativity(expanded, cfg.dt))

    report = ScaReport(
        model_name=model.name,
        seed=cfg.seed,
        samples=cfg.samples,
        delay_expansion=cfg.delay_expansion,
        step1=tuple(classes),
        step2_3=_summarize(graph, projection, delays if cfg.delay_expansion else ()),
        step4=tuple(step4),
        step5_verdicts=tuple(verdicts),
        step5_loops=tuple(loops),
        notes=tuple(notes),
    )
    return report, graph


def run_sca(cfg: RunConfig) -> ScaReport:
    model = load_model(cfg.input_path, cfg.format)
    report, graph = analyze_model(model, cfg)
    if cfg.dot_path:
        Path(cfg.dot_path).write_text(to_dot(graph), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# Text


def _names(xs) -> str:
    return ", ".join(sorted(xs)) or "-"


def render_text(report: ScaReport) -> str:
    out = [f"Structural control analysis: {report.model_name}", ""]

    out.append("Step 1: control inputs and parameters")
    for c in report.step1:
        ev = c.evidence
        line = f"  {c.exo:<16} {c.verdict.value:<13} max|PorC|={ev.max_porc:.3g} max|dx/dz|={ev.max_d_xdot_dz:.3g}"
        if ev.note:
            line += f"  ({ev.note})"
        out.append(line)
    if not report.step1:
        out.append("  (no exogenous variables)")
    out.append("")

    g = report.step2_3
    out.append("Step 2-3: control graph and non-spanning links")
    out.append(f"  nodes={g.node_count} edges={g.edge_count} dashed={g.dashed_count}")
    for kind, label in ((NodeKind.STOCK, "stocks"), (NodeKind.AUX, "auxiliaries"), (NodeKind.INPUT, "inputs")):
        members = [n for n, k, _ in g.nodes if k == kind.value]
        out.append(f"  {label}: {_names(members)}")
    out.append(f"  delay expansions: {_names(g.delay_expansions)}")
    dashed = [f"{s} -> {d}" for s, d, st in g.edges if st == "NonSpanning"]
    out.append(f"  dashed links: {'; '.join(sorted(dashed)) or '-'}")
    proj = [f"{s} -> {d}" + (" (dashed)" if st == "NonSpanning" else "") for s, d, st in g.projection_edges]
    out.append(f"  stock-level links: {'; '.join(proj) or '-'}")
    out.append("")

    out.append("Step 4: single-input analysis")
    for a in report.step4:
        status = "controllable" if a.single_input_controllable else "not concluded"
        line = f"  [{a.mode.value}] {a.input}: {status}, stocks={a.controllable_stock_count}, reaches {_names(a.reachable)}"
        if a.notes:
            line += f"  ({'; '.join(a.notes)})"
        out.append(line)
    if not report.step4:
        out.append("  (no control inputs)")
    out.append("")

    out.append("Step 5: verdicts and feedback loops")
    for v in report.step5_verdicts:
        out.append(f"  [{v.mode.value}] {v.conclusion.value}")
        out.append(f"    spanning: {_names(v.spanning)}; non-spanning: {_names(v.non_spanning)}")
        for n in v.notes:
            out.append(f"    - {n}")
    for loop in report.step5_loops:
        flags = [f for f, on in (("delay", loop.contains_delay), ("non-spanning", loop.contains_nonspanning)) if on]
        suffix = f" [{', '.join(flags)}]" if flags else ""
        out.append(f"  loop {' -> '.join(loop.cycle)} ({loop.polarity.value}){suffix}")
    out.append("  notes:")
    for n in report.notes:
        out.append(f"    - {n}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# JSON


def _encode(obj):
    if is_dataclass(obj):
        return {f.name: _encode(getattr(obj, f.name)) for f in fields(obj)}
    if hasattr(obj, "value") and isinstance(obj, str):  # str enums
        return obj.value
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, (list, tuple)):
        return [_encode(x) for x in obj]
    if isinstance(obj, dict):
        if obj and isinstance(next(iter(obj)), tuple):
            return [[*k, v] for k, v in sorted(obj.items())]
        return {k: _encode(v) for k, v in sorted(obj.items())}
    return obj


def render_json(report: ScaReport) -> str:
    body = {"sca_schema": SCHEMA_VERSION}
    body.update(_encode(report))
    return json.dumps(body, indent=2) + "\n"


def _evidence(d) -> PorcEvidence:
    return PorcEvidence(
        exo=d["exo"],
        d_xdot_dz=dict(d["d_xdot_dz"]),
        porc_terms={(i, j): v for i, j, v in d["porc_terms"]},
        samples_used=d["samples_used"],
        agreement=d["agreement"],
        rejected=d["rejected"],
        note=d["note"],
    )


def _verdict(d) -> ControlVerdict:
    w = d["dilation_witness"]
    return ControlVerdict(
        mode=DashedMode(d["mode"]),
        accessible=frozenset(d["accessible"]),
        non_accessible=frozenset(d["non_accessible"]),
        spanning=frozenset(d["spanning"]),
        non_spanning=frozenset(d["non_spanning"]),
        dilation_witness=None if w is None else frozenset(w),
        structurally_controllable=d["structurally_controllable"],
        theorem1_applicable=d["theorem1_applicable"],
        conclusion=Conclusion(d["conclusion"]),
        notes=tuple(d["notes"]),
    )


def report_from_json(text: str) -> ScaReport:
    d = json.loads(text)
    if d.get("sca_schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {d.get('sca_schema')!r}")
    g = d["step2_3"]

    def triples(xs):
        return tuple(tuple(x) for x in xs)

    return ScaReport(
        model_name=d["model_name"],
        seed=d["seed"],
        samples=d["samples"],
        delay_expansion=d["delay_expansion"],
        step1=tuple(
            ExoClassification(c["exo"], Verdict(c["verdict"]), _evidence(c["evidence"]))
            for c in d["step1"]
        ),
        step2_3=GraphSummary(
            nodes=triples(g["nodes"]),
            edges=triples(g["edges"]),
            projection_edges=triples(g["projection_edges"]),
            delay_expansions=tuple(g["delay_expansions"]),
            node_count=g["node_count"],
            edge_count=g["edge_count"],
            dashed_count=g["dashed_count"],
        ),
        step4=tuple(
            InputAnalysis(
                input=a["input"],
                mode=DashedMode(a["mode"]),
                reachable=frozenset(a["reachable"]),
                single_input_controllable=a["single_input_controllable"],
                controllable_stock_count=a["controllable_stock_count"],
                notes=tuple(a["notes"]),
            )
            for a in d["step4"]
        ),
        step5_verdicts=tuple(_verdict(v) for v in d["step5_verdicts"]),
        step5_loops=tuple(
            LoopFinding(tuple(l["cycle"]), Polarity(l["polarity"]), l["contains_delay"], l["contains_nonspanning"])
            for l in d["step5_loops"]
        ),
        notes=tuple(d["notes"]),
    )
