"""Structural control analysis (SCA) for stock-and-flow models."""

from importlib import resources

from .classifier import ExoClassification, PorcEvidence, Verdict, classify_exogenous, porc
from .controllability import (
    Conclusion,
    ControlVerdict,
    DashedMode,
    InputAnalysis,
    brute_force_dilation,
    has_dilation,
    kalman_rank_probe,
    per_input_analysis,
    theorem0_verdict,
    theorem1_verdict,
)
from .graph import (
    ControlGraph,
    Edge,
    EdgeStyle,
    LoopFinding,
    Node,
    NodeKind,
    build_graph,
    find_loops,
    mark_nonspanning,
    stock_projection,
    stockify,
    to_dot,
)
from .model import Aux, Exo, Model, Stock, Table, validate
from .parser import ModelParseError, ParseError, parse_expression, parse_model, serialize_model
from .report import RunConfig, ScaReport, analyze_model, render_json, render_text, run_sca
from .simulator import SimConfig, Step, expand_delays, simulate
from .xmile import UnsupportedFeature, import_xmile

__version__ = "0.1.0"


def fixture_text(name: str) -> str:
    """Text of a bundled ``.sdm`` model, e.g. ``fixture_text("smooth_loop")``."""
    return resources.files(__package__).joinpath("models", f"{name}.sdm").read_text()


def fixture_path(name: str):
    return resources.files(__package__).joinpath("models", f"{name}.sdm")
