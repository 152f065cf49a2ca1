"""Import of a small XMILE subset.

Supported: ``<stock>`` with ``<inflow>``/``<outflow>`` references to
``<flow>`` elements, ``<flow>``, ``<aux>`` (numeric-literal auxes become
exogenous constants), and continuous graphical functions, either standalone
``<gf name=...>`` or embedded in an ``<aux>``. Everything else that changes the
meaning of a model (arrays, modules, discrete tables, ...) is rejected with an
:class:`UnsupportedFeature` naming the tag.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

from .model import (
    BUILTINS,
    CLAMP,
    EXTRAPOLATE,
    Aux,
    BinOp,
    Call,
    Exo,
    Model,
    Neg,
    Num,
    Stock,
    Table,
    Var,
    errors_only,
    validate,
)
from .parser import ModelParseError, ParseError, SourceSpan, parse_expression

UNSUPPORTED_TAGS = {
    "dimensions": "dimensions",
    "module": "module",
    "macro": "macros",
    "event_poster": "event poster",
    "array": "arrays",
}

_QUOTED = re.compile(r'"([^"]*)"')
_CALL = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(")


class UnsupportedFeature(ParseError):
    def __init__(self, feature: str, path: str):
        self.feature = feature
        self.path = path
        super().__init__(SourceSpan(1, 1), "supported XMILE subset", f"{feature} at {path}")


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def normalize_name(raw: str) -> str:
    """XMILE names: quotes dropped, whitespace runs and escapes become ``_``."""
    name = raw.strip().strip('"').replace("\\n", " ")
    return re.sub(r"\s+", "_", name.strip())


def _child(el, tag):
    for c in el:
        if _local(c.tag) == tag:
            return c
    return None


def _children(el, tag):
    return [c for c in el if _local(c.tag) == tag]


def _text(el, tag):
    c = _child(el, tag)
    return None if c is None or c.text is None else c.text.strip()


def _equation_text(text: str) -> str:
    text = _QUOTED.sub(lambda m: normalize_name(m.group(1)), text)
    # builtins are case-insensitive in XMILE
    return _CALL.sub(
        lambda m: (m.group(1).upper() if m.group(1).upper() in BUILTINS else m.group(1)) + "(",
        text,
    )


def _floats(text: str):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    return [float(p) for p in parts]


def _table(name, gf, path, errors):
    kind = gf.get("type", "continuous").lower()
    if kind == "discrete":
        errors.append(UnsupportedFeature("discrete gf", path))
        return None
    policy = EXTRAPOLATE if kind == "extrapolate" else CLAMP
    try:
        ys = _floats(_text(gf, "ypts") or "")
        xpts = _text(gf, "xpts")
        if xpts is not None:
            xs = _floats(xpts)
        else:
            scale = _child(gf, "xscale")
            lo, hi = float(scale.get("min")), float(scale.get("max"))
            n = len(ys)
            xs = [lo + (hi - lo) * k / (n - 1) for k in range(n)] if n > 1 else [lo]
    except (AttributeError, TypeError, ValueError):
        errors.append(ParseError(SourceSpan(1, 1), "gf points", path))
        return None
    if len(xs) != len(ys) or len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
        errors.append(ParseError(SourceSpan(1, 1), "well-formed gf", path))
        return None
    return Table(name, tuple(zip(xs, ys)), policy)


def _literal(expr):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Neg) and isinstance(expr.operand, Num):
        return -expr.operand.value
    return None


def _sum(names):
    expr = None
    for n in names:
        expr = Var(n) if expr is None else BinOp("+", expr, Var(n))
    return expr


def import_xmile(xml_text: str) -> Model:
    """Parse an XMILE document into a Model.

    Raises ModelParseError listing every problem; unsupported constructs are
    reported as :class:`UnsupportedFeature` with their element path.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ModelParseError([ParseError(SourceSpan(line, col + 1), "well-formed XML", str(exc))])
    errors = []
    for el in root.iter():
        tag = _local(el.tag)
        if tag in UNSUPPORTED_TAGS:
            errors.append(UnsupportedFeature(UNSUPPORTED_TAGS[tag], tag))
    models = [el for el in root.iter() if _local(el.tag) == "model"]
    if len(models) != 1:
        errors.append(ParseError(SourceSpan(1, 1), "exactly one <model>", str(len(models))))
        raise ModelParseError(errors)
    header = _child(root, "header")
    name = normalize_name((header is not None and _text(header, "name")) or "") or "Imported"
    name = re.sub(r"\W", "_", name)
    if name[0].isdigit():
        name = "_" + name
    variables = _child(models[0], "variables")
    elements = list(variables) if variables is not None else []

    seen = {}
    stocks, auxes, exos, tables = [], [], [], []

    def claim(raw, path):
        norm = normalize_name(raw)
        if norm in seen:
            errors.append(
                ParseError(SourceSpan(1, 1), "unique name after normalization", f"{raw} at {path}")
            )
            return None
        seen[norm] = path
        return norm

    def equation(el, path):
        eqn = _text(el, "eqn")
        if eqn is None:
            errors.append(ParseError(SourceSpan(1, 1), "<eqn>", path))
            return None
        try:
            return parse_expression(_equation_text(eqn))
        except ParseError as exc:
            errors.append(ParseError(exc.span, exc.expected, f"{exc.found} at {path}"))
            return None

    for el in elements:
        tag = _local(el.tag)
        raw = el.get("name", "")
        path = f"model/variables/{tag}[{raw}]"
        if tag in UNSUPPORTED_TAGS:
            continue
        if tag not in {"stock", "flow", "aux", "gf"}:
            errors.append(UnsupportedFeature(tag, path))
            continue
        if _child(el, "dimensions") is not None:
            continue
        vname = claim(raw, path)
        if vname is None:
            continue
        if tag == "gf":
            t = _table(vname, el, path, errors)
            if t is not None:
                tables.append(t)
            continue
        expr = equation(el, path)
        if expr is None:
            continue
        if tag == "stock":
            inflow = _sum(normalize_name(e.text or "") for e in _children(el, "inflow"))
            outflow = _sum(normalize_name(e.text or "") for e in _children(el, "outflow"))
            stocks.append(Stock(vname, expr, inflow, outflow))
            continue
        gf = _child(el, "gf")
        if gf is not None:
            tname = claim(vname + "_gf", path + "/gf")
            t = tname and _table(tname, gf, path + "/gf", errors)
            if t:
                tables.append(t)
                auxes.append(Aux(vname, Call("LOOKUP", (Var(tname), expr))))
            continue
        literal = _literal(expr)
        if tag == "aux" and literal is not None:
            exos.append(Exo(vname, literal))
        else:
            auxes.append(Aux(vname, expr))

    if errors:
        raise ModelParseError(errors)
    model = Model(name, stocks, auxes, exos, tables)
    problems = [
        ParseError(SourceSpan(1, 1), d.code, f"{d.message or d.name} at {seen.get(d.name, '?')}")
        for d in errors_only(validate(model))
    ]
    if problems:
        raise ModelParseError(problems)
    return model
