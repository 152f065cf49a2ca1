"""Native ``.sdm`` model format: tokenizer, recursive-descent parser, serializer.

One statement per line, ``#`` starts a comment::

    model StockManagement
    stock SupplyLine = 200 { inflow: OrderRate, outflow: SupplyLine / 4 }
    aux   OrderRate = MAX(0, IndicatedOrders)
    exo   SL_star = 200
    table eff : (0,0) (1,1) (2,1.5) clamp
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .model import (
    BUILTINS,
    CLAMP,
    EXTRAPOLATE,
    KEYWORDS,
    Aux,
    BinOp,
    Call,
    Exo,
    Expr,
    Model,
    Neg,
    Num,
    Stock,
    Table,
    Var,
    errors_only,
    validate,
)

MAX_DEPTH = 200


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 1


class ParseError(Exception):
    def __init__(self, span: SourceSpan, expected: str, found: str):
        self.span = span
        self.expected = expected
        self.found = found
        super().__init__(
            f"{span.line}:{span.column}: expected {expected}, found {found!r}"
        )

    def __eq__(self, other):
        return isinstance(other, ParseError) and (self.span, self.expected, self.found) == (
            other.span,
            other.expected,
            other.found,
        )

    def __hash__(self):
        return hash((self.span, self.expected, self.found))


class ModelParseError(Exception):
    """All errors found while reading a model, in source order."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class Token:
    kind: str  # NUM NAME OP EOF
    text: str
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<NUM>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<NAME>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<OP>[-+*/^(),{}:=])
    """,
    re.VERBOSE,
)


def tokenize(text: str, line: int = 1) -> list:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(SourceSpan(line, pos + 1), "token", text[pos])
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(Token("EOF", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens, line=1):
        self.tokens = tokens
        self.pos = 0
        self.line = line
        self.depth = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, expected: str) -> ParseError:
        t = self.tok
        found = t.text if t.kind != "EOF" else "<end of input>"
        return ParseError(SourceSpan(self.line, t.column, max(1, len(t.text))), expected, found)

    def advance(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def accept(self, text):
        if self.tok.kind in ("OP", "NAME") and self.tok.text == text:
            return self.advance()
        return None

    def expect(self, text, what=None):
        t = self.accept(text)
        if t is None:
            raise self.error(what or repr(text))
        return t

    def name(self, what="identifier") -> str:
        if self.tok.kind != "NAME":
            raise self.error(what)
        return self.advance().text

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        if self.tok.kind != "NUM":
            raise self.error("number")
        value = sign * float(self.advance().text)
        if not math.isfinite(value):
            raise self.error("finite number")
        return value

    # expr := term (('+'|'-') term)*
    def expr(self) -> Expr:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.error("shallower expression")
        node = self.term()
        while self.tok.kind == "OP" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        self.depth -= 1
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "OP" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    # unary minus binds looser than ^ so that -2^2 == -(2^2)
    def unary(self) -> Expr:
        if self.accept("-"):
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise self.error("shallower expression")
            node = Neg(self.unary())
            self.depth -= 1
            return node
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.accept("^"):
            self.depth += 1
            if self.depth > MAX_DEPTH:
                raise self.error("shallower expression")
            node = BinOp("^", base, self.unary())
            self.depth -= 1
            return node
        return base

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "NUM":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ParseError(SourceSpan(self.line, t.column, len(t.text)), "finite number", t.text)
            return Num(value)
        if t.kind == "NAME":
            self.advance()
            if self.tok.kind == "OP" and self.tok.text == "(":
                return self.call(t)
            if t.text in BUILTINS:
                raise ParseError(SourceSpan(self.line, t.column, len(t.text)), "'(' after builtin", t.text)
            return Var(t.text)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        raise self.error("expression")

    def call(self, name_tok: Token) -> Expr:
        func = name_tok.text
        if func not in BUILTINS:
            raise ParseError(
                SourceSpan(self.line, name_tok.column, len(func)), "builtin function", func
            )
        self.expect("(")
        args = []
        if func == "LOOKUP":
            args.append(Var(self.name("table name")))
            self.expect(",")
            args.append(self.expr())
        else:
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        if len(args) != BUILTINS[func]:
            raise ParseError(
                SourceSpan(self.line, name_tok.column, len(func)),
                f"{BUILTINS[func]} arguments to {func}",
                f"{len(args)} arguments",
            )
        return Call(func, tuple(args))

    def end(self):
        if self.tok.kind != "EOF":
            raise self.error("end of statement")


def parse_expression(text: str) -> Expr:
    p = _Parser(tokenize(text))
    node = p.expr()
    p.end()
    return node


# ---------------------------------------------------------------------------
# Statements


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _check_ident(p: _Parser, tok_index: int, name: str):
    if name in BUILTINS or name in KEYWORDS:
        t = p.tokens[tok_index]
        raise ParseError(SourceSpan(p.line, t.column, len(name)), "non-reserved identifier", name)


def _statement(p: _Parser):
    kw = p.name("statement keyword")
    if kw == "model":
        name = p.name("model name")
        p.end()
        return ("model", name)
    if kw not in ("stock", "aux", "exo", "table"):
        p.pos -= 1
        raise p.error("statement keyword")
    idx = p.pos
    name = p.name()
    _check_ident(p, idx, name)
    if kw == "aux":
        p.expect("=")
        item = Aux(name, p.expr())
    elif kw == "exo":
        p.expect("=")
        item = Exo(name, p.number())
    elif kw == "stock":
        p.expect("=")
        initial = p.expr()
        p.expect("{")
        flows = {}
        while not p.accept("}"):
            if flows:
                p.expect(",", "',' or '}'")
            key = p.name("'inflow', 'outflow' or 'hidden'")
            if key not in ("inflow", "outflow", "hidden") or key in flows:
                p.pos -= 1
                raise p.error("'inflow', 'outflow' or 'hidden'")
            p.expect(":")
            if key == "hidden":
                p.expect("true")
                flows[key] = True
            else:
                flows[key] = p.expr()
        if "inflow" not in flows and "outflow" not in flows:
            p.pos -= 1
            raise p.error("inflow or outflow")
        item = Stock(
            name,
            initial,
            flows.get("inflow"),
            flows.get("outflow"),
            hidden=flows.get("hidden", False),
        )
    else:
        p.expect(":")
        points = []
        while p.accept("("):
            x = p.number()
            p.expect(",")
            y = p.number()
            p.expect(")")
            points.append((x, y))
        policy = p.name("'clamp' or 'extrapolate'")
        if policy not in (CLAMP, EXTRAPOLATE):
            p.pos -= 1
            raise p.error("'clamp' or 'extrapolate'")
        if len(points) < 2:
            raise p.error("at least two table points")
        if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
            raise p.error("strictly increasing table x values")
        item = Table(name, tuple(points), policy)
    p.end()
    return (kw, item)


def parse_model(text: str) -> Model:
    """Parse ``.sdm`` text.

    Raises ModelParseError carrying every statement-level error found; a
    returned model always passes :func:`validate` without errors.
    """
    errors = []
    name = None
    groups = {"stock": [], "aux": [], "exo": [], "table": []}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        try:
            p = _Parser(tokenize(body, lineno), lineno)
            kind, item = _statement(p)
        except ParseError as exc:
            errors.append(exc)
            continue
        except RecursionError:
            errors.append(ParseError(SourceSpan(lineno, 1), "shallower expression", body[:20]))
            continue
        if kind == "model":
            if name is not None:
                errors.append(ParseError(SourceSpan(lineno, 1, 5), "single model header", "model"))
            name = item
            continue
        if item.name in lines:
            errors.append(
                ParseError(SourceSpan(lineno, 1, len(kind)), "unique name", item.name)
            )
            continue
        lines[item.name] = lineno
        groups[kind].append(item)
    if name is None:
        errors.append(ParseError(SourceSpan(1, 1), "'model <name>' header", "<none>"))
    if errors:
        raise ModelParseError(errors)
    model = Model(name, groups["stock"], groups["aux"], groups["exo"], groups["table"])
    for d in errors_only(validate(model)):
        line = lines.get(d.name, 1)
        errors.append(ParseError(SourceSpan(line, 1), d.code, d.message or d.name))
    if errors:
        raise ModelParseError(errors)
    return model


# ---------------------------------------------------------------------------
# Serialization

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _ATOM


def format_expr(e: Expr) -> str:
    if isinstance(e, Num):
        s = format_number(e.value)
        # negative literals only arise programmatically; keep them atomic
        return f"(0 - {format_number(-e.value)})" if e.value < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({', '.join(format_expr(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = format_expr(e.operand)
        if _prec(e.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[e.op]
    left, right = format_expr(e.left), format_expr(e.right)
    if e.op == "^":
        if _prec(e.left) <= p:
            left = f"({left})"
        if _prec(e.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def serialize_model(model: Model) -> str:
    out = ["# sdm canonical form", f"model {model.name}"]
    for s in model.stocks:
        parts = []
        if s.inflow is not None:
            parts.append(f"inflow: {format_expr(s.inflow)}")
        if s.outflow is not None:
            parts.append(f"outflow: {format_expr(s.outflow)}")
        if s.hidden:
            parts.append("hidden: true")
        out.append(f"stock {s.name} = {format_expr(s.initial)} {{ {', '.join(parts)} }}")
    for a in model.auxiliaries:
        out.append(f"aux {a.name} = {format_expr(a.definition)}")
    for x in model.exogenous:
        out.append(f"exo {x.name} = {format_number(x.value)}")
    for t in model.tables:
        pts = " ".join(f"({format_number(x)},{format_number(y)})" for x, y in t.points)
        out.append(f"table {t.name} : {pts} {t.out_of_range}")
    return "\n".join(out) + "\n"
