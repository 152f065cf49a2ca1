"""Stock-and-flow model types, the expression AST and structural validation."""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Union

import mpmath
import networkx as nx

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# name -> arity; LOOKUP takes (table-name, expr), delays take (input, delay-time)
BUILTINS = {
    "MIN": 2,
    "MAX": 2,
    "EXP": 1,
    "LN": 1,
    "ABS": 1,
    "LOOKUP": 2,
    "DELAY1": 2,
    "DELAY3": 2,
    "SMTH1": 2,
    "SMTH3": 2,
}
DELAY_FUNCS = {"DELAY1": 1, "DELAY3": 3, "SMTH1": 1, "SMTH3": 3}
KEYWORDS = {"model", "stock", "aux", "exo", "table", "clamp", "extrapolate"}

CLAMP = "clamp"
EXTRAPOLATE = "extrapolate"


class DomainError(ArithmeticError):
    """Evaluation left the real domain (LN of x <= 0, x/0, non-finite result)."""

    def __init__(self, kind: str, detail: str = "", variable: Optional[str] = None):
        self.kind = kind
        self.detail = detail
        self.variable = variable
        msg = kind if not detail else f"{kind}: {detail}"
        if variable is not None:
            msg = f"{msg} (while evaluating {variable})"
        super().__init__(msg)


class UnboundVariable(KeyError):
    pass


# ---------------------------------------------------------------------------
# Expression AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple

    @property
    def table(self) -> Optional[str]:
        if self.func == "LOOKUP" and isinstance(self.args[0], Var):
            return self.args[0].name
        return None


Expr = Union[Num, Var, Neg, BinOp, Call]


def children(expr: Expr) -> tuple:
    if isinstance(expr, Neg):
        return (expr.operand,)
    if isinstance(expr, BinOp):
        return (expr.left, expr.right)
    if isinstance(expr, Call):
        # the table argument of LOOKUP is a name, not a subexpression
        return expr.args[1:] if expr.func == "LOOKUP" else expr.args
    return ()


def walk(expr: Expr) -> Iterator[Expr]:
    """Pre-order traversal (LOOKUP table names are skipped)."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def free_vars(expr: Expr) -> frozenset:
    """Variable names referenced by ``expr``; LOOKUP table names excluded."""
    return frozenset(node.name for node in walk(expr) if isinstance(node, Var))


def contains_delay(expr: Expr) -> bool:
    return any(isinstance(n, Call) and n.func in DELAY_FUNCS for n in walk(expr))


# ---------------------------------------------------------------------------
# Model types


@dataclass(frozen=True)
class Table:
    name: str
    points: tuple  # ((x, y), ...) with x strictly increasing
    out_of_range: str = CLAMP

    def __call__(self, x):
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        if x <= xs[0]:
            if self.out_of_range == CLAMP or x == xs[0]:
                return ys[0] + 0 * x
            i = 0
        elif x >= xs[-1]:
            if self.out_of_range == CLAMP or x == xs[-1]:
                return ys[-1] + 0 * x
            i = len(xs) - 2
        else:
            lo, hi = 0, len(xs) - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if xs[mid] <= x:
                    lo = mid
                else:
                    hi = mid
            i = lo
        x0, x1, y0, y1 = xs[i], xs[i + 1], ys[i], ys[i + 1]
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


@dataclass(frozen=True)
class Stock:
    name: str
    initial: Expr
    inflow: Optional[Expr] = None
    outflow: Optional[Expr] = None
    hidden: bool = False

    def flows(self) -> tuple:
        return tuple(e for e in (self.inflow, self.outflow) if e is not None)

    def net_rate(self) -> Expr:
        if self.inflow is None:
            return Neg(self.outflow)
        if self.outflow is None:
            return self.inflow
        return BinOp("-", self.inflow, self.outflow)


@dataclass(frozen=True)
class Aux:
    name: str
    definition: Expr


@dataclass(frozen=True)
class Exo:
    name: str
    value: float


@dataclass(frozen=True)
class Model:
    name: str
    stocks: tuple = ()
    auxiliaries: tuple = ()
    exogenous: tuple = ()
    tables: tuple = ()

    def __post_init__(self):
        for attr in ("stocks", "auxiliaries", "exogenous", "tables"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def stock_names(self) -> list:
        return [s.name for s in self.stocks]

    @property
    def exo_values(self) -> dict:
        return {e.name: e.value for e in self.exogenous}

    @property
    def table_map(self) -> dict:
        return {t.name: t for t in self.tables}

    def lookup(self, name: str):
        for group in (self.stocks, self.auxiliaries, self.exogenous, self.tables):
            for item in group:
                if item.name == name:
                    return item
        raise KeyError(name)

    def variable_names(self) -> list:
        return [
            v.name for group in (self.stocks, self.auxiliaries, self.exogenous) for v in group
        ]


# ---------------------------------------------------------------------------
# Evaluation


def _is_mp(*xs) -> bool:
    return any(isinstance(x, mpmath.mpf) for x in xs)


def _finite(x) -> bool:
    if isinstance(x, mpmath.mpf):
        return bool(mpmath.isfinite(x))
    return math.isfinite(x)


def _pow(a, b):
    if a < 0 and b != int(b):
        raise DomainError("NegativeBasePow", f"{a}^{b}")
    if a == 0 and b < 0:
        raise DomainError("DivByZero", f"{a}^{b}")
    try:
        if _is_mp(a, b):
            return mpmath.power(a, b)
        return math.pow(a, b)
    except OverflowError:
        raise DomainError("NonFiniteResult", f"{a}^{b}") from None


def _exp(a):
    if _is_mp(a):
        return mpmath.exp(a)
    try:
        return math.exp(a)
    except OverflowError:
        raise DomainError("NonFiniteResult", f"EXP({a})") from None


def _ln(a):
    if a <= 0:
        raise DomainError("LnNonpositive", f"LN({a})")
    return mpmath.log(a) if _is_mp(a) else math.log(a)


def evaluate(expr: Expr, env: Mapping, tables: Mapping = None):
    """Evaluate ``expr`` under ``env``.

    Works on floats and on ``mpmath.mpf`` values (the classifier probes in
    extended precision). DELAY/SMTH calls are rejected: they must be expanded
    into hidden stocks first.
    """
    tables = tables or {}

    def ev(node):
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Var):
            try:
                return env[node.name]
            except KeyError:
                raise UnboundVariable(node.name) from None
        if isinstance(node, Neg):
            return -ev(node.operand)
        if isinstance(node, BinOp):
            a = ev(node.left)
            b = ev(node.right)
            op = node.op
            if op == "+":
                r = a + b
            elif op == "-":
                r = a - b
            elif op == "*":
                r = a * b
            elif op == "/":
                if b == 0:
                    raise DomainError("DivByZero", f"{a}/{b}")
                r = a / b
            else:
                r = _pow(a, b)
            if not _finite(r):
                raise DomainError("NonFiniteResult", op)
            return r
        f = node.func
        if f in DELAY_FUNCS:
            raise ValueError(f"{f} must be expanded before evaluation")
        if f == "LOOKUP":
            name = node.table
            if name is None or name not in tables:
                raise UnboundVariable(str(node.args[0]))
            return tables[name](ev(node.args[1]))
        args = [ev(a) for a in node.args]
        if f == "MIN":
            return args[0] if args[0] <= args[1] else args[1]
        if f == "MAX":
            return args[0] if args[0] >= args[1] else args[1]
        if f == "ABS":
            return abs(args[0])
        if f == "EXP":
            r = _exp(args[0])
        elif f == "LN":
            r = _ln(args[0])
        else:
            raise ValueError(f"unknown builtin {f}")
        if not _finite(r):
            raise DomainError("NonFiniteResult", f)
        return r

    return ev(expr)


# ---------------------------------------------------------------------------
# Validation


ERROR = "error"
WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    name: str
    code: str
    message: str = ""
    related: tuple = field(default=())

    def __str__(self):
        return f"{self.severity}: {self.code}{{{self.name}}} {self.message}".rstrip()


def aux_dependencies(model: Model) -> dict:
    """aux -> set of auxes it reads directly; delay-defined auxes read nothing."""
    aux_names = {a.name for a in model.auxiliaries}
    deps = {}
    for a in model.auxiliaries:
        if contains_delay(a.definition):
            deps[a.name] = set()
        else:
            deps[a.name] = set(free_vars(a.definition)) & aux_names
    return deps


def topo_order(deps: Mapping) -> list:
    """Kahn's algorithm with name-ordered tie breaking. Raises ValueError on a cycle."""
    indeg = {n: 0 for n in deps}
    users = {n: [] for n in deps}
    for n, ds in deps.items():
        for d in ds:
            indeg[n] += 1
            users[d].append(n)
    heap = [n for n, k in indeg.items() if k == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for u in users[n]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(heap, u)
    if len(order) != len(deps):
        raise ValueError("cycle")
    return order


def _strongly_connected(deps: Mapping) -> list:
    g = nx.DiGraph()
    g.add_nodes_from(deps)
    g.add_edges_from((n, d) for n, ds in deps.items() for d in ds)
    return sorted(sorted(c) for c in nx.strongly_connected_components(g))


def _check_expr(expr, owner, known, table_names, diags, allow_delay):
    for node in walk(expr):
        if isinstance(node, Var) and node.name not in known:
            if node.name in table_names:
                diags.append(Diagnostic(ERROR, owner, "TableAsVariable", node.name))
            else:
                diags.append(Diagnostic(ERROR, owner, "UnresolvedReference", node.name))
        elif isinstance(node, Call):
            arity = BUILTINS.get(node.func)
            if arity is None:
                diags.append(Diagnostic(ERROR, owner, "UnknownFunction", node.func))
                continue
            if len(node.args) != arity:
                diags.append(Diagnostic(ERROR, owner, "BadArity", node.func))
                continue
            if node.func == "LOOKUP" and node.table not in table_names:
                diags.append(Diagnostic(ERROR, owner, "UnknownTable", str(node.args[0])))
            if node.func in DELAY_FUNCS and not (allow_delay and node is expr):
                diags.append(Diagnostic(ERROR, owner, "DelayPosition", node.func))


def constant_value(expr: Expr, model: Model):
    """Evaluate an expression that may only read exogenous baselines."""
    return evaluate(expr, model.exo_values, model.table_map)


def validate(model: Model) -> list:
    diags = []
    seen = set()
    for name in model.variable_names() + [t.name for t in model.tables]:
        if not IDENT_RE.match(name) or name in BUILTINS or name in KEYWORDS:
            diags.append(Diagnostic(ERROR, name, "InvalidName"))
        if name in seen:
            diags.append(Diagnostic(ERROR, name, "DuplicateName"))
        seen.add(name)

    known = set(model.variable_names())
    table_names = {t.name for t in model.tables}

    for t in model.tables:
        xs = [p[0] for p in t.points]
        if len(t.points) < 2:
            diags.append(Diagnostic(ERROR, t.name, "BadTable", "needs at least 2 points"))
        if any(b <= a for a, b in zip(xs, xs[1:])):
            diags.append(Diagnostic(ERROR, t.name, "BadTable", "x must be strictly increasing"))
        if not all(math.isfinite(v) for p in t.points for v in p):
            diags.append(Diagnostic(ERROR, t.name, "BadTable", "non-finite point"))
        if t.out_of_range not in (CLAMP, EXTRAPOLATE):
            diags.append(Diagnostic(ERROR, t.name, "BadTable", "unknown policy"))

    for e in model.exogenous:
        if not math.isfinite(e.value):
            diags.append(Diagnostic(ERROR, e.name, "NonFiniteExo"))

    for s in model.stocks:
        if s.inflow is None and s.outflow is None:
            diags.append(Diagnostic(ERROR, s.name, "MissingFlow"))
        for e in s.flows():
            _check_expr(e, s.name, known, table_names, diags, allow_delay=False)
        _check_expr(s.initial, s.name, known, table_names, diags, allow_delay=False)

    for a in model.auxiliaries:
        _check_expr(a.definition, a.name, known, table_names, diags, allow_delay=True)
        if not free_vars(a.definition):
            diags.append(Diagnostic(WARNING, a.name, "ConstantAux"))

    if any(d.severity == ERROR for d in diags):
        return diags

    exo_names = set(model.exo_values)
    for s in model.stocks:
        # hidden delay stocks start at the steady state of their input
        if s.hidden:
            continue
        if not free_vars(s.initial) <= exo_names:
            diags.append(Diagnostic(ERROR, s.name, "InitialNotConstant"))
            continue
        try:
            constant_value(s.initial, model)
        except (DomainError, UnboundVariable, ValueError) as exc:
            diags.append(Diagnostic(ERROR, s.name, "InitialNotConstant", str(exc)))

    for a in model.auxiliaries:
        d = a.definition
        if isinstance(d, Call) and d.func in DELAY_FUNCS:
            if contains_delay(d.args[0]) or contains_delay(d.args[1]):
                diags.append(Diagnostic(ERROR, a.name, "DelayPosition", "nested delay"))
                continue
            try:
                if not free_vars(d.args[1]) <= exo_names:
                    raise ValueError("delay time must be constant")
                if not constant_value(d.args[1], model) > 0:
                    raise ValueError("delay time must be > 0")
            except (DomainError, UnboundVariable, ValueError) as exc:
                diags.append(Diagnostic(ERROR, a.name, "BadDelayTime", str(exc)))

    deps = aux_dependencies(model)
    for comp in _strongly_connected(deps):
        if len(comp) > 1 or comp[0] in deps[comp[0]]:
            diags.append(
                Diagnostic(ERROR, comp[0], "AlgebraicLoop", ",".join(comp), related=tuple(comp))
            )
    return diags


def errors_only(diags: Iterable) -> list:
    return [d for d in diags if d.severity == ERROR]
