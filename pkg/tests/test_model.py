import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdsca import fixture_text
from sdsca.model import (
    Aux,
    BinOp,
    Call,
    DomainError,
    Exo,
    Model,
    Num,
    Stock,
    Table,
    Var,
    evaluate,
    free_vars,
    validate,
    walk,
)
from sdsca.parser import parse_expression, parse_model

from strategies import expressions


def codes(diags):
    return sorted((d.severity, d.code, d.name) for d in diags)


def test_stock_management_validates_clean():
    m = parse_model(fixture_text("stock_management"))
    assert validate(m) == []
    assert len(m.stocks) == 2 and len(m.auxiliaries) == 6 and len(m.exogenous) == 4


def test_algebraic_loop_is_reported_with_members():
    m = Model("M", auxiliaries=[Aux("A", Var("B")), Aux("B", Var("A"))])
    diags = validate(m)
    assert [d.code for d in diags] == ["AlgebraicLoop"]
    assert set(diags[0].related) == {"A", "B"}


def test_self_referencing_aux_is_a_loop():
    m = Model("M", auxiliaries=[Aux("A", BinOp("+", Var("A"), Num(1)))])
    assert [d.code for d in validate(m)] == ["AlgebraicLoop"]


def test_loop_through_a_delay_is_fine():
    m = Model(
        "M",
        stocks=[Stock("S", Num(1), Var("D"))],
        auxiliaries=[Aux("D", Call("SMTH1", (Var("A"), Num(2)))), Aux("A", Var("D"))],
    )
    assert validate(m) == []


def test_constant_aux_warns():
    m = Model("M", auxiliaries=[Aux("C", Num(3.0))])
    assert codes(validate(m)) == [("warning", "ConstantAux", "C")]


@pytest.mark.parametrize(
    "model, code",
    [
        (Model("M", auxiliaries=[Aux("A", Var("nope"))]), "UnresolvedReference"),
        (Model("M", auxiliaries=[Aux("MAX", Num(1))]), "InvalidName"),
        (Model("M", auxiliaries=[Aux("A", Num(1))], exogenous=[Exo("A", 1)]), "DuplicateName"),
        (Model("M", exogenous=[Exo("e", math.inf)]), "NonFiniteExo"),
        (Model("M", stocks=[Stock("S", Num(1))]), "MissingFlow"),
        (Model("M", tables=[Table("t", ((1, 0), (0, 1)))]), "BadTable"),
        (Model("M", auxiliaries=[Aux("A", Call("MAX", (Num(1),)))]), "BadArity"),
        (Model("M", auxiliaries=[Aux("A", Call("SQRT", (Num(1),)))]), "UnknownFunction"),
        (
            Model("M", auxiliaries=[Aux("A", Call("LOOKUP", (Var("t"), Num(1))))]),
            "UnknownTable",
        ),
        (
            Model(
                "M",
                exogenous=[Exo("x", 1)],
                auxiliaries=[Aux("A", BinOp("+", Num(1), Call("SMTH1", (Var("x"), Num(1)))))],
            ),
            "DelayPosition",
        ),
        (
            Model(
                "M",
                exogenous=[Exo("x", 1)],
                auxiliaries=[Aux("A", Call("DELAY1", (Var("x"), Num(0))))],
            ),
            "BadDelayTime",
        ),
        (
            Model(
                "M",
                stocks=[Stock("S", Var("S"), Num(1))],
            ),
            "InitialNotConstant",
        ),
    ],
)
def test_validation_errors(model, code):
    assert code in {d.code for d in validate(model) if d.severity == "error"}


def test_free_vars_examples():
    assert free_vars(parse_expression("(S_star - S)/SAT")) == {"S_star", "S", "SAT"}
    assert free_vars(parse_expression("MAX(0, DAR)")) == {"DAR"}
    assert free_vars(parse_expression("LOOKUP(eff, X/Y)")) == {"X", "Y"}


def _walk_oracle(expr):
    # independent recursion over the dataclass fields
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Call):
        args = expr.args[1:] if expr.func == "LOOKUP" else expr.args
        out = set()
        for a in args:
            out |= _walk_oracle(a)
        return out
    if isinstance(expr, BinOp):
        return _walk_oracle(expr.left) | _walk_oracle(expr.right)
    return _walk_oracle(expr.operand)


@settings(max_examples=300)
@given(expressions(["a", "b", "c"], ["tab"]))
def test_free_vars_matches_recursive_oracle(expr):
    assert free_vars(expr) == _walk_oracle(expr)
    assert {n.name for n in walk(expr) if isinstance(n, Var)} == free_vars(expr)


TABLE = Table("t", ((0.0, 0.0), (1.0, 1.0), (2.0, 1.5)), "clamp")


@pytest.mark.parametrize(
    "text, env, expected",
    [
        ("MAX(0, -3)", {}, 0.0),
        ("LOOKUP(t, 1.5)", {}, 1.25),
        ("LOOKUP(t, 5)", {}, 1.5),
        ("LOOKUP(t, -1)", {}, 0.0),
        ("-2^2", {}, -4.0),
        ("2^3^2", {}, 512.0),
        ("a - b - c", {"a": 10, "b": 3, "c": 2}, 5.0),
        ("MIN(a, b) * ABS(-2)", {"a": 4, "b": 3}, 6.0),
        ("LN(EXP(2))", {}, 2.0),
    ],
)
def test_evaluate_examples(text, env, expected):
    assert evaluate(parse_expression(text), env, {"t": TABLE}) == pytest.approx(expected)


def test_extrapolating_table_continues_end_segments():
    t = Table("t", ((0.0, 0.0), (1.0, 1.0), (2.0, 1.5)), "extrapolate")
    assert t(3.0) == pytest.approx(2.0)
    assert t(-1.0) == pytest.approx(-1.0)


@pytest.mark.parametrize("text", ["LN(0)", "LN(-1)", "1/0", "(-8)^0.5", "EXP(1000)", "0^-1"])
def test_domain_errors(text):
    with pytest.raises(DomainError):
        evaluate(parse_expression(text), {})


@given(
    st.lists(
        st.tuples(
            st.floats(-1e3, 1e3, allow_nan=False), st.floats(-1e3, 1e3, allow_nan=False)
        ),
        min_size=2,
        max_size=8,
        unique_by=lambda p: p[0],
    ),
    st.sampled_from(["clamp", "extrapolate"]),
)
def test_lookup_exact_at_knots(points, policy):
    t = Table("t", tuple(sorted(points)), policy)
    for x, y in t.points:
        assert evaluate(Call("LOOKUP", (Var("t"), Num(x))), {}, {"t": t}) == y


@given(expressions(["a", "b"]), st.floats(-50, 50), st.floats(-50, 50))
def test_evaluate_is_deterministic(expr, a, b):
    env = {"a": a, "b": b}
    try:
        first = evaluate(expr, env)
    except DomainError:
        with pytest.raises(DomainError):
            evaluate(expr, env)
        return
    assert math.isfinite(first)
    assert evaluate(expr, env) == first
