import pytest
from hypothesis import HealthCheck, given, settings

from sdsca import fixture_text
from sdsca.model import BinOp, Call, Neg, Num, Var
from sdsca.parser import (
    ModelParseError,
    ParseError,
    parse_expression,
    parse_model,
    serialize_model,
    tokenize,
)
from sdsca.xmile import UnsupportedFeature, import_xmile

from harness import fuzz_parser
from strategies import expressions, valid_models


def test_stock_management_counts():
    m = parse_model(fixture_text("stock_management"))
    assert (len(m.stocks), len(m.auxiliaries), len(m.exogenous)) == (2, 6, 4)
    assert m.name == "StockManagement"


def test_stock_needs_a_flow():
    with pytest.raises(ModelParseError) as exc:
        parse_model("model M\nstock S = 1 {}")
    (err,) = exc.value.errors
    assert err.span.line == 2 and "inflow or outflow" in err.expected


def test_dangling_operator_reports_end_of_input():
    with pytest.raises(ModelParseError) as exc:
        parse_model("model M\naux A = 1 + ")
    (err,) = exc.value.errors
    assert err.expected == "expression" and err.found == "<end of input>"


def test_all_statement_errors_are_collected():
    text = "model M\naux A = (1\naux B = 2 +\nexo C = x"
    with pytest.raises(ModelParseError) as exc:
        parse_model(text)
    assert [e.span.line for e in exc.value.errors] == [2, 3, 4]


def test_missing_header():
    with pytest.raises(ModelParseError):
        parse_model("aux A = 1")


def test_validation_errors_surface_as_parse_errors():
    with pytest.raises(ModelParseError) as exc:
        parse_model("model M\naux A = B\naux B = A")
    assert exc.value.errors[0].expected == "AlgebraicLoop"


@pytest.mark.parametrize(
    "text, tree",
    [
        ("-2^2", Neg(BinOp("^", Num(2.0), Num(2.0)))),
        ("a - b - c", BinOp("-", BinOp("-", Var("a"), Var("b")), Var("c"))),
        ("MAX(0, DS - S)", Call("MAX", (Num(0.0), BinOp("-", Var("DS"), Var("S"))))),
        ("2^-1", BinOp("^", Num(2.0), Neg(Num(1.0)))),
        ("a / b * c", BinOp("*", BinOp("/", Var("a"), Var("b")), Var("c"))),
        ("1.5e3", Num(1500.0)),
    ],
)
def test_expression_shapes(text, tree):
    assert parse_expression(text) == tree


@pytest.mark.parametrize("text", ["0x10", "1,5", "MAX(1)", "LOOKUP(1, 2)", "MAX", "a b", "((1)"])
def test_bad_expressions(text):
    with pytest.raises(ParseError):
        parse_expression(text)


def test_deep_nesting_is_an_error_not_a_crash():
    with pytest.raises(ModelParseError):
        parse_model("model M\naux A = " + "(" * 5000 + "1" + ")" * 5000)


def test_tokens_carry_columns():
    toks = tokenize("a + 12")
    assert [(t.kind, t.column) for t in toks] == [("NAME", 1), ("OP", 3), ("NUM", 5), ("EOF", 7)]


def test_empty_model_serializes_to_two_lines():
    assert serialize_model(parse_model("model M")) == "# sdm canonical form\nmodel M\n"


def test_table_keeps_order_and_policy():
    text = "model M\ntable t : (0,1) (1,3) (4,2) extrapolate\nexo x = 1\naux a = LOOKUP(t, x)"
    out = serialize_model(parse_model(text))
    assert "table t : (0,1) (1,3) (4,2) extrapolate" in out


@pytest.mark.parametrize("name", ["stock_management", "stock_management_retrievable", "smooth_loop"])
def test_fixture_round_trip(name):
    m = parse_model(fixture_text(name))
    assert parse_model(serialize_model(m)) == m


@settings(max_examples=500, deadline=None, suppress_health_check=list(HealthCheck))
@given(valid_models)
def test_round_trip_property(model):
    text = serialize_model(model)
    assert parse_model(text) == model
    assert serialize_model(parse_model(text)) == text


@settings(max_examples=300, deadline=None)
@given(expressions(["a", "b", "c"], ["t"]))
def test_expression_round_trip(expr):
    from sdsca.parser import format_expr

    assert parse_expression(format_expr(expr)) == expr


def test_parse_is_deterministic():
    bad = "model M\naux A = 1 +\nstock S = 1 {}"
    errs = []
    for _ in range(2):
        with pytest.raises(ModelParseError) as exc:
            parse_model(bad)
        errs.append(exc.value.errors)
    assert errs[0] == errs[1]


def test_fuzz_small_sample():
    crashes, _ = fuzz_parser(500, seed=3)
    assert crashes == []


# ---------------------------------------------------------------------------
# XMILE

XMILE = """<?xml version="1.0" encoding="utf-8"?>
<xmile version="1.0" xmlns="http://docs.oasis-open.org/xmile/ns/XMILE/v1.0">
  <header><name>Tank</name></header>
  {extra}
  <model><variables>
    <stock name="Water Level"><eqn>10</eqn><outflow>drain</outflow></stock>
    <flow name="drain"><eqn>"Water Level" / drain_time</eqn></flow>
    <aux name="drain time"><eqn>4</eqn></aux>
    {more}
  </variables></model>
</xmile>"""


def xmile(extra="", more=""):
    return XMILE.format(extra=extra, more=more)


def test_minimal_xmile():
    m = import_xmile(xmile())
    assert [s.name for s in m.stocks] == ["Water_Level"]
    assert [a.name for a in m.auxiliaries] == ["drain"]
    assert m.exo_values == {"drain_time": 4.0}
    assert m.stocks[0].outflow == Var("drain")


def test_xmile_dimensions_unsupported():
    with pytest.raises(ModelParseError) as exc:
        import_xmile(xmile(extra="<dimensions><dim name='d' size='2'/></dimensions>"))
    assert any(isinstance(e, UnsupportedFeature) and e.feature == "dimensions" for e in exc.value.errors)


def test_xmile_discrete_gf_unsupported():
    gf = '<aux name="e"><eqn>drain</eqn><gf type="discrete"><xscale min="0" max="1"/><ypts>0,1</ypts></gf></aux>'
    with pytest.raises(ModelParseError) as exc:
        import_xmile(xmile(more=gf))
    assert [e.feature for e in exc.value.errors if isinstance(e, UnsupportedFeature)] == ["discrete gf"]


def test_xmile_continuous_gf_becomes_table():
    gf = '<aux name="e"><eqn>drain</eqn><gf><xscale min="0" max="2"/><ypts>0,1,1.5</ypts></gf></aux>'
    m = import_xmile(xmile(more=gf))
    (t,) = m.tables
    assert t.points == ((0.0, 0.0), (1.0, 1.0), (2.0, 1.5))
    assert m.lookup("e").definition == Call("LOOKUP", (Var("e_gf"), Var("drain")))


def test_xmile_name_collision():
    with pytest.raises(ModelParseError) as exc:
        import_xmile(xmile(more='<aux name="drain  time"><eqn>1</eqn></aux>'))
    assert "normalization" in exc.value.errors[0].expected


def test_xmile_malformed_xml():
    with pytest.raises(ModelParseError):
        import_xmile("<xmile><model>")
