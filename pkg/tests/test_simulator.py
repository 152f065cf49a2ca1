import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdsca import fixture_text
from sdsca.model import Var
from sdsca.parser import parse_model
from sdsca.simulator import (
    NonFiniteAbort,
    SimConfig,
    Step,
    expand_delays,
    initial_state,
    simulate,
    stock_derivatives,
)

DECAY = "model Decay\nstock S = 1 {{ outflow: S / tau }}\nexo tau = {tau}"
SMOOTH = "model Sm\nstock X = 0 {{ inflow: Y }}\naux Y = {func}(U, T)\nexo U = 0\nexo T = 4"


def decay_error(tau, dt):
    """Sup-norm error against exp(-t/tau), relative to the initial level."""
    traj = simulate(parse_model(DECAY.format(tau=tau)), SimConfig(dt=dt, horizon=5 * tau))
    exact = np.exp(-traj.times / tau)
    return float(np.max(np.abs(traj["S"] - exact)))


def test_exponential_decay_accuracy():
    assert decay_error(2.0, 0.02) < 0.01


def test_dt_halving_ratio_is_first_order():
    ratio = decay_error(2.0, 0.01) / decay_error(2.0, 0.02)
    assert 0.4 <= ratio <= 0.6


def test_single_euler_step_by_hand():
    traj = simulate(parse_model(DECAY.format(tau=4)), SimConfig(dt=0.5, horizon=1.0))
    # S1 = 1 - 0.5 * 1/4 ; S2 = S1 * (1 - 0.125)
    assert traj["S"].tolist() == [1.0, 0.875, 0.875 * 0.875]


@pytest.mark.parametrize("func, target", [("SMTH1", 1 - math.exp(-1))])
def test_smooth_step_response(func, target):
    m = parse_model(SMOOTH.format(func=func))
    cfg = SimConfig(dt=0.04, horizon=8.0, overrides={"U": Step(1e-9, 0.0, 1.0)})
    traj = simulate(m, cfg)
    k = int(np.argmin(np.abs(traj.times - 4.0)))
    assert traj["Y"][k] == pytest.approx(target, abs=0.02)


@pytest.mark.parametrize("func", ["SMTH1", "SMTH3", "DELAY1", "DELAY3"])
def test_delays_settle_to_input(func):
    m = parse_model(SMOOTH.format(func=func).replace("exo U = 0", "exo U = 0.5"))
    cfg = SimConfig(dt=0.05, horizon=80.0, overrides={"U": Step(1e-9, 0.5, 2.0)})
    traj = simulate(m, cfg)
    assert traj["Y"][0] == pytest.approx(0.5)
    assert traj["Y"][-1] == pytest.approx(2.0, rel=1e-3)


def test_delay_starts_in_steady_state():
    m = parse_model(SMOOTH.format(func="DELAY3").replace("exo U = 0", "exo U = 3"))
    traj = simulate(m, SimConfig(dt=0.1, horizon=5))
    assert np.allclose(traj["Y"], 3.0)
    # material stages hold input * stage time
    assert traj["Y__d1"][0] == pytest.approx(3.0 * 4 / 3)


def test_expansion_shapes():
    m = expand_delays(parse_model(SMOOTH.format(func="SMTH3")))
    hidden = [s for s in m.stocks if s.hidden]
    assert [s.name for s in hidden] == ["Y__d1", "Y__d2", "Y__d3"]
    assert m.lookup("Y").definition == Var("Y__d3")
    assert expand_delays(m) is m


def test_expansion_is_noop_without_delays():
    m = parse_model(fixture_text("stock_management"))
    assert expand_delays(m) is m


def test_stock_management_starts_in_equilibrium():
    m = parse_model(fixture_text("stock_management"))
    d = stock_derivatives(m, initial_state(m), m.exo_values)
    assert d == {"SupplyLine": 0.0, "Stock": 0.0}


def test_non_finite_abort_names_variable():
    m = parse_model("model G\nstock S = 1 { inflow: S * S * 1e100 }")
    with pytest.raises(NonFiniteAbort) as exc:
        simulate(m, SimConfig(dt=1, horizon=50))
    assert exc.value.variable == "S"


def test_domain_error_aborts():
    m = parse_model("model G\nstock S = 1 { outflow: 1 }\naux L = LN(S)")
    with pytest.raises(NonFiniteAbort) as exc:
        simulate(m, SimConfig(dt=0.5, horizon=5))
    assert exc.value.variable == "L"


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(dt=1, horizon=0.5)


def test_csv_is_sorted_and_stable():
    m = parse_model(fixture_text("smooth_loop"))
    a = simulate(m, SimConfig(dt=0.5, horizon=2)).to_csv()
    assert a.splitlines()[0] == "time,P,P__d1,Q,X"
    assert a == simulate(m, SimConfig(dt=0.5, horizon=2)).to_csv()


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 10), st.floats(0.01, 0.2))
def test_decay_stays_positive_and_monotone(tau, frac):
    traj = simulate(parse_model(DECAY.format(tau=tau)), SimConfig(dt=frac * tau, horizon=3 * tau))
    s = traj["S"]
    assert np.all(s > 0) and np.all(np.diff(s) < 0)
