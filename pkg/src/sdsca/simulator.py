"""Delay expansion and fixed-step Euler integration."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

import numpy as np

from .model import (
    DELAY_FUNCS,
    Aux,
    BinOp,
    Call,
    DomainError,
    Model,
    Num,
    Stock,
    UnboundVariable,
    Var,
    aux_dependencies,
    evaluate,
    free_vars,
    topo_order,
)


class NonFiniteAbort(RuntimeError):
    def __init__(self, t: float, variable: str):
        self.t = t
        self.variable = variable
        super().__init__(f"non-finite value for {variable} at t={t:g}")


@dataclass(frozen=True)
class Step:
    """Exogenous schedule: ``before`` until ``t0``, ``after`` from ``t0`` on."""

    t0: float
    before: float
    after: float

    def __call__(self, t: float) -> float:
        return self.before if t < self.t0 else self.after


Schedule = Union[float, Step]


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.25
    horizon: float = 10.0
    overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least dt")


@dataclass
class Trajectory:
    times: np.ndarray
    values: dict

    def __getitem__(self, name):
        return self.values[name]

    def to_csv(self) -> str:
        names = sorted(self.values)
        buf = io.StringIO()
        buf.write(",".join(["time"] + names) + "\n")
        for k, t in enumerate(self.times):
            row = [t] + [self.values[n][k] for n in names]
            buf.write(",".join("%.12g" % v for v in row) + "\n")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Delay expansion


def hidden_stage_names(aux_name: str, order: int) -> list:
    return [f"{aux_name}__d{k}" for k in range(1, order + 1)]


def delay_alias_target(model: Model, aux: Aux) -> Optional[str]:
    """Last hidden stage if ``aux`` is the output alias of an expanded delay."""
    hidden = {s.name for s in model.stocks if s.hidden}
    last = None
    k = 1
    while f"{aux.name}__d{k}" in hidden:
        last = f"{aux.name}__d{k}"
        k += 1
    return last


def expand_delays(model: Model) -> Model:
    """Replace DELAYn/SMTHn auxiliaries by chains of hidden stocks.

    SMTHn: stage_k' = (stage_{k-1} - stage_k) / (T/n), stage_0 = input,
    output = stage_n. DELAYn (material pipeline): stage_1' = input - stage_1/tau,
    stage_k' = stage_{k-1}/tau - stage_k/tau, output = stage_n/tau.
    Hidden initials are the steady state of the input (expressions over the
    model, resolved by :func:`initial_state`).
    """
    new_stocks = []
    new_auxes = []
    for a in model.auxiliaries:
        d = a.definition
        if not (isinstance(d, Call) and d.func in DELAY_FUNCS):
            new_auxes.append(a)
            continue
        order = DELAY_FUNCS[d.func]
        src, delay_time = d.args
        tau = delay_time if order == 1 else BinOp("/", delay_time, Num(float(order)))
        names = hidden_stage_names(a.name, order)
        smooth = d.func.startswith("SMTH")
        prev = src
        for k, name in enumerate(names):
            if smooth:
                inflow = BinOp("/", prev, tau)
                initial = src
            else:
                inflow = src if k == 0 else BinOp("/", prev, tau)
                initial = BinOp("*", src, tau)
            new_stocks.append(
                Stock(name, initial, inflow, BinOp("/", Var(name), tau), hidden=True)
            )
            prev = Var(name)
        output = prev if smooth else BinOp("/", prev, tau)
        new_auxes.append(Aux(a.name, output))
    if not new_stocks:
        return model
    return replace(
        model,
        stocks=tuple(model.stocks) + tuple(new_stocks),
        auxiliaries=tuple(new_auxes),
    )


# ---------------------------------------------------------------------------
# Evaluation helpers


class Evaluator:
    """Evaluates auxiliaries and stock rates of an expanded model."""

    def __init__(self, model: Model):
        self.model = model
        self.tables = model.table_map
        self.aux_defs = {a.name: a.definition for a in model.auxiliaries}
        self.order = topo_order(aux_dependencies(model))
        self.rates = {s.name: s.net_rate() for s in model.stocks}

    def auxiliaries(self, env: dict) -> dict:
        """Fill ``env`` (stocks + exos) with every auxiliary, in topological order."""
        for name in self.order:
            try:
                env[name] = evaluate(self.aux_defs[name], env, self.tables)
            except DomainError as exc:
                raise DomainError(exc.kind, exc.detail, variable=name) from None
        return env

    def derivatives(self, state: Mapping, exo_env: Mapping) -> dict:
        env = dict(exo_env)
        env.update(state)
        self.auxiliaries(env)
        out = {}
        for name, rate in self.rates.items():
            try:
                out[name] = evaluate(rate, env, self.tables)
            except DomainError as exc:
                raise DomainError(exc.kind, exc.detail, variable=name) from None
        return out


def stock_derivatives(model: Model, state: Mapping, exo_env: Mapping) -> dict:
    """inflow - outflow per stock of an expanded model."""
    return Evaluator(model).derivatives(state, exo_env)


def initial_state(model: Model, exo_env: Optional[Mapping] = None) -> dict:
    """Initial stock values; hidden stage initials may read other variables."""
    env = dict(model.exo_values if exo_env is None else exo_env)
    stocks = {s.name: s for s in model.stocks}
    auxes = {a.name: a.definition for a in model.auxiliaries}
    tables = model.table_map
    resolving = set()

    def value(name):
        if name in env:
            return env[name]
        if name in resolving:
            raise ValueError(f"circular initial value through {name}")
        resolving.add(name)
        if name in stocks:
            expr = stocks[name].initial
        elif name in auxes:
            expr = auxes[name]
        else:
            raise UnboundVariable(name)
        for dep in sorted(free_vars(expr)):
            value(dep)
        env[name] = evaluate(expr, env, tables)
        resolving.discard(name)
        return env[name]

    return {name: value(name) for name in stocks}


# ---------------------------------------------------------------------------
# Integration


def _exo_at(model: Model, overrides: Mapping, t: float) -> dict:
    env = model.exo_values
    for name, sched in overrides.items():
        if name not in env:
            raise KeyError(f"override for unknown exo {name}")
        env[name] = sched(t) if callable(sched) else float(sched)
    return env


def simulate(model: Model, cfg: SimConfig) -> Trajectory:
    """Euler: S(t+dt) = S(t) + dt * (inflow - outflow)."""
    model = expand_delays(model)
    ev = Evaluator(model)
    n_steps = int(round(cfg.horizon / cfg.dt))
    times = np.arange(n_steps + 1) * cfg.dt
    names = model.stock_names + ev.order
    values = {n: np.empty(n_steps + 1) for n in names}

    state = initial_state(model, _exo_at(model, cfg.overrides, 0.0))
    for k, t in enumerate(times):
        env = _exo_at(model, cfg.overrides, t)
        env.update(state)
        try:
            ev.auxiliaries(env)
        except DomainError as exc:
            raise NonFiniteAbort(t, exc.variable or "?") from exc
        rates = {}
        if k < n_steps:
            for s, r in ev.rates.items():
                try:
                    rates[s] = evaluate(r, env, ev.tables)
                except DomainError as exc:
                    raise NonFiniteAbort(t, s) from exc
        for n in names:
            v = env[n]
            if not math.isfinite(v):
                raise NonFiniteAbort(t, n)
            values[n][k] = v
        for s, r in rates.items():
            nxt = state[s] + cfg.dt * r
            if not math.isfinite(nxt):
                raise NonFiniteAbort(t + cfg.dt, s)
            state[s] = nxt
    return Trajectory(times, values)
