"""Control-input vs parameter classification of exogenous variables.

An exogenous ``z`` is a control input when every mixed partial
d2(xdot_i)/(dz dx_j) vanishes while some d(xdot_i)/dz does not, and a
parameter when some mixed partial is nonzero. Derivatives are central finite
differences evaluated in 40-digit arithmetic so that structurally zero mixed
partials come out many orders of magnitude below ``TAU_ZERO``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import mpmath
import numpy as np

from .model import DELAY_FUNCS, Call, DomainError, Model, free_vars
from .simulator import Evaluator, expand_delays, initial_state

TAU_ZERO = 1e-7
TAU_SIG = 1e-4
JAC_EPS = 1e-6
EXO_EPS = 1e-4
DEFAULT_SAMPLES = 16
DEFAULT_SEED = 42
PRECISION = 40
REFINE = 100


class Verdict(str, enum.Enum):
    CONTROL_INPUT = "ControlInput"
    PARAMETER = "Parameter"
    INERT = "Inert"
    UNDETERMINED = "Undetermined"


class SampleRejected(ArithmeticError):
    """A probe straddled a kink or left the evaluation domain."""


@dataclass(frozen=True)
class PorcEvidence:
    """Aggregated derivative magnitudes for one exogenous variable.

    ``porc_terms[(i, j)]`` is the max over samples of
    |d2 xdot_i / dz dx_j| / max(1, |d xdot_i / dx_j|).
    """

    exo: str
    d_xdot_dz: dict
    porc_terms: dict
    samples_used: int
    agreement: bool
    rejected: int = 0
    note: str = ""

    @property
    def max_porc(self) -> float:
        return max(self.porc_terms.values(), default=0.0)

    @property
    def max_d_xdot_dz(self) -> float:
        return max(self.d_xdot_dz.values(), default=0.0)


@dataclass(frozen=True)
class ExoClassification:
    exo: str
    verdict: Verdict
    evidence: PorcEvidence


def _step(x, eps):
    return eps * max(1, abs(x))


class _Probe:
    """Derivative evaluations of an expanded model in extended precision."""

    def __init__(self, model: Model):
        self.model = model
        self.ev = Evaluator(model)
        self.stocks = model.stock_names

    def f(self, state, env):
        return self.ev.derivatives(state, env)

    def _column(self, state, env, j, h):
        plus = dict(state)
        plus[j] = state[j] + h
        minus = dict(state)
        minus[j] = state[j] - h
        fp = fm = None
        try:
            fp = self.f(plus, env)
        except DomainError:
            pass
        try:
            fm = self.f(minus, env)
        except DomainError:
            pass
        return fp, fm

    def jacobian(self, state, env, check_kinks=False):
        """Central differences; with ``check_kinks`` the one-sided slopes must agree.

        A slope mismatch is re-probed at a step ``REFINE`` times smaller: curvature
        shrinks with the step, a kink does not.
        """
        jac = {}
        f0 = self.f(state, env) if check_kinks else None
        for j in self.stocks:
            h = _step(state[j], JAC_EPS)
            fp, fm = self._column(state, env, j, h)
            if fp is None and fm is None:
                raise DomainError("BothSidesFailed", f"probe of {j}")
            if fp is None or fm is None:
                if check_kinks:
                    raise SampleRejected(f"domain boundary near {j}")
                base = self.f(state, env)
                hp, hm = (h, 0) if fm is None else (0, h)
                fp, fm = fp or base, fm or base
                for i in self.stocks:
                    jac[i, j] = (fp[i] - fm[i]) / (hp + hm)
                continue
            if check_kinks and _kinked(fp, f0, fm, h, self.stocks):
                h = h / REFINE
                fp, fm = self._column(state, env, j, h)
                if fp is None or fm is None or _kinked(fp, f0, fm, h, self.stocks):
                    raise SampleRejected(f"kink along {j}")
            for i in self.stocks:
                jac[i, j] = (fp[i] - fm[i]) / (2 * h)
        return jac


def _mismatch(plus, zero, minus, h) -> bool:
    fwd = (plus - zero) / h
    bwd = (zero - minus) / h
    return abs(fwd - bwd) > 10 * TAU_SIG * max(1, abs(fwd), abs(bwd))


def _kinked(fp, f0, fm, h, keys) -> bool:
    return any(_mismatch(fp[k], f0[k], fm[k], h) for k in keys)


def jacobian(model: Model, state: Mapping, exo_env: Mapping) -> dict:
    """d(xdot_i)/d(x_j) of an expanded model by central differences (float)."""
    return {k: float(v) for k, v in _Probe(model).jacobian(state, exo_env).items()}


def _sample_class(p: float) -> str:
    if p >= TAU_SIG:
        return "param"
    if p <= TAU_ZERO:
        return "zero"
    return "mid"


def porc(model: Model, exo: str, samples: Sequence) -> PorcEvidence:
    """PorC evidence for ``exo`` over ``samples`` of (state, exo_env) pairs.

    Raises SampleRejected when a sample sits on a kink.
    """
    if not samples:
        raise ValueError("porc needs at least one sample")
    probe = _Probe(expand_delays(model))
    evidence, _ = _accumulate(probe, exo, samples, len(samples), strict=True)
    return evidence


def _accumulate(probe, exo, candidates, wanted, strict=False):
    stocks = probe.stocks
    dxdz = {i: 0.0 for i in stocks}
    terms = {(i, j): 0.0 for i in stocks for j in stocks}
    classes = set()
    used = rejected = 0
    with mpmath.workdps(PRECISION):
        for state, env in candidates:
            if used == wanted or used + rejected >= 3 * wanted:
                break
            try:
                per = _porc_sample(probe, exo, state, env)
            except SampleRejected:
                if strict:
                    raise
                rejected += 1
                continue
            used += 1
            sample_max = 0.0
            for key, v in per["terms"].items():
                terms[key] = max(terms[key], v)
                sample_max = max(sample_max, v)
            for i, v in per["dxdz"].items():
                dxdz[i] = max(dxdz[i], v)
            classes.add(_sample_class(sample_max))
    agreement = used > 0 and len(classes) == 1 and "mid" not in classes
    evidence = PorcEvidence(exo, dxdz, terms, max(used, 1), agreement, rejected)
    return evidence, used


def _porc_sample(probe: _Probe, exo: str, state, env) -> dict:
    mp = mpmath.mpf
    state = {k: mp(v) for k, v in state.items()}
    env = {k: mp(v) for k, v in env.items()}
    z = env[exo]

    def at(dz):
        e = dict(env)
        e[exo] = z + dz
        return probe.f(state, e), probe.jacobian(state, e, check_kinks=True)

    try:
        f0, j0 = at(0)
        hz = _step(z, EXO_EPS)
        for attempt in range(2):
            (fm, jm), (fp, jp) = at(-hz), at(hz)
            keys = [(i, j) for i in probe.stocks for j in probe.stocks]
            kinked = _kinked(fp, f0, fm, hz, probe.stocks) or _kinked(jp, j0, jm, hz, keys)
            if not kinked:
                break
            if attempt:
                raise SampleRejected(f"kink along {exo}")
            hz = hz / REFINE
    except DomainError as exc:
        raise SampleRejected(str(exc)) from None

    out = {"dxdz": {}, "terms": {}}
    for i in probe.stocks:
        out["dxdz"][i] = float(abs((fp[i] - fm[i]) / (2 * hz)))
        for j in probe.stocks:
            mixed = (jp[i, j] - jm[i, j]) / (2 * hz)
            out["terms"][i, j] = float(abs(mixed) / max(1, abs(j0[i, j])))
    return out


# ---------------------------------------------------------------------------


def delay_time_only_exos(model: Model) -> set:
    """Exos referenced only inside delay-time arguments."""
    in_delay_time = set()
    elsewhere = set()
    for a in model.auxiliaries:
        d = a.definition
        if isinstance(d, Call) and d.func in DELAY_FUNCS:
            elsewhere |= free_vars(d.args[0])
            in_delay_time |= free_vars(d.args[1])
        else:
            elsewhere |= free_vars(d)
    for s in model.stocks:
        for e in s.flows():
            elsewhere |= free_vars(e)
    return (in_delay_time - elsewhere) & set(model.exo_values)


def sample_states(model: Model, count: int, seed: int) -> list:
    """Baseline initial state followed by ``count - 1`` random rescalings in [0.5, 2]."""
    base = initial_state(model)
    rng = np.random.default_rng(seed)
    names = model.stock_names
    out = [dict(base)]
    for _ in range(count - 1):
        factors = rng.uniform(0.5, 2.0, size=len(names))
        out.append({n: base[n] * f for n, f in zip(names, factors)})
    return out


def decide(ev: PorcEvidence) -> Verdict:
    p, d = ev.max_porc, ev.max_d_xdot_dz
    if not ev.agreement:
        return Verdict.UNDETERMINED
    if p <= TAU_ZERO and d >= TAU_SIG:
        return Verdict.CONTROL_INPUT
    if p >= TAU_SIG:
        return Verdict.PARAMETER
    if p <= TAU_ZERO and d <= TAU_ZERO:
        return Verdict.INERT
    return Verdict.UNDETERMINED


def classify_exogenous(
    model: Model, samples: int = DEFAULT_SAMPLES, seed: int = DEFAULT_SEED
) -> list:
    """Step 1: split exogenous variables into control inputs and parameters."""
    expanded = expand_delays(model)
    probe = _Probe(expanded)
    exo_env = expanded.exo_values
    # candidate stream: baseline first, then random draws; rejected probes are skipped
    stream = sample_states(expanded, 4 * samples, seed)
    candidates = [(state, exo_env) for state in stream]
    delay_only = delay_time_only_exos(model)
    return [
        _classify_one(probe, exo, candidates, samples, exo in delay_only)
        for exo in sorted(exo_env)
    ]


def _classify_one(probe, exo, candidates, samples, delay_only):
    evidence, used = _accumulate(probe, exo, candidates, samples)
    if used < samples:
        note = f"only {used} of {samples} samples avoided kinks"
        evidence = replace(evidence, agreement=False, note=note)
        return ExoClassification(exo, Verdict.UNDETERMINED, evidence)
    if delay_only:
        evidence = replace(evidence, note="referenced only as a delay time")
        return ExoClassification(exo, Verdict.PARAMETER, evidence)
    return ExoClassification(exo, decide(evidence), evidence)
