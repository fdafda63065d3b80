"""Stochastic Petri nets with piecewise-constant daily rates.

A net is a set of places, a set of transitions with multiset inputs/outputs,
and an initial marking.  Each transition carries a hazard law bound by name
to a rate in the day's rate table:

    constant     r
    per_capita   r * X
    bilinear     r * X * Y / N     (N = sum over ``normalizer`` places; omitted
                                    normalizer gives mass action r * X * Y)

Simulation is Gillespie's direct method, exact within a day and restarted
at each day boundary with that day's rates.  The inner loop lives in a
compiled kernel when available (``_ssa_ext``) and in ``_ssa_py`` otherwise;
both consume one shared uniform stream so they give identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _ssa_py
from .errors import ConfigurationError, ContractError, NumericError, StructuralError

try:
    from . import _ssa_ext
except ImportError:  # pragma: no cover - depends on the build
    _ssa_ext = None

HAZARD_LAWS = ("constant", "per_capita", "bilinear")
_LAW_CODE = {"constant": 0, "per_capita": 1, "bilinear": 2}

_UNIFORM_BLOCK = 8192

_backend = "compiled" if _ssa_ext is not None else "python"


def available_backends() -> list[str]:
    return ["compiled", "python"] if _ssa_ext is not None else ["python"]


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    """Select the SSA kernel: ``"compiled"`` or ``"python"``."""
    global _backend
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and _ssa_ext is None:
        raise ImportError("compiled SSA kernel is not built; reinstall with Cython available")
    _backend = name


def _kernel():
    return _ssa_ext.ssa_run if _backend == "compiled" else _ssa_py.ssa_run


Marking = Mapping[str, int]
DayRates = Mapping[str, float]


@dataclass(frozen=True)
class Hazard:
    law: str
    rate: str
    places: tuple[str, ...] = ()
    normalizer: tuple[str, ...] = ()

    def __post_init__(self):
        if self.law not in HAZARD_LAWS:
            raise StructuralError(f"unknown hazard law {self.law!r}")
        need = {"constant": 0, "per_capita": 1, "bilinear": 2}[self.law]
        if len(self.places) != need:
            raise StructuralError(f"{self.law} hazard needs {need} place(s), got {self.places!r}")


@dataclass(frozen=True)
class TransitionSpec:
    id: str
    inputs: Mapping[str, int]
    outputs: Mapping[str, int]
    hazard: Hazard


@dataclass(frozen=True)
class Trajectory:
    """End-of-day markings, one row per day (the initial marking is not a row)."""

    places: tuple[str, ...]
    states: np.ndarray
    initial: np.ndarray
    event_times: np.ndarray | None = None
    event_ids: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def column(self, place: str) -> np.ndarray:
        return self.states[:, self.places.index(place)]


@dataclass(frozen=True)
class PetriNet:
    places: tuple[str, ...]
    transitions: tuple[TransitionSpec, ...]
    initial: Mapping[str, int]
    _arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "places", tuple(self.places))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if len(set(self.places)) != len(self.places):
            raise StructuralError("place identifiers must be unique")
        ids = [t.id for t in self.transitions]
        if len(set(ids)) != len(ids):
            raise StructuralError("transition identifiers must be unique")
        known = set(self.places)
        for t in self.transitions:
            refs = set(t.inputs) | set(t.outputs) | set(t.hazard.places) | set(t.hazard.normalizer)
            unknown = refs - known
            if unknown:
                raise StructuralError(f"transition {t.id!r} references undeclared places {sorted(unknown)}")
            if any(c < 0 for c in list(t.inputs.values()) + list(t.outputs.values())):
                raise StructuralError(f"transition {t.id!r} has a negative arc weight")
        for p, c in self.initial.items():
            if p not in known:
                raise StructuralError(f"initial marking names undeclared place {p!r}")
            if c < 0:
                raise StructuralError(f"initial marking of {p!r} is negative")
        object.__setattr__(self, "_arrays", self._compile())

    def _compile(self) -> dict:
        pidx = {p: i for i, p in enumerate(self.places)}
        in_ptr, in_place, in_count = [0], [], []
        d_ptr, d_place, d_val = [0], [], []
        law, pa, pb = [], [], []
        norm_ptr, norm_idx = [0], []
        delta = np.zeros((len(self.transitions), len(self.places)), dtype=np.int64)
        for k, t in enumerate(self.transitions):
            for p, c in t.inputs.items():
                if c:
                    in_place.append(pidx[p])
                    in_count.append(c)
                    delta[k, pidx[p]] -= c
            in_ptr.append(len(in_place))
            for p, c in t.outputs.items():
                delta[k, pidx[p]] += c
            for i in np.flatnonzero(delta[k]):
                d_place.append(int(i))
                d_val.append(int(delta[k, i]))
            d_ptr.append(len(d_place))
            hz = t.hazard
            law.append(_LAW_CODE[hz.law])
            pa.append(pidx[hz.places[0]] if hz.places else 0)
            pb.append(pidx[hz.places[1]] if len(hz.places) > 1 else 0)
            norm_idx.extend(pidx[p] for p in hz.normalizer)
            norm_ptr.append(len(norm_idx))
        i32 = lambda v: np.ascontiguousarray(v, dtype=np.int32)  # noqa: E731
        i64 = lambda v: np.ascontiguousarray(v, dtype=np.int64)  # noqa: E731
        return {
            "in_ptr": i32(in_ptr), "in_place": i32(in_place), "in_count": i64(in_count),
            "d_ptr": i32(d_ptr), "d_place": i32(d_place), "d_val": i64(d_val),
            "law": i32(law), "pa": i32(pa), "pb": i32(pb),
            "norm_ptr": i32(norm_ptr), "norm_idx": i32(norm_idx),
            "delta": delta,
            "rate_names": tuple(t.hazard.rate for t in self.transitions),
        }

    @property
    def transition_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.transitions)

    @property
    def delta(self) -> np.ndarray:
        """Net token change per transition, shape (n_transitions, n_places)."""
        return self._arrays["delta"]

    def transition(self, tid: str) -> TransitionSpec:
        for t in self.transitions:
            if t.id == tid:
                return t
        raise StructuralError(f"unknown transition {tid!r}")

    def initial_vector(self) -> np.ndarray:
        return self.marking_vector(self.initial)

    def marking_vector(self, m: Marking) -> np.ndarray:
        return np.array([int(m.get(p, 0)) for p in self.places], dtype=np.int64)

    def marking_dict(self, v: np.ndarray) -> dict[str, int]:
        return {p: int(c) for p, c in zip(self.places, v)}

    def rate_vector(self, rates: DayRates) -> np.ndarray:
        names = self._arrays["rate_names"]
        missing = sorted({n for n in names if n not in rates})
        if missing:
            raise ConfigurationError(f"day rates missing bindings for {missing}")
        return np.array([float(rates[n]) for n in names], dtype=np.float64)


def enabled(net: PetriNet, m: Marking, tid: str) -> bool:
    t = net.transition(tid)
    return all(m.get(p, 0) >= c for p, c in t.inputs.items())


def fire(net: PetriNet, m: Marking, tid: str) -> dict[str, int]:
    """Return the marking reached by firing ``tid``; ``m`` is not modified."""
    if not enabled(net, m, tid):
        raise ContractError(f"transition {tid!r} is not enabled in the given marking")
    t = net.transition(tid)
    out = {p: int(m.get(p, 0)) for p in net.places}
    for p, c in t.inputs.items():
        out[p] -= c
    for p, c in t.outputs.items():
        out[p] += c
    return out


def hazard(net: PetriNet, m: Marking, rates: DayRates, tid: str) -> float:
    t = net.transition(tid)
    if t.hazard.rate not in rates:
        raise ConfigurationError(f"no rate bound for {t.hazard.rate!r}")
    if not enabled(net, m, tid):
        return 0.0
    r = float(rates[t.hazard.rate])
    hz = t.hazard
    if hz.law == "constant":
        return r
    if hz.law == "per_capita":
        return r * m.get(hz.places[0], 0)
    value = r * m.get(hz.places[0], 0) * m.get(hz.places[1], 0)
    if hz.normalizer:
        n = sum(m.get(p, 0) for p in hz.normalizer)
        return value / n if n > 0 else 0.0
    return value


def total_hazard(net: PetriNet, m: Marking, rates: DayRates) -> float:
    total = 0.0
    for t in net.transitions:
        h = hazard(net, m, rates, t.id)
        if not (h >= 0.0) or math.isinf(h):
            raise NumericError(f"hazard of {t.id!r} evaluated to {h}")
        total += h
    return total


class UniformStream:
    """Block-buffered uniforms from a numpy Generator, shared across kernel calls."""

    def __init__(self, rng: np.random.Generator, block: int = _UNIFORM_BLOCK):
        self.rng = rng
        self.block = block + (block % 2)
        self.buf = rng.random(self.block)
        self.pos = 0

    def refill(self):
        self.buf = self.rng.random(self.block)
        self.pos = 0


class _EventLog:
    def __init__(self, record: bool, capacity: int = 4096):
        self.record = record
        cap = capacity if record else 0
        self.times = np.empty(cap, dtype=np.float64)
        self.ids = np.empty(cap, dtype=np.int32)
        self.n = 0

    def grow(self):
        cap = max(2 * self.ids.shape[0], 1024)
        times = np.empty(cap, dtype=np.float64)
        ids = np.empty(cap, dtype=np.int32)
        times[: self.n] = self.times[: self.n]
        ids[: self.n] = self.ids[: self.n]
        self.times, self.ids = times, ids


def _run_interval(net: PetriNet, state: np.ndarray, tr_rates: np.ndarray, t0: float, t1: float,
                  stream: UniformStream, log: _EventLog) -> None:
    a = net._arrays
    kernel = _kernel()
    t = t0
    while True:
        t, stream.pos, log.n, status, bad = kernel(
            state, a["in_ptr"], a["in_place"], a["in_count"],
            a["d_ptr"], a["d_place"], a["d_val"],
            a["law"], a["pa"], a["pb"], a["norm_ptr"], a["norm_idx"],
            tr_rates, t, t1, stream.buf, stream.pos, log.times, log.ids, log.n, log.record,
        )
        if status == _ssa_py.DONE:
            return
        if status == _ssa_py.NEED_UNIFORMS:
            stream.refill()
        elif status == _ssa_py.LOG_FULL:
            log.grow()
        else:
            tid = net.transitions[bad].id
            raise NumericError(f"hazard of transition {tid!r} is negative, NaN or infinite at t={t:.6g}")


def ssa_day(net: PetriNet, m0: Marking, rates: DayRates, t0: float, t1: float,
            rng: np.random.Generator | UniformStream) -> tuple[dict[str, int], list[tuple[float, str]]]:
    """Exact direct-method simulation over ``[t0, t1)`` with constant rates.

    Returns the final marking and the fired events as ``(time, transition id)``.
    """
    if not t1 > t0:
        raise ContractError("ssa_day needs t1 > t0")
    stream = rng if isinstance(rng, UniformStream) else UniformStream(rng)
    state = net.marking_vector(m0)
    log = _EventLog(record=True)
    _run_interval(net, state, net.rate_vector(rates), float(t0), float(t1), stream, log)
    ids = net.transition_ids
    events = [(float(log.times[i]), ids[log.ids[i]]) for i in range(log.n)]
    return net.marking_dict(state), events


def simulate_horizon(net: PetriNet, schedule: Sequence[DayRates] | np.ndarray,
                     rng: np.random.Generator, record_events: bool = False,
                     initial: Marking | None = None) -> Trajectory:
    """Chain daily SSA runs over ``len(schedule)`` days.

    ``schedule`` is either a sequence of rate mappings or a pre-resolved
    array of shape (T, n_transitions) holding each transition's rate.
    Day ``d`` (1-based) covers ``[d-1, d)`` and row ``d-1`` of the result is
    the marking at its end.
    """
    if isinstance(schedule, np.ndarray):
        rate_rows = np.ascontiguousarray(schedule, dtype=np.float64)
        if rate_rows.ndim != 2 or rate_rows.shape[1] != len(net.transitions):
            raise StructuralError(f"rate array must be (T, {len(net.transitions)}), got {rate_rows.shape}")
    else:
        rate_rows = np.array([net.rate_vector(r) for r in schedule], dtype=np.float64).reshape(
            len(schedule), len(net.transitions))
    n_days = rate_rows.shape[0]
    start = net.initial_vector() if initial is None else net.marking_vector(initial)
    state = start.copy()
    states = np.empty((n_days, len(net.places)), dtype=np.int64)
    stream = UniformStream(rng)
    log = _EventLog(record=record_events)
    for d in range(n_days):
        _run_interval(net, state, rate_rows[d], float(d), float(d + 1), stream, log)
        states[d] = state
    times = ids = None
    if record_events:
        times = log.times[: log.n].copy()
        ids = log.ids[: log.n].copy()
    return Trajectory(net.places, states, start, times, ids)
