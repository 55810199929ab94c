"""Quantified predicates over observation logs, and bounded-liveness timers.

Formulas are small immutable trees::

    Some([Obs(SENT, bound("p"), (OUTCOME, var("o")))],
         Each([In(var("r"), Var("rs"))],
              Obs(RCVD, bound("r"), (OUTCOME, bound("o")))))

Clauses (:class:`Obs`, :class:`In`) enumerate bindings left to right, each
under the bindings of the ones before it.  :func:`evaluate` returns a
:class:`CheckResult` whose witness is the satisfying assignment of a passing
``Some`` or the violating assignment of a failing ``Each``.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .observe import Direction, ObservationLog, ObservationRecord, match_record
from .values import (
    ANY, Atom, Env, Pattern, ProcessId, UnboundVariable, bound, bound_vars, encode, free_vars, match,
    pat, sorted_values, var,
)

__all__ = [
    "Formula", "Obs", "In", "Each", "Some", "And", "Or", "Not", "Cmp", "Truth", "Var", "Lit", "SetOf",
    "CountOf", "CheckResult", "SpecificationError", "evaluate", "value_of", "S1", "S1_STRICT", "S2",
    "END", "check_S1", "check_S2", "detect_end", "LivenessEntry", "LivenessSpec", "TimerMsg",
    "Violation", "LivenessMonitor", "polling_liveness", "replay_liveness", "QUESTION", "REPLY",
    "OUTCOME", "SENT", "RCVD", "format_witness",
]

SENT = Direction.SENT
RCVD = Direction.RCVD
QUESTION = Atom("question")
REPLY = Atom("reply")
OUTCOME = Atom("outcome")


class SpecificationError(ValueError):
    """The formula itself is ill-formed (e.g. refers to an unbound variable)."""


# ---------------------------------------------------------------------------
# formula trees


class Formula:
    __slots__ = ()


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Lit(Term):
    value: Any


@dataclass(frozen=True)
class Obs(Formula):
    """Observation query; as a clause it binds, as a formula it tests non-emptiness."""

    direction: Direction
    reporter: Any = ANY
    payload: Any = ANY
    peer: Any = None
    time: Any = None

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "reporter", pat(self.reporter))
        object.__setattr__(self, "payload", pat(self.payload))
        if self.peer is not None:
            object.__setattr__(self, "peer", pat(self.peer))
        if self.time is not None:
            object.__setattr__(self, "time", pat(self.time))

    def patterns(self) -> List[Pattern]:
        return [p for p in (self.reporter, self.payload, self.peer, self.time) if p is not None]


@dataclass(frozen=True)
class In:
    """``pattern in source`` where source is a Var/Lit term or a literal collection."""

    pattern: Any
    source: Any

    def __post_init__(self):
        object.__setattr__(self, "pattern", pat(self.pattern))
        if not isinstance(self.source, Term):
            object.__setattr__(self, "source", Lit(self.source))


def _clauses(cs) -> tuple:
    cs = tuple(cs) if isinstance(cs, (list, tuple)) else (cs,)
    for c in cs:
        if not isinstance(c, (Obs, In)):
            raise SpecificationError(f"not a domain clause: {c!r}")
    return cs


@dataclass(frozen=True)
class Each(Formula):
    clauses: tuple
    body: Formula

    def __post_init__(self):
        object.__setattr__(self, "clauses", _clauses(self.clauses))


@dataclass(frozen=True)
class Some(Formula):
    clauses: tuple
    body: Formula = None

    def __post_init__(self):
        object.__setattr__(self, "clauses", _clauses(self.clauses))
        if self.body is None:
            object.__setattr__(self, "body", Truth(True))


@dataclass(frozen=True)
class And(Formula):
    parts: tuple

    def __init__(self, *parts):
        object.__setattr__(self, "parts", tuple(parts))


@dataclass(frozen=True)
class Or(Formula):
    parts: tuple

    def __init__(self, *parts):
        object.__setattr__(self, "parts", tuple(parts))


@dataclass(frozen=True)
class Not(Formula):
    part: Formula


@dataclass(frozen=True)
class Truth(Formula):
    value: bool


_OPS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
        ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Cmp(Formula):
    op: str
    left: Any
    right: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise SpecificationError(f"unknown comparison {self.op!r}")
        for side in ("left", "right"):
            v = getattr(self, side)
            if not isinstance(v, Term):
                object.__setattr__(self, side, Lit(v))


@dataclass(frozen=True)
class SetOf(Term):
    term: Term
    clauses: tuple
    cond: Optional[Formula] = None

    def __post_init__(self):
        object.__setattr__(self, "clauses", _clauses(self.clauses))


@dataclass(frozen=True)
class CountOf(Term):
    term: Term
    clauses: tuple
    cond: Optional[Formula] = None

    def __post_init__(self):
        object.__setattr__(self, "clauses", _clauses(self.clauses))


# ---------------------------------------------------------------------------
# static scope check


def _pattern_needs(p: Pattern) -> set:
    return bound_vars(p) - free_vars(p)


def _unbound(node, scope: frozenset) -> set:
    if isinstance(node, Var):
        return set() if node.name in scope else {node.name}
    if isinstance(node, (Lit, Truth)):
        return set()
    if isinstance(node, Obs):
        missing, _ = _clause_scope([node], scope)
        return missing
    if isinstance(node, (Each, Some)):
        missing, inner = _clause_scope(node.clauses, scope)
        return missing | _unbound(node.body, inner)
    if isinstance(node, (SetOf, CountOf)):
        missing, inner = _clause_scope(node.clauses, scope)
        missing |= _unbound(node.term, inner)
        if node.cond is not None:
            missing |= _unbound(node.cond, inner)
        return missing
    if isinstance(node, (And, Or)):
        out = set()
        for p in node.parts:
            out |= _unbound(p, scope)
        return out
    if isinstance(node, Not):
        return _unbound(node.part, scope)
    if isinstance(node, Cmp):
        return _unbound(node.left, scope) | _unbound(node.right, scope)
    raise SpecificationError(f"not a formula: {node!r}")


def _clause_scope(clauses, scope: frozenset):
    missing = set()
    for c in clauses:
        if isinstance(c, Obs):
            for p in c.patterns():
                missing |= _pattern_needs(p) - scope
                scope = scope | free_vars(p)
        else:
            missing |= _unbound(c.source, scope)
            missing |= _pattern_needs(c.pattern) - scope
            scope = scope | free_vars(c.pattern)
    return missing, scope


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class CheckResult:
    passed: bool
    witness: Optional[Env] = None
    detail: str = ""

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def __bool__(self):
        return self.passed


def _lookup(env: Env, name: str):
    try:
        return env[name]
    except KeyError:
        raise SpecificationError(f"unbound variable {name!r}") from None


def _bindings(clauses, log, env: Env) -> Iterator[Env]:
    if not clauses:
        yield env
        return
    first, rest = clauses[0], clauses[1:]
    if isinstance(first, Obs):
        for rec in log:
            got = match_record(rec, first.direction, first.reporter, first.payload,
                               first.peer, first.time, env)
            if got is not None:
                yield from _bindings(rest, log, got)
    else:
        domain = value_of(first.source, log, env)
        if isinstance(domain, frozenset):
            items = sorted_values(domain)
        elif isinstance(domain, (tuple, list)):
            items = list(domain)
        else:
            raise SpecificationError(f"domain is not a collection: {domain!r}")
        for item in items:
            got = match(first.pattern, item, env)
            if got is not None:
                yield from _bindings(rest, log, got)


def value_of(t: Term, log, env: Env):
    if isinstance(t, Var):
        return _lookup(env, t.name)
    if isinstance(t, Lit):
        return t.value
    if isinstance(t, (SetOf, CountOf)):
        vals = set()
        for e in _bindings(t.clauses, log, env):
            if t.cond is None or _ev(t.cond, log, e)[0]:
                vals.add(value_of(t.term, log, e))
        s = frozenset(vals)
        return s if isinstance(t, SetOf) else len(s)
    raise SpecificationError(f"not a term: {t!r}")


def _delta(e: Env, env: Env) -> Env:
    return {k: v for k, v in e.items() if k not in env}


def _ev(f, log, env: Env) -> Tuple[bool, Optional[Env]]:
    if isinstance(f, Truth):
        return f.value, None
    if isinstance(f, Obs):
        for e in _bindings((f,), log, env):
            return True, _delta(e, env)
        return False, None
    if isinstance(f, Some):
        first = None
        for e in _bindings(f.clauses, log, env):
            ok, w = _ev(f.body, log, e)
            found = {**_delta(e, env), **(w or {})}
            if ok:
                return True, found
            if first is None:
                first = found
        return False, first
    if isinstance(f, Each):
        for e in _bindings(f.clauses, log, env):
            ok, w = _ev(f.body, log, e)
            if not ok:
                return False, {**_delta(e, env), **(w or {})}
        return True, None
    if isinstance(f, And):
        acc: Env = {}
        for p in f.parts:
            ok, w = _ev(p, log, env)
            if not ok:
                return False, w
            acc.update(w or {})
        return True, acc or None
    if isinstance(f, Or):
        for p in f.parts:
            ok, w = _ev(p, log, env)
            if ok:
                return True, w
        return False, None
    if isinstance(f, Not):
        ok, w = _ev(f.part, log, env)
        return not ok, w
    if isinstance(f, Cmp):
        a, b = value_of(f.left, log, env), value_of(f.right, log, env)
        if f.op not in ("==", "!=") and not (type(a) is int and type(b) is int):
            raise SpecificationError(f"ordering comparison on non-integers: {a!r} {f.op} {b!r}")
        if f.op in ("==", "!="):
            same = type(a) is type(b) and a == b
            return (same if f.op == "==" else not same), None
        return _OPS[f.op](a, b), None
    raise SpecificationError(f"not a formula: {f!r}")


def evaluate(f: Formula, log: Iterable[ObservationRecord], env: Optional[Mapping[str, Any]] = None) -> CheckResult:
    env = dict(env or {})
    missing = _unbound(f, frozenset(env))
    if missing:
        raise SpecificationError(f"unbound variable(s): {sorted(missing)}")
    records = list(log)
    try:
        ok, w = _ev(f, records, env)
    except UnboundVariable as exc:
        raise SpecificationError(f"unbound variable {exc.args[0]!r}") from None
    detail = "" if w is None else format_witness(w)
    return CheckResult(ok, w, detail)


def format_witness(w: Optional[Mapping[str, Any]]) -> str:
    if not w:
        return "-"
    return "{" + ", ".join(f"{k}={encode(w[k])}" for k in sorted(w)) + "}"


# ---------------------------------------------------------------------------
# the polling properties (free variables: p, rs)

_question = Obs(SENT, bound("p"), (QUESTION, ANY, var("t")))

S1 = Some([_question, Obs(SENT, bound("p"), (OUTCOME, ANY), time=var("t1"))],
          Each([In(var("r"), Var("rs"))],
               Some([Obs(RCVD, bound("p"), (REPLY, ANY, bound("t")), peer=bound("r"), time=var("t2"))],
                    Cmp(">", Var("t1"), Var("t2")))))

UNIQUE_QUESTION = Cmp("==", CountOf(Var("tq"), [Obs(SENT, bound("p"), (QUESTION, ANY, var("tq")))]), Lit(1))

S1_STRICT = And(UNIQUE_QUESTION, S1)

S2 = Some([Obs(SENT, bound("p"), (OUTCOME, var("o")))],
          Each([In(var("r"), Var("rs"))],
               Obs(RCVD, bound("r"), (OUTCOME, bound("o")))))

END = Each([In(var("r"), Var("rs"))], Obs(RCVD, bound("r"), (OUTCOME, ANY)))


def _penv(p, rs) -> Env:
    return {"p": p, "rs": frozenset(rs)}


def check_S1(log, p: ProcessId, rs, strict: bool = False) -> CheckResult:
    """The poller had a reply from every pollee to its question when it sent the outcome."""
    res = evaluate(S1_STRICT if strict else S1, log, _penv(p, rs))
    res.detail = ("S1 holds " if res.passed else "S1 violated ") + format_witness(res.witness)
    return res


def check_S2(log, p: ProcessId, rs) -> CheckResult:
    """Every pollee received the outcome the poller sent."""
    res = evaluate(S2, log, _penv(p, rs))
    res.detail = ("S2 holds " if res.passed else "S2 violated ") + format_witness(res.witness)
    return res


def detect_end(log, p: ProcessId, rs) -> bool:
    return evaluate(END, log, _penv(p, rs)).passed


# ---------------------------------------------------------------------------
# bounded liveness


@dataclass(frozen=True)
class LivenessEntry:
    trigger: Optional[Obs]     # None: armed when monitoring starts
    expected: Formula
    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError(f"liveness bound must be positive, got {self.bound}")


@dataclass(frozen=True)
class LivenessSpec:
    entries: Mapping[str, LivenessEntry] = field(default_factory=dict)
    total_bound: Optional[float] = None
    end: Formula = END

    def __post_init__(self):
        if "total" in self.entries:
            raise ValueError("'total' is reserved for the whole-execution bound")
        if self.total_bound is not None and not self.total_bound > 0:
            raise ValueError(f"total bound must be positive, got {self.total_bound}")

    def bounds(self) -> Dict[str, float]:
        out = {k: e.bound for k, e in self.entries.items()}
        if self.total_bound is not None:
            out["total"] = self.total_bound
        return out


@dataclass(frozen=True)
class TimerMsg:
    name: str
    started_at: float


@dataclass(frozen=True)
class Violation:
    name: str
    elapsed: float
    bound: float
    witness: Optional[Mapping[str, Any]]
    detail: str = ""

    def line(self, run: Optional[int] = None) -> str:
        tag = "VIOLATION" if run is None else f"VIOLATION {run}"
        return f"{tag} {self.name} {self.elapsed:.6f} {self.bound:g} {format_witness(self.witness)}"


def polling_liveness(qr: Optional[float] = None, qo: Optional[float] = None,
                     total: Optional[float] = None) -> LivenessSpec:
    """Timers for the polling example: 'q-r' (first reply), 'q-o' (all outcomes), 'total'."""
    entries = {}
    if qr is not None:
        entries["q-r"] = LivenessEntry(
            _question,
            Some([In(var("r"), Var("rs"))],
                 Obs(RCVD, bound("p"), (REPLY, ANY, bound("t")), peer=bound("r"))),
            qr)
    if qo is not None:
        entries["q-o"] = LivenessEntry(_question, END, qo)
    return LivenessSpec(entries, total)


class LivenessMonitor:
    """Starts one-shot timers on trigger observations and judges them when they fire.

    ``start_timer(name, seconds)`` must arrange for :meth:`on_timer` to be
    called with that name once the time has passed; ``clock()`` is the
    checker's time source.
    """

    def __init__(self, spec: LivenessSpec, env: Mapping[str, Any],
                 start_timer: Callable[[str, float], None], clock: Callable[[], float]):
        self.spec = spec
        self.env = dict(env)
        self.start_timer = start_timer
        self.clock = clock
        self.started: Dict[str, float] = {}
        self.bindings: Dict[str, Env] = {}
        self.fired: List[Tuple[str, int, float]] = []   # (name, log length, time)
        self.violations: List[Violation] = []
        self.errors: List[str] = []
        self.armed = False

    def arm(self) -> None:
        if self.armed:
            raise RuntimeError("liveness monitor already armed")
        self.armed = True
        for name, entry in self.spec.entries.items():
            if entry.trigger is None:
                self._start(name, dict(self.env), entry.bound)
        if self.spec.total_bound is not None:
            self._start("total", dict(self.env), self.spec.total_bound)

    def _start(self, name, env, bound_secs, at=None):
        self.started[name] = self.clock() if at is None else at
        self.bindings[name] = env
        self.start_timer(name, bound_secs)

    def on_observation(self, rec: ObservationRecord) -> None:
        for name, entry in self.spec.entries.items():
            if name in self.started or entry.trigger is None:
                continue
            t = entry.trigger
            got = match_record(rec, t.direction, t.reporter, t.payload, t.peer, t.time, self.env)
            if got is not None:
                # elapsed times count from the trigger's receipt, as replay does
                self._start(name, got, entry.bound, at=rec.real_time)

    def on_timer(self, msg, log) -> List[Violation]:
        name = msg.name if isinstance(msg, TimerMsg) else str(msg)
        if name == "total":
            expected, bound_secs = self.spec.end, self.spec.total_bound
        elif name in self.spec.entries:
            expected, bound_secs = self.spec.entries[name].expected, self.spec.entries[name].bound
        else:
            self.errors.append(f"timer message for unknown entry {name!r}")
            return []
        if name not in self.started or any(f[0] == name for f in self.fired):
            self.errors.append(f"unexpected timer message for {name!r}")
            return []
        return self._judge(name, expected, bound_secs, log, len(log), self.clock())

    def _judge(self, name, expected, bound_secs, log, n, when) -> List[Violation]:
        self.fired.append((name, n, when))
        res = evaluate(expected, log.prefix(n) if n < len(log) else log, self.bindings[name])
        if res.passed:
            return []
        v = Violation(name, when - self.started[name], bound_secs, res.witness,
                      f"timeout {name!r}: expected condition not observed within {bound_secs:g}s")
        self.violations.append(v)
        return [v]

    def expire_overdue(self, log) -> List[Violation]:
        """Judge timers whose deadline has passed but whose message has not arrived.

        Each is evaluated on the records received no later than its deadline.
        """
        now = self.clock()
        out: List[Violation] = []
        done = {f[0] for f in self.fired}
        for name, start in list(self.started.items()):
            if name in done:
                continue
            if name == "total":
                expected, bound_secs = self.spec.end, self.spec.total_bound
            else:
                expected, bound_secs = self.spec.entries[name].expected, self.spec.entries[name].bound
            deadline = start + bound_secs
            if deadline > now:
                continue
            n = sum(1 for rec in log if rec.real_time <= deadline)
            out.extend(self._judge(name, expected, bound_secs, log, n, deadline))
        return out


def replay_liveness(spec: LivenessSpec, log: ObservationLog, env: Mapping[str, Any],
                    fired: Optional[Sequence[Tuple[str, int, float]]] = None,
                    end_time: Optional[float] = None) -> List[Violation]:
    """Re-judge liveness entries on a stored log.

    With ``fired`` (timer name, log length and time when it fired) the expected
    conditions are evaluated on exactly those prefixes.  Without it, each
    deadline is derived from the trigger's receipt time plus the bound and the
    condition is evaluated on the records received no later than the deadline;
    deadlines after ``end_time`` (when given) never fired.
    """
    env = dict(env)
    trig_env: Dict[str, Env] = {}
    trig_time: Dict[str, float] = {}
    if spec.total_bound is not None:
        trig_env["total"], trig_time["total"] = env, 0.0
    for name, entry in spec.entries.items():
        if entry.trigger is None:
            trig_env[name], trig_time[name] = env, 0.0
            continue
        t = entry.trigger
        for rec in log:
            got = match_record(rec, t.direction, t.reporter, t.payload, t.peer, t.time, env)
            if got is not None:
                trig_env[name], trig_time[name] = got, rec.real_time
                break

    def judge(name, n, elapsed):
        if name == "total":
            expected, b = spec.end, spec.total_bound
        else:
            expected, b = spec.entries[name].expected, spec.entries[name].bound
        res = evaluate(expected, log.prefix(n), trig_env[name])
        if res.passed:
            return None
        return Violation(name, elapsed, b, res.witness)

    out = []
    if fired is not None:
        for name, n, when in fired:
            if name not in trig_env:
                continue
            v = judge(name, n, when - trig_time[name])
            if v is not None:
                out.append(v)
        return out
    for name in sorted(trig_env):
        b = spec.total_bound if name == "total" else spec.entries[name].bound
        deadline = trig_time[name] + b
        if end_time is not None and deadline > end_time:
            continue
        n = sum(1 for rec in log if rec.real_time <= deadline)
        v = judge(name, n, b)
        if v is not None:
            out.append(v)
    return out
