"""Mirroring of sends and receives to a checker process.

:func:`instrument` derives a subclass of a process class that, without any
change to the algorithm code, reports every send and every delivered message
to a checker as an envelope::

    (sent, payload, {targets}, logical_time)
    (rcvd, payload, sender,    logical_time)

Omitted parts are the empty tuple ``()``.  Envelopes travel on the runtime's
side channel, so they never tick clocks, never enter the reporter's ``sent``
history, and are never subject to injected faults.

The checker side keeps an :class:`ObservationLog` of
:class:`ObservationRecord`\\ s, stamped with the checker's own clock on arrival.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple

from .runtime import Process, ReceiveClause
from .values import (
    ANY, Atom, DecodeError, Env, Pattern, ProcessId, check_value, decode, encode, match, pat,
    sorted_values,
)

__all__ = [
    "Direction", "ObservationRecord", "ObservationLog", "InstrumentationPolicy", "FULL", "NO_TIME",
    "SILENT", "instrument", "InstrumentationError", "Checker", "observed", "make_envelope",
    "parse_envelope", "MalformedEnvelope", "write_log", "read_log", "LogFormatError",
]

SENT_TAG = Atom("sent")
RCVD_TAG = Atom("rcvd")
OMIT = ()
HIDDEN = Atom("_")


class Direction(str, enum.Enum):
    SENT = "sent"
    RCVD = "rcvd"

    def __str__(self):
        return self.value


class InstrumentationError(TypeError):
    pass


class MalformedEnvelope(ValueError):
    pass


@dataclass(frozen=True)
class ObservationRecord:
    direction: Direction
    payload: Any
    peers: frozenset
    reporter: ProcessId
    logical_time: Optional[int]
    real_time: float

    def __post_init__(self):
        if self.direction is Direction.RCVD and len(self.peers) > 1:
            raise ValueError("a received record has at most one peer")


class ObservationLog(Sequence):
    """Append-only sequence of observation records."""

    def __init__(self, records: Iterable[ObservationRecord] = ()):
        self._records: List[ObservationRecord] = []
        for r in records:
            self.append(r)

    def append(self, rec: ObservationRecord) -> int:
        if self._records and rec.real_time < self._records[-1].real_time:
            raise ValueError("checker receipt times must be non-decreasing")
        self._records.append(rec)
        return len(self._records) - 1

    def __getitem__(self, i):
        return self._records[i]

    def __len__(self):
        return len(self._records)

    def __iter__(self) -> Iterator[ObservationRecord]:
        return iter(self._records)

    def prefix(self, n: int) -> "ObservationLog":
        out = ObservationLog()
        out._records = self._records[:n]
        return out


# ---------------------------------------------------------------------------
# policy and envelopes


Mask = Tuple[Any, ...]


def project(payload, mask) -> Any:
    """Replace components whose mask entry is False with the placeholder atom ``_``."""
    if mask is True or not isinstance(payload, tuple) or len(payload) != len(mask):
        return payload
    out = []
    for v, m in zip(payload, mask):
        if m is False:
            out.append(HIDDEN)
        elif isinstance(m, tuple):
            out.append(project(v, m))
        else:
            out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class InstrumentationPolicy:
    report_sends: bool = True
    report_receives: bool = True
    include_peers: bool = True
    include_logical_time: bool = True
    # tag name -> mask tuple; True keeps a component, False hides it, tuples recurse
    projections: Mapping[str, Mask] = field(default_factory=dict)

    def __hash__(self):
        return hash((self.report_sends, self.report_receives, self.include_peers,
                     self.include_logical_time, tuple(sorted(self.projections.items()))))

    def mask(self, payload) -> Any:
        if not self.projections or not isinstance(payload, tuple) or not payload:
            return payload
        tag = payload[0]
        m = self.projections.get(tag.name) if isinstance(tag, Atom) else None
        return payload if m is None else project(payload, m)


FULL = InstrumentationPolicy()
NO_TIME = InstrumentationPolicy(include_logical_time=False)
SILENT = InstrumentationPolicy(report_sends=False, report_receives=False)


def make_envelope(direction: Direction, payload, peers, logical_time, policy: InstrumentationPolicy):
    tag = SENT_TAG if direction is Direction.SENT else RCVD_TAG
    if not policy.include_peers:
        peer_part = OMIT
    elif direction is Direction.SENT:
        peer_part = frozenset(peers)
    else:
        (peer_part,) = tuple(peers)
    time_part = logical_time if policy.include_logical_time and logical_time is not None else OMIT
    return (tag, policy.mask(payload), peer_part, time_part)


def parse_envelope(env, reporter: ProcessId, real_time: float) -> ObservationRecord:
    if not (isinstance(env, tuple) and len(env) == 4):
        raise MalformedEnvelope(f"envelope must be a 4-tuple: {env!r}")
    tag, payload, peers, t = env
    if tag == SENT_TAG:
        direction = Direction.SENT
        if peers == OMIT:
            peers = frozenset()
        elif not (isinstance(peers, frozenset) and all(isinstance(p, ProcessId) for p in peers)):
            raise MalformedEnvelope(f"sent envelope needs a set of process ids: {peers!r}")
    elif tag == RCVD_TAG:
        direction = Direction.RCVD
        if peers == OMIT:
            peers = frozenset()
        elif isinstance(peers, ProcessId):
            peers = frozenset([peers])
        else:
            raise MalformedEnvelope(f"rcvd envelope needs one sender id: {peers!r}")
    else:
        raise MalformedEnvelope(f"unknown envelope tag {tag!r}")
    if t == OMIT:
        t = None
    elif not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise MalformedEnvelope(f"bad logical time {t!r}")
    return ObservationRecord(direction, payload, peers, reporter, t, real_time)


# ---------------------------------------------------------------------------
# instrumentation


class Checker(Process):
    """Base class for checker processes: ingests envelopes into ``self.log``."""

    is_checker = True

    def __init__(self, runtime, pid):
        super().__init__(runtime, pid)
        self.log = ObservationLog()
        self.malformed: List[Tuple[Any, str]] = []

    def ingest(self, envelope, reporter: ProcessId) -> Optional[ObservationRecord]:
        try:
            rec = parse_envelope(envelope, reporter, self.now())
        except MalformedEnvelope as exc:
            self.malformed.append((envelope, str(exc)))
            return None
        self.log.append(rec)
        self.on_observation(rec)
        return rec

    def on_observation(self, rec: ObservationRecord) -> None:
        """Hook run after each record is appended."""

    def on_message(self, payload, sender) -> None:
        """Hook for messages to the checker that are not envelopes (timers)."""

    def _deliver(self, d):
        super()._deliver(d)
        p = d.payload
        if isinstance(p, tuple) and p and p[0] in (SENT_TAG, RCVD_TAG):
            self.ingest(p, d.sender)
        else:
            self.on_message(p, d.sender)


def instrument(cls, checker: ProcessId, policy: InstrumentationPolicy = FULL):
    """Return a subclass of ``cls`` that reports its sends and receives to ``checker``."""
    if not (isinstance(cls, type) and issubclass(cls, Process)):
        raise InstrumentationError(f"not a process class: {cls!r}")
    if cls.is_checker:
        raise InstrumentationError("checker processes cannot be instrumented")
    if checker in getattr(cls, "_observers", ()):
        raise InstrumentationError(f"{cls.__name__} is already instrumented for {checker}")

    def send(self, m, to):
        entry = self._record_send(m, to)
        if policy.report_sends:
            env = make_envelope(Direction.SENT, entry.payload, entry.peers, entry.logical_time, policy)
            self._notify(checker, env)
        self._transmit(entry)

    def _observe_receipt(self, **_):
        entry = self.current
        env = make_envelope(Direction.RCVD, entry.payload, entry.peers, entry.logical_time, policy)
        self._notify(checker, env)

    base_send = cls.send
    if base_send is not Process.send and not getattr(base_send, "_observing", False):
        # the class already extends send; report first, then defer to it
        def send(self, m, to, _base=base_send):  # noqa: F811
            if policy.report_sends:
                stamp = self._clock + 1 if self.runtime.config.clocks else None
                env = make_envelope(Direction.SENT, m, self._targets(to), stamp, policy)
                self._notify(checker, env)
            _base(self, m, to)

    send._observing = True
    ns: Dict[str, Any] = {
        "send": send,
        "kind": getattr(cls, "kind", None) or cls.__name__,
        "_observers": tuple(getattr(cls, "_observers", ())) + (checker,),
        "__module__": cls.__module__,
        "__qualname__": f"Observed{cls.__qualname__}",
    }
    sub = type(f"Observed{cls.__name__}", (cls,), ns)
    clauses = list(cls._clauses)
    if policy.report_receives:
        clauses.insert(0, ReceiveClause(ANY, None, _observe_receipt))
    sub._clauses = clauses
    return sub


# ---------------------------------------------------------------------------
# queries


def _match_peers(peer: Pattern, peers: frozenset, env: Env) -> Optional[Env]:
    for p in sorted_values(peers):
        got = match(peer, p, env)
        if got is not None:
            return got
    return None


def match_record(rec: ObservationRecord, direction, reporter, payload, peer=None, time=None,
                 env: Optional[Env] = None) -> Optional[Env]:
    env = {} if env is None else env
    if direction is not None and rec.direction is not Direction(direction):
        return None
    got = match(pat(reporter), rec.reporter, env)
    if got is None:
        return None
    got = match(pat(payload), rec.payload, got)
    if got is None:
        return None
    if peer is not None:
        got = _match_peers(pat(peer), rec.peers, got)
        if got is None:
            return None
    if time is not None:
        if rec.logical_time is None:
            return None
        got = match(pat(time), rec.logical_time, got)
    return got


def observed(log: Iterable[ObservationRecord], direction, reporter=ANY, payload=ANY, peer=None,
             time=None, env: Optional[Env] = None) -> List[Env]:
    """One Env per record matching all of the given patterns."""
    out = []
    for rec in log:
        got = match_record(rec, direction, reporter, payload, peer, time, env)
        if got is not None:
            out.append(got)
    return out


# ---------------------------------------------------------------------------
# export / import
#
# One record per line, tab separated:
#   direction  reporter  payload  peers  logical_time|-  real_time
# Lines starting with '#' carry metadata ("# key<TAB>value...").


class LogFormatError(ValueError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def format_record(rec: ObservationRecord) -> str:
    t = "-" if rec.logical_time is None else str(rec.logical_time)
    return "\t".join([rec.direction.value, encode(rec.reporter), encode(rec.payload),
                      encode(frozenset(rec.peers)), t, repr(float(rec.real_time))])


def parse_record(line: str, lineno: int = 0) -> ObservationRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 6:
        raise LogFormatError(f"expected 6 tab-separated fields, got {len(parts)}", lineno)
    try:
        direction = Direction(parts[0])
        reporter = decode(parts[1])
        payload = decode(parts[2])
        peers = decode(parts[3])
        t = None if parts[4] == "-" else int(parts[4])
        real = float(parts[5])
    except (DecodeError, ValueError) as exc:
        raise LogFormatError(str(exc), lineno) from None
    if not isinstance(reporter, ProcessId) or not isinstance(peers, frozenset):
        raise LogFormatError("reporter must be a process id and peers a set", lineno)
    return ObservationRecord(direction, payload, peers, reporter, t, real)


def write_log(log: Iterable[ObservationRecord], fh: TextIO, meta: Sequence[Tuple[str, ...]] = ()) -> None:
    for item in meta:
        fh.write("# " + "\t".join(str(x) for x in item) + "\n")
    for rec in log:
        fh.write(format_record(rec) + "\n")


def read_log(fh: TextIO) -> Tuple[ObservationLog, List[Tuple[str, ...]]]:
    """Returns the log and its metadata lines, each split on tabs."""
    log = ObservationLog()
    meta: List[Tuple[str, ...]] = []
    for n, line in enumerate(fh, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            meta.append(tuple(line[1:].strip().split("\t")))
            continue
        try:
            log.append(parse_record(line, n))
        except ValueError as exc:
            if isinstance(exc, LogFormatError):
                raise
            raise LogFormatError(str(exc), n) from None
    return log, meta
