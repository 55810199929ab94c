"""Actor-style processes with histories, Lamport clocks, and two schedulers.

A process class subclasses :class:`Process`, overrides ``setup`` and ``run``,
and declares receive handlers with :func:`receive`::

    class Pollee(Process):
        def setup(self, poller):
            self.poller = poller

        def run(self):
            yield self.await_(lambda: self.received.has(pat((OUTCOME, var("o")))))

        @receive((QUESTION, ANY, var("t")), from_=var("p"))
        def on_question(self, t, p):
            self.send((REPLY, Atom("Y"), t), to=p)

``run`` is a generator.  ``yield`` on its own is a yield point; ``yield
self.await_(...)`` blocks until a predicate holds or the timeout passes and
evaluates to the index of the predicate that fired (``None`` on timeout).

Two engines drive the same processes:

* ``det``  -- one thread, a seeded scheduler picks among runnable processes and
  in-flight messages; time is virtual and only advances when nothing else can
  happen, so timeouts cost nothing.
* ``conc`` -- one thread per process, thread-safe mailboxes, real monotonic
  time, ``threading.Timer`` for timed events.
"""

from __future__ import annotations

import heapq
import inspect
import itertools
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from .values import ANY, Env, Pattern, ProcessId, check_value, match, pat, sorted_values

log = logging.getLogger(__name__)

__all__ = [
    "RuntimeConfig", "Runtime", "Process", "receive", "Await", "HistoryEntry", "History",
    "Delivery", "TraceEvent", "ProcessFault", "RuntimeError_", "ClockDisabled", "query_history",
]

MODES = ("det", "conc")
CHANNEL_ORDERS = ("fifo", "arbitrary")


class RuntimeError_(RuntimeError):
    pass


class ClockDisabled(RuntimeError_):
    pass


@dataclass(frozen=True)
class RuntimeConfig:
    clocks: bool = True
    channel_order: str = "fifo"
    mode: str = "det"
    seed: int = 0
    max_steps: int = 1_000_000
    trace: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.channel_order not in CHANNEL_ORDERS:
            raise ValueError(f"channel_order must be one of {CHANNEL_ORDERS}, got {self.channel_order!r}")


# ---------------------------------------------------------------------------
# histories


@dataclass(frozen=True)
class HistoryEntry:
    payload: Any
    peers: frozenset
    logical_time: Optional[int]


def _peer_match(peer: Optional[Pattern], peers: frozenset, env: Env) -> Optional[Env]:
    if peer is None:
        return env
    for p in sorted_values(peers):
        out = match(peer, p, env)
        if out is not None:
            return out
    return None


def query_entries(entries: Iterable, payload, peer=None, time=None, env: Optional[Env] = None) -> List[Env]:
    """One Env per entry whose payload, some peer, and time all match."""
    payload = pat(payload)
    peer = None if peer is None else pat(peer)
    time = None if time is None else pat(time)
    env = {} if env is None else env
    out = []
    for e in entries:
        got = match(payload, e.payload, env)
        if got is None:
            continue
        got = _peer_match(peer, e.peers, got)
        if got is None:
            continue
        if time is not None:
            if e.logical_time is None:
                continue
            got = match(time, e.logical_time, got)
            if got is None:
                continue
        out.append(got)
    return out


class History(Sequence):
    """Append-only record of sent or received messages."""

    def __init__(self):
        self._entries: List[HistoryEntry] = []
        self._lock = threading.Lock()

    def _append(self, entry: HistoryEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def __getitem__(self, i):
        return self._entries[i]

    def __len__(self):
        return len(self._entries)

    def query(self, payload, peer=None, time=None, env: Optional[Env] = None) -> List[Env]:
        with self._lock:
            entries = list(self._entries)
        return query_entries(entries, payload, peer, time, env)

    def has(self, payload, peer=None, time=None, env: Optional[Env] = None) -> bool:
        return bool(self.query(payload, peer, time, env))


def query_history(proc: "Process", which: str, payload, peer=None, time=None, env=None) -> List[Env]:
    if which not in ("sent", "received"):
        raise ValueError("which must be 'sent' or 'received'")
    return getattr(proc, which).query(payload, peer, time, env)


# ---------------------------------------------------------------------------
# process definitions


@dataclass(frozen=True)
class ReceiveClause:
    msg: Pattern
    sender: Optional[Pattern]
    handler: Callable

    def match(self, payload, sender) -> Optional[Env]:
        env = match(self.msg, payload, {})
        if env is None or self.sender is None:
            return env
        return match(self.sender, sender, env)


def receive(msg=ANY, from_=None):
    """Declare a receive handler; bound variables are passed as keyword arguments."""
    msg_p = pat(msg)
    from_p = None if from_ is None else pat(from_)

    def deco(fn):
        fn._receive = (msg_p, from_p)
        return fn

    return deco


@dataclass(frozen=True)
class Await:
    conds: tuple
    timeout: Optional[float] = None

    def __post_init__(self):
        if not self.conds and self.timeout is None:
            raise ValueError("await needs at least one condition or a timeout")
        if self.timeout is not None and self.timeout < 0:
            raise ValueError("await timeout must be non-negative")

    def first_true(self) -> Optional[int]:
        for i, c in enumerate(self.conds):
            if c():
                return i
        return None


@dataclass(frozen=True)
class Delivery:
    payload: Any
    sender: ProcessId
    stamp: Optional[int]
    target: ProcessId


@dataclass(frozen=True)
class TraceEvent:
    pid: ProcessId
    kind: str  # "send" | "recv"
    clock: int
    stamp: Optional[int] = None


@dataclass
class ProcessFault:
    pid: ProcessId
    error: str


class Process:
    """Base class of all processes.  Subclasses override ``setup`` and ``run``."""

    is_checker = False
    _clauses: List[ReceiveClause] = []

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        clauses = list(getattr(super(cls, cls), "_clauses", []))
        seen = {c.handler.__name__ for c in clauses}
        for name, fn in vars(cls).items():
            spec = getattr(fn, "_receive", None)
            if spec is None:
                continue
            if name in seen:
                clauses = [c for c in clauses if c.handler.__name__ != name]
            clauses.append(ReceiveClause(spec[0], spec[1], fn))
        cls._clauses = clauses

    def __init__(self, runtime: "Runtime", pid: ProcessId):
        self.runtime = runtime
        self.id = pid
        self.sent = History()
        self.received = History()
        self._clock = 0
        self._mailbox: deque = deque()
        self._mail_lock = threading.Condition()
        self._is_setup = False
        self.current: Optional[HistoryEntry] = None

    def __repr__(self):
        return f"{type(self).__name__}({self.id})"

    # overridable -----------------------------------------------------------

    def setup(self, *args):
        pass

    def run(self):
        return
        yield

    # primitives ------------------------------------------------------------

    def logical_clock(self) -> int:
        if not self.runtime.config.clocks:
            raise ClockDisabled("logical clocks are disabled in this runtime")
        return self._clock

    def _targets(self, to) -> frozenset:
        if isinstance(to, ProcessId):
            return frozenset([to])
        return frozenset(to)

    def _record_send(self, m, to) -> HistoryEntry:
        check_value(m)
        targets = self._targets(to)
        stamp = None
        if self.runtime.config.clocks:
            self._clock += 1
            stamp = self._clock
            self.runtime._trace(TraceEvent(self.id, "send", stamp))
        entry = HistoryEntry(m, targets, stamp)
        self.sent._append(entry)
        return entry

    def _transmit(self, entry: HistoryEntry) -> None:
        for t in sorted_values(entry.peers):
            self.runtime._transmit(self.id, t, entry.payload, entry.logical_time)

    def send(self, m, to) -> None:
        """Send ``m`` to one process or a set of processes."""
        entry = self._record_send(m, to)
        self._transmit(entry)

    def _notify(self, target: ProcessId, m) -> None:
        # side channel: no clock tick, no history, no faults
        self.runtime._post(self.id, target, m)

    def await_(self, *conds: Callable[[], bool], timeout: Optional[float] = None) -> Await:
        return Await(tuple(conds), timeout)

    def output(self, *parts) -> None:
        text = " ".join(str(p) for p in parts)
        self.runtime.outputs.append((self.id, text))
        log.info("%s: %s", self.id, text)

    def now(self) -> float:
        return self.runtime.now()

    # mailbox -----------------------------------------------------------------

    def _enqueue(self, d: Delivery) -> None:
        with self._mail_lock:
            self._mailbox.append(d)
            self._mail_lock.notify_all()

    def _take_all(self) -> List[Delivery]:
        with self._mail_lock:
            items = list(self._mailbox)
            self._mailbox.clear()
        return items

    def has_mail(self) -> bool:
        with self._mail_lock:
            return bool(self._mailbox)

    def yield_point(self) -> int:
        """Process every delivery queued so far; returns how many were handled."""
        batch = self._take_all()
        for d in batch:
            self._deliver(d)
        return len(batch)

    def _deliver(self, d: Delivery) -> None:
        if self.runtime.config.clocks and d.stamp is not None:
            self._clock = max(self._clock, d.stamp) + 1
            self.runtime._trace(TraceEvent(self.id, "recv", self._clock, d.stamp))
        entry = HistoryEntry(d.payload, frozenset([d.sender]),
                             self._clock if self.runtime.config.clocks else None)
        self.received._append(entry)
        self.runtime._record_delivery(d)
        self.current = entry
        try:
            for clause in self._clauses:
                env = clause.match(d.payload, d.sender)
                if env is not None:
                    clause.handler(self, **env)
        finally:
            self.current = None


# ---------------------------------------------------------------------------
# process driver shared by both engines


class _Driver:
    """Steps one process's ``run`` generator and tracks its await state."""

    def __init__(self, proc: Process):
        self.proc = proc
        self.gen = None
        self.started = False
        self.done = False
        self.waiting: Optional[Await] = None
        self.deadline: Optional[float] = None
        self.token = 0  # invalidates stale deadline events
        self.timed_out = False
        self.resume_value: Any = None

    def begin(self):
        body = self.proc.run()
        if inspect.isgenerator(body):
            self.gen = body
        else:
            self.gen = iter(())
        self.started = True

    def advance(self) -> Any:
        """Resume the body once; returns the yielded command or raises StopIteration."""
        value, self.resume_value = self.resume_value, None
        return self.gen.send(value)

    def close(self):
        if self.gen is not None:
            try:
                self.gen.close()
            except Exception:  # pragma: no cover - best effort on shutdown
                pass


# ---------------------------------------------------------------------------
# runtime


class Runtime:
    """Owns processes, transport, and the scheduler for one run."""

    def __init__(self, config: Optional[RuntimeConfig] = None, faults=None, record_deliveries: bool = False):
        self.config = config or RuntimeConfig()
        self.procs: Dict[ProcessId, Process] = {}
        self._drivers: Dict[ProcessId, _Driver] = {}
        self._counters: Dict[str, itertools.count] = {}
        self.outputs: List[tuple] = []
        self.faults: List[ProcessFault] = []
        self.undeliverable: List[tuple] = []
        self.dropped_at_exit = 0
        self.trace: List[TraceEvent] = []
        self.deliveries: Optional[List[Delivery]] = [] if record_deliveries else None
        self._shutdown = False
        self._lock = threading.RLock()
        if self.config.mode == "det":
            self._engine = _DetEngine(self)
        else:
            self._engine = _ConcEngine(self)
        self.transport: Callable = self._base_transport
        self.fault_layer = None
        if faults is not None:
            from .faults import wrap
            self.fault_layer = wrap(self._base_transport, faults, schedule=self.call_later,
                                    exempt=self._is_exempt)
            self.transport = self.fault_layer

    # lifecycle -----------------------------------------------------------------

    def spawn(self, cls, args: Optional[Sequence] = None, num: int = 1) -> frozenset:
        if self._shutdown:
            raise RuntimeError_("runtime is shut down")
        if not (isinstance(cls, type) and issubclass(cls, Process)):
            raise RuntimeError_(f"not a process definition: {cls!r}")
        if not isinstance(num, int) or num < 1:
            raise ValueError("process count must be a positive integer")
        kind = getattr(cls, "kind", None) or cls.__name__
        counter = self._counters.setdefault(kind, itertools.count(1))
        pids = []
        for _ in range(num):
            pid = ProcessId(kind, next(counter))
            proc = cls(self, pid)
            self.procs[pid] = proc
            self._drivers[pid] = _Driver(proc)
            pids.append(pid)
        if args is not None:
            self.setup(pids, args)
        return frozenset(pids)

    def setup(self, pids: Iterable[ProcessId], args: Sequence) -> None:
        for pid in sorted_values(pids):
            proc = self.procs[pid]
            proc.setup(*args)
            proc._is_setup = True

    def start(self, pids: Iterable[ProcessId]) -> None:
        for pid in sorted_values(pids):
            drv = self._drivers[pid]
            if drv.started:
                raise RuntimeError_(f"{pid} already started")
            drv.begin()
            self._engine.started(drv)

    def run(self, until: Optional[Callable[[], bool]] = None, timeout: Optional[float] = None) -> None:
        """Drive processes until ``until()`` holds, nothing can happen, or ``timeout``."""
        self._engine.run(until or (lambda: False), timeout)

    def stop(self) -> None:
        self._shutdown = True
        self._engine.stop()

    def done(self, pid: ProcessId) -> bool:
        return self._drivers[pid].done

    def process(self, pid: ProcessId) -> Process:
        return self.procs[pid]

    # time ------------------------------------------------------------------------

    def now(self) -> float:
        return self._engine.now()

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self._engine.call_later(delay, fn)

    # transport -----------------------------------------------------------------

    def _is_exempt(self, target: ProcessId) -> bool:
        proc = self.procs.get(target)
        return proc is not None and proc.is_checker

    def _transmit(self, sender, target, payload, stamp) -> None:
        if target not in self.procs:
            self.undeliverable.append((sender, target, payload))
            log.warning("dropping message to unknown process %s", target)
            return
        self.transport(sender, target, payload, stamp)

    def _base_transport(self, sender, target, payload, stamp) -> None:
        self._engine.put(Delivery(payload, sender, stamp, target))

    def _post(self, sender, target, payload, stamp=None) -> None:
        if target not in self.procs:
            self.undeliverable.append((sender, target, payload))
            return
        self._engine.put_local(Delivery(payload, sender, stamp, target))

    def post_local(self, target: ProcessId, payload) -> None:
        """Place ``payload`` straight into ``target``'s mailbox (timers)."""
        self._engine.put_local(Delivery(payload, target, None, target))

    # bookkeeping -------------------------------------------------------------------

    def _trace(self, ev: TraceEvent) -> None:
        if self.config.trace:
            with self._lock:
                self.trace.append(ev)

    def _record_delivery(self, d: Delivery) -> None:
        if self.deliveries is not None:
            with self._lock:
                self.deliveries.append(d)

    def _fault(self, pid: ProcessId, exc: BaseException) -> None:
        with self._lock:
            self.faults.append(ProcessFault(pid, f"{type(exc).__name__}: {exc}"))
        log.error("process %s failed: %s", pid, exc)


def _step_command(rt: Runtime, drv: _Driver, cmd) -> None:
    """Interpret a command yielded by a process body."""
    if cmd is None:
        drv.proc.yield_point()
        return
    if isinstance(cmd, Await):
        drv.waiting = cmd
        drv.timed_out = False
        drv.token += 1
        drv.deadline = None if cmd.timeout is None else rt.now() + cmd.timeout
        return
    raise RuntimeError_(f"{drv.proc.id} yielded unsupported command {cmd!r}")


# ---------------------------------------------------------------------------
# deterministic engine


class _DetEngine:
    def __init__(self, rt: Runtime):
        self.rt = rt
        self.rng = random.Random(rt.config.seed)
        self._now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self.ready: Dict[ProcessId, _Driver] = {}
        self.channels: Dict[tuple, deque] = {}
        self.steps = 0

    def now(self):
        return self._now

    def call_later(self, delay, fn):
        heapq.heappush(self._heap, (self._now + max(0.0, delay), next(self._seq), fn))

    def started(self, drv):
        self.ready[drv.proc.id] = drv

    def stop(self):
        for drv in self.rt._drivers.values():
            drv.close()
        self.ready.clear()
        self.channels.clear()
        self._heap.clear()

    def put(self, d: Delivery):
        self.channels.setdefault((d.sender, d.target), deque()).append(d)

    def put_local(self, d: Delivery):
        self._land(d)

    def _land(self, d: Delivery):
        drv = self.rt._drivers[d.target]
        if drv.done:
            self.rt.dropped_at_exit += 1
            return
        drv.proc._enqueue(d)
        if drv.started and drv.waiting is not None:
            self.ready[d.target] = drv

    def _actions(self):
        acts = [("step", pid) for pid in sorted(self.ready) if not self.rt.procs[pid].is_checker]
        for key in sorted(self.channels, key=lambda k: (k[0], k[1])):
            q = self.channels[key]
            if not q:
                continue
            if self.rt.config.channel_order == "fifo":
                acts.append(("deliver", key, 0))
            else:
                acts.extend(("deliver", key, i) for i in range(len(q)))
        return acts

    def _do(self, act):
        if act[0] == "step":
            self._step(self.ready.pop(act[1]))
        else:
            q = self.channels[act[1]]
            d = q[act[2]]
            del q[act[2]]
            if not q:
                del self.channels[act[1]]
            self._land(d)

    def _step(self, drv: _Driver):
        rt = self.rt
        try:
            if drv.waiting is not None:
                drv.proc.yield_point()
                idx = drv.waiting.first_true()
                if idx is None and not drv.timed_out:
                    return  # still blocked; woken by mail or deadline
                drv.resume_value = idx
                drv.waiting = None
                drv.deadline = None
            cmd = drv.advance()
            _step_command(rt, drv, cmd)
            if drv.waiting is not None and drv.deadline is not None:
                token = drv.token
                self.call_later(drv.waiting.timeout, lambda: self._expire(drv, token))
            self.ready[drv.proc.id] = drv
        except StopIteration:
            drv.done = True
        except Exception as exc:
            drv.done = True
            rt._fault(drv.proc.id, exc)

    def _expire(self, drv, token):
        if drv.done or drv.waiting is None or drv.token != token:
            return
        drv.timed_out = True
        self.ready[drv.proc.id] = drv

    def run(self, until, timeout):
        limit = None if timeout is None else self._now + timeout
        max_steps = self.rt.config.max_steps
        while not until():
            if self.steps >= max_steps:
                raise RuntimeError_(f"step limit {max_steps} exceeded")
            # checkers run as soon as they have something to do and never draw
            # from the scheduler's stream, so observing a run does not change it
            eager = [pid for pid in self.ready if self.rt.procs[pid].is_checker]
            if eager:
                self.steps += 1
                self._step(self.ready.pop(min(eager)))
                continue
            acts = self._actions()
            if acts:
                self.steps += 1
                self._do(acts[self.rng.randrange(len(acts))] if len(acts) > 1 else acts[0])
                continue
            if not self._heap:
                return
            when, _, fn = self._heap[0]
            if limit is not None and when > limit:
                self._now = limit
                return
            heapq.heappop(self._heap)
            self._now = max(self._now, when)
            fn()


# ---------------------------------------------------------------------------
# concurrent engine


class _ConcEngine:
    def __init__(self, rt: Runtime):
        self.rt = rt
        self.t0 = time.monotonic()
        self.threads: Dict[ProcessId, threading.Thread] = {}
        self.timers: List[threading.Timer] = []
        self.stopping = threading.Event()
        self.changed = threading.Condition()
        self._tlock = threading.Lock()

    def now(self):
        return time.monotonic() - self.t0

    def call_later(self, delay, fn):
        if self.stopping.is_set():
            return

        def fire():
            if not self.stopping.is_set():
                fn()

        t = threading.Timer(max(0.0, delay), fire)
        t.daemon = True
        with self._tlock:
            self.timers.append(t)
        t.start()

    def put(self, d: Delivery):
        self._land(d)

    put_local = put

    def _land(self, d: Delivery):
        drv = self.rt._drivers[d.target]
        if drv.done:
            self.rt.dropped_at_exit += 1
            return
        drv.proc._enqueue(d)

    def started(self, drv):
        th = threading.Thread(target=self._main, args=(drv,), name=str(drv.proc.id), daemon=True)
        self.threads[drv.proc.id] = th
        th.start()

    def _notify_change(self):
        with self.changed:
            self.changed.notify_all()

    def _main(self, drv: _Driver):
        rt, proc = self.rt, drv.proc
        try:
            while not self.stopping.is_set():
                cmd = drv.advance()
                _step_command(rt, drv, cmd)
                if drv.waiting is None:
                    continue
                while not self.stopping.is_set():
                    proc.yield_point()
                    idx = drv.waiting.first_true()
                    if idx is not None:
                        drv.resume_value = idx
                        break
                    if drv.deadline is not None and self.now() >= drv.deadline:
                        drv.resume_value = None
                        break
                    with proc._mail_lock:
                        if not proc._mailbox and not self.stopping.is_set():
                            wait = None if drv.deadline is None else max(0.0, drv.deadline - self.now())
                            proc._mail_lock.wait(wait)
                drv.waiting = None
                drv.deadline = None
        except StopIteration:
            pass
        except Exception as exc:
            rt._fault(proc.id, exc)
        finally:
            drv.done = True
            drv.close()
            self._notify_change()

    def stop(self):
        self.stopping.set()
        with self._tlock:
            timers = list(self.timers)
        for t in timers:
            t.cancel()
        for drv in self.rt._drivers.values():
            with drv.proc._mail_lock:
                drv.proc._mail_lock.notify_all()
        for th in self.threads.values():
            if th is not threading.current_thread():
                th.join(timeout=2.0)

    def run(self, until, timeout):
        deadline = None if timeout is None else time.monotonic() + timeout
        with self.changed:
            while not until():
                if all(d.done for d in self.rt._drivers.values() if d.started):
                    return
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return
                # processes signal on exit; poll too since ``until`` may depend on any state
                self.changed.wait(0.002 if remaining is None else min(0.002, remaining))
