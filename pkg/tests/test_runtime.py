import time

import pytest
from hypothesis import given, settings, strategies as st

from distcheck.runtime import (
    Await, ClockDisabled, Delivery, Process, Runtime, RuntimeConfig, RuntimeError_, receive,
)
from distcheck.values import ANY, Atom, ProcessId, bound, match, pat, var

QUESTION, REPLY, OUTCOME = Atom("question"), Atom("reply"), Atom("outcome")
Y = Atom("Y")


class Quiet(Process):
    kind = "Q"


class Sink(Process):
    kind = "S"

    def run(self):
        yield self.await_(lambda: False, timeout=1.0)


class Recorder(Process):
    kind = "Rec"

    def setup(self):
        self.calls = []

    @receive((REPLY, var("c"), var("t")), from_=var("s"))
    def on_reply(self, c, t, s):
        self.calls.append(("reply", c, t, s, self._clock))

    @receive((REPLY, Y, ANY))
    def on_yes(self):
        self.calls.append(("yes", self._clock))


def make(mode="det", **kw):
    return Runtime(RuntimeConfig(mode=mode, **kw), record_deliveries=True)


class TestSpawn:
    def test_ten_distinct(self):
        rt = make()
        rs = rt.spawn(Quiet, num=10)
        assert len(rs) == 10 and all(isinstance(r, ProcessId) for r in rs)

    def test_default_singleton(self):
        assert len(make().spawn(Quiet)) == 1

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            make().spawn(Quiet, num=0)

    def test_unknown_definition(self):
        with pytest.raises(RuntimeError_):
            make().spawn(object)

    def test_duplicate_start(self):
        rt = make()
        ps = rt.spawn(Quiet)
        rt.start(ps)
        with pytest.raises(RuntimeError_):
            rt.start(ps)

    def test_per_kind_numbering(self):
        rt = make()
        assert rt.spawn(Quiet) == {ProcessId("Q", 1)}
        assert rt.spawn(Recorder, args=[]) == {ProcessId("Rec", 1)}
        assert rt.spawn(Quiet) == {ProcessId("Q", 2)}

    def test_spawn_after_stop(self):
        rt = make()
        rt.stop()
        with pytest.raises(RuntimeError_):
            rt.spawn(Quiet)


class TestSend:
    def test_multicast_one_entry_many_deliveries(self):
        rt = make()
        rs = rt.spawn(Sink, num=10)
        (p,) = rt.spawn(Quiet)
        proc = rt.process(p)
        proc.send((QUESTION, "Will you?", 0), to=rs)
        assert len(proc.sent) == 1
        assert proc.sent[0].peers == rs
        rt.start(rs)
        rt.run()
        assert len([d for d in rt.deliveries if d.sender == p]) == 10
        assert {d.stamp for d in rt.deliveries} == {1}

    def test_empty_target_set(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        proc.send((OUTCOME, 1), to=frozenset())
        assert proc.logical_clock() == 1
        assert proc.sent[0].peers == frozenset()
        rt.run()
        assert rt.deliveries == []

    def test_first_stamp_is_one(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        proc.send(1, to=proc.id)
        assert proc.sent[0].logical_time == 1

    def test_unknown_target_reported_and_dropped(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        ghost = ProcessId("Ghost", 1)
        proc.send(1, to=ghost)
        assert rt.undeliverable == [(proc.id, ghost, 1)]

    def test_rejects_non_value(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        with pytest.raises(TypeError):
            proc.send(1.5, to=proc.id)


class TestClock:
    def test_fresh_zero(self):
        rt = make()
        assert rt.process(next(iter(rt.spawn(Quiet)))).logical_clock() == 0

    def test_send_then_receive(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        proc.send(1, to=frozenset())
        proc._enqueue(Delivery(2, ProcessId("X", 1), 7, proc.id))
        proc.yield_point()
        assert proc.logical_clock() == 8

    def test_disabled(self):
        rt = make(clocks=False)
        proc = rt.process(next(iter(rt.spawn(Quiet))))
        with pytest.raises(ClockDisabled):
            proc.logical_clock()
        proc.send(1, to=frozenset())
        assert proc.sent[0].logical_time is None


class TestYieldPoint:
    def test_max_rule_and_handler(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Recorder, args=[]))))
        proc._clock = 2
        r = ProcessId("R", 1)
        proc._enqueue(Delivery((REPLY, Y, 3), r, 3, proc.id))
        assert proc.yield_point() == 1
        assert proc.logical_clock() == 4
        assert proc.received[0].payload == (REPLY, Y, 3)
        assert proc.received[0].peers == {r}
        assert proc.calls == [("reply", Y, 3, r, 4), ("yes", 4)]

    def test_empty_queue(self):
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Recorder, args=[]))))
        assert proc.yield_point() == 0
        assert proc.calls == [] and len(proc.received) == 0

    def test_three_message_script_against_reference(self):
        script = [((REPLY, Y, 1), ProcessId("R", 1), 5),
                  ((REPLY, Atom("N"), 1), ProcessId("R", 2), 2),
                  ((OUTCOME, 3), ProcessId("P", 1), 9)]
        rt = make()
        proc = rt.process(next(iter(rt.spawn(Recorder, args=[]))))
        for payload, sender, stamp in script:
            proc._enqueue(Delivery(payload, sender, stamp, proc.id))
        proc.yield_point()
        assert proc.calls == reference_interpreter(script, Recorder._clauses)
        assert [e.logical_time for e in proc.received] == [6, 7, 10]


def reference_interpreter(script, clauses, clock=0):
    """Step a script one message at a time: tick the clock, then run every matching clause."""
    calls = []
    for payload, sender, stamp in script:
        clock = max(clock, stamp) + 1
        for c in clauses:
            env = match(c.msg, payload, {})
            if env is None:
                continue
            if c.sender is not None:
                env = match(c.sender, sender, env)
                if env is None:
                    continue
            if c.handler.__name__ == "on_reply":
                calls.append(("reply", env["c"], env["t"], env["s"], clock))
            else:
                calls.append(("yes", clock))
    return calls


class Waiter(Process):
    kind = "W"

    def setup(self, conds, timeout):
        self.conds = conds
        self.timeout = timeout
        self.fired = "unset"
        self.at = None

    def run(self):
        self.fired = yield self.await_(*self.conds, timeout=self.timeout)
        self.at = self.now()


class TestAwait:
    def test_timeout_branch_det(self):
        rt = make()
        (w,) = rt.spawn(Waiter, args=[[lambda: False], 0.01])
        rt.start([w])
        rt.run()
        proc = rt.process(w)
        assert proc.fired is None
        assert proc.at == pytest.approx(0.01)

    def test_timeout_branch_conc(self):
        rt = make("conc")
        (w,) = rt.spawn(Waiter, args=[[lambda: False], 0.01])
        start = time.monotonic()
        rt.start([w])
        rt.run(until=lambda: rt.done(w), timeout=5)
        rt.stop()
        proc = rt.process(w)
        assert proc.fired is None
        assert 0.01 <= proc.at < 0.5
        assert time.monotonic() - start < 2

    def test_first_listed_wins(self):
        rt = make()
        (w,) = rt.spawn(Waiter, args=[[lambda: True, lambda: True], None])
        rt.start([w])
        rt.run()
        assert rt.process(w).fired == 0

    def test_second_when_first_false(self):
        rt = make()
        (w,) = rt.spawn(Waiter, args=[[lambda: False, lambda: True], 1.0])
        rt.start([w])
        rt.run()
        assert rt.process(w).fired == 1

    def test_needs_condition_or_timeout(self):
        with pytest.raises(ValueError):
            Await((), None)


class Poller(Process):
    kind = "P"

    def setup(self, rs):
        self.rs = frozenset(rs)
        self.done_waiting = False

    def run(self):
        t = self.logical_clock()
        self.send((QUESTION, "q", t), to=self.rs)
        yield self.await_(lambda: all(self.received.has((REPLY, ANY, bound("t")), peer=r, env={"t": t})
                                      for r in self.rs))
        self.done_waiting = True
        self.t = t


class Pollee(Process):
    kind = "R"

    def setup(self, answer):
        self.answer = answer

    @receive((QUESTION, ANY, var("t")), from_=var("p"))
    def on_question(self, t, p):
        self.send((REPLY, self.answer, t), to=p)

    def run(self):
        yield self.await_(lambda: False, timeout=1.0)


@pytest.mark.parametrize("mode", ["det", "conc"])
def test_await_all_replies(mode):
    rt = make(mode)
    rs = rt.spawn(Pollee, args=[Y], num=3)
    (n,) = rt.spawn(Pollee, args=[Atom("N")])
    rs = rs | {n}
    (p,) = rt.spawn(Poller, args=[rs])
    rt.start(rs)
    rt.start([p])
    rt.run(until=lambda: rt.done(p), timeout=5)
    rt.stop()
    proc = rt.process(p)
    assert proc.done_waiting
    yes = proc.received.query((REPLY, Y, bound("t")), peer=var("r"), env={"t": proc.t})
    assert sorted(e["r"] for e in yes) == sorted(rs - {n})
    assert proc.sent.query((QUESTION, ANY, var("t"))) == [{"t": 0}]


def test_query_empty_history():
    rt = make()
    proc = rt.process(next(iter(rt.spawn(Quiet))))
    assert proc.received.query(pat((REPLY, ANY, ANY))) == []
    assert not proc.sent.has(ANY)


def test_sent_peer_pattern_matches_any_target():
    rt = make()
    rs = rt.spawn(Quiet, num=3)
    proc = rt.process(next(iter(rt.spawn(Quiet))))
    proc.send(1, to=rs)
    for r in rs:
        assert proc.sent.has(1, peer=r)
    assert not proc.sent.has(1, peer=proc.id)


class Crasher(Process):
    kind = "C"

    @receive(ANY)
    def boom(self):
        raise ZeroDivisionError("handler failed")

    def run(self):
        yield self.await_(lambda: False)


def test_handler_exception_kills_only_that_process():
    rt = make()
    (c,) = rt.spawn(Crasher)
    (q,) = rt.spawn(Pollee, args=[Y])
    (p,) = rt.spawn(Poller, args=[{c, q}])
    rt.start([c, q, p])
    rt.run()
    assert [f.pid for f in rt.faults] == [c]
    assert rt.done(c)
    assert rt.process(q).sent.has((REPLY, Y, 0))


def lamport_ok(trace):
    last = {}
    for ev in trace:
        if ev.pid in last and ev.clock <= last[ev.pid]:
            return False
        last[ev.pid] = ev.clock
        if ev.kind == "recv" and not ev.stamp < ev.clock:
            return False
    return True


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["fifo", "arbitrary"]))
def test_lamport_properties(seed, order):
    rt = Runtime(RuntimeConfig(seed=seed, channel_order=order, trace=True))
    rs = rt.spawn(Pollee, args=[Y], num=4)
    (p,) = rt.spawn(Poller, args=[rs])
    rt.start(rs | {p})
    rt.run()
    assert rt.process(p).done_waiting
    assert lamport_ok(rt.trace)
    assert len([e for e in rt.trace if e.kind == "recv"]) == 8


def run_script(seed):
    rt = Runtime(RuntimeConfig(seed=seed, channel_order="arbitrary"), record_deliveries=True)
    rs = rt.spawn(Pollee, args=[Y], num=5)
    (p,) = rt.spawn(Poller, args=[rs])
    rt.start(rs | {p})
    rt.run()
    return [(d.sender, d.target, d.payload, d.stamp) for d in rt.deliveries]


def test_deterministic_replay():
    assert run_script(11) == run_script(11)
    assert any(run_script(11) != run_script(s) for s in range(12, 20))


def test_step_limit():
    class Spinner(Process):
        def run(self):
            while True:
                yield

    rt = Runtime(RuntimeConfig(max_steps=100))
    rt.start(rt.spawn(Spinner))
    with pytest.raises(RuntimeError_):
        rt.run()
