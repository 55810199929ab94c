import random
import time
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from distcheck.faults import (
    DROP, Deliver, Drop, FaultConfig, FaultScope, decide, parse_delay, register_corruption, wrap,
)
from distcheck.observe import Direction
from distcheck.polling import PollingScenario, Pollee, Poller, run_once
from distcheck.runtime import Process, Runtime, RuntimeConfig
from distcheck.values import Atom, ProcessId

T = ProcessId("R", 1)
M = (Atom("outcome"), 4)


class TestDecide:
    def test_identity(self):
        rng = random.Random(0)
        for m in (M, 1, "x"):
            assert decide(FaultConfig(), m, T, rng) == [Deliver(0, m, 1)]

    def test_forced_dup(self):
        assert decide(FaultConfig(dup_prob=1), M, T, random.Random(0)) == [Deliver(0, M, 2)]

    def test_forced_loss(self):
        assert decide(FaultConfig(loss_prob=1, dup_prob=1), M, T, random.Random(0)) == [DROP]

    def test_fixed_delay(self):
        assert decide(FaultConfig(delay=0.2), M, T, random.Random(0)) == [Deliver(0.2, M, 1)]

    def test_uniform_delay_in_bounds(self):
        rng = random.Random(1)
        for _ in range(200):
            (act,) = decide(FaultConfig(delay="0.01:0.05"), M, T, rng)
            assert 0.01 <= act.after_secs <= 0.05

    def test_corruption(self):
        cfg = FaultConfig(corrupt="flip-outcome", corrupt_prob=1)
        assert decide(cfg, M, T, random.Random(0)) == [Deliver(0, (Atom("outcome"), 5), 1)]
        # transformers leave other messages alone
        assert decide(cfg, 7, T, random.Random(0)) == [Deliver(0, 7, 1)]

    def test_identity_draws_nothing(self):
        rng = random.Random(3)
        state = rng.getstate()
        decide(FaultConfig(), M, T, rng)
        assert rng.getstate() == state

    def test_fixed_draw_order(self):
        # loss, dup, then per copy: delay, corruption
        cfg = FaultConfig(loss_prob=0.5, dup_prob=0.5, delay="0:1", corrupt="flip-outcome", corrupt_prob=0.5)
        for seed in range(50):
            ref = random.Random(seed)
            if ref.random() < 0.5:
                expected = [DROP]
            else:
                copies = 2 if ref.random() < 0.5 else 1
                out = []
                for _ in range(copies):
                    after = ref.uniform(0, 1)
                    payload = (Atom("outcome"), 5) if ref.random() < 0.5 else M
                    out.append(Deliver(after, payload, 1))
                expected = out
            assert decide(cfg, M, T, random.Random(seed)) == expected

    @settings(max_examples=50)
    @given(st.integers(0, 2**63), st.floats(0, 1), st.floats(0, 1))
    def test_seed_determinism(self, seed, loss, dup):
        cfg = FaultConfig(loss_prob=loss, dup_prob=dup, delay="0:0.1", seed=seed)
        a, b = random.Random(seed), random.Random(seed)
        assert [decide(cfg, i, T, a) for i in range(30)] == [decide(cfg, i, T, b) for i in range(30)]

    def test_drop_rate_band(self):
        rng = random.Random(11)
        cfg = FaultConfig(loss_prob=0.01)
        drops = sum(decide(cfg, M, T, rng) == [DROP] for _ in range(10_000))
        assert 50 <= drops <= 150

    def test_dup_rate_band(self):
        rng = random.Random(12)
        cfg = FaultConfig(dup_prob=0.05)
        extra = sum(a.times - 1 for _ in range(10_000) for a in decide(cfg, M, T, rng))
        assert 400 <= extra <= 600


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"loss_prob": 1.5}, {"dup_prob": -0.1}, {"corrupt_prob": 2}, {"reorder": -1},
        {"delay": "0.5:0.1"}, {"delay": -1}, {"corrupt": "nope"}, {"corrupt_prob": 0.5},
        {"holdback_secs": 0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            FaultConfig(**kw)

    def test_parse_delay(self):
        assert parse_delay(None) is None
        assert parse_delay("none") is None
        assert parse_delay(0.1) == (0.1, 0.1)
        assert parse_delay("0.01:0.05") == (0.01, 0.05)
        assert parse_delay([0, 1]) == (0.0, 1.0)

    def test_deliver_times_positive(self):
        with pytest.raises(ValueError):
            Deliver(0, M, 0)
        with pytest.raises(ValueError):
            Deliver(-1, M, 1)

    def test_scope(self):
        scope = FaultScope(kinds=frozenset({"R"}), tags=frozenset({"reply"}))
        assert scope.applies(ProcessId("R", 1), (Atom("reply"), Atom("Y"), 0))
        assert not scope.applies(ProcessId("P", 1), (Atom("reply"), Atom("Y"), 0))
        assert not scope.applies(ProcessId("R", 1), (Atom("question"), "", 0))
        assert not scope.applies(ProcessId("R", 1), 5)

    def test_registered_corruption(self):
        register_corruption("negate", lambda m: -m if isinstance(m, int) else m)
        cfg = FaultConfig(corrupt="negate", corrupt_prob=1)
        assert decide(cfg, 3, T, random.Random(0)) == [Deliver(0, -3, 1)]

    def test_is_identity(self):
        assert FaultConfig().is_identity
        assert not FaultConfig(reorder=1).is_identity


class TestTransport:
    def test_scoped_faults_pass_others_through(self):
        got = []
        t = wrap(lambda *a: got.append(a), FaultConfig(loss_prob=1, scope=FaultScope(kinds=frozenset({"R"}))))
        t(ProcessId("P", 1), T, 1, 1)
        t(ProcessId("R", 2), T, 2, 1)
        assert [a[2] for a in got] == [1]
        assert t.summary()["dropped"] == 1

    def test_exempt_targets_untouched(self):
        got = []
        c = ProcessId("Checker", 1)
        t = wrap(lambda *a: got.append(a), FaultConfig(loss_prob=1), exempt=lambda target: target == c)
        t(T, c, 1, 1)
        t(T, ProcessId("P", 1), 2, 1)
        assert got == [(T, c, 1, 1)]
        assert t.actions and all(a[1] != c for a in t.actions)

    def test_holdback_flush_when_nothing_follows(self):
        got, pending = [], []
        t = wrap(lambda *a: got.append(a[2]), FaultConfig(reorder=1),
                 schedule=lambda after, fn: pending.append(fn))
        t(ProcessId("P", 1), T, "A", 1)
        assert got == []
        for fn in pending:
            fn()
        assert got == ["A"]
        assert t.summary()["flushed"] == 1


class Scripted(Process):
    kind = "P"

    def setup(self, target, msgs):
        self.target, self.msgs = target, msgs

    def run(self):
        for m in self.msgs:
            self.send(m, to=self.target)
        yield


class Sink(Process):
    kind = "R"

    def run(self):
        yield self.await_(lambda: False, timeout=1.0)


def scripted_run(msgs, faults=None, mode="det"):
    rt = Runtime(RuntimeConfig(seed=0, mode=mode), faults=faults, record_deliveries=True)
    (sink,) = rt.spawn(Sink)
    (p,) = rt.spawn(Scripted, args=[sink, msgs])
    rt.start([sink, p])
    rt.run(timeout=2.0)
    rt.stop()
    return [d.payload for d in rt.deliveries if d.target == sink]


def test_holdback_reverses_two_messages():
    assert scripted_run(["A", "B"]) == ["A", "B"]
    assert scripted_run(["A", "B"], FaultConfig(reorder=1)) == ["B", "A"]


def test_holdback_two():
    assert scripted_run(["A", "B", "C", "D"], FaultConfig(reorder=2)) == ["B", "C", "A", "D"]


def test_send_does_not_block_on_delay():
    class Timed(Process):
        kind = "P"

        def setup(self, target):
            self.target = target
            self.elapsed = None

        def run(self):
            t0 = time.perf_counter()
            for i in range(5):
                self.send(i, to=self.target)
            self.elapsed = time.perf_counter() - t0
            yield

    rt = Runtime(RuntimeConfig(mode="conc"), faults=FaultConfig(delay=0.5), record_deliveries=True)
    (sink,) = rt.spawn(Sink)
    (p,) = rt.spawn(Timed, args=[sink])
    rt.start([sink, p])
    rt.run(until=lambda: rt.process(p).elapsed is not None, timeout=2.0)
    rt.stop()
    # five sends with a half-second delay each still return at once
    assert rt.process(p).elapsed < 0.1


def test_envelopes_never_faulted():
    seen_outcome = False
    for seed in range(10):
        faults = FaultConfig(loss_prob=0.05, dup_prob=0.5, corrupt="flip-outcome", corrupt_prob=1.0, seed=seed)
        res = run_once(PollingScenario(seed=seed, faults=faults, timeout_total=1.0))
        log = res.log
        for r in res.pollees:
            asked = [x for x in log if x.direction is Direction.RCVD and x.reporter == r
                     and x.payload[0] == Atom("question")]
            answered = [x for x in log if x.direction is Direction.SENT and x.reporter == r]
            # one reply per delivered question copy, and every report arrived
            assert len(asked) == len(answered)
        sent_outcomes = [x.payload for x in log if x.direction is Direction.SENT and x.payload[0] == Atom("outcome")]
        if sent_outcomes:
            seen_outcome = True
            n = len(res.yes)
            # the report carries the payload as sent; the receipts carry the corrupted copy
            assert sent_outcomes == [(Atom("outcome"), n)]
            got = {x.payload for x in log if x.direction is Direction.RCVD and x.payload[0] == Atom("outcome")}
            assert got == {(Atom("outcome"), n + 1)}
    assert seen_outcome


def test_identity_wrap_matches_unwrapped():
    for seed in range(10):
        runs = []
        for faults in (None, FaultConfig()):
            rt = Runtime(RuntimeConfig(seed=seed, channel_order="arbitrary"), faults=faults, record_deliveries=True)
            (p,) = rt.spawn(Poller)
            rs = rt.spawn(Pollee, num=10)
            rt.setup([p], [rs, "Will you?"])
            rt.setup(rs, [p, "random", seed])
            rt.start(rs | {p})
            rt.run()
            runs.append([(d.sender, d.target, d.payload, d.stamp) for d in rt.deliveries])
        assert runs[0] == runs[1]


class Mute(Pollee):
    # a pollee that has stopped: it never sends anything
    def send(self, m, to):
        pass


def delivered_to_others(crashed_cls, faults, seed):
    rt = Runtime(RuntimeConfig(seed=seed), faults=faults, record_deliveries=True)
    (p,) = rt.spawn(Poller)
    rs = sorted(rt.spawn(Pollee, num=3))
    (dead,) = rt.spawn(crashed_cls)
    everyone = frozenset(rs) | {dead}
    rt.setup([p], [everyone, "Will you?"])
    rt.setup(everyone, [p, "Y", seed])
    rt.start(everyone | {p})
    rt.run(timeout=5.0)
    return Counter((d.sender, d.target, d.payload) for d in rt.deliveries if d.target != dead), dead


@pytest.mark.parametrize("seed", range(5))
def test_crash_equivalence(seed):
    dead = ProcessId("R", 4)
    lossy, d1 = delivered_to_others(Pollee, FaultConfig(loss_prob=1, scope=FaultScope(senders=frozenset({dead}))), seed)
    stopped, d2 = delivered_to_others(Mute, None, seed)
    assert d1 == d2 == dead
    assert lossy == stopped
    # the poller never hears from the silent pollee
    assert not any(s == dead for s, _, _ in lossy)
