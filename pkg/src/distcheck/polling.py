"""The polling workload, its checker, and run orchestration.

A poller sends ``(question, q, t)`` to every pollee, waits until each one has
replied, and sends ``(outcome, n)`` where ``n`` counts the ``Y`` replies.  The
checked variant instruments both process classes and adds a
:class:`PollingChecker` that watches for the end of polling, judges the safety
properties, and runs the liveness timers.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .faults import CORRUPTIONS, FaultConfig, FaultScope, parse_delay
from .observe import (
    FULL, NO_TIME, Checker, ObservationLog, ObservationRecord, instrument, read_log, write_log,
)
from .props import (
    OUTCOME, QUESTION, REPLY, SENT, CheckResult, LivenessMonitor, LivenessSpec, TimerMsg, Violation,
    check_S1, check_S2, detect_end, format_witness, polling_liveness, replay_liveness,
)
from .runtime import Delivery, Process, Runtime, RuntimeConfig, receive
from .values import ANY, Atom, ProcessId, bound, decode, encode, sorted_values, var

log = logging.getLogger(__name__)

__all__ = [
    "Poller", "Pollee", "PollingChecker", "PollingScenario", "ScenarioError", "RunResult", "RunReport",
    "run_polling", "run_once", "load_scenario", "replay", "reply_choice", "EXIT_OK", "EXIT_VIOLATION",
    "EXIT_INVALID", "EXIT_INTERNAL",
]

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INVALID = 2
EXIT_INTERNAL = 3

YES = Atom("Y")
NO = Atom("N")
TIMEOUT = Atom("timeout")


def reply_choice(policy: str, seed: int, pid: ProcessId) -> Atom:
    if policy == "Y":
        return YES
    if policy == "N":
        return NO
    return YES if random.Random(f"{seed}:{pid}").random() < 0.5 else NO


# ---------------------------------------------------------------------------
# the algorithm


class Poller(Process):
    kind = "P"

    def setup(self, pollees, question):
        self.pollees = frozenset(pollees)
        self.question = question

    def run(self):
        t = self.logical_clock() if self.runtime.config.clocks else 0
        self.send((QUESTION, self.question, t), to=self.pollees)
        yield self.await_(lambda: all(
            self.received.has((REPLY, ANY, bound("t")), peer=r, env={"t": t}) for r in self.pollees))
        yes = frozenset(e["r"] for e in self.received.query((REPLY, YES, bound("t")), peer=var("r"),
                                                            env={"t": t}))
        self.output("-- received Y from:", encode(yes))
        self.send((OUTCOME, len(yes)), to=self.pollees)


class Pollee(Process):
    kind = "R"

    def setup(self, poller, policy="random", seed=0):
        self.poller = poller
        self.choice = reply_choice(policy, seed, self.id)
        self.outcome = None

    def run(self):
        yield self.await_(lambda: self.outcome is not None)
        self.output("== received outcome:", self.outcome)

    @receive((QUESTION, ANY, var("t")), from_=var("p"))
    def on_question(self, t, p):
        self.send((REPLY, self.choice, t), to=p)

    @receive((OUTCOME, var("o")))
    def on_outcome(self, o):
        if self.outcome is None:
            self.outcome = o


class PollingChecker(Checker):
    kind = "Checker"

    def setup(self, poller, pollees, liveness: Optional[LivenessSpec] = None,
              checks=("s1", "s2"), strict=False):
        self.poller = poller
        self.pollees = frozenset(pollees)
        self.checks = frozenset(checks)
        self.strict = strict
        self.monitor = None
        if liveness is not None and (liveness.entries or liveness.total_bound is not None):
            self.monitor = LivenessMonitor(liveness, {"p": poller, "rs": self.pollees},
                                           self._start_timer, self.now)
        self.total_expired = False
        self.end_detected = False
        self.finished = False
        self.s1: Optional[CheckResult] = None
        self.s2: Optional[CheckResult] = None
        self.unknown_messages = 0
        self._sent_keys = set()
        self._unmatched: Dict[tuple, ObservationRecord] = {}

    def _start_timer(self, name, secs):
        rt, me = self.runtime, self.id
        rt.call_later(secs, lambda: rt.post_local(me, (TIMEOUT, name)))

    def run(self):
        if self.monitor is not None:
            self.monitor.arm()
        yield self.await_(lambda: detect_end(self.log, self.poller, self.pollees),
                          lambda: self.total_expired)
        # Reports travel on separate channels, so a receipt can be reported
        # before the matching send.  Every reported receipt implies its send
        # report is in flight; wait for those before judging the log.
        yield self.await_(lambda: not self._unmatched, lambda: self.total_expired,
                          timeout=self.settle_secs)
        self.finish()

    settle_secs = 1.0

    def on_observation(self, rec):
        if rec.direction is SENT:
            for peer in rec.peers:
                key = (rec.reporter, peer, encode(rec.payload))
                self._sent_keys.add(key)
                self._unmatched.pop(key, None)
        elif rec.peers:
            (peer,) = rec.peers
            key = (peer, rec.reporter, encode(rec.payload))
            if key not in self._sent_keys:
                self._unmatched[key] = rec
        if self.monitor is not None:
            self.monitor.on_observation(rec)

    def on_message(self, payload, sender):
        if isinstance(payload, tuple) and len(payload) == 2 and payload[0] == TIMEOUT and self.monitor:
            name = payload[1]
            started = self.monitor.started.get(name, self.now())
            for v in self.monitor.on_timer(TimerMsg(name, started), self.log):
                self.output(f"!! {v.detail} witness {format_witness(v.witness)}")
            if name == "total":
                self.total_expired = True
        else:
            self.unknown_messages += 1

    def finish(self):
        if self.finished:
            return
        self.finished = True
        if self.monitor is not None:
            for v in self.monitor.expire_overdue(self.log):
                self.output(f"!! {v.detail} witness {format_witness(v.witness)}")
        self.end_detected = detect_end(self.log, self.poller, self.pollees)
        if "s1" in self.checks:
            self.s1 = check_S1(self.log, self.poller, self.pollees, strict=self.strict)
        if "s2" in self.checks:
            self.s2 = check_S2(self.log, self.poller, self.pollees)
        self.output("~~ polling ended." if self.end_detected else "~~ polling did not end.",
                    "checking safety:", *[r.passed for r in (self.s1, self.s2) if r is not None])

    @property
    def violations(self) -> List[Violation]:
        return [] if self.monitor is None else list(self.monitor.violations)

    @property
    def fired(self):
        return [] if self.monitor is None else list(self.monitor.fired)


# ---------------------------------------------------------------------------
# scenarios


class ScenarioError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("invalid scenario:\n  " + "\n  ".join(problems))
        self.problems = list(problems)


CHECK_NAMES = ("s1", "s2", "liveness")


@dataclass(frozen=True)
class PollingScenario:
    num_pollees: int = 10
    question: str = "Will you?"
    replies: str = "random"            # "random" (seeded per pollee) | "Y" | "N"
    checks: Optional[frozenset] = None  # None: s1 and s2, plus liveness once any timeout is set
    strict_question: bool = False
    timeout_qr: Optional[float] = None
    timeout_qo: Optional[float] = None
    timeout_total: Optional[float] = None
    faults: FaultConfig = field(default_factory=FaultConfig)
    mode: str = "det"
    seed: int = 0
    channel_order: str = "fifo"
    clocks: bool = True
    runs: int = 1
    max_wall: float = 10.0             # conc mode: give up on a run after this long
    export_log: Optional[str] = None

    def __post_init__(self):
        if self.checks is None:
            live = self.liveness is not None
            object.__setattr__(self, "checks", frozenset(CHECK_NAMES if live else ("s1", "s2")))
        else:
            object.__setattr__(self, "checks", frozenset(self.checks))

    @property
    def liveness(self) -> Optional[LivenessSpec]:
        if self.timeout_qr is None and self.timeout_qo is None and self.timeout_total is None:
            return None
        return polling_liveness(self.timeout_qr, self.timeout_qo, self.timeout_total)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "faults"}
        d["checks"] = sorted(self.checks)
        d["faults"] = self.faults.to_dict()
        return d


_FLAT_KEYS = {
    "pollees": "num_pollees", "num_pollees": "num_pollees", "question": "question",
    "replies": "replies", "checks": "checks", "strict_question": "strict_question",
    "timeout_qr": "timeout_qr", "timeout_qo": "timeout_qo", "timeout_total": "timeout_total",
    "mode": "mode", "seed": "seed", "channel_order": "channel_order", "clocks": "clocks",
    "runs": "runs", "max_wall": "max_wall", "export_log": "export_log",
}
_FAULT_KEYS = {
    "loss": "loss_prob", "loss_prob": "loss_prob", "dup": "dup_prob", "dup_prob": "dup_prob",
    "delay": "delay", "reorder": "reorder", "holdback_secs": "holdback_secs", "corrupt": "corrupt",
    "corrupt_prob": "corrupt_prob", "fault_seed": "seed", "fault_kinds": "kinds",
    "fault_tags": "tags",
}


def _num(problems, key, v, kind=float, lo=None, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        problems.append(f"{key}: expected {'an integer' if kind is int else 'a number'}, got {v!r}")
        return None
    if positive and not v > 0:
        problems.append(f"{key}: must be positive, got {v!r}")
    elif lo is not None and v < lo:
        problems.append(f"{key}: must be >= {lo}, got {v!r}")
    return kind(v)


def load_scenario(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> PollingScenario:
    """Build a validated scenario from a JSON file and/or flat overrides.

    Keys mirror the command-line flags (``pollees``, ``loss``, ``timeout_qo``,
    ...); a nested ``timeouts`` map with ``q-r``/``q-o``/``total`` and a nested
    ``faults`` map are also accepted.  Every problem found is reported at once.
    """
    raw: Dict[str, Any] = {}
    problems: List[str] = []
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError([f"cannot read {path}: {exc}"]) from None
        if not isinstance(loaded, dict):
            raise ScenarioError([f"{path}: top level must be an object"])
        raw.update(loaded)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v

    timeouts = raw.pop("timeouts", None) or {}
    if not isinstance(timeouts, dict):
        problems.append("timeouts: expected an object")
        timeouts = {}
    for name, key in (("q-r", "timeout_qr"), ("q-o", "timeout_qo"), ("total", "timeout_total")):
        if name in timeouts:
            raw.setdefault(key, timeouts.pop(name))
    for name in timeouts:
        problems.append(f"timeouts: unknown entry {name!r}")

    nested_faults = raw.pop("faults", None) or {}
    if not isinstance(nested_faults, dict):
        problems.append("faults: expected an object")
        nested_faults = {}

    kw: Dict[str, Any] = {}
    fkw: Dict[str, Any] = {}
    for k, v in list(raw.items()) + [(k, v) for k, v in nested_faults.items()]:
        if k in _FLAT_KEYS:
            kw[_FLAT_KEYS[k]] = v
        elif k in _FAULT_KEYS:
            fkw[_FAULT_KEYS[k]] = v
        else:
            problems.append(f"unknown key {k!r}")

    out: Dict[str, Any] = {}
    if "num_pollees" in kw:
        out["num_pollees"] = _num(problems, "pollees", kw["num_pollees"], int, lo=1)
    if "runs" in kw:
        out["runs"] = _num(problems, "runs", kw["runs"], int, lo=1)
    if "seed" in kw:
        out["seed"] = _num(problems, "seed", kw["seed"], int)
    for key in ("timeout_qr", "timeout_qo", "timeout_total"):
        if key in kw:
            out[key] = _num(problems, key, kw[key], positive=True, allow_none=True)
    if "max_wall" in kw:
        out["max_wall"] = _num(problems, "max_wall", kw["max_wall"], positive=True)
    if "question" in kw:
        if isinstance(kw["question"], str):
            out["question"] = kw["question"]
        else:
            problems.append("question: expected text")
    if "replies" in kw:
        if kw["replies"] in ("random", "Y", "N"):
            out["replies"] = kw["replies"]
        else:
            problems.append(f"replies: expected 'random', 'Y' or 'N', got {kw['replies']!r}")
    if "mode" in kw:
        if kw["mode"] in ("det", "conc"):
            out["mode"] = kw["mode"]
        else:
            problems.append(f"mode: expected 'det' or 'conc', got {kw['mode']!r}")
    if "channel_order" in kw:
        if kw["channel_order"] in ("fifo", "arbitrary"):
            out["channel_order"] = kw["channel_order"]
        else:
            problems.append(f"channel_order: expected 'fifo' or 'arbitrary', got {kw['channel_order']!r}")
    for key in ("clocks", "strict_question"):
        if key in kw:
            if isinstance(kw[key], bool):
                out[key] = kw[key]
            else:
                problems.append(f"{key}: expected true/false, got {kw[key]!r}")
    if "checks" in kw:
        checks = kw["checks"]
        if isinstance(checks, str):
            checks = [c.strip() for c in checks.split(",") if c.strip()]
        bad = [c for c in checks if c not in CHECK_NAMES]
        if bad:
            problems.append(f"checks: unknown {bad}; known {list(CHECK_NAMES)}")
        else:
            out["checks"] = frozenset(checks)
    if "export_log" in kw:
        out["export_log"] = str(kw["export_log"])

    fault_args: Dict[str, Any] = {}
    for key in ("loss_prob", "dup_prob", "corrupt_prob"):
        if key in fkw:
            v = _num(problems, key, fkw[key])
            if v is not None and not 0 <= v <= 1:
                problems.append(f"{key}: must be in [0, 1], got {v!r}")
            else:
                fault_args[key] = v
    if "reorder" in fkw:
        fault_args["reorder"] = _num(problems, "reorder", fkw["reorder"], int, lo=0)
    if "holdback_secs" in fkw:
        fault_args["holdback_secs"] = _num(problems, "holdback_secs", fkw["holdback_secs"], positive=True)
    if "seed" in fkw:
        fault_args["seed"] = _num(problems, "fault_seed", fkw["seed"], int)
    if "delay" in fkw:
        try:
            fault_args["delay"] = parse_delay(fkw["delay"])
        except ValueError as exc:
            problems.append(f"delay: {exc}")
    if "corrupt" in fkw and fkw["corrupt"] is not None:
        if fkw["corrupt"] in CORRUPTIONS:
            fault_args["corrupt"] = fkw["corrupt"]
        else:
            problems.append(f"corrupt: unknown transformer {fkw['corrupt']!r}; known {sorted(CORRUPTIONS)}")
    scope = {}
    for key in ("kinds", "tags"):
        if key in fkw:
            vals = fkw[key]
            if isinstance(vals, str):
                vals = [v.strip() for v in vals.split(",") if v.strip()]
            scope[key] = frozenset(vals)
    if scope:
        fault_args["scope"] = FaultScope(**scope)
    if fault_args.get("corrupt_prob") and "corrupt" not in fault_args:
        problems.append("corrupt_prob: set without a corrupt transformer")
    if "seed" not in fault_args and "seed" in out and out["seed"] is not None:
        fault_args["seed"] = out["seed"]


    if problems:
        raise ScenarioError(problems)
    try:
        out["faults"] = FaultConfig(**{k: v for k, v in fault_args.items() if v is not None})
    except ValueError as exc:
        raise ScenarioError([str(exc)]) from None
    return PollingScenario(**out)


# ---------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    index: int
    seed: int
    end_detected: bool
    s1: Optional[CheckResult]
    s2: Optional[CheckResult]
    violations: List[Violation]
    fault_counts: Dict[str, int]
    wall_time: float
    poller: Optional[ProcessId] = None
    pollees: frozenset = frozenset()
    outcomes: Dict[ProcessId, Any] = field(default_factory=dict)
    yes: frozenset = frozenset()
    log: ObservationLog = field(default_factory=ObservationLog)
    fired: List[Tuple[str, int, float]] = field(default_factory=list)
    process_faults: List[str] = field(default_factory=list)
    outputs: List[Tuple[ProcessId, str]] = field(default_factory=list)
    deliveries: List[Delivery] = field(default_factory=list)
    trace: list = field(default_factory=list)
    liveness_checked: bool = False
    liveness_errors: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = all(r is None or r.passed for r in (self.s1, self.s2))
        if self.liveness_checked:
            ok = ok and not self.violations
        return ok and not self.process_faults and not self.liveness_errors

    def verdicts(self) -> dict:
        """Everything live and replayed runs must agree on."""
        return {
            "end": self.end_detected,
            "s1": None if self.s1 is None else self.s1.passed,
            "s2": None if self.s2 is None else self.s2.passed,
            "violations": sorted(v.name for v in self.violations),
        }


def _export_path(template: str, index: int, runs: int) -> str:
    if "{run}" in template:
        return template.format(run=index)
    if runs == 1:
        return template
    stem, ext = os.path.splitext(template)
    return f"{stem}.{index}{ext}"


def run_once(s: PollingScenario, index: int = 0, instrumented: bool = True, trace: bool = False,
             record_deliveries: bool = False) -> RunResult:
    seed = s.seed + index
    faults = dataclasses.replace(s.faults, seed=s.faults.seed + index)
    rt = Runtime(RuntimeConfig(clocks=s.clocks, channel_order=s.channel_order, mode=s.mode, seed=seed,
                               trace=trace),
                 faults=faults, record_deliveries=record_deliveries)
    started = time.perf_counter()
    liveness = s.liveness if "liveness" in s.checks else None
    checker = None
    try:
        if instrumented:
            (checker,) = rt.spawn(PollingChecker)
            P = instrument(Poller, checker, FULL)
            R = instrument(Pollee, checker, NO_TIME)
        else:
            P, R = Poller, Pollee
        rs = rt.spawn(R, num=s.num_pollees)
        (p,) = rt.spawn(P, args=[rs, s.question])
        rt.setup(rs, [p, s.replies, seed])
        if checker is not None:
            rt.setup([checker], [p, rs, liveness, s.checks, s.strict_question])
            rt.start([checker])
        rt.start(rs)
        rt.start([p])
        if checker is not None:
            cap = s.max_wall if s.mode == "conc" else None
            if s.mode == "conc" and s.timeout_total is not None:
                cap = min(cap, s.timeout_total + 1.0)
            rt.run(until=lambda: rt.done(checker), timeout=cap)
        else:
            rt.run(timeout=s.max_wall if s.mode == "conc" else None)
    finally:
        rt.stop()
    wall = time.perf_counter() - started

    res = RunResult(index=index, seed=seed, end_detected=False, s1=None, s2=None, violations=[],
                    fault_counts=rt.fault_layer.summary() if rt.fault_layer else {}, wall_time=wall,
                    poller=p, pollees=rs)
    res.process_faults = [f"{f.pid}: {f.error}" for f in rt.faults]
    res.outputs = list(rt.outputs)
    res.trace = list(rt.trace)
    if rt.deliveries is not None:
        res.deliveries = [d for d in rt.deliveries if not rt.procs[d.target].is_checker]
    res.outcomes = {r: rt.process(r).outcome for r in sorted_values(rs)}
    poller = rt.process(p)
    res.yes = frozenset(e["r"] for e in poller.received.query((REPLY, YES, ANY), peer=var("r")))
    if checker is not None:
        ch: PollingChecker = rt.process(checker)
        ch.finish()
        res.end_detected = ch.end_detected
        res.s1, res.s2 = ch.s1, ch.s2
        res.violations = ch.violations
        res.log = ch.log
        res.fired = ch.fired
        res.liveness_checked = ch.monitor is not None
        if ch.monitor is not None:
            res.liveness_errors = list(ch.monitor.errors)
        if s.export_log:
            _export(_export_path(s.export_log, index, s.runs), res, s, liveness)
    return res


def _export(path: str, res: RunResult, s: PollingScenario, liveness: Optional[LivenessSpec]):
    meta: List[Tuple[str, ...]] = [
        ("poller", encode(res.poller)),
        ("pollees", encode(res.pollees)),
        ("strict", "1" if s.strict_question else "0"),
        ("checks", ",".join(sorted(s.checks))),
    ]
    if liveness is not None:
        for name, b in sorted(liveness.bounds().items()):
            meta.append(("bound", name, repr(b)))
    for name, n, when in res.fired:
        meta.append(("timer", name, str(n), repr(when)))
    with open(path, "w") as fh:
        write_log(res.log, fh, meta)


def run_polling(s: PollingScenario) -> "RunReport":
    report = RunReport(s)
    for i in range(s.runs):
        report.runs.append(run_once(s, i))
    return report


# ---------------------------------------------------------------------------
# replay


def replay(log_path: str, checks: Iterable[str] = ("s1", "s2", "liveness")) -> "RunReport":
    """Re-judge a stored observation log; no processes are spawned."""
    checks = frozenset(checks)
    with open(log_path) as fh:
        log, meta = read_log(fh)
    info: Dict[str, Any] = {}
    bounds: Dict[str, float] = {}
    fired: List[Tuple[str, int, float]] = []
    for item in meta:
        if not item:
            continue
        if item[0] in ("poller", "pollees") and len(item) == 2:
            info[item[0]] = decode(item[1])
        elif item[0] == "strict" and len(item) == 2:
            info["strict"] = item[1] == "1"
        elif item[0] == "bound" and len(item) == 3:
            bounds[item[1]] = float(item[2])
        elif item[0] == "timer" and len(item) == 4:
            fired.append((item[1], int(item[2]), float(item[3])))
    p, rs = info.get("poller"), info.get("pollees")
    if p is None:
        for rec in log:
            if rec.direction is SENT and isinstance(rec.payload, tuple) and rec.payload[:1] == (QUESTION,):
                p, rs = rec.reporter, rec.peers
                break
    scenario = PollingScenario(checks=checks, strict_question=info.get("strict", False),
                               timeout_qr=bounds.get("q-r"), timeout_qo=bounds.get("q-o"),
                               timeout_total=bounds.get("total"))
    res = RunResult(index=0, seed=0, end_detected=False, s1=None, s2=None, violations=[],
                    fault_counts={}, wall_time=0.0, poller=p, pollees=frozenset(rs or ()), log=log,
                    fired=fired)
    if p is None:
        msg = "no poller identified in log"
        res.s1 = CheckResult(False, None, msg) if "s1" in checks else None
        res.s2 = CheckResult(False, None, msg) if "s2" in checks else None
    else:
        rs = frozenset(rs or ())
        res.end_detected = detect_end(log, p, rs)
        if "s1" in checks:
            res.s1 = check_S1(log, p, rs, strict=scenario.strict_question)
        if "s2" in checks:
            res.s2 = check_S2(log, p, rs)
        spec = scenario.liveness
        if "liveness" in checks and spec is not None:
            res.liveness_checked = True
            res.violations = replay_liveness(spec, log, {"p": p, "rs": rs}, fired=fired)
    report = RunReport(scenario, source=log_path)
    report.runs.append(res)
    return report


# ---------------------------------------------------------------------------
# reporting


def _b(r: Optional[CheckResult]) -> str:
    return "-" if r is None else r.verdict


class RunReport:
    """Per-run results plus rendering: human lines and machine lines, paired."""

    def __init__(self, scenario: PollingScenario, source: Optional[str] = None):
        self.scenario = scenario
        self.source = source
        self.runs: List[RunResult] = []

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.runs)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_VIOLATION

    def aggregate(self) -> Dict[str, int]:
        agg = {"runs": len(self.runs), "passed": 0, "end_detected": 0, "s1_fail": 0, "s2_fail": 0,
               "violating_runs": 0, "process_faults": 0}
        names = set()
        for r in self.runs:
            agg["passed"] += r.passed
            agg["end_detected"] += r.end_detected
            agg["s1_fail"] += r.s1 is not None and not r.s1.passed
            agg["s2_fail"] += r.s2 is not None and not r.s2.passed
            agg["violating_runs"] += bool(r.violations)
            agg["process_faults"] += bool(r.process_faults)
            for v in {v.name for v in r.violations}:
                names.add(v)
                agg[f"timeout_{v}"] = agg.get(f"timeout_{v}", 0) + 1
        return agg

    def pairs(self, verbose: bool = False) -> List[Tuple[str, str]]:
        """(human, machine) line pairs in report order."""
        s = self.scenario
        out = []
        head = json.dumps(s.to_dict(), sort_keys=True, default=str)
        src = f" replaying {self.source}" if self.source else ""
        out.append((f"== scenario{src}: {s.num_pollees} pollees, {s.runs} run(s), mode {s.mode}, seed {s.seed}",
                    f"SCENARIO {head}"))
        for r in self.runs:
            n = r.index + 1
            if verbose:
                for pid, text in r.outputs:
                    out.append((f"[{pid}] {text}", f"OUTPUT {n} {pid} {json.dumps(text)}"))
            safety = " ".join(str(x.passed) for x in (r.s1, r.s2) if x is not None)
            out.append((f"~~ run {n}: polling {'ended' if r.end_detected else 'did not end'}. "
                        f"checking safety: {safety}",
                        f"RUN {n} seed={r.seed} end={int(r.end_detected)} s1={_b(r.s1)} s2={_b(r.s2)} "
                        f"wall={r.wall_time:.6f}"))
            for name, res in (("S1", r.s1), ("S2", r.s2)):
                if res is not None and not res.passed:
                    out.append((f"!! {name} violated, witness {format_witness(res.witness)}",
                                f"CHECK {n} {name.lower()} fail {format_witness(res.witness)}"))
            for v in r.violations:
                out.append((f"!! timeout {v.name} after {v.elapsed:.6f}s (bound {v.bound:g}s), "
                            f"witness {format_witness(v.witness)}", v.line(n)))
            for f in r.process_faults:
                out.append((f"!! process fault {f}", f"FAULT {n} {json.dumps(f)}"))
            if any(v for k, v in r.fault_counts.items() if k != "decided"):
                counts = " ".join(f"{k}={v}" for k, v in sorted(r.fault_counts.items()))
                out.append((f"-- injected faults: {counts}", f"FAULTS {n} {counts}"))
        agg = self.aggregate()
        text = " ".join(f"{k}={v}" for k, v in agg.items())
        out.append((f"== summary: {agg['passed']}/{agg['runs']} runs passed every enabled check",
                    f"SUMMARY {text} exit={self.exit_code}"))
        return out

    def render(self, verbose: bool = False) -> str:
        lines = []
        for human, machine in self.pairs(verbose):
            lines.append(human)
            lines.append(machine)
        return "\n".join(lines) + "\n"

    def machine_lines(self, verbose: bool = False) -> List[str]:
        return [m for _, m in self.pairs(verbose)]
