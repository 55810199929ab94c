"""Seeded simulation of communication failures at the send boundary.

Every (message, target) pair goes through :func:`decide`, which draws from one
seeded stream in a fixed order -- loss, duplication, then delay and corruption
for each copy -- and returns the resulting delivery actions.  :class:`FaultyTransport`
applies those actions in front of the runtime's delivery function, scheduling
delayed copies without blocking the sender and realising reordering as a
per-target holdback.
"""

from __future__ import annotations

import random
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from .values import Atom, ProcessId

__all__ = [
    "FaultConfig", "FaultScope", "Drop", "Deliver", "DROP", "decide", "wrap",
    "FaultyTransport", "CORRUPTIONS", "register_corruption", "parse_delay",
]


# ---------------------------------------------------------------------------
# corruption transformers


def _flip_outcome(m):
    if isinstance(m, tuple) and len(m) == 2 and m[0] == Atom("outcome") and isinstance(m[1], int):
        return (m[0], m[1] + 1)
    return m


def _blank_question(m):
    if isinstance(m, tuple) and len(m) == 3 and m[0] == Atom("question"):
        return (m[0], "", m[2])
    return m


def _flip_reply(m):
    if isinstance(m, tuple) and len(m) == 3 and m[0] == Atom("reply"):
        flipped = {Atom("Y"): Atom("N"), Atom("N"): Atom("Y")}.get(m[1], m[1])
        return (m[0], flipped, m[2])
    return m


CORRUPTIONS: Dict[str, Callable[[Any], Any]] = {
    "flip-outcome": _flip_outcome,
    "blank-question": _blank_question,
    "flip-reply": _flip_reply,
}


def register_corruption(name: str, fn: Callable[[Any], Any]) -> None:
    CORRUPTIONS[name] = fn


# ---------------------------------------------------------------------------
# configuration


def parse_delay(spec) -> Optional[Tuple[float, float]]:
    """``None``/"none" -> no delay; ``0.1`` -> fixed; ``"0.01:0.05"`` -> uniform."""
    if spec is None:
        return None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        lo = hi = float(spec)
    elif isinstance(spec, (list, tuple)) and len(spec) == 2:
        lo, hi = float(spec[0]), float(spec[1])
    elif isinstance(spec, str):
        s = spec.strip().lower()
        if s in ("", "none", "0"):
            return None
        if ":" in s:
            a, b = s.split(":", 1)
            lo, hi = float(a), float(b)
        else:
            lo = hi = float(s)
    else:
        raise ValueError(f"bad delay spec {spec!r}")
    if lo < 0 or hi < lo:
        raise ValueError(f"delay bounds must satisfy 0 <= min <= max, got {spec!r}")
    if hi == 0:
        return None
    return (lo, hi)


@dataclass(frozen=True)
class FaultScope:
    """Which messages faults apply to; ``None`` means all."""

    kinds: Optional[frozenset] = None      # sender process kinds
    senders: Optional[frozenset] = None    # sender ids
    tags: Optional[frozenset] = None       # first element of the payload tuple, by name

    def applies(self, sender: ProcessId, payload) -> bool:
        if self.kinds is not None and sender.kind not in self.kinds:
            return False
        if self.senders is not None and sender not in self.senders:
            return False
        if self.tags is not None:
            tag = payload[0] if isinstance(payload, tuple) and payload else None
            if not isinstance(tag, Atom) or tag.name not in self.tags:
                return False
        return True

    def to_dict(self):
        return {k: sorted(str(x) for x in v) for k, v in
                (("kinds", self.kinds), ("senders", self.senders), ("tags", self.tags)) if v is not None}


@dataclass(frozen=True)
class FaultConfig:
    loss_prob: float = 0.0
    delay: Optional[Tuple[float, float]] = None
    dup_prob: float = 0.0
    reorder: int = 0                      # holdback(k); 0 means off
    holdback_secs: float = 0.1            # a held message is released after this long regardless
    corrupt: Optional[str] = None
    corrupt_prob: float = 0.0
    seed: int = 0
    scope: FaultScope = field(default_factory=FaultScope)

    def __post_init__(self):
        object.__setattr__(self, "delay", parse_delay(self.delay))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> List[str]:
        out = []
        for name in ("loss_prob", "dup_prob", "corrupt_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                out.append(f"{name} must be in [0, 1], got {p}")
        if self.reorder < 0:
            out.append(f"reorder must be >= 0, got {self.reorder}")
        if self.holdback_secs <= 0:
            out.append("holdback_secs must be positive")
        if self.corrupt is not None and self.corrupt not in CORRUPTIONS:
            out.append(f"unknown corruption {self.corrupt!r}; known: {sorted(CORRUPTIONS)}")
        if self.corrupt_prob > 0 and self.corrupt is None:
            out.append("corrupt_prob set without a corruption transformer")
        return out

    @property
    def is_identity(self) -> bool:
        return (self.loss_prob == 0 and self.delay is None and self.dup_prob == 0
                and self.reorder == 0 and (self.corrupt is None or self.corrupt_prob == 0))

    def to_dict(self) -> dict:
        return {
            "loss_prob": self.loss_prob,
            "delay": None if self.delay is None else list(self.delay),
            "dup_prob": self.dup_prob,
            "reorder": self.reorder,
            "holdback_secs": self.holdback_secs,
            "corrupt": self.corrupt,
            "corrupt_prob": self.corrupt_prob,
            "seed": self.seed,
            "scope": self.scope.to_dict(),
        }


# ---------------------------------------------------------------------------
# decisions


@dataclass(frozen=True)
class Drop:
    pass


DROP = Drop()


@dataclass(frozen=True)
class Deliver:
    after_secs: float
    payload: Any
    times: int = 1

    def __post_init__(self):
        if self.times < 1:
            raise ValueError("Deliver.times must be >= 1")
        if self.after_secs < 0:
            raise ValueError("Deliver.after_secs must be >= 0")


DeliveryAction = Union[Drop, Deliver]


def decide(cfg: FaultConfig, m, target: ProcessId, rng: random.Random) -> List[DeliveryAction]:
    """Fault outcome for one (message, target) pair.

    Only enabled faults consume randomness, so an all-zero config draws nothing.
    """
    if cfg.loss_prob > 0 and rng.random() < cfg.loss_prob:
        return [DROP]
    copies = 1
    if cfg.dup_prob > 0 and rng.random() < cfg.dup_prob:
        copies = 2
    actions: List[Deliver] = []
    for _ in range(copies):
        after = 0.0
        if cfg.delay is not None:
            lo, hi = cfg.delay
            after = lo if lo == hi else rng.uniform(lo, hi)
        payload = m
        if cfg.corrupt is not None and cfg.corrupt_prob > 0 and rng.random() < cfg.corrupt_prob:
            payload = CORRUPTIONS[cfg.corrupt](m)
        if actions and actions[-1].after_secs == after and actions[-1].payload == payload:
            last = actions.pop()
            actions.append(Deliver(after, payload, last.times + 1))
        else:
            actions.append(Deliver(after, payload, 1))
    return actions


# ---------------------------------------------------------------------------
# transport wrapper


class FaultyTransport:
    """Callable ``(sender, target, payload, stamp)`` applying :func:`decide` before delivery."""

    def __init__(self, transport: Callable, cfg: FaultConfig,
                 schedule: Optional[Callable[[float, Callable[[], None]], None]] = None,
                 exempt: Optional[Callable[[ProcessId], bool]] = None):
        self.inner = transport
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.schedule = schedule
        self.exempt = exempt or (lambda target: False)
        self.counts: Counter = Counter()
        self.actions: List[tuple] = []   # (sender, target, payload, [actions]) in decision order
        self._held: Dict[ProcessId, list] = {}
        self._lock = threading.RLock()

    def __call__(self, sender, target, payload, stamp) -> None:
        if self.exempt(target) or not self.cfg.scope.applies(sender, payload):
            with self._lock:
                self.counts["exempt"] += 1
            self._emit(sender, target, payload, stamp)
            return
        copies = []
        releases = []
        with self._lock:
            acts = decide(self.cfg, payload, target, self.rng)
            self.actions.append((sender, target, payload, acts))
            self.counts["decided"] += 1
            for act in acts:
                if isinstance(act, Drop):
                    self.counts["dropped"] += 1
                    continue
                self.counts["duplicated"] += act.times - 1
                if act.payload != payload:
                    self.counts["corrupted"] += act.times
                if act.after_secs > 0:
                    self.counts["delayed"] += act.times
                copies.extend([(act.payload, act.after_secs)] * act.times)
            if copies and self.cfg.reorder > 0:
                releases = self._count_down(target)
                # the message that completes a countdown is not itself held
                if not releases and target not in self._held:
                    slot = [self.cfg.reorder, (sender, target) + (copies[0][0], stamp, copies[0][1]), False]
                    self._held[target] = slot
                    self.counts["held"] += 1
                    copies = copies[1:]
                    if self.schedule is not None:
                        self.schedule(self.cfg.holdback_secs, lambda: self._flush(target, slot))
        for p, after in copies:
            self._later(sender, target, p, stamp, after)
        for release in releases:
            release()

    # reordering: at most one held message per target, released once k later
    # messages to that target have gone out (or after holdback_secs)
    def _count_down(self, target) -> List[Callable[[], None]]:
        slot = self._held.get(target)
        if slot is None or slot[2]:
            return []
        slot[0] -= 1
        if slot[0] > 0:
            return []
        slot[2] = True
        del self._held[target]
        return [self._releaser(slot)]

    def _releaser(self, slot):
        s, t, p, st, after = slot[1]
        return lambda: self._later(s, t, p, st, after)

    def _flush(self, target, slot):
        with self._lock:
            if slot[2]:
                return
            slot[2] = True
            if self._held.get(target) is slot:
                del self._held[target]
            self.counts["flushed"] += 1
        self._releaser(slot)()

    def _later(self, sender, target, payload, stamp, after):
        if after > 0 and self.schedule is not None:
            self.schedule(after, lambda: self._emit(sender, target, payload, stamp))
        else:
            self._emit(sender, target, payload, stamp)

    def _emit(self, sender, target, payload, stamp):
        self.inner(sender, target, payload, stamp)

    def summary(self) -> Dict[str, int]:
        keys = ("decided", "dropped", "duplicated", "delayed", "corrupted", "held", "flushed")
        return {k: self.counts.get(k, 0) for k in keys}


def wrap(transport: Callable, cfg: FaultConfig, schedule=None, exempt=None) -> FaultyTransport:
    return FaultyTransport(transport, cfg, schedule=schedule, exempt=exempt)
