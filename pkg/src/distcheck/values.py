"""Message values, patterns, and their canonical text encoding.

A message value is one of:

* ``Atom``      -- a symbolic tag such as ``question`` or ``Y``
* ``int``       -- a signed integer (``bool`` is rejected)
* ``str``       -- free text
* ``ProcessId`` -- a process identifier
* ``tuple``     -- an ordered sequence of values
* ``frozenset`` -- an unordered set of values

Canonical encoding grammar::

    value  := int | atom | text | pid | tuple | set
    int    := -?[0-9]+
    atom   := [A-Za-z_][A-Za-z0-9_.-]*
    text   := JSON string literal ("...")
    pid    := '<' kind ':' hex '>'
    tuple  := '(' ')' | '(' value ',)' | '(' value (', ' value)+ ')'
    set    := '{' '}' | '{' value (', ' value)* '}'     elements sorted by encoding

Patterns are built from :class:`Const`, :class:`BoundVar`, :class:`FreeVar`,
:data:`ANY` and :class:`TuplePat`; :func:`pat` lifts plain Python structures.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Mapping, Optional, Tuple, Union

__all__ = [
    "Atom", "ProcessId", "Value", "Env", "NotAValue", "DecodeError", "PatternError",
    "UnboundVariable", "check_value", "encode", "decode", "sort_key", "sorted_values",
    "Pattern", "Const", "BoundVar", "FreeVar", "Wildcard", "ANY", "TuplePat",
    "pat", "var", "bound", "match", "free_vars", "bound_vars",
]

_ATOM_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")
_KIND_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class NotAValue(TypeError):
    """Raised when an object is outside the message value universe."""


class DecodeError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at offset {pos}")
        self.pos = pos


class PatternError(ValueError):
    """Raised when a pattern is built incorrectly."""


class UnboundVariable(KeyError):
    """A bound-variable reference with no binding in the environment."""


@dataclass(frozen=True, order=True)
class Atom:
    name: str

    def __post_init__(self):
        if not isinstance(self.name, str) or not _ATOM_RE.fullmatch(self.name):
            raise NotAValue(f"invalid atom name {self.name!r}")

    def __repr__(self):
        return f"Atom({self.name!r})"

    def __str__(self):
        return self.name


@dataclass(frozen=True, order=True)
class ProcessId:
    """Identifier of a spawned process, printed as ``<Kind:hex>``."""

    kind: str
    index: int

    def __post_init__(self):
        if not _KIND_RE.fullmatch(self.kind):
            raise NotAValue(f"invalid process kind {self.kind!r}")
        if self.index < 0:
            raise NotAValue("process index must be non-negative")

    def __str__(self):
        return f"<{self.kind}:{self.index:x}>"

    __repr__ = __str__


Value = Union[Atom, int, str, ProcessId, Tuple[Any, ...], frozenset]
Env = Dict[str, Any]


def check_value(v: Any) -> None:
    """Raise :class:`NotAValue` unless ``v`` is a message value."""
    if isinstance(v, bool):
        raise NotAValue("bool is not a message value")
    if isinstance(v, (Atom, int, str, ProcessId)):
        return
    if isinstance(v, (tuple, frozenset)):
        for item in v:
            check_value(item)
        return
    raise NotAValue(f"{type(v).__name__} is not a message value: {v!r}")


# ---------------------------------------------------------------------------
# encoding


def encode(v: Value) -> str:
    if isinstance(v, bool):
        raise NotAValue("bool is not a message value")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Atom):
        return v.name
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, ProcessId):
        return str(v)
    if isinstance(v, tuple):
        if len(v) == 1:
            return f"({encode(v[0])},)"
        return "(" + ", ".join(encode(x) for x in v) + ")"
    if isinstance(v, frozenset):
        return "{" + ", ".join(sorted(encode(x) for x in v)) + "}"
    raise NotAValue(f"{type(v).__name__} is not a message value: {v!r}")


def sort_key(v: Value) -> str:
    return encode(v)


def sorted_values(vs) -> list:
    """Values in canonical order, the iteration order used for sets everywhere."""
    return sorted(vs, key=encode)


_INT_RE = re.compile(r"-?[0-9]+")
_PID_RE = re.compile(r"<([A-Za-z_][A-Za-z0-9_]*):([0-9a-f]+)>")
_json_scan = json.decoder.scanstring


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, msg):
        raise DecodeError(msg, self.pos)

    def ws(self):
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def expect(self, ch):
        if not self.text.startswith(ch, self.pos):
            self.fail(f"expected {ch!r}")
        self.pos += len(ch)

    def value(self):
        self.ws()
        if self.pos >= len(self.text):
            self.fail("unexpected end of input")
        c = self.text[self.pos]
        if c == "(":
            return self.seq("(", ")", tuple)
        if c == "{":
            return self.seq("{", "}", frozenset)
        if c == '"':
            try:
                s, end = _json_scan(self.text, self.pos + 1)
            except json.JSONDecodeError as exc:
                raise DecodeError(f"bad text literal: {exc.msg}", exc.pos) from None
            self.pos = end
            return s
        if c == "<":
            m = _PID_RE.match(self.text, self.pos)
            if not m:
                self.fail("bad process id")
            self.pos = m.end()
            return ProcessId(m.group(1), int(m.group(2), 16))
        m = _INT_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return int(m.group())
        m = _ATOM_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Atom(m.group())
        self.fail(f"unexpected character {c!r}")

    def seq(self, open_, close, build):
        self.expect(open_)
        items = []
        self.ws()
        if self.text.startswith(close, self.pos):
            self.pos += 1
            return build(items)
        while True:
            items.append(self.value())
            self.ws()
            if self.text.startswith(close, self.pos):
                self.pos += 1
                break
            self.expect(",")
            self.ws()
            if build is tuple and len(items) == 1 and self.text.startswith(close, self.pos):
                self.pos += 1
                break
        return build(items)


def decode(text: str) -> Value:
    p = _Parser(text)
    v = p.value()
    p.ws()
    if p.pos != len(text):
        p.fail("trailing characters")
    return v


# ---------------------------------------------------------------------------
# patterns


class Pattern:
    """Base class for message patterns."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Pattern):
    value: Any

    def __post_init__(self):
        check_value(self.value)


@dataclass(frozen=True)
class BoundVar(Pattern):
    """Must equal the current binding of ``name`` (``_t`` / ``=t``)."""

    name: str


@dataclass(frozen=True)
class FreeVar(Pattern):
    """Binds ``name`` to the matched component."""

    name: str


@dataclass(frozen=True)
class Wildcard(Pattern):
    pass


ANY = Wildcard()


@dataclass(frozen=True)
class TuplePat(Pattern):
    items: Tuple[Pattern, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        for p in self.items:
            if not isinstance(p, Pattern):
                raise PatternError(f"not a pattern: {p!r}")
        names = list(_iter_free(self))
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise PatternError(f"free variable(s) bound twice in one pattern: {sorted(dupes)}")


def var(name: str) -> FreeVar:
    return FreeVar(name)


def bound(name: str) -> BoundVar:
    return BoundVar(name)


def pat(x: Any) -> Pattern:
    """Lift a Python structure into a pattern: tuples recurse, values become constants."""
    if isinstance(x, Pattern):
        return x
    if isinstance(x, tuple):
        return TuplePat(tuple(pat(i) for i in x))
    return Const(x)


def _iter_free(p: Pattern) -> Iterator[str]:
    if isinstance(p, FreeVar):
        yield p.name
    elif isinstance(p, TuplePat):
        for i in p.items:
            yield from _iter_free(i)


def free_vars(p: Pattern) -> set:
    return set(_iter_free(p))


def bound_vars(p: Pattern) -> set:
    if isinstance(p, BoundVar):
        return {p.name}
    if isinstance(p, TuplePat):
        out = set()
        for i in p.items:
            out |= bound_vars(i)
        return out
    return set()


def _same(a: Any, b: Any) -> bool:
    # keep 1 and True (or Atom vs str) from comparing equal
    return type(a) is type(b) and a == b


def _match(p: Pattern, v: Any, env: Env, new: Env) -> bool:
    if isinstance(p, Wildcard):
        return True
    if isinstance(p, Const):
        return _same(p.value, v)
    if isinstance(p, BoundVar):
        if p.name in new:
            return _same(new[p.name], v)
        if p.name not in env:
            raise UnboundVariable(p.name)
        return _same(env[p.name], v)
    if isinstance(p, FreeVar):
        if p.name in env:
            return _same(env[p.name], v)
        new[p.name] = v
        return True
    if isinstance(p, TuplePat):
        if not isinstance(v, tuple) or len(v) != len(p.items):
            return False
        return all(_match(pi, vi, env, new) for pi, vi in zip(p.items, v))
    raise PatternError(f"not a pattern: {p!r}")


def match(p: Pattern, v: Any, env: Optional[Mapping[str, Any]] = None) -> Optional[Env]:
    """Match ``v`` against ``p`` under ``env``.

    Returns ``env`` extended with the free-variable bindings, or ``None``.
    A free variable that is already bound in ``env`` must agree with it.
    """
    env = {} if env is None else env
    new: Env = {}
    if not _match(p, v, env, new):
        return None
    out = dict(env)
    out.update(new)
    return out
