"""Runtime checking of distributed algorithms by observation.

Processes exchange messages over a simulated network; instrumented process
classes report their sends and receipts to a checker process, which judges
quantified safety properties over what it has seen and enforces bounded
liveness with timers.
"""

from .values import (
    ANY, Atom, BoundVar, Const, DecodeError, FreeVar, NotAValue, PatternError, ProcessId, TuplePat,
    UnboundVariable, Wildcard, bound, decode, encode, match, pat, var,
)
from .runtime import Await, ClockDisabled, Process, Runtime, RuntimeConfig, receive
from .observe import (
    FULL, NO_TIME, SILENT, Checker, InstrumentationPolicy, ObservationLog, ObservationRecord,
    instrument, observed, read_log, write_log,
)
from .props import (
    And, Cmp, CountOf, Each, In, Lit, LivenessSpec, Not, Obs, Or, SetOf, Some, SpecificationError,
    Truth, Var, evaluate,
)
from .faults import FaultConfig, wrap

__version__ = "0.1.0"
