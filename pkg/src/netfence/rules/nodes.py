"""AST node types for proximity rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import time
from typing import Optional, Union

#: Largest payload a push message may carry, in bytes.
MAX_PAYLOAD_BYTES = 4096


@dataclass(frozen=True)
class Visible:
    ssid_glob: str


@dataclass(frozen=True)
class RssiIn:
    ssid_glob: str
    lo: int
    hi: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"RSSI_IN lower bound {self.lo} exceeds upper bound {self.hi}")


@dataclass(frozen=True)
class TimeBetween:
    """Local time-of-day window ``[start, end)``; wraps midnight when start > end."""

    start: time
    end: time


@dataclass(frozen=True)
class FirstVisit:
    pass


@dataclass(frozen=True)
class Client:
    id_glob: str


@dataclass(frozen=True)
class And:
    left: "Condition"
    right: "Condition"


@dataclass(frozen=True)
class Or:
    left: "Condition"
    right: "Condition"


@dataclass(frozen=True)
class Not:
    child: "Condition"


Predicate = Union[Visible, RssiIn, TimeBetween, FirstVisit, Client]
Condition = Union[Predicate, And, Or, Not]
PREDICATES = (Visible, RssiIn, TimeBetween, FirstVisit, Client)


@dataclass(frozen=True)
class ActionSpec:
    message_id: str
    payload_template: str = ""

    @property
    def payload_bytes(self) -> int:
        return len(self.payload_template.encode("utf-8"))


@dataclass(frozen=True)
class Rule:
    id: str
    condition: Condition
    action: ActionSpec
    enabled: bool = True
    # How long a recorded firing keeps FIRST_VISIT false; None means forever.
    first_visit_retention_s: Optional[float] = field(default=None, compare=False)

    @property
    def uses_first_visit(self) -> bool:
        return any(isinstance(n, FirstVisit) for n in walk(self.condition))


def walk(node: Condition):
    """Yield every node of a condition tree, parents before children."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, (And, Or)):
            stack.append(n.right)
            stack.append(n.left)
        elif isinstance(n, Not):
            stack.append(n.child)


def depth(node: Condition) -> int:
    best = 0
    stack = [(node, 1)]
    while stack:
        n, d = stack.pop()
        best = max(best, d)
        if isinstance(n, (And, Or)):
            stack.append((n.left, d + 1))
            stack.append((n.right, d + 1))
        elif isinstance(n, Not):
            stack.append((n.child, d + 1))
    return best
