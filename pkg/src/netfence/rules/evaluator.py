"""Rule evaluation against a device's current network context."""

from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import time
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple, Optional, Protocol, Sequence

from .nodes import (
    ActionSpec,
    And,
    Client,
    Condition,
    FirstVisit,
    Not,
    Or,
    Predicate,
    RssiIn,
    Rule,
    TimeBetween,
    Visible,
)


class VisitHistory(Protocol):
    def has_fired(self, device: str, rule_id: str, since_ms: Optional[int] = None) -> bool: ...


class _NoHistory:
    def has_fired(self, device: str, rule_id: str, since_ms: Optional[int] = None) -> bool:
        return False


class VisibleAp(NamedTuple):
    ssid: str
    ap: str
    rssi: float


@dataclass(frozen=True)
class EvaluationContext:
    visible: Sequence[VisibleAp] = ()
    clock: time = time(0, 0)
    device: str = ""
    history: VisitHistory = field(default_factory=_NoHistory)
    t_ms: Optional[int] = None

    def __post_init__(self) -> None:
        vis = tuple(VisibleAp(*v) for v in self.visible)
        if any(not math.isfinite(v.rssi) for v in vis):
            raise ValueError("visible RSSI values must be finite")
        object.__setattr__(self, "visible", vis)


def _fold(text: str) -> str:
    return unicodedata.normalize("NFC", text).casefold()


@lru_cache(maxsize=1024)
def _glob_regex(pattern: str) -> re.Pattern[str]:
    parts = (re.escape(p) for p in _fold(pattern).split("*"))
    return re.compile(".*".join(parts), re.DOTALL)


def glob_match(pattern: str, text: str) -> bool:
    """Case-insensitive match where ``*`` is the only wildcard."""
    return _glob_regex(pattern).fullmatch(_fold(text)) is not None


def in_window(clock: time, start: time, end: time) -> bool:
    if start == end:
        return True
    if start < end:
        return start <= clock < end
    return clock >= start or clock < end


def evaluate_predicate(node: Predicate, ctx: EvaluationContext, rule: Rule) -> bool:
    if isinstance(node, Visible):
        return any(glob_match(node.ssid_glob, v.ssid) for v in ctx.visible)
    if isinstance(node, RssiIn):
        return any(
            glob_match(node.ssid_glob, v.ssid) and node.lo <= v.rssi <= node.hi for v in ctx.visible
        )
    if isinstance(node, TimeBetween):
        return in_window(ctx.clock, node.start, node.end)
    if isinstance(node, FirstVisit):
        since = None
        if rule.first_visit_retention_s is not None and ctx.t_ms is not None:
            since = ctx.t_ms - int(rule.first_visit_retention_s * 1000)
        return not ctx.history.has_fired(ctx.device, rule.id, since)
    if isinstance(node, Client):
        return glob_match(node.id_glob, ctx.device)
    raise TypeError(f"unknown predicate {node!r}")


def fold_condition(node: Condition, leaf: Callable[[Predicate], bool]) -> bool:
    """Evaluate the boolean structure of ``node``, delegating leaves to ``leaf``."""
    if isinstance(node, And):
        return fold_condition(node.left, leaf) and fold_condition(node.right, leaf)
    if isinstance(node, Or):
        return fold_condition(node.left, leaf) or fold_condition(node.right, leaf)
    if isinstance(node, Not):
        return not fold_condition(node.child, leaf)
    return leaf(node)


def evaluate(rule: Rule, ctx: EvaluationContext) -> bool:
    """True iff the rule's condition holds in ``ctx``. Never mutates history."""
    if not rule.enabled:
        return False
    return fold_condition(rule.condition, lambda p: evaluate_predicate(p, ctx, rule))


def evaluate_all(rules: Iterable[Rule], ctx: EvaluationContext) -> list[tuple[str, ActionSpec]]:
    fired = [(r.id, r.action) for r in rules if r.enabled and evaluate(r, ctx)]
    fired.sort(key=lambda pair: pair[0])
    return fired
