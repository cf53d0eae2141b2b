"""Proximity rule language: parsing, evaluation and linting."""

from .evaluator import EvaluationContext, VisibleAp, VisitHistory, evaluate, evaluate_all, glob_match
from .lint import lint_rulebook
from .nodes import (
    MAX_PAYLOAD_BYTES,
    ActionSpec,
    And,
    Client,
    Condition,
    FirstVisit,
    Not,
    Or,
    RssiIn,
    Rule,
    TimeBetween,
    Visible,
)
from .parser import format_condition, format_rule, parse_condition, parse_rule, parse_rulebook

__all__ = [
    "MAX_PAYLOAD_BYTES", "ActionSpec", "And", "Client", "Condition", "EvaluationContext",
    "FirstVisit", "Not", "Or", "RssiIn", "Rule", "TimeBetween", "Visible", "VisibleAp",
    "VisitHistory", "evaluate", "evaluate_all", "format_condition", "format_rule",
    "glob_match", "lint_rulebook", "parse_condition", "parse_rule", "parse_rulebook",
]
