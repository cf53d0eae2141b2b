from __future__ import annotations

from collections import Counter
from typing import Iterable

from .nodes import MAX_PAYLOAD_BYTES, Not, Rule, walk


def lint_rulebook(rules: Iterable[Rule]) -> list[str]:
    """Return human-readable warnings; an empty list means the rulebook is clean."""
    rules = list(rules)
    warnings = []
    for rid, n in sorted(Counter(r.id for r in rules).items()):
        if n > 1:
            warnings.append(f"duplicate rule id {rid!r} ({n} definitions)")
    for r in rules:
        size = r.action.payload_bytes
        if size > MAX_PAYLOAD_BYTES:
            warnings.append(
                f"rule {r.id!r}: payload for {r.action.message_id!r} is {size} bytes, "
                f"over the {MAX_PAYLOAD_BYTES}-byte push limit"
            )
        if any(isinstance(n, Not) and isinstance(n.child, Not) for n in walk(r.condition)):
            warnings.append(f"rule {r.id!r}: double negation NOT NOT can be simplified")
    return warnings
