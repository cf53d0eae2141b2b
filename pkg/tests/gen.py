"""Random rule-AST generators shared by the unit and acceptance tests."""

from __future__ import annotations

import random
import string
from datetime import time

from hypothesis import strategies as st

from netfence.rules import ActionSpec, And, Client, FirstVisit, Not, Or, RssiIn, Rule, TimeBetween, Visible

_GLOB_CHARS = string.ascii_letters + string.digits + " *'-_.éÇ"
_IDENT_START = string.ascii_letters + "_"
_IDENT_REST = _IDENT_START + string.digits + "-"


def _ident(rng: random.Random) -> str:
    return rng.choice(_IDENT_START) + "".join(rng.choice(_IDENT_REST) for _ in range(rng.randint(0, 8)))


def _glob(rng: random.Random) -> str:
    return "".join(rng.choice(_GLOB_CHARS) for _ in range(rng.randint(0, 10)))


def _time(rng: random.Random) -> time:
    return time(rng.randrange(24), rng.randrange(60))


def random_predicate(rng: random.Random):
    kind = rng.randrange(5)
    if kind == 0:
        return Visible(_glob(rng))
    if kind == 1:
        lo = rng.randint(-120, 0)
        return RssiIn(_glob(rng), lo, rng.randint(lo, 0))
    if kind == 2:
        return TimeBetween(_time(rng), _time(rng))
    if kind == 3:
        return FirstVisit()
    return Client(_glob(rng))


def random_condition(rng: random.Random, budget: int = 12):
    if budget <= 1 or rng.random() < 0.3:
        return random_predicate(rng)
    op = rng.randrange(3)
    if op == 0:
        return Not(random_condition(rng, budget - 1))
    left = rng.randint(1, budget - 1)
    cls = And if op == 1 else Or
    return cls(random_condition(rng, left), random_condition(rng, budget - left))


def random_rule(rng: random.Random) -> Rule:
    return Rule(_ident(rng), random_condition(rng), ActionSpec(_ident(rng)))


# hypothesis flavour, for shrinking in unit tests
idents = st.from_regex(r"[A-Za-z_][A-Za-z0-9_\-]{0,8}", fullmatch=True)
globs = st.text(alphabet=_GLOB_CHARS, max_size=10)
times = st.builds(time, st.integers(0, 23), st.integers(0, 59))
predicates = st.one_of(
    st.builds(Visible, globs),
    st.integers(-120, 0).flatmap(lambda lo: st.builds(RssiIn, globs, st.just(lo), st.integers(lo, 0))),
    st.builds(TimeBetween, times, times),
    st.just(FirstVisit()),
    st.builds(Client, globs),
)
conditions = st.recursive(
    predicates,
    lambda kids: st.one_of(st.builds(Not, kids), st.builds(And, kids, kids), st.builds(Or, kids, kids)),
    max_leaves=10,
)
rules = st.builds(Rule, idents, conditions, st.builds(ActionSpec, idents))


def all_trees(leaves, max_leaves: int = 3):
    """Every condition tree with at most ``max_leaves`` leaves drawn from ``leaves``.

    A leaf factory is called once per position so each position is a distinct
    object. NOT is applied at most once in a row.
    """
    def exact(n):
        if n == 1:
            for make in leaves:
                yield make()
            return
        for k in range(1, n):
            for left in maybe_not(k):
                for right in maybe_not(n - k):
                    yield And(left, right)
                    yield Or(left, right)

    def maybe_not(n):
        for t in exact(n):
            yield t
            yield Not(t)

    for n in range(1, max_leaves + 1):
        yield from maybe_not(n)
