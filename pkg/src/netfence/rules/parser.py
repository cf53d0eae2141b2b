"""Lexer, recursive-descent parser and pretty-printer for rule files.

Grammar (precedence NOT > AND > OR, binary operators left-associative)::

    rulebook  := { rule }
    rule      := "RULE" ident ":" "IF" cond "THEN" "PRESENT" ident
    cond      := and { "OR" and }
    and       := unary { "AND" unary }
    unary     := "NOT" unary | "(" cond ")" | pred
    pred      := "IS_VISIBLE" "(" string ")"
               | "RSSI_IN" "(" string "," number "," number ")"
               | "TIME_BETWEEN" "(" hhmm "," hhmm ")"
               | "FIRST_VISIT" "(" ")"
               | "CLIENT" "(" string ")"

Strings are single-quoted with ``''`` as the escaped quote, numbers are signed
integers and ``hhmm`` is a string of the form ``'HH:MM'``. ``#`` starts a
comment running to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import time
from typing import Iterator

from ..errors import ParseError
from .nodes import (
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
    depth,
)

MAX_DEPTH = 32
_MAX_NESTING = 4 * MAX_DEPTH

KEYWORDS = frozenset(
    {
        "RULE", "IF", "THEN", "PRESENT", "AND", "OR", "NOT",
        "IS_VISIBLE", "RSSI_IN", "TIME_BETWEEN", "FIRST_VISIT", "CLIENT",
    }
)
PRED_KEYWORDS = ("IS_VISIBLE", "RSSI_IN", "TIME_BETWEEN", "FIRST_VISIT", "CLIENT")

_PUNCT = {"(": "LPAREN", ")": "RPAREN", ",": "COMMA", ":": "COLON"}
_DISPLAY = {
    "LPAREN": "'('", "RPAREN": "')'", "COMMA": "','", "COLON": "':'",
    "IDENT": "identifier", "STRING": "string", "NUMBER": "number", "EOF": "end of input",
}
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*")
_NUMBER_RE = re.compile(r"[+-]?[0-9]+")
_HHMM_RE = re.compile(r"([01][0-9]|2[0-3]):([0-5][0-9])")


@dataclass(frozen=True)
class Token:
    kind: str  # keyword text, or one of IDENT STRING NUMBER LPAREN RPAREN COMMA COLON EOF
    value: str
    line: int
    column: int


def _display(kind: str) -> str:
    return _DISPLAY.get(kind, f"'{kind}'")


def tokenize(text: str) -> Iterator[Token]:
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in _PUNCT:
            yield Token(_PUNCT[ch], ch, line, col)
            i += 1
            col += 1
            continue
        if ch == "'":
            start_line, start_col = line, col
            buf = []
            i += 1
            col += 1
            while True:
                if i >= n:
                    raise ParseError("unterminated string", start_line, start_col)
                c = text[i]
                if c == "'":
                    if i + 1 < n and text[i + 1] == "'":
                        buf.append("'")
                        i += 2
                        col += 2
                        continue
                    i += 1
                    col += 1
                    break
                buf.append(c)
                i += 1
                if c == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            yield Token("STRING", "".join(buf), start_line, start_col)
            continue
        m = _NUMBER_RE.match(text, i)
        if m and (ch.isdigit() or (i + 1 < n and text[i + 1].isdigit())):
            yield Token("NUMBER", m.group(), line, col)
            col += m.end() - i
            i = m.end()
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group()
            yield Token(word if word in KEYWORDS else "IDENT", word, line, col)
            col += m.end() - i
            i = m.end()
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    yield Token("EOF", "", line, col)


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(tokenize(text))
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def fail(self, expected: set[str] | frozenset[str], tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.value)
        return ParseError(f"unexpected {found}", tok.line, tok.column, frozenset(_display(k) for k in expected))

    def expect(self, kind: str) -> Token:
        tok = self.tok
        if tok.kind != kind:
            raise self.fail({kind})
        self.pos += 1
        return tok

    def accept(self, kind: str) -> Token | None:
        if self.tok.kind == kind:
            return self.expect(kind)
        return None

    def rulebook(self) -> list[Rule]:
        rules = []
        while self.tok.kind != "EOF":
            if self.tok.kind != "RULE":
                raise self.fail({"RULE", "EOF"})
            rules.append(self.rule())
        return rules

    def rule(self) -> Rule:
        self.expect("RULE")
        rid = self.expect("IDENT").value
        self.expect("COLON")
        if_tok = self.expect("IF")
        cond = self.checked(self.cond(0), if_tok)
        self.expect("THEN")
        self.expect("PRESENT")
        msg = self.expect("IDENT").value
        return Rule(rid, cond, ActionSpec(msg))

    def checked(self, node: Condition, tok: Token) -> Condition:
        if depth(node) > MAX_DEPTH:
            raise ParseError(f"condition nested deeper than {MAX_DEPTH}", tok.line, tok.column)
        return node

    def cond(self, nesting: int) -> Condition:
        node = self.conj(nesting)
        while self.accept("OR"):
            node = Or(node, self.conj(nesting))
        return node

    def conj(self, nesting: int) -> Condition:
        node = self.unary(nesting)
        while self.accept("AND"):
            node = And(node, self.unary(nesting))
        return node

    def unary(self, nesting: int) -> Condition:
        tok = self.tok
        # bounds recursion for runs of NOT / '(' before the tree-depth check can see them
        if nesting >= _MAX_NESTING:
            raise ParseError(f"condition nested deeper than {MAX_DEPTH}", tok.line, tok.column)
        if self.accept("NOT"):
            return Not(self.unary(nesting + 1))
        if self.accept("LPAREN"):
            node = self.cond(nesting + 1)
            self.expect("RPAREN")
            return node
        if tok.kind in PRED_KEYWORDS:
            return self.pred()
        raise self.fail({"NOT", "LPAREN", *PRED_KEYWORDS})

    def pred(self) -> Condition:
        kw = self.tok
        self.pos += 1
        self.expect("LPAREN")
        if kw.kind == "IS_VISIBLE":
            node: Condition = Visible(self.expect("STRING").value)
        elif kw.kind == "CLIENT":
            node = Client(self.expect("STRING").value)
        elif kw.kind == "FIRST_VISIT":
            node = FirstVisit()
        elif kw.kind == "RSSI_IN":
            glob = self.expect("STRING").value
            self.expect("COMMA")
            lo_tok = self.expect("NUMBER")
            self.expect("COMMA")
            hi = int(self.expect("NUMBER").value)
            lo = int(lo_tok.value)
            if lo > hi:
                raise ParseError(f"RSSI_IN range is empty ({lo} > {hi})", lo_tok.line, lo_tok.column)
            node = RssiIn(glob, lo, hi)
        else:
            start = self._hhmm()
            self.expect("COMMA")
            node = TimeBetween(start, self._hhmm())
        self.expect("RPAREN")
        return node

    def _hhmm(self) -> time:
        tok = self.expect("STRING")
        m = _HHMM_RE.fullmatch(tok.value)
        if not m:
            raise ParseError(f"bad time {tok.value!r}, want 'HH:MM'", tok.line, tok.column, frozenset({"'HH:MM'"}))
        return time(int(m.group(1)), int(m.group(2)))


def parse_rule(text: str) -> Rule:
    """Parse exactly one ``RULE ...`` statement."""
    p = _Parser(text)
    rule = p.rule()
    if p.tok.kind != "EOF":
        raise p.fail({"EOF"})
    return rule


def parse_rulebook(text: str) -> list[Rule]:
    return _Parser(text).rulebook()


def parse_condition(text: str) -> Condition:
    """Parse a bare condition expression (no ``RULE``/``IF`` wrapper)."""
    p = _Parser(text)
    node = p.checked(p.cond(0), p.tok)
    if p.tok.kind != "EOF":
        raise p.fail({"AND", "OR", "EOF"})
    return node


# -- pretty printing ---------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3}


def _quote(s: str) -> str:
    return "'" + s.replace("'", "''") + "'"


def format_condition(node: Condition, min_prec: int = 0) -> str:
    prec = _PREC.get(type(node), 4)
    if isinstance(node, Or):
        text = f"{format_condition(node.left, 1)} OR {format_condition(node.right, 2)}"
    elif isinstance(node, And):
        text = f"{format_condition(node.left, 2)} AND {format_condition(node.right, 3)}"
    elif isinstance(node, Not):
        text = f"NOT {format_condition(node.child, 3)}"
    elif isinstance(node, Visible):
        text = f"IS_VISIBLE({_quote(node.ssid_glob)})"
    elif isinstance(node, RssiIn):
        text = f"RSSI_IN({_quote(node.ssid_glob)}, {node.lo}, {node.hi})"
    elif isinstance(node, TimeBetween):
        text = f"TIME_BETWEEN('{node.start:%H:%M}', '{node.end:%H:%M}')"
    elif isinstance(node, FirstVisit):
        text = "FIRST_VISIT()"
    elif isinstance(node, Client):
        text = f"CLIENT({_quote(node.id_glob)})"
    else:
        raise TypeError(f"not a condition node: {node!r}")
    return f"({text})" if prec < min_prec else text


def format_rule(rule: Rule) -> str:
    return f"RULE {rule.id}: IF {format_condition(rule.condition)} THEN PRESENT {rule.action.message_id}"
