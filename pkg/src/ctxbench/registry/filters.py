"""Row predicates: conjunctions of ``column op literal``.

Grammar::

    expr    := clause ("and" clause)*
    clause  := column op literal
    op      := == | != | < | <= | > | >= | in
    literal := 'text' | "text" | number | [literal, ...]

Columns are bare identifiers or backquoted names. Numeric literals compare
numerically (cells that do not parse as numbers never match); string literals
compare as text.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from ..errors import BadFilter

Literal = Union[str, float, tuple]

_TOKEN = re.compile(r"""
    \s*(?:
      (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
    | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)(?![\w.])
    | (?P<op>==|!=|<=|>=|<|>)
    | (?P<punct>[\[\],])
    | (?P<quoted>`[^`]+`)
    | (?P<word>[A-Za-z_][\w.]*)
    )""", re.VERBOSE)

_OPS: dict[str, Callable] = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
                             ">": operator.gt, ">=": operator.ge}


@dataclass(frozen=True)
class Clause:
    column: str
    op: str
    value: Literal


def _tokens(expr: str) -> list[tuple[str, str]]:
    out, pos = [], 0
    expr = expr.rstrip()
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if not m or m.end() == pos:
            raise BadFilter(f"cannot parse filter near {expr[pos:pos + 20]!r}", expr=expr, position=pos)
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


def _literal(tokens: list[tuple[str, str]], i: int, expr: str) -> tuple[Literal, int]:
    if i >= len(tokens):
        raise BadFilter("filter ends where a literal was expected", expr=expr)
    kind, text = tokens[i]
    if kind == "str":
        body = text[1:-1]
        return re.sub(r"\\(.)", r"\1", body), i + 1
    if kind == "num":
        return float(text), i + 1
    if kind == "punct" and text == "[":
        items, i = [], i + 1
        while i < len(tokens) and tokens[i] != ("punct", "]"):
            item, i = _literal(tokens, i, expr)
            if isinstance(item, tuple):
                raise BadFilter("nested lists are not allowed", expr=expr)
            items.append(item)
            if i < len(tokens) and tokens[i] == ("punct", ","):
                i += 1
        if i >= len(tokens):
            raise BadFilter("unterminated list literal", expr=expr)
        return tuple(items), i + 1
    raise BadFilter(f"expected a literal, found {text!r}", expr=expr)


def parse_filter(expr: str) -> list[Clause]:
    tokens = _tokens(expr)
    if not tokens:
        return []
    clauses, i = [], 0
    while True:
        if i >= len(tokens) or tokens[i][0] not in ("word", "quoted"):
            raise BadFilter("expected a column name", expr=expr)
        col = tokens[i][1].strip("`")
        if i + 1 >= len(tokens):
            raise BadFilter(f"missing operator after {col!r}", expr=expr)
        kind, op = tokens[i + 1]
        if not (kind == "op" or (kind == "word" and op == "in")):
            raise BadFilter(f"unsupported operator {op!r}", expr=expr)
        value, i = _literal(tokens, i + 2, expr)
        if (op == "in") != isinstance(value, tuple):
            raise BadFilter("'in' needs a list literal and lists only work with 'in'", expr=expr)
        clauses.append(Clause(col, op, value))
        if i == len(tokens):
            return clauses
        if tokens[i] != ("word", "and"):
            raise BadFilter(f"expected 'and', found {tokens[i][1]!r}", expr=expr)
        i += 1


def _as_number(cell: str) -> Optional[float]:
    try:
        return float(cell)
    except ValueError:
        return None


def _matches(cell: str, op: str, value: Literal) -> bool:
    if op == "in":
        return any(_matches(cell, "==", v) for v in value)
    if isinstance(value, float):
        x = _as_number(cell)
        return x is not None and _OPS[op](x, value)
    return _OPS[op](cell, value)


def compile_filter(expr: Optional[str], columns: Sequence[str]) -> Callable[[Sequence[str]], bool]:
    """Return a predicate over raw rows; unknown columns raise BadFilter."""
    if expr is None or not expr.strip():
        return lambda row: True
    clauses = parse_filter(expr)
    bound = []
    for c in clauses:
        if c.column not in columns:
            raise BadFilter(f"filter references unknown column {c.column!r}", expr=expr, column=c.column)
        bound.append((list(columns).index(c.column), c.op, c.value))
    return lambda row: all(_matches(row[i], op, v) for i, op, v in bound)
