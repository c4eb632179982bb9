"""AST node types for parsed OverpassQL and the canonical printer.

Structural equality between nodes deliberately ignores source spans, so
``parse(print_query(parse(s)))`` can be compared against ``parse(s)``
directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Union

__all__ = [
    "Span",
    "Relation",
    "TagFilter",
    "SpatialFilter",
    "Filter",
    "QueryStatement",
    "BlockStatement",
    "OutputStatement",
    "RecursionStatement",
    "Assignment",
    "ForeachStatement",
    "ConditionalStatement",
    "RawStatement",
    "Statement",
    "Program",
    "Setting",
    "QueryAst",
    "escape_string",
    "unescape_string",
    "print_statement",
    "print_query",
]

Span = tuple[int, int]


class Relation(str, Enum):
    """Tag filter relation, named by its wire symbol."""

    EQUALS = "="
    NOT_EQUALS = "!="
    EXISTS = "exists"
    NOT_EXISTS = "!exists"
    REGEX = "~"
    KEY_REGEX = "~~"

    @property
    def has_value(self) -> bool:
        return self not in (Relation.EXISTS, Relation.NOT_EXISTS)


def _span_field() -> Span:
    return (0, 0)


@dataclass(frozen=True)
class TagFilter:
    """One ``[key op value]`` filter with quoting and escapes resolved."""

    key: str
    relation: Relation
    value: str | None = None
    ignore_case: bool = False
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class SpatialFilter:
    """A parenthesized filter, kept as its classified raw content.

    ``subkind`` is one of ``bbox``, ``id``, ``around``, ``area-ref``,
    ``placeholder``, ``if-condition``, or ``raw`` for anything else.
    """

    subkind: str
    text: str
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


Filter = Union[TagFilter, SpatialFilter]


@dataclass(frozen=True)
class QueryStatement:
    kind: str  # node | way | relation | area | nwr | nw | nr | wr | derived
    filters: tuple[Filter, ...] = ()
    input_sets: tuple[str, ...] = ()
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class BlockStatement:
    """Union or difference block ``( stmt; stmt; )``.

    ``negated[i]`` marks members prefixed with ``-``; any negated member
    makes this a difference block.
    """

    members: tuple["Statement", ...]
    negated: tuple[bool, ...] = ()
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)

    @property
    def is_difference(self) -> bool:
        return any(self.negated)


@dataclass(frozen=True)
class OutputStatement:
    modifiers: tuple[str, ...] = ()
    input_set: str | None = None
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class RecursionStatement:
    symbol: str  # > < >> <<
    input_set: str | None = None
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class Assignment:
    """A statement whose result is stored into a named set via ``->.name``."""

    target: str
    inner: "Statement"
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class ForeachStatement:
    members: tuple["Statement", ...]
    input_set: str | None = None
    target: str | None = None
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class ConditionalStatement:
    condition: str
    then_members: tuple["Statement", ...]
    else_members: tuple["Statement", ...] | None = None
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class RawStatement:
    """Verbatim source bytes of a construct the parser does not classify."""

    text: str
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


Statement = Union[
    QueryStatement,
    BlockStatement,
    OutputStatement,
    RecursionStatement,
    Assignment,
    ForeachStatement,
    ConditionalStatement,
    RawStatement,
]


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class Setting:
    name: str
    args: tuple[str, ...] = ()
    span: Span = field(kw_only=True, compare=False, default_factory=_span_field)


@dataclass(frozen=True)
class QueryAst:
    settings: tuple[Setting, ...]
    root: Program
    source: str = field(compare=False, default="")


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def escape_string(value: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in value)


def unescape_string(raw: str) -> str:
    """Resolve backslash escapes inside a quoted literal's inner text."""
    out: list[str] = []
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i]
        if c == "\\" and i + 1 < n:
            nxt = raw[i + 1]
            if nxt == "n":
                out.append("\n")
            elif nxt == "t":
                out.append("\t")
            elif nxt == "r":
                out.append("\r")
            elif nxt == "u" and i + 5 < n:
                try:
                    out.append(chr(int(raw[i + 2 : i + 6], 16)))
                    i += 6
                    continue
                except ValueError:
                    out.append(nxt)
            else:
                out.append(nxt)
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


def _print_tag_filter(f: TagFilter) -> str:
    key = f'"{escape_string(f.key)}"'
    flag = ",i" if f.ignore_case else ""
    if f.relation is Relation.EXISTS:
        return f"[{key}]"
    if f.relation is Relation.NOT_EXISTS:
        return f"[!{key}]"
    value = f'"{escape_string(f.value or "")}"'
    if f.relation is Relation.KEY_REGEX:
        return f"[~{key}~{value}{flag}]"
    return f"[{key}{f.relation.value}{value}{flag}]"


def _print_filter(f: Filter) -> str:
    if isinstance(f, TagFilter):
        return _print_tag_filter(f)
    return f"({f.text})"


def print_statement(stmt: Statement) -> str:
    """Render one statement, including its terminating semicolon."""
    if isinstance(stmt, QueryStatement):
        sets = "".join(f".{s}" for s in stmt.input_sets)
        filters = "".join(_print_filter(f) for f in stmt.filters)
        return f"{stmt.kind}{sets}{filters};"
    if isinstance(stmt, BlockStatement):
        parts = []
        for member, neg in zip(stmt.members, stmt.negated or (False,) * len(stmt.members)):
            if neg:
                parts.append("-")
            parts.append(print_statement(member))
        return "(" + "".join(parts) + ");"
    if isinstance(stmt, OutputStatement):
        prefix = f".{stmt.input_set} " if stmt.input_set else ""
        mods = (" " + " ".join(stmt.modifiers)) if stmt.modifiers else ""
        return f"{prefix}out{mods};"
    if isinstance(stmt, RecursionStatement):
        prefix = f".{stmt.input_set} " if stmt.input_set else ""
        return f"{prefix}{stmt.symbol};"
    if isinstance(stmt, Assignment):
        inner = print_statement(stmt.inner)
        assert inner.endswith(";")
        return f"{inner[:-1]}->.{stmt.target};"
    if isinstance(stmt, ForeachStatement):
        sets = f".{stmt.input_set}" if stmt.input_set else ""
        target = f"->.{stmt.target}" if stmt.target else ""
        body = "".join(print_statement(m) for m in stmt.members)
        return f"foreach{sets}{target}({body});"
    if isinstance(stmt, ConditionalStatement):
        then_body = "".join(print_statement(m) for m in stmt.then_members)
        text = f"if({stmt.condition})({then_body})"
        if stmt.else_members is not None:
            else_body = "".join(print_statement(m) for m in stmt.else_members)
            text += f"else({else_body})"
        return text + ";"
    if isinstance(stmt, RawStatement):
        return stmt.text
    raise TypeError(f"unknown statement type: {type(stmt).__name__}")


def print_query(ast: QueryAst) -> str:
    """Canonical textual form of a parsed query.

    Idempotent with :func:`ovb.parser.parse`: printing and re-parsing yields
    a structurally identical AST.
    """
    parts: list[str] = []
    if ast.settings:
        for setting in ast.settings:
            args = ":" + ",".join(setting.args) if setting.args else ""
            parts.append(f"[{setting.name}{args}]")
        parts.append(";")
    for stmt in ast.root.statements:
        parts.append(print_statement(stmt))
    return "".join(parts)
