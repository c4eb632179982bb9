"""Recursive-descent OverpassQL parser with graceful raw-node fallback.

Constructs the parser cannot classify are preserved verbatim as
:class:`RawStatement` nodes, never dropped, so downstream tag extraction and
tree canonicalization degrade gracefully.  Hard failures are limited to
unbalanced brackets and malformed settings blocks.
"""

from __future__ import annotations

import re

from .ast import (
    Assignment,
    BlockStatement,
    ConditionalStatement,
    Filter,
    ForeachStatement,
    OutputStatement,
    Program,
    QueryAst,
    QueryStatement,
    RawStatement,
    RecursionStatement,
    Relation,
    Setting,
    SpatialFilter,
    Statement,
    TagFilter,
    unescape_string,
)
from .lexer import LexError, Token, TokenKind, tokenize

__all__ = ["ParseError", "parse"]

# Statement keywords that open an element query.  Aliases are normalized.
_QUERY_KINDS = {
    "node": "node",
    "way": "way",
    "relation": "relation",
    "rel": "relation",
    "area": "area",
    "nwr": "nwr",
    "nw": "nw",
    "nr": "nr",
    "wr": "wr",
    "derived": "derived",
}

_RECURSION_SYMBOLS = {">", "<", ">>", "<<"}

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
_PLACEHOLDER_RE = re.compile(r"\{\{.*\}\}", re.S)


class ParseError(ValueError):
    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += " (expected one of: " + ", ".join(sorted(expected)) + ")"
        super().__init__(detail)
        self.offset = offset
        self.expected = expected


class _Backtrack(Exception):
    """Internal: abandon a structured parse and re-scan the statement as raw."""


class _Parser:
    def __init__(self, source: str, tokens: list[Token]):
        self.source = source
        self.tokens = [t for t in tokens if t.kind is not TokenKind.COMMENT]
        self.pos = 0

    # -- token helpers -----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token | None:
        idx = self.pos + ahead
        return self.tokens[idx] if idx < len(self.tokens) else None

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def _eof_offset(self) -> int:
        return len(self.source)

    # -- settings ----------------------------------------------------------

    def parse_settings(self) -> tuple[Setting, ...]:
        settings: list[Setting] = []
        while (tok := self.peek()) is not None and tok.kind is TokenKind.SETTING_OPEN:
            open_tok = self.advance()
            name_tok = self.peek()
            if name_tok is None or name_tok.kind is not TokenKind.IDENT:
                raise ParseError(
                    "malformed settings block",
                    name_tok.start if name_tok else self._eof_offset(),
                    frozenset({"ident"}),
                )
            self.advance()
            args: tuple[str, ...] = ()
            nxt = self.peek()
            if nxt is not None and nxt.kind is TokenKind.OPERATOR and nxt.text == ":":
                self.advance()
                args = self._setting_args()
                nxt = self.peek()
            if nxt is None or nxt.kind is not TokenKind.SETTING_CLOSE:
                raise ParseError(
                    "malformed settings block",
                    nxt.start if nxt else self._eof_offset(),
                    frozenset({"]"}),
                )
            close_tok = self.advance()
            settings.append(
                Setting(name_tok.text, args, span=(open_tok.start, close_tok.end))
            )
        if settings:
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.SEMICOLON:
                raise ParseError(
                    "malformed settings block",
                    tok.start if tok else self._eof_offset(),
                    frozenset({"[", ";"}),
                )
            self.advance()
        return tuple(settings)

    def _setting_args(self) -> tuple[str, ...]:
        """Comma-separated args up to the closing bracket, parens respected."""
        args: list[str] = []
        group: list[Token] = []
        depth = 0
        while True:
            tok = self.peek()
            if tok is None:
                raise ParseError(
                    "malformed settings block", self._eof_offset(), frozenset({"]"})
                )
            if tok.kind is TokenKind.SETTING_CLOSE and depth == 0:
                break
            if tok.kind is TokenKind.PAREN_OPEN:
                depth += 1
            elif tok.kind is TokenKind.PAREN_CLOSE:
                depth = max(0, depth - 1)
            elif tok.kind is TokenKind.OPERATOR and tok.text == "," and depth == 0:
                args.append(self._slice_of(group))
                group = []
                self.advance()
                continue
            group.append(self.advance())
        args.append(self._slice_of(group))
        return tuple(args)

    def _slice_of(self, group: list[Token]) -> str:
        if not group:
            return ""
        return self.source[group[0].start : group[-1].end].strip()

    # -- statements ----------------------------------------------------------

    def parse_statements(self, inside_block: bool) -> tuple[tuple[Statement, ...], tuple[bool, ...]]:
        statements: list[Statement] = []
        negated: list[bool] = []
        while True:
            tok = self.peek()
            if tok is None:
                break
            if inside_block and tok.kind is TokenKind.PAREN_CLOSE:
                break
            if tok.kind is TokenKind.SEMICOLON:
                self.advance()
                continue
            neg = False
            if (
                inside_block
                and tok.kind is TokenKind.OPERATOR
                and tok.text == "-"
            ):
                self.advance()
                neg = True
            statements.append(self.parse_statement(inside_block))
            negated.append(neg)
        return tuple(statements), tuple(negated)

    def parse_statement(self, inside_block: bool) -> Statement:
        start_pos = self.pos
        try:
            return self._parse_structured(inside_block)
        except _Backtrack:
            self.pos = start_pos
            return self._parse_raw(inside_block)

    def _parse_structured(self, inside_block: bool) -> Statement:
        tok = self.peek()
        assert tok is not None
        if tok.kind is TokenKind.PAREN_OPEN:
            return self._parse_block()
        if tok.kind is TokenKind.RECURSION_OP or (
            tok.kind is TokenKind.OPERATOR and tok.text in _RECURSION_SYMBOLS
        ):
            return self._parse_recursion(input_set=None, start=tok.start)
        if tok.kind is TokenKind.OPERATOR and tok.text == ".":
            return self._parse_set_prefixed()
        if tok.kind is TokenKind.IDENT:
            if tok.text in _QUERY_KINDS:
                return self._parse_query(inside_block)
            if tok.text == "out":
                return self._parse_output(input_set=None, start=tok.start)
            if tok.text == "foreach":
                return self._parse_foreach()
            if tok.text == "if":
                return self._parse_conditional()
        raise _Backtrack

    # Set-prefixed statements: ".a out;" or ".a >;".
    def _parse_set_prefixed(self) -> Statement:
        start = self.peek().start  # type: ignore[union-attr]
        names: list[str] = []
        while (tok := self.peek()) is not None and tok.kind is TokenKind.OPERATOR and tok.text == ".":
            name = self.peek(1)
            if name is None or name.kind is not TokenKind.IDENT:
                raise _Backtrack
            self.advance()
            self.advance()
            names.append(name.text)
        tok = self.peek()
        if tok is None:
            raise _Backtrack
        input_set = names[-1]
        if tok.kind is TokenKind.IDENT and tok.text == "out":
            return self._parse_output(input_set, start)
        if tok.kind is TokenKind.RECURSION_OP or (
            tok.kind is TokenKind.OPERATOR and tok.text in _RECURSION_SYMBOLS
        ):
            return self._parse_recursion(input_set, start)
        raise _Backtrack

    def _parse_query(self, inside_block: bool) -> Statement:
        kind_tok = self.advance()
        kind = _QUERY_KINDS[kind_tok.text]
        filters: list[Filter] = []
        input_sets: list[str] = []
        end = kind_tok.end
        while True:
            tok = self.peek()
            if tok is None:
                break
            if tok.kind is TokenKind.SEMICOLON:
                end = self.advance().end
                break
            if inside_block and tok.kind is TokenKind.PAREN_CLOSE:
                break
            if tok.kind is TokenKind.OPERATOR and tok.text == ".":
                name = self.peek(1)
                if name is None or name.kind is not TokenKind.IDENT:
                    raise _Backtrack
                self.advance()
                self.advance()
                input_sets.append(name.text)
                end = name.end
                continue
            if tok.kind is TokenKind.BRACKET_OPEN:
                filters.append(self._parse_tag_filter())
                end = filters[-1].span[1]
                continue
            if tok.kind is TokenKind.PAREN_OPEN:
                filters.append(self._parse_paren_filter())
                end = filters[-1].span[1]
                continue
            if tok.kind is TokenKind.OPERATOR and tok.text == "->":
                stmt = QueryStatement(
                    kind,
                    tuple(filters),
                    tuple(input_sets),
                    span=(kind_tok.start, end),
                )
                return self._parse_assignment_suffix(stmt, kind_tok.start, inside_block)
            raise _Backtrack
        return QueryStatement(
            kind, tuple(filters), tuple(input_sets), span=(kind_tok.start, end)
        )

    def _parse_assignment_suffix(
        self, inner: Statement, start: int, inside_block: bool
    ) -> Assignment:
        arrow = self.advance()
        dot = self.peek()
        name = self.peek(1)
        if (
            dot is None
            or dot.kind is not TokenKind.OPERATOR
            or dot.text != "."
            or name is None
            or name.kind is not TokenKind.IDENT
        ):
            raise _Backtrack
        self.advance()
        self.advance()
        end = name.end
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.SEMICOLON:
            end = self.advance().end
        elif tok is not None and not (
            inside_block and tok.kind is TokenKind.PAREN_CLOSE
        ):
            raise _Backtrack
        del arrow
        return Assignment(name.text, inner, span=(start, end))

    def _parse_tag_filter(self) -> TagFilter:
        open_tok = self.advance()
        # A bracket filter may not contain a semicolon; hitting one (or EOF)
        # before the closing bracket is a hard syntax error.  Anything else
        # that fails the filter grammar falls back to a raw statement.
        scan = self.pos
        balanced = False
        while scan < len(self.tokens):
            t = self.tokens[scan]
            if t.kind is TokenKind.SEMICOLON:
                raise ParseError(
                    "unbalanced bracket", t.start, frozenset({"]"})
                )
            if t.kind is TokenKind.BRACKET_CLOSE:
                balanced = True
                break
            scan += 1
        if not balanced:
            raise ParseError(
                "unbalanced bracket", self._eof_offset(), frozenset({"]"})
            )

        negated = False
        key_regex = False
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == "!":
            negated = True
            self.advance()
        elif tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == "~":
            key_regex = True
            self.advance()

        key = self._parse_atom()
        if key is None:
            raise _Backtrack

        tok = self.peek()
        relation: Relation | None = None
        value: str | None = None
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in ("=", "!=", "~", "!~"):
            op = self.advance().text
            value = self._parse_atom()
            if value is None:
                raise _Backtrack
            if key_regex:
                if op != "~":
                    raise _Backtrack
                relation = Relation.KEY_REGEX
            else:
                relation = {
                    "=": Relation.EQUALS,
                    "!=": Relation.NOT_EQUALS,
                    "~": Relation.REGEX,
                    "!~": Relation.NOT_REGEX,
                }[op]
            if negated:
                raise _Backtrack
        else:
            if key_regex:
                raise _Backtrack
            relation = Relation.NOT_EXISTS if negated else Relation.EXISTS

        ignore_case = False
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == ",":
            flag = self.peek(1)
            if flag is not None and flag.kind is TokenKind.IDENT and flag.text == "i":
                self.advance()
                self.advance()
                ignore_case = True
            else:
                raise _Backtrack
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.BRACKET_CLOSE:
            raise _Backtrack
        close_tok = self.advance()
        return TagFilter(
            key,
            relation,
            value,
            ignore_case,
            span=(open_tok.start, close_tok.end),
        )

    def _parse_atom(self) -> str | None:
        """A quoted string, or a run of bare tokens forming a key/value."""
        tok = self.peek()
        if tok is None:
            return None
        if tok.kind is TokenKind.STRING:
            self.advance()
            return unescape_string(tok.text[1:-1])
        parts: list[str] = []
        while (tok := self.peek()) is not None:
            if tok.kind in (TokenKind.IDENT, TokenKind.NUMBER):
                parts.append(self.advance().text)
                continue
            if tok.kind is TokenKind.OPERATOR and tok.text in (":", "-", "_", "."):
                parts.append(self.advance().text)
                continue
            break
        return "".join(parts) if parts else None

    def _parse_paren_filter(self) -> SpatialFilter:
        open_tok = self.advance()
        depth = 0
        scan = self.pos
        close_idx: int | None = None
        while scan < len(self.tokens):
            t = self.tokens[scan]
            if t.kind is TokenKind.PAREN_OPEN:
                depth += 1
            elif t.kind is TokenKind.PAREN_CLOSE:
                if depth == 0:
                    close_idx = scan
                    break
                depth -= 1
            scan += 1
        if close_idx is None:
            raise ParseError(
                "unbalanced parenthesis", self._eof_offset(), frozenset({")"})
            )
        close_tok = self.tokens[close_idx]
        text = self.source[open_tok.end : close_tok.start].strip()
        self.pos = close_idx + 1
        return SpatialFilter(
            _classify_paren_filter(text),
            text,
            span=(open_tok.start, close_tok.end),
        )

    def _parse_block(self) -> Statement:
        open_tok = self.advance()
        members, negated = self.parse_statements(inside_block=True)
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_CLOSE:
            raise ParseError(
                "unbalanced parenthesis",
                tok.start if tok else self._eof_offset(),
                frozenset({")"}),
            )
        close_tok = self.advance()
        end = close_tok.end
        block = BlockStatement(members, negated, span=(open_tok.start, end))
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == "->":
            return self._parse_assignment_suffix(block, open_tok.start, inside_block=False)
        if tok is not None and tok.kind is TokenKind.SEMICOLON:
            end = self.advance().end
            block = BlockStatement(members, negated, span=(open_tok.start, end))
        return block

    def _parse_output(self, input_set: str | None, start: int) -> OutputStatement:
        out_tok = self.advance()
        modifiers: list[str] = []
        end = out_tok.end
        depth = 0
        while True:
            tok = self.peek()
            if tok is None:
                break
            if tok.kind is TokenKind.SEMICOLON:
                end = self.advance().end
                break
            if tok.kind is TokenKind.PAREN_CLOSE and depth == 0:
                break
            if tok.kind is TokenKind.PAREN_OPEN:
                depth += 1
            elif tok.kind is TokenKind.PAREN_CLOSE:
                depth -= 1
            modifiers.append(self.advance().text)
            end = tok.end
        return OutputStatement(tuple(modifiers), input_set, span=(start, end))

    def _parse_recursion(self, input_set: str | None, start: int) -> Statement:
        sym_tok = self.advance()
        end = sym_tok.end
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == "->":
            stmt = RecursionStatement(sym_tok.text, input_set, span=(start, end))
            return self._parse_assignment_suffix(stmt, start, inside_block=False)
        if tok is not None and tok.kind is TokenKind.SEMICOLON:
            end = self.advance().end
        elif tok is not None and tok.kind is not TokenKind.PAREN_CLOSE:
            raise _Backtrack
        return RecursionStatement(sym_tok.text, input_set, span=(start, end))

    def _parse_foreach(self) -> ForeachStatement:
        kw = self.advance()
        input_set: str | None = None
        target: str | None = None
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == ".":
            name = self.peek(1)
            if name is None or name.kind is not TokenKind.IDENT:
                raise _Backtrack
            self.advance()
            self.advance()
            input_set = name.text
            tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text == "->":
            dot = self.peek(1)
            name = self.peek(2)
            if (
                dot is None
                or dot.kind is not TokenKind.OPERATOR
                or dot.text != "."
                or name is None
                or name.kind is not TokenKind.IDENT
            ):
                raise _Backtrack
            self.advance()
            self.advance()
            self.advance()
            target = name.text
            tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_OPEN:
            raise _Backtrack
        self.advance()
        members, _ = self.parse_statements(inside_block=True)
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_CLOSE:
            raise ParseError(
                "unbalanced parenthesis",
                tok.start if tok else self._eof_offset(),
                frozenset({")"}),
            )
        end = self.advance().end
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.SEMICOLON:
            end = self.advance().end
        return ForeachStatement(members, input_set, target, span=(kw.start, end))

    def _parse_conditional(self) -> ConditionalStatement:
        kw = self.advance()
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_OPEN:
            raise _Backtrack
        cond_filter = self._parse_paren_filter()
        condition = cond_filter.text
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_OPEN:
            raise _Backtrack
        self.advance()
        then_members, _ = self.parse_statements(inside_block=True)
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.PAREN_CLOSE:
            raise ParseError(
                "unbalanced parenthesis",
                tok.start if tok else self._eof_offset(),
                frozenset({")"}),
            )
        end = self.advance().end
        else_members: tuple[Statement, ...] | None = None
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.IDENT and tok.text == "else":
            paren = self.peek(1)
            if paren is None or paren.kind is not TokenKind.PAREN_OPEN:
                raise _Backtrack
            self.advance()
            self.advance()
            else_members, _ = self.parse_statements(inside_block=True)
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.PAREN_CLOSE:
                raise ParseError(
                    "unbalanced parenthesis",
                    tok.start if tok else self._eof_offset(),
                    frozenset({")"}),
                )
            end = self.advance().end
            tok = self.peek()
        if tok is not None and tok.kind is TokenKind.SEMICOLON:
            end = self.advance().end
        return ConditionalStatement(
            condition, then_members, else_members, span=(kw.start, end)
        )

    def _parse_raw(self, inside_block: bool) -> RawStatement:
        start_tok = self.tokens[self.pos]
        brackets = 0
        parens = 0
        braces = 0
        opener_stack: list[Token] = []
        end = start_tok.end
        while not self.at_end():
            tok = self.peek()
            assert tok is not None
            if tok.kind is TokenKind.BRACKET_OPEN:
                brackets += 1
                opener_stack.append(tok)
            elif tok.kind is TokenKind.BRACKET_CLOSE:
                if brackets > 0:
                    brackets -= 1
                    opener_stack.pop()
            elif tok.kind is TokenKind.PAREN_OPEN:
                parens += 1
                opener_stack.append(tok)
            elif tok.kind is TokenKind.PAREN_CLOSE:
                if parens > 0:
                    parens -= 1
                    opener_stack.pop()
                elif inside_block:
                    break
            elif tok.kind is TokenKind.OPERATOR and tok.text == "{":
                braces += 1
                opener_stack.append(tok)
            elif tok.kind is TokenKind.OPERATOR and tok.text == "}":
                if braces > 0:
                    braces -= 1
                    opener_stack.pop()
            elif (
                tok.kind is TokenKind.SEMICOLON
                and brackets == 0
                and parens == 0
                and braces == 0
            ):
                end = self.advance().end
                break
            end = self.advance().end
        else:
            if brackets or parens:
                opener = opener_stack[0]
                expected = "]" if opener.kind is TokenKind.BRACKET_OPEN else ")"
                raise ParseError(
                    "unbalanced bracket"
                    if opener.kind is TokenKind.BRACKET_OPEN
                    else "unbalanced parenthesis",
                    opener.start,
                    frozenset({expected}),
                )
        text = self.source[start_tok.start : end]
        return RawStatement(text, span=(start_tok.start, end))


def _classify_paren_filter(text: str) -> str:
    if not text:
        return "raw"
    if _PLACEHOLDER_RE.fullmatch(text):
        return "placeholder"
    if _NUMBER_RE.fullmatch(text):
        return "id"
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 4 and all(_NUMBER_RE.fullmatch(p) for p in parts):
        return "bbox"
    head = text.split(":", 1)[0].split(".", 1)[0].strip().lower()
    if head == "if":
        return "if-condition"
    if head == "around":
        return "around"
    if head in ("area", "pivot"):
        return "area-ref"
    if head == "id":
        return "id"
    return "raw"


def parse(source: str) -> QueryAst:
    """Parse OverpassQL into a :class:`QueryAst`.

    Raises :class:`ParseError` on unbalanced brackets or a malformed
    settings block; everything else parses, with unclassifiable constructs
    preserved as raw statements.
    """
    try:
        tokens = tokenize(source)
    except LexError as exc:
        raise ParseError(str(exc).rsplit(" at offset ", 1)[0], exc.offset) from exc
    parser = _Parser(source, tokens)
    settings = parser.parse_settings()
    statements, _ = parser.parse_statements(inside_block=False)
    root = Program(statements, span=(0, len(source)))
    return QueryAst(settings, root, source)
