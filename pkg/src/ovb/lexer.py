"""Lossless tokenizer for OverpassQL source text."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

__all__ = ["TokenKind", "Token", "LexError", "tokenize", "detokenize"]


class TokenKind(str, Enum):
    SETTING_OPEN = "setting-open"
    SETTING_CLOSE = "setting-close"
    IDENT = "ident"
    STRING = "string-literal"
    NUMBER = "number"
    OPERATOR = "operator"
    BRACKET_OPEN = "bracket-open"
    BRACKET_CLOSE = "bracket-close"
    PAREN_OPEN = "paren-open"
    PAREN_CLOSE = "paren-close"
    SEMICOLON = "semicolon"
    PLACEHOLDER = "template-placeholder"
    COMMENT = "comment"
    RECURSION_OP = "recursion-op"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    span: tuple[int, int] = field(compare=False, default=(0, 0))

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]


class LexError(ValueError):
    """Raised on an unterminated string literal or an illegal byte sequence."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


# Multi-character operators, longest first.  >> and << are always recursion
# operators; single > and < depend on statement context (see below).
_TWO_CHAR_OPS = ("->", "!=", "!~", "::", "==", ">=", "<=", "&&", "||")

_IDENT_START = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_"
)
_IDENT_CONT = _IDENT_START | frozenset("0123456789")
_WS = frozenset(" \t\r\n\f\v")

# Context tokens after which a bare > or < starts a recursion statement
# rather than a comparison.
_STMT_START_KINDS = frozenset(
    {TokenKind.SEMICOLON, TokenKind.PAREN_OPEN, TokenKind.SETTING_CLOSE}
)


def tokenize(source: str) -> list[Token]:
    """Tokenize OverpassQL losslessly.

    Every non-whitespace byte of ``source`` lands in exactly one token, token
    spans are strictly increasing, and each token's text equals its source
    slice, so the original input can be reconstructed from the stream (see
    :func:`detokenize`).  Comments are ordinary tokens.  The leading
    ``[out:...]`` settings block gets dedicated bracket kinds so the parser
    can treat it separately from tag filters.
    """
    tokens: list[Token] = []
    n = len(source)
    i = 0
    # Settings region: None = undecided, True = inside, False = past it.
    in_settings: bool | None = None
    s_bracket = 0
    s_paren = 0
    prev: Token | None = None

    def emit(kind: TokenKind, start: int, end: int) -> None:
        nonlocal prev
        tok = Token(kind, source[start:end], (start, end))
        tokens.append(tok)
        if kind is not TokenKind.COMMENT:
            prev = tok

    while i < n:
        c = source[i]
        if c in _WS:
            i += 1
            continue
        if "\ud800" <= c <= "\udfff":
            raise LexError("illegal byte sequence", i)
        start = i

        # Comments.
        if c == "/" and i + 1 < n and source[i + 1] == "/":
            j = source.find("\n", i)
            j = n if j < 0 else j
            emit(TokenKind.COMMENT, start, j)
            i = j
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "*":
            j = source.find("*/", i + 2)
            j = n if j < 0 else j + 2
            emit(TokenKind.COMMENT, start, j)
            i = j
            continue

        # Template placeholders like {{bbox}} are opaque single tokens.
        if c == "{" and i + 1 < n and source[i + 1] == "{":
            j = source.find("}}", i + 2)
            if j >= 0:
                emit(TokenKind.PLACEHOLDER, start, j + 2)
                i = j + 2
                if in_settings is None:
                    in_settings = False
                continue
            # No closing braces: fall through to the catch-all operator.

        # String literals keep their raw surface text (quotes and escapes);
        # unescaping happens when filters are interpreted.
        if c in "\"'":
            quote = c
            j = i + 1
            while j < n:
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == quote:
                    break
                j += 1
            if j >= n:
                raise LexError("unterminated string literal", start)
            emit(TokenKind.STRING, start, j + 1)
            i = j + 1
            if in_settings is None:
                in_settings = False
            continue

        if in_settings is None:
            in_settings = c == "["

        if c == "[":
            if in_settings:
                s_bracket += 1
                emit(TokenKind.SETTING_OPEN, start, i + 1)
            else:
                emit(TokenKind.BRACKET_OPEN, start, i + 1)
            i += 1
            continue
        if c == "]":
            if in_settings:
                s_bracket = max(0, s_bracket - 1)
                emit(TokenKind.SETTING_CLOSE, start, i + 1)
            else:
                emit(TokenKind.BRACKET_CLOSE, start, i + 1)
            i += 1
            continue
        if c == "(":
            if in_settings:
                s_paren += 1
            emit(TokenKind.PAREN_OPEN, start, i + 1)
            i += 1
            continue
        if c == ")":
            if in_settings:
                s_paren = max(0, s_paren - 1)
            emit(TokenKind.PAREN_CLOSE, start, i + 1)
            i += 1
            continue
        if c == ";":
            if in_settings and s_bracket == 0 and s_paren == 0:
                in_settings = False
            emit(TokenKind.SEMICOLON, start, i + 1)
            i += 1
            continue

        if c in ("<", ">") and i + 1 < n and source[i + 1] == c:
            emit(TokenKind.RECURSION_OP, start, i + 2)
            i += 2
            continue
        two = source[i : i + 2]
        if two in _TWO_CHAR_OPS:
            emit(TokenKind.OPERATOR, start, i + 2)
            i += 2
            continue
        if c in ("<", ">"):
            kind = (
                TokenKind.RECURSION_OP
                if prev is None or prev.kind in _STMT_START_KINDS
                else TokenKind.OPERATOR
            )
            emit(kind, start, i + 1)
            i += 1
            continue

        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            elif j == i:  # started at the dot
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            emit(TokenKind.NUMBER, start, j)
            i = j
            continue

        if c in _IDENT_START or ord(c) > 0x7F:
            j = i + 1
            while j < n and (source[j] in _IDENT_CONT or ord(source[j]) > 0x7F):
                if "\ud800" <= source[j] <= "\udfff":
                    raise LexError("illegal byte sequence", j)
                j += 1
            emit(TokenKind.IDENT, start, j)
            i = j
            continue

        # Catch-all: any other single byte is an operator token, so lexing
        # is total over well-formed UTF-8.
        emit(TokenKind.OPERATOR, start, i + 1)
        i += 1

    return tokens


def detokenize(tokens: Iterable[Token], source: str) -> str:
    """Reconstruct the input from a token stream and its inter-token bytes."""
    out: list[str] = []
    pos = 0
    for tok in tokens:
        out.append(source[pos : tok.start])
        out.append(tok.text)
        pos = tok.end
    out.append(source[pos:])
    return "".join(out)
