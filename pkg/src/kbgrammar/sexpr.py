"""S-expression reading and canonical printing.

Atoms are either :class:`Symbol` (bare words) or ``str`` (double-quoted string
literals). Lists are :class:`SList`, an immutable tuple that remembers the
source location it was read from. ``#(...)`` reads as an :class:`EvalForm`.
"""
from __future__ import annotations

from dataclasses import dataclass


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0, source: str = "<string>"):
        self.line = line
        self.col = col
        self.source = source
        super().__init__(f"{source}:{line}:{col}: {message}")


@dataclass(frozen=True, order=True)
class Symbol:
    name: str

    def __str__(self):
        return self.name


class SList(tuple):
    """Tuple with a source location; equality ignores the location."""

    loc: tuple[int, int]

    def __new__(cls, items=(), loc=(0, 0)):
        obj = super().__new__(cls, items)
        obj.loc = loc
        return obj

    def __repr__(self):
        return f"SList({tuple.__repr__(self)})"


@dataclass(frozen=True)
class EvalForm:
    expr: object


_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}
_DELIMS = set('()";')


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source
        self.i = 0
        self.line = 1
        self.col = 1

    def error(self, msg: str, line=None, col=None):
        raise ParseError(msg, line or self.line, col or self.col, self.source)

    def advance(self, n: int = 1):
        for _ in range(n):
            if self.text[self.i] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.i += 1

    def skip_ws(self):
        t = self.text
        while self.i < len(t):
            c = t[self.i]
            if c == ";":
                while self.i < len(t) and t[self.i] != "\n":
                    self.advance()
            elif c.isspace():
                self.advance()
            else:
                break

    def at_end(self) -> bool:
        self.skip_ws()
        return self.i >= len(self.text)

    def read(self):
        self.skip_ws()
        if self.i >= len(self.text):
            self.error("unexpected end of input")
        c = self.text[self.i]
        if c == "(":
            return self.read_list()
        if c == ")":
            self.error("unexpected ')'")
        if c == '"':
            return self.read_string()
        if c == "#" and self.text[self.i + 1: self.i + 2] == "(":
            self.advance()
            return EvalForm(self.read_list())
        return self.read_symbol()

    def read_list(self):
        loc = (self.line, self.col)
        self.advance()
        items = []
        while True:
            self.skip_ws()
            if self.i >= len(self.text):
                self.error("unclosed '('", *loc)
            if self.text[self.i] == ")":
                self.advance()
                return SList(items, loc)
            items.append(self.read())

    def read_string(self):
        loc = (self.line, self.col)
        self.advance()
        out = []
        t = self.text
        while True:
            if self.i >= len(t):
                self.error("unterminated string", *loc)
            c = t[self.i]
            if c == '"':
                self.advance()
                return "".join(out)
            if c == "\\":
                if self.i + 1 >= len(t):
                    self.error("unterminated string", *loc)
                e = t[self.i + 1]
                if e not in _ESCAPES:
                    self.error(f"unknown escape '\\{e}'")
                out.append(_ESCAPES[e])
                self.advance(2)
            else:
                out.append(c)
                self.advance()

    def read_symbol(self):
        start = self.i
        t = self.text
        while self.i < len(t) and not t[self.i].isspace() and t[self.i] not in _DELIMS:
            self.advance()
        return Symbol(t[start:self.i])


def parse_all(text: str, source: str = "<string>") -> list:
    reader = _Reader(text, source)
    out = []
    while not reader.at_end():
        out.append(reader.read())
    return out


def parse(text: str, source: str = "<string>"):
    """Parse exactly one S-expression."""
    reader = _Reader(text, source)
    expr = reader.read()
    if not reader.at_end():
        reader.error("trailing input after expression")
    return expr


def quote_string(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


def to_str(expr) -> str:
    """Canonical printer: single spaces, no trailing whitespace."""
    if isinstance(expr, Symbol):
        return expr.name
    if isinstance(expr, str):
        return quote_string(expr)
    if isinstance(expr, EvalForm):
        return "#" + to_str(expr.expr)
    if isinstance(expr, tuple):
        return "(" + " ".join(to_str(e) for e in expr) + ")"
    raise TypeError(f"cannot print {expr!r}")
