"""Datalog abstract syntax and the textual rule/fact format.

Grammar accepted by the parser:

    program   : (rule | fact)*
    rule      : literal ":-" body "."
    body      : blit ("," blit)*
    blit      : "not" literal | literal
    fact      : literal "."
    literal   : predicate "(" term ("," term)* ")"
    predicate : [a-z][a-zA-Z0-9_]*
    term      : variable | string | integer
    variable  : "?" [A-Za-z_][A-Za-z0-9_]*
    string    : double-quoted, backslash escapes the next character
    integer   : optional "-" followed by decimal digits

Comments run from ``%`` to end of line.  ``not`` is a reserved word and
cannot be used as a predicate name.  Negation is only legal in rule
bodies.  Facts must be ground (no variables).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True)
class Constant:
    value: str | int

    def __str__(self) -> str:
        if isinstance(self.value, int):
            return str(self.value)
        escaped = self.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[Term, ...]
    negated: bool = False

    def __str__(self) -> str:
        inner = ", ".join(str(a) for a in self.args)
        text = f"{self.predicate}({inner})"
        return "not " + text if self.negated else text

    def is_ground(self) -> bool:
        return all(isinstance(a, Constant) for a in self.args)

    def variables(self) -> set[str]:
        return {a.name for a in self.args if isinstance(a, Variable)}

    def values(self) -> tuple[str | int, ...]:
        """Raw argument values; only valid on ground literals."""
        return tuple(a.value for a in self.args)  # type: ignore[union-attr]


def ground(predicate: str, *values: str | int) -> Literal:
    """Build a ground literal from raw argument values."""
    return Literal(predicate, tuple(Constant(v) for v in values))


@dataclass(frozen=True)
class Rule:
    head: Literal
    body: tuple[Literal, ...]

    def __str__(self) -> str:
        return f"{self.head} :- {', '.join(str(b) for b in self.body)}"


@dataclass
class Program:
    rules: list[Rule] = field(default_factory=list)
    facts: list[Literal] = field(default_factory=list)

    def predicates(self) -> set[str]:
        preds = {f.predicate for f in self.facts}
        for rule in self.rules:
            preds.add(rule.head.predicate)
            preds.update(b.predicate for b in rule.body)
        return preds


@dataclass
class SafetyViolation:
    rule_index: int
    variable: str
    reason: str

    def __str__(self) -> str:
        return f"rule {self.rule_index}: variable ?{self.variable} {self.reason}"


class ParseError(ValueError):
    """Syntax error with source position and an expected-token hint."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<implies>:-)
  | (?P<lpar>\()
  | (?P<rpar>\))
  | (?P<comma>,)
  | (?P<dot>\.)
  | (?P<variable>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:\\.|[^"\\])*")
  | (?P<integer>-?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_RESERVED = frozenset({"not"})


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(source: str) -> Iterator[_Token]:
    pos = 0
    line = 1
    line_start = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ParseError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1
            )
        kind = match.lastgroup or ""
        text = match.group()
        if kind not in ("ws", "comment"):
            yield _Token(kind, text, line, pos - line_start + 1)
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = match.end()
    yield _Token("eof", "", line, pos - line_start + 1)


def _unescape(quoted: str) -> str:
    body = quoted[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _shown(tok: _Token) -> str:
    return repr(tok.text) if tok.text else "end of input"


class _Parser:
    def __init__(self, source: str):
        self._tokens = list(_tokenize(source))
        self._pos = 0

    def _peek(self) -> _Token:
        return self._tokens[self._pos]

    def _advance(self) -> _Token:
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def _expect(self, kind: str, what: str) -> _Token:
        tok = self._peek()
        if tok.kind != kind:
            raise ParseError(f"expected {what}, found {_shown(tok)}", tok.line, tok.column)
        return self._advance()

    def _error(self, message: str) -> ParseError:
        tok = self._peek()
        return ParseError(message, tok.line, tok.column)

    def parse_term(self) -> Term:
        tok = self._peek()
        if tok.kind == "variable":
            self._advance()
            return Variable(tok.text[1:])
        if tok.kind == "string":
            self._advance()
            return Constant(_unescape(tok.text))
        if tok.kind == "integer":
            self._advance()
            return Constant(int(tok.text))
        raise self._error(
            f"expected term (variable, string or integer), found {_shown(tok)}"
        )

    def parse_literal(self) -> Literal:
        negated = False
        tok = self._peek()
        if tok.kind == "ident" and tok.text == "not":
            self._advance()
            negated = True
            tok = self._peek()
        if tok.kind != "ident":
            raise self._error(f"expected predicate name, found {_shown(tok)}")
        if tok.text in _RESERVED:
            raise ParseError(
                f"{tok.text!r} is a reserved word, not a predicate", tok.line, tok.column
            )
        if not re.fullmatch(r"[a-z][a-zA-Z0-9_]*", tok.text):
            raise ParseError(
                f"predicate names must start lowercase: {tok.text!r}", tok.line, tok.column
            )
        self._advance()
        self._expect("lpar", "'('")
        args = [self.parse_term()]
        while self._peek().kind == "comma":
            self._advance()
            args.append(self.parse_term())
        self._expect("rpar", "')'")
        return Literal(tok.text, tuple(args), negated)

    def parse_statement(self) -> Rule | Literal:
        start = self._peek()
        head = self.parse_literal()
        tok = self._peek()
        if tok.kind == "dot":
            self._advance()
            if head.negated:
                raise ParseError("negative fact is not allowed", start.line, start.column)
            if not head.is_ground():
                var = sorted(head.variables())[0]
                raise ParseError(
                    f"non-ground fact: variable ?{var} in fact", start.line, start.column
                )
            return head
        if tok.kind == "implies":
            if head.negated:
                raise ParseError(
                    "negative literal in rule head", start.line, start.column
                )
            self._advance()
            body = [self.parse_literal()]
            while self._peek().kind == "comma":
                self._advance()
                body.append(self.parse_literal())
            self._expect("dot", "'.'")
            return Rule(head, tuple(body))
        raise self._error(f"expected '.' or ':-', found {_shown(tok)}")

    def parse_program(self) -> Program:
        program = Program()
        seen_rules: set[Rule] = set()
        while self._peek().kind != "eof":
            stmt = self.parse_statement()
            if isinstance(stmt, Rule):
                if stmt not in seen_rules:
                    seen_rules.add(stmt)
                    program.rules.append(stmt)
            else:
                program.facts.append(stmt)
        return program


def parse_program(source: str) -> Program:
    """Parse rules and facts, preserving order; duplicate rules collapse."""
    return _Parser(source).parse_program()


def parse_fact_file(source: str) -> list[Literal]:
    """Parse a facts-only file; any rule in the source is an error."""
    parser = _Parser(source)
    facts: list[Literal] = []
    while parser._peek().kind != "eof":
        start = parser._peek()
        stmt = parser.parse_statement()
        if isinstance(stmt, Rule):
            raise ParseError("rule not allowed in fact file", start.line, start.column)
        facts.append(stmt)
    return facts


def check_safety(program: Program) -> list[SafetyViolation]:
    """Report head or negated-body variables not bound by a positive literal."""
    violations: list[SafetyViolation] = []
    for index, rule in enumerate(program.rules):
        positive_vars: set[str] = set()
        for lit in rule.body:
            if not lit.negated:
                positive_vars.update(lit.variables())
        for var in sorted(rule.head.variables() - positive_vars):
            violations.append(
                SafetyViolation(index, var, "in head but not in any positive body literal")
            )
        for lit in rule.body:
            if lit.negated:
                for var in sorted(lit.variables() - positive_vars):
                    violations.append(
                        SafetyViolation(
                            index, var, "in negated literal but not in any positive body literal"
                        )
                    )
    return violations


def format_program(program: Program) -> str:
    """Render a program so that it re-parses to a structurally equal AST."""
    lines = [f"{fact}." for fact in program.facts]
    lines.extend(f"{rule}." for rule in program.rules)
    return "\n".join(lines) + ("\n" if lines else "")


def format_facts(facts: list[Literal]) -> str:
    """Render ground literals one per line in fact-file format."""
    return "\n".join(f"{fact}." for fact in facts) + ("\n" if facts else "")
