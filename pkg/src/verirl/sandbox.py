"""A closed integer expression language over one variable ``x``.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '//' | '%') unary)*
    unary  := '-' unary | atom
    atom   := INT | 'x' | '(' expr ')'

Evaluation counts every node visit against a step budget, and literals and
intermediate values are bounded, so no candidate can run away.
"""

from __future__ import annotations

import re

MAX_STEPS = 10_000
MAX_DEPTH = 64
MAX_SOURCE = 512
MAX_MAGNITUDE = 10**18


class SandboxError(Exception):
    pass


_TOKEN = re.compile(r"\s*(?:(\d+)|(x)|(//|[-+*%()]))")


def tokenize(source: str) -> list[str]:
    if len(source) > MAX_SOURCE:
        raise SandboxError("program too long")
    tokens: list[str] = []
    pos = 0
    while pos < len(source):
        if source[pos:].isspace():
            break
        m = _TOKEN.match(source, pos)
        if not m:
            raise SandboxError(f"unexpected character at {pos}: {source[pos]!r}")
        tokens.append(m.group(m.lastindex))
        pos = m.end()
    if not tokens:
        raise SandboxError("empty program")
    return tokens


class _Parser:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> str | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise SandboxError("unexpected end of program")
        self.i += 1
        return tok

    def expr(self, depth: int) -> tuple:
        node = self.term(depth + 1)
        while self.peek() in ("+", "-"):
            node = (self.take(), node, self.term(depth + 1))
        return node

    def term(self, depth: int) -> tuple:
        node = self.unary(depth + 1)
        while self.peek() in ("*", "//", "%"):
            node = (self.take(), node, self.unary(depth + 1))
        return node

    def unary(self, depth: int) -> tuple:
        if depth > MAX_DEPTH:
            raise SandboxError("nesting too deep")
        if self.peek() == "-":
            self.take()
            return ("neg", self.unary(depth + 1))
        return self.atom(depth + 1)

    def atom(self, depth: int) -> tuple:
        tok = self.take()
        if tok == "x":
            return ("x",)
        if tok == "(":
            node = self.expr(depth + 1)
            if self.take() != ")":
                raise SandboxError("expected ')'")
            return node
        if tok.isdigit():
            value = int(tok)
            if value > MAX_MAGNITUDE:
                raise SandboxError("literal too large")
            return ("int", value)
        raise SandboxError(f"unexpected token {tok!r}")


def compile_program(source: str) -> tuple:
    parser = _Parser(tokenize(source))
    tree = parser.expr(0)
    if parser.peek() is not None:
        raise SandboxError(f"trailing token {parser.peek()!r}")
    return tree


def evaluate(tree: tuple, x: int, max_steps: int = MAX_STEPS) -> int:
    budget = [max_steps]

    def ev(node: tuple) -> int:
        budget[0] -= 1
        if budget[0] < 0:
            raise SandboxError("step limit exceeded")
        op = node[0]
        if op == "int":
            return node[1]
        if op == "x":
            return x
        if op == "neg":
            return -ev(node[1])
        a, b = ev(node[1]), ev(node[2])
        if op == "+":
            out = a + b
        elif op == "-":
            out = a - b
        elif op == "*":
            out = a * b
        else:
            if b == 0:
                raise SandboxError("division by zero")
            out = a // b if op == "//" else a % b
        if abs(out) > MAX_MAGNITUDE:
            raise SandboxError("value out of range")
        return out

    return ev(tree)


def run_tests(source: str, tests) -> bool:
    """True iff the program compiles and matches every (input, output) pair."""
    try:
        tree = compile_program(source)
        return all(evaluate(tree, int(inp)) == int(out) for inp, out in tests)
    except SandboxError:
        return False
