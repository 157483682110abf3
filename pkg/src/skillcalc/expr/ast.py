"""Expression trees, a precedence parser and the exact integer evaluator.

The parser is a small precedence-climbing recursive descent over token ids:
``*`` and ``/`` bind tighter than ``+`` and ``-``, all four are
left-associative and parentheses override.  Parenthesised groups are kept on
the nodes (``paren=True``) so the tree renders back to its source text.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

from .alphabet import (
    DIVIDE, LPAREN, MINUS, PLUS, RPAREN, TIMES, SYMBOLS, is_digit, tokenize,
)


class ExprSyntaxError(ValueError):
    def __init__(self, position: int, message: str = "syntax error"):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DivisionByZero(ZeroDivisionError):
    pass


class InexactDivision(ArithmeticError):
    pass


@dataclass(frozen=True)
class Literal:
    value: int
    paren: bool = False


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    paren: bool = False


Node = Union[Literal, BinOp]

PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}
_OP_CHAR = {PLUS: "+", MINUS: "-", TIMES: "*", DIVIDE: "/"}


def parse(seq: Union[str, Sequence[int]]) -> Node:
    ids = tokenize(seq) if isinstance(seq, str) else tuple(seq)
    if not ids:
        raise ExprSyntaxError(0, "empty expression")
    parser = _Parser(ids)
    node = parser.expression(1)
    if parser.pos != len(ids):
        # a stray ')' or an operand directly after a complete operand
        raise ExprSyntaxError(parser.pos, "unexpected token")
    return node


class _Parser:
    def __init__(self, ids: Sequence[int]):
        self.ids = ids
        self.pos = 0

    def peek(self):
        return self.ids[self.pos] if self.pos < len(self.ids) else None

    def expression(self, min_prec: int) -> Node:
        left = self.operand()
        while True:
            tok = self.peek()
            op = _OP_CHAR.get(tok)
            if op is None or PRECEDENCE[op] < min_prec:
                return left
            self.pos += 1
            right = self.expression(PRECEDENCE[op] + 1)
            left = BinOp(op, left, right)

    def operand(self) -> Node:
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError(self.pos, "missing operand")
        if is_digit(tok):
            start = self.pos
            while self.pos < len(self.ids) and is_digit(self.ids[self.pos]):
                self.pos += 1
            value = int("".join(SYMBOLS[i] for i in self.ids[start:self.pos]))
            return Literal(value)
        if tok == LPAREN:
            self.pos += 1
            inner = self.expression(1)
            if self.peek() != RPAREN:
                raise ExprSyntaxError(self.pos, "unbalanced parenthesis")
            self.pos += 1
            return _with_paren(inner)
        raise ExprSyntaxError(self.pos, "missing operand")


def _with_paren(node: Node) -> Node:
    if isinstance(node, Literal):
        return Literal(node.value, paren=True)
    return BinOp(node.op, node.left, node.right, paren=True)


def apply_op(op: str, a: int, b: int) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise DivisionByZero(f"{a}/0")
        if a % b:
            raise InexactDivision(f"{a}/{b} leaves remainder {a % b}")
        return a // b
    raise ValueError(f"unknown operator {op!r}")


def evaluate(node: Node) -> int:
    if isinstance(node, Literal):
        return node.value
    return apply_op(node.op, evaluate(node.left), evaluate(node.right))


def to_string(node: Node, minimal: bool = False) -> str:
    """Render a tree.  With ``minimal`` the recorded parentheses are ignored
    and only the ones precedence requires are emitted."""
    if minimal:
        return _render_min(node, 0, False)
    if isinstance(node, Literal):
        text = str(node.value)
    else:
        text = to_string(node.left) + node.op + to_string(node.right)
    return f"({text})" if node.paren else text


def _render_min(node: Node, parent_prec: int, right_side: bool) -> str:
    if isinstance(node, Literal):
        return str(node.value)
    prec = PRECEDENCE[node.op]
    text = (_render_min(node.left, prec, False) + node.op
            + _render_min(node.right, prec, True))
    if prec < parent_prec or (right_side and prec == parent_prec):
        return f"({text})"
    return text


def count_operators(node: Node) -> int:
    if isinstance(node, Literal):
        return 0
    return 1 + count_operators(node.left) + count_operators(node.right)


def strip_parens(node: Node) -> Node:
    if isinstance(node, Literal):
        return Literal(node.value)
    return BinOp(node.op, strip_parens(node.left), strip_parens(node.right))
