"""Shunting-yard evaluator.

Kept structurally independent of :mod:`skillcalc.expr.ast` (no shared parser,
no tree) so the two can cross-check each other.  Only the error classes and
the exact-division rule are shared, because they are part of the contract.
"""

from typing import Sequence, Union

from .alphabet import tokenize
from .ast import DivisionByZero, ExprSyntaxError, InexactDivision

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _apply(values: list, op: str) -> None:
    b = values.pop()
    a = values.pop()
    if op == "+":
        values.append(a + b)
    elif op == "-":
        values.append(a - b)
    elif op == "*":
        values.append(a * b)
    else:
        if b == 0:
            raise DivisionByZero(f"{a}/0")
        q, r = divmod(a, b)
        if r:
            raise InexactDivision(f"{a}/{b} leaves remainder {r}")
        values.append(q)


def to_rpn(text: str) -> list:
    """Infix text to postfix (ints and operator chars), validating syntax."""
    out: list = []
    ops: list[str] = []
    expect_operand = True
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isdigit():
            if not expect_operand:
                raise ExprSyntaxError(i, "unexpected token")
            j = i
            while j < n and text[j].isdigit():
                j += 1
            out.append(int(text[i:j]))
            expect_operand = False
            i = j
            continue
        if ch == "(":
            if not expect_operand:
                raise ExprSyntaxError(i, "unexpected token")
            ops.append(ch)
        elif ch == ")":
            if expect_operand:
                raise ExprSyntaxError(i, "missing operand")
            while ops and ops[-1] != "(":
                out.append(ops.pop())
            if not ops:
                raise ExprSyntaxError(i, "unexpected token")
            ops.pop()
        elif ch in _PREC:
            if expect_operand:
                raise ExprSyntaxError(i, "missing operand")
            while ops and ops[-1] != "(" and _PREC[ops[-1]] >= _PREC[ch]:
                out.append(ops.pop())
            ops.append(ch)
            expect_operand = True
        else:
            raise ExprSyntaxError(i, "missing operand")
        i += 1
    if expect_operand:
        raise ExprSyntaxError(n, "missing operand")
    while ops:
        op = ops.pop()
        if op == "(":
            raise ExprSyntaxError(n, "unbalanced parenthesis")
        out.append(op)
    return out


def evaluate_independent(seq: Union[str, Sequence[int]]) -> int:
    if isinstance(seq, str):
        tokenize(seq)  # alphabet check
        text = seq.replace("×", "*").replace("÷", "/").replace("−", "-")
    else:
        text = "".join("0123456789+-*/()·"[i] for i in seq)
    if not text:
        raise ExprSyntaxError(0, "empty expression")
    values: list[int] = []
    for item in to_rpn(text):
        if isinstance(item, int):
            values.append(item)
        else:
            _apply(values, item)
    return values[0]
