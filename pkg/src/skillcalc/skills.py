"""Frozen skills that an interactive module can invoke.

A skill maps a token sequence to a token sequence and raises
:class:`SubmoduleError` when it cannot handle its input.  ``operator`` is the
token a skill expects between its two operands; the machine uses it to join
two read spans (``None`` for whole-expression skills).
"""

from __future__ import annotations

import re
from typing import Optional, Sequence

from .expr.alphabet import (
    MINUS, OPERATORS, PLUS, TIMES, DIVIDE, detokenize, int_tokens,
)
from .expr.ast import (
    DivisionByZero, ExprSyntaxError, InexactDivision, apply_op, evaluate, parse,
)

_OP_TOKEN = {"+": PLUS, "-": MINUS, "*": TIMES, "/": DIVIDE}


class SubmoduleError(ValueError):
    """The invoked skill rejected its input."""


class Skill:
    name: str = "?"
    operator: Optional[int] = None
    kind: str = "skill"

    def __call__(self, tokens: Sequence[int]) -> tuple[int, ...]:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class HaltSkill(Skill):
    name = "HALT"
    kind = "halt"

    def __call__(self, tokens):
        raise SubmoduleError("HALT is never invoked")


HALT = HaltSkill()


def operator_token(task_id: str) -> Optional[int]:
    """Joining operator for a binary task id such as ``M+M``."""
    if len(task_id) == 3 and task_id[1] in OPERATORS:
        return _OP_TOKEN[task_id[1]]
    return None


def binary_pattern(task_id: str, signed: bool = False) -> re.Pattern:
    """Regex for the inputs a binary task accepts (``S`` = one digit)."""
    sign = "-?" if signed else ""
    parts = [f"({sign}\\d)" if side == "S" else f"({sign}\\d+)" for side in (task_id[0], task_id[2])]
    return re.compile(f"^{parts[0]}{re.escape(task_id[1])}{parts[1]}$")


def split_binary(tokens: Sequence[int], task_id: str, signed: bool = False) -> tuple[int, int]:
    try:
        text = detokenize(tokens)
    except ValueError as exc:
        raise SubmoduleError(str(exc)) from None
    m = binary_pattern(task_id, signed).match(text)
    if not m:
        raise SubmoduleError(f"{task_id} cannot read {text!r}")
    return int(m.group(1)), int(m.group(2))


class OracleSkill(Skill):
    """Exact arithmetic behind the skill interface.

    Used where a module's job is not what is being tested (e.g. primitives
    under scripted policies).  ``signed`` lets operands carry a leading minus,
    which intermediate expression results need.
    """

    kind = "oracle"

    def __init__(self, task_id: str, signed: bool = False):
        self.name = task_id
        self.task_id = task_id
        self.signed = signed
        self.operator = operator_token(task_id)

    def __call__(self, tokens):
        if self.operator is None:
            try:
                value = evaluate(parse(tuple(tokens)))
            except (ExprSyntaxError, DivisionByZero, InexactDivision, ValueError) as exc:
                raise SubmoduleError(str(exc)) from None
            return int_tokens(value)
        a, b = split_binary(tokens, self.task_id, self.signed)
        try:
            return int_tokens(apply_op(self.task_id[1], a, b))
        except (DivisionByZero, InexactDivision) as exc:
            raise SubmoduleError(str(exc)) from None


class MemoSkill(Skill):
    """Caches a deterministic skill's answers (and rejections) by input."""

    def __init__(self, inner: Skill):
        self.inner = inner
        self.name = inner.name
        self.operator = inner.operator
        self.kind = inner.kind
        self._cache: dict = {}

    def __call__(self, tokens):
        key = tuple(tokens)
        hit = self._cache.get(key)
        if hit is None:
            try:
                hit = self.inner(key)
            except SubmoduleError as exc:
                hit = exc
            self._cache[key] = hit
        if isinstance(hit, SubmoduleError):
            raise hit
        return hit
