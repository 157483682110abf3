"""Task definitions and the constrained random expression generator."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .alphabet import tokenize
from .ast import (
    BinOp, DivisionByZero, InexactDivision, Literal, Node,
    evaluate, to_string,
)

MAX_ATTEMPTS = 10_000
DEFAULT_MAX_DIGITS = 3


class GenerationExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    operators: tuple[str, ...]
    left_digits: tuple[int, int] = (1, 1)
    right_digits: tuple[int, int] = (1, 1)
    n_operators: tuple[int, int] = (1, 1)
    length: Optional[tuple[int, int]] = None
    parens: bool = False

    def __post_init__(self):
        if not self.operators or not set(self.operators) <= set("+-*/"):
            raise ValueError(f"bad operator set {self.operators!r}")
        for lo, hi in (self.left_digits, self.right_digits, self.n_operators):
            if lo < 1 or hi < lo:
                raise ValueError(f"empty range ({lo}, {hi}) in {self.task_id}")
        if self.length is not None and (self.length[0] < 3 or self.length[1] < self.length[0]):
            raise ValueError(f"bad length range {self.length}")

    @property
    def is_binary(self) -> bool:
        return self.n_operators == (1, 1) and not self.parens

    def with_length(self, length: int) -> "TaskSpec":
        """Same task at a fixed serialized length (evaluation grids).

        Binary tasks get their digit caps lifted so long operands fit;
        expression tasks get an operator count scaled to the length
        (about 3 operators at length 10)."""
        if self.is_binary:
            cap = max(1, length - 2)
            left = self.left_digits if self.left_digits == (1, 1) else (1, cap)
            right = self.right_digits if self.right_digits == (1, 1) else (1, cap)
            return replace(self, left_digits=left, right_digits=right,
                           length=(length, length))
        return replace(self, n_operators=default_operator_range(length, self.parens),
                       length=(length, length))


def default_operator_range(length: int, parens: bool = False) -> tuple[int, int]:
    # parentheses eat into the length budget, so shift the range up for them
    centre = max(1, round(0.3 * length))
    if parens:
        return centre, centre + 1
    return max(1, centre - 1), centre + 1


_BINARY_RE = re.compile(r"^([SM])([-+*/])([SM])$")
_EXPR_RE = re.compile(r"^expr([-+*/()]+)$")


def parse_task_id(task_id: str, max_digits: int = DEFAULT_MAX_DIGITS,
                  length: Optional[int] = None) -> TaskSpec:
    """``S+S``, ``M*S``, ``M/M`` ... or ``expr+-``, ``expr+-*/()``."""
    tid = task_id.replace("×", "*").replace("÷", "/").replace("−", "-")
    m = _BINARY_RE.match(tid)
    if m:
        shape = {"S": (1, 1), "M": (1, max_digits)}
        spec = TaskSpec(tid, (m.group(2),), shape[m.group(1)], shape[m.group(3)])
    else:
        m = _EXPR_RE.match(tid)
        if not m:
            raise ValueError(f"unknown task id {task_id!r}")
        body = m.group(1)
        ops = tuple(op for op in "+-*/" if op in body)
        spec = TaskSpec(tid, ops, (1, max_digits), (1, max_digits),
                        n_operators=(1, 3), parens="(" in body)
    return spec.with_length(length) if length else spec


@dataclass(frozen=True)
class Sample:
    expression: str
    answer: str

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tokenize(self.expression)

    @property
    def truth_ids(self) -> tuple[int, ...]:
        return tokenize(self.answer)


def _rand_value(rng: np.random.Generator, digits: int) -> int:
    if digits == 1:
        return int(rng.integers(0, 10))
    return int(rng.integers(10 ** (digits - 1), 10 ** digits))


def _split_digits(rng, total: int, lo: tuple[int, int], hi: tuple[int, int]):
    """Pick (da, db) with da + db == total inside both ranges, uniformly."""
    choices = [da for da in range(lo[0], lo[1] + 1) if hi[0] <= total - da <= hi[1]]
    if not choices:
        return None
    da = choices[int(rng.integers(len(choices)))]
    return da, total - da


def _propose_binary(spec: TaskSpec, rng) -> Optional[Node]:
    if spec.length is not None:
        total = int(rng.integers(spec.length[0], spec.length[1] + 1)) - 1
        split = _split_digits(rng, total, spec.left_digits, spec.right_digits)
        if split is None:
            return None
        da, db = split
    else:
        da = int(rng.integers(spec.left_digits[0], spec.left_digits[1] + 1))
        db = int(rng.integers(spec.right_digits[0], spec.right_digits[1] + 1))
    return BinOp(spec.operators[0], Literal(_rand_value(rng, da)),
                 Literal(_rand_value(rng, db)))


def _random_shape(rng, k: int, ops: tuple[str, ...]):
    if k == 0:
        return None
    n_left = int(rng.integers(0, k))
    op = ops[int(rng.integers(len(ops)))]
    return (op, _random_shape(rng, n_left, ops), _random_shape(rng, k - 1 - n_left, ops))


def _flat_shape(rng, k: int, ops: tuple[str, ...]):
    # operator chain folded by precedence, i.e. the tree a parser would build
    chosen = [ops[int(rng.integers(len(ops)))] for _ in range(k)]
    terms: list = [None]
    term_ops = []
    for op in chosen:
        if op in "*/":
            terms[-1] = (op, terms[-1], None)
        else:
            term_ops.append(op)
            terms.append(None)
    shape = terms[0]
    for op, t in zip(term_ops, terms[1:]):
        shape = (op, shape, t)
    return shape


def _fill(shape, values):
    if shape is None:
        return Literal(next(values))
    op, left, right = shape
    return BinOp(op, _fill(left, values), _fill(right, values))


def _propose_expression(spec: TaskSpec, rng) -> Optional[Node]:
    k = int(rng.integers(spec.n_operators[0], spec.n_operators[1] + 1))
    shape = (_random_shape if spec.parens else _flat_shape)(rng, k, spec.operators)
    n_operands = k + 1
    lo = min(spec.left_digits[0], spec.right_digits[0])
    hi = max(spec.left_digits[1], spec.right_digits[1])
    if spec.length is not None:
        skeleton = to_string(_fill(shape, iter([0] * n_operands)), minimal=True)
        n_parens = skeleton.count("(")
        target = int(rng.integers(spec.length[0], spec.length[1] + 1))
        budget = target - k - 2 * n_parens
        if not n_operands * lo <= budget <= n_operands * hi:
            return None
        digits = [lo] * n_operands
        for _ in range(budget - n_operands * lo):
            room = [i for i, d in enumerate(digits) if d < hi]
            digits[room[int(rng.integers(len(room)))]] += 1
    else:
        digits = [int(rng.integers(lo, hi + 1)) for _ in range(n_operands)]
    return _fill(shape, iter([_rand_value(rng, d) for d in digits]))


def generate_sample(spec: TaskSpec, rng: np.random.Generator) -> Sample:
    propose = _propose_binary if spec.is_binary else _propose_expression
    for _ in range(MAX_ATTEMPTS):
        node = propose(spec, rng)
        if node is None:
            continue
        try:
            value = evaluate(node)
        except (DivisionByZero, InexactDivision):
            continue
        text = to_string(node, minimal=True)
        if spec.length is not None and not spec.length[0] <= len(text) <= spec.length[1]:
            continue
        return Sample(text, str(value))
    raise GenerationExhausted(f"{spec.task_id}: no valid sample in {MAX_ATTEMPTS} attempts")


def generate_samples(spec: TaskSpec, count: int, rng: np.random.Generator) -> list[Sample]:
    return [generate_sample(spec, rng) for _ in range(count)]


def enumerate_single_digit(op: str) -> list[Sample]:
    """Every valid ``d op d`` pair (100, or 90 for division without /0)."""
    out = []
    for a in range(10):
        for b in range(10):
            try:
                value = evaluate(BinOp(op, Literal(a), Literal(b)))
            except (DivisionByZero, InexactDivision):
                continue
            out.append(Sample(f"{a}{op}{b}", str(value)))
    return out


def operator_count(sample: Sample) -> int:
    return sum(sample.expression.count(op) for op in "+-*/")
