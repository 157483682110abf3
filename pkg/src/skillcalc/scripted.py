"""Hand-written expert policies for the memory machine.

They drive the same :func:`apply_action` as learned policies, calling only
skills from the registry, so an exact answer means the splice/read/write
semantics compose correctly.  Each policy is a generator: it yields a
:class:`CompositeAction` and receives the memory after that action.
"""

from __future__ import annotations

from typing import Callable, Generator, Optional, Sequence

from .expr.alphabet import MINUS, PLUS, TIMES, detokenize, is_digit
from .expr.ast import BinOp, ExprSyntaxError, Literal, parse
from .ism import (
    EMPTY, T_MAX, CapacityExceeded, CompositeAction, SkillRegistry, StepRecord,
    Trajectory, apply_action, finish, init_memory,
)
from .skills import HALT, Skill, SubmoduleError, split_binary

Policy = Generator[CompositeAction, list, None]


class UnsupportedTask(ValueError):
    pass


def _act(registry, name, read1=EMPTY, read2=EMPTY, write=EMPTY) -> CompositeAction:
    return CompositeAction(registry.index(name) if name != "HALT" else 0, read1, read2, write)


def _blank_out(registry, name, start, end) -> CompositeAction:
    # an empty read makes the skill refuse, which writes one blank
    return _act(registry, name, EMPTY, EMPTY, (start, end))


def add_policy(registry: SkillRegistry, memory: Sequence[int]) -> Policy:
    """Column addition right to left using a single-digit adder.

    The first operand A stays in place while its digits are used up; each
    column sum is written over the current digit of B and the pending carry
    digit merged into it.  When the last digit of B is used the write also
    swallows the used part of A and the ``+``.
    """
    plus = memory.index(PLUS)
    seg = {"a": plus, "a_used": 0, "plus": 1, "b": len(memory) - plus - 1, "carry": 0, "r": 0}
    order = ("a", "a_used", "plus", "b", "carry", "r")

    def start(key):
        return sum(seg[k] for k in order[:order.index(key)])

    def call(read1, read2, write):
        before = len(mem)
        new = yield _act(registry, "S+S", read1, read2, write)
        return new, len(new) - before + (write[1] - write[0])

    mem = list(memory)
    while True:
        if seg["a"] and seg["b"]:
            pa, pb = seg["a"] - 1, start("b") + seg["b"] - 1
            fold = seg["b"] == 1
            write = (pa, pb + 1) if fold else (pb, pb + 1)
            mem, s_len = yield from call((pa, pa + 1), (pb, pb + 1), write)
            seg["a"] -= 1
            seg["b"] -= 1
            if fold:
                seg["a_used"], seg["plus"] = 0, 0
            else:
                seg["a_used"] += 1
            s_start = write[0]
        elif seg["b"] and seg["carry"]:
            pb = start("b") + seg["b"] - 1
            pc = start("carry")
            fold = seg["b"] == 1
            write = (0 if fold else pb, pc + 1)
            mem, chunk = yield from call((pb, pb + 1), (pc, pc + 1), write)
            seg["b"] -= 1
            if fold:
                seg["a_used"], seg["plus"] = 0, 0
            seg["carry"] = chunk - 1
            seg["r"] += 1
            continue
        elif seg["a"] and seg["carry"]:
            pa, pc = seg["a"] - 1, start("carry")
            mem, chunk = yield from call((pa, pa + 1), (pc, pc + 1), (pa, pc + 1))
            seg["a"] -= 1
            seg["a_used"], seg["plus"] = 0, 0
            seg["carry"] = chunk - 1
            seg["r"] += 1
            continue
        else:
            break
        # merge the pending carry into the column sum
        chunk = s_len
        if seg["carry"]:
            low = s_start + s_len - 1
            mem, v_len = yield from call((low, low + 1), (low + 1, low + 2), (low, low + 2))
            chunk = s_len - 1 + v_len
        seg["carry"] = chunk - 1
        seg["r"] += 1
    if seg["a_used"] or seg["plus"]:
        s = start("a_used")
        mem = yield _blank_out(registry, "S+S", s, s + seg["a_used"] + seg["plus"])
    yield _act(registry, "HALT")


def multiply_policy(registry: SkillRegistry, memory: Sequence[int]) -> Policy:
    """Multi-digit by single digit, Horner style from the left.

    For each digit a_i the product p = a_i·s is appended after the memory;
    a two-digit product's leading digit is added into the accumulator with
    the multi-digit adder.  The operand prefix ``A*s`` is dropped at the end.
    """
    star = memory.index(TIMES)
    n = star
    r0 = n + 2
    mem = list(memory)
    r_len = 0
    for i in range(n):
        last = i == n - 1
        acc_zero = r_len == 0 or mem[r0:r0 + r_len] == [0]
        end = len(mem)
        if acc_zero:
            write = (0 if last else r0, r0 + r_len)
            new = yield _act(registry, "S*S", (i, i + 1), (n + 1, n + 2), write)
            r_len = len(new) - len(mem) + (write[1] - write[0])
            mem = new
            if last:
                yield _act(registry, "HALT")
                return
            continue
        new = yield _act(registry, "S*S", (i, i + 1), (n + 1, n + 2), (end, end))
        p_len = len(new) - len(mem)
        mem = new
        if p_len == 2:
            write = (0 if last else r0, end + 1)
            new = yield _act(registry, "M+M", (r0, r0 + r_len), (end, end + 1), write)
            r_len = len(new) - len(mem) + (write[1] - write[0]) + 1
            mem = new
            if last:
                yield _act(registry, "HALT")
                return
        else:
            r_len += 1
    mem = yield _blank_out(registry, "S*S", 0, r0)
    yield _act(registry, "HALT")


_EXPR_MODULES = {"+": "M+M", "-": "M-M", "*": "M*M", "/": "M/M"}


def _render(node, spans, path=()):
    """Tokens of a tree with negative literals allowed; records each
    operator node's (outer, inner) span keyed by its path."""
    if isinstance(node, Literal):
        text = str(node.value)
        return f"({text})" if node.paren else text
    left = _render(node.left, spans, path + (0,))
    right = _render(node.right, spans, path + (1,))
    inner = left + node.op + right
    text = f"({inner})" if node.paren else inner
    spans[path] = (text, inner)
    return text


def _next_reducible(node, path=()):
    if isinstance(node, Literal):
        return None
    for k, child in enumerate((node.left, node.right)):
        found = _next_reducible(child, path + (k,))
        if found is not None:
            return found
    if isinstance(node.left, Literal) and isinstance(node.right, Literal):
        return path
    return None


def _get(node, path):
    for k in path:
        node = node.left if k == 0 else node.right
    return node


def _replace(node, path, new):
    if not path:
        return new
    if path[0] == 0:
        return BinOp(node.op, _replace(node.left, path[1:], new), node.right, node.paren)
    return BinOp(node.op, node.left, _replace(node.right, path[1:], new), node.paren)


def _offsets(node, path):
    """(outer start, inner start) of the node at ``path`` in rendered text."""
    offset = 0
    cur = node
    for k in path:
        if cur.paren:
            offset += 1
        if k == 1:
            offset += len(_render(cur.left, {})) + 1
        cur = cur.left if k == 0 else cur.right
    return offset, offset + (1 if cur.paren else 0)


def expression_policy(registry: SkillRegistry, memory: Sequence[int]) -> Policy:
    """Reduce the innermost-leftmost operator node with two literal children,
    reading it without its parentheses and writing over them."""
    try:
        tree = parse(tuple(memory))
    except ExprSyntaxError as exc:
        raise UnsupportedTask(str(exc)) from None
    while isinstance(tree, BinOp):
        path = _next_reducible(tree)
        node = _get(tree, path)
        outer, inner_start = _offsets(tree, path)
        spans = {}
        _render(node, spans)
        text, inner = spans[()]
        new = yield _act(registry, _EXPR_MODULES[node.op], (inner_start, inner_start + len(inner)),
                         EMPTY, (outer, outer + len(text)))
        tail = len(memory) - outer - len(text)
        written = new[outer:len(new) - tail]
        memory = new
        try:
            value = int(detokenize(written))
        except ValueError:
            break
        tree = _replace(tree, path, Literal(value))
    yield _act(registry, "HALT")


POLICIES: dict[str, Callable[[SkillRegistry, Sequence[int]], Policy]] = {
    "M+M": add_policy,
    "M*S": multiply_policy,
}


def policy_for(task_id: str):
    if task_id in POLICIES:
        return POLICIES[task_id]
    if task_id.startswith("expr"):
        return expression_policy
    raise UnsupportedTask(f"no scripted policy for {task_id}")


def run_scripted(policy_fn, registry: SkillRegistry, tokens: Sequence[int],
                 t_max: int = T_MAX) -> Trajectory:
    traj = Trajectory(tuple(tokens))
    memory = init_memory(tokens)
    gen = policy_fn(registry, list(memory))
    action = next(gen)
    for _ in range(t_max):
        rec = StepRecord(tuple(memory), action)
        traj.steps.append(rec)
        try:
            memory, rec.invocation = apply_action(memory, action, registry)
        except CapacityExceeded:
            finish(traj, memory, "capacity")
            return traj
        if registry[action.module] is HALT:
            finish(traj, memory, "halt")
            return traj
        try:
            action = gen.send(list(memory))
        except StopIteration:
            break
    finish(traj, memory, "budget")
    return traj


class ScriptedSkill(Skill):
    """A scripted policy over its own registry, exposed as a skill."""

    kind = "scripted"

    def __init__(self, task_id: str, registry: SkillRegistry, operator: Optional[int] = None):
        self.name = task_id
        self.task_id = task_id
        self.registry = registry
        self.operator = operator
        self.policy = policy_for(task_id)

    def __call__(self, tokens):
        if len(self.task_id) == 3:
            split_binary(tokens, self.task_id)
        try:
            traj = run_scripted(self.policy, self.registry, tokens)
        except UnsupportedTask as exc:
            raise SubmoduleError(str(exc)) from None
        if traj.output is None:
            raise SubmoduleError(f"{self.name}: memory overflow")
        return traj.output
