"""Exact-match evaluation grids over tasks × expression lengths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .ctcs import seeded_rng
from .expr.tasks import GenerationExhausted, Sample, generate_samples, parse_task_id
from .skills import SubmoduleError

LENGTHS = (5, 10, 20)
TEST_SIZE = 1000
TABLE_TASKS = ("M+M", "M-M", "M*M", "M/M", "expr+-*/()")

# published accuracies (%) of the full-scale system at lengths 5 / 10 / 20;
# shown next to measured numbers for context, never used as a gate
REFERENCE = {
    "M+M": {5: 100, 10: 100, 20: 17},
    "M-M": {5: 100, 10: 100, 20: 19},
    "M*M": {5: 100, 10: 100, 20: 0},
    "M/M": {5: 100, 10: 27, 20: 15},
    "expr+-*/()": {5: 100, 10: 100, 20: 78},
}

Solver = Callable[[Sequence[Sequence[int]]], list]


def eval_samples(task_id: str, length: int, n: int, seed: int) -> list[Sample]:
    # the "eval" tag keeps this stream apart from every training stream
    return generate_samples(parse_task_id(task_id, length=length), n, seeded_rng(seed, "eval", task_id, length))


@dataclass
class EvalCell:
    task: str
    length: int
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else math.nan


@dataclass
class EvalReport:
    seed: int
    cells: list[EvalCell] = field(default_factory=list)

    def accuracy(self, task: str, length: int) -> float:
        for c in self.cells:
            if c.task == task and c.length == length:
                return c.accuracy
        raise KeyError((task, length))

    def to_tsv(self) -> str:
        lines = ["task\tlength\tn\tcorrect\taccuracy\treference"]
        for c in self.cells:
            ref = REFERENCE.get(c.task, {}).get(c.length)
            acc = "nan" if c.n == 0 else f"{c.accuracy:.4f}"
            ref_text = "" if ref is None else f"{ref / 100:.2f}"
            lines.append(f"{c.task}\t{c.length}\t{c.n}\t{c.correct}\t{acc}\t{ref_text}")
        return "\n".join(lines) + "\n"

    def render(self) -> str:
        tasks = list(dict.fromkeys(c.task for c in self.cells))
        lengths = sorted({c.length for c in self.cells})
        width = max([len(t) for t in tasks] + [4])
        head = f"{'task':<{width}}" + "".join(f"  len {L:>2} (ref)" for L in lengths)
        rows = [head]
        for t in tasks:
            row = f"{t:<{width}}"
            for L in lengths:
                c = next(c for c in self.cells if c.task == t and c.length == L)
                ref = REFERENCE.get(t, {}).get(L)
                acc = "   -" if c.n == 0 else f"{100 * c.accuracy:5.1f}"
                row += f"  {acc} ({'-' if ref is None else ref:>3})"
            rows.append(row)
        rows.append(f"seed {self.seed}; accuracies in %, reference column = published full-scale result")
        return "\n".join(rows)

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_tsv(), encoding="utf-8")


def skill_solver(skill) -> Solver:
    def solve(batch):
        out = []
        for tokens in batch:
            try:
                out.append(skill(tokens))
            except SubmoduleError:
                out.append(None)
        return out
    return solve


def ism_solver(ism, registry) -> Solver:
    from .ism import rollout

    def solve(batch):
        return [t.output for t in rollout(ism, registry, batch, greedy=True)]
    return solve


def evaluate(solvers: dict[str, Solver], lengths: Sequence[int] = LENGTHS, n: int = TEST_SIZE,
             seed: int = 0, batch: int = 256) -> EvalReport:
    report = EvalReport(seed)
    for task, solve in solvers.items():
        for L in lengths:
            try:
                samples = eval_samples(task, L, n, seed)
            except GenerationExhausted:
                # e.g. single-digit tasks have no length-10 instances
                report.cells.append(EvalCell(task, L, 0, 0))
                continue
            correct = 0
            for i in range(0, len(samples), batch):
                chunk = samples[i:i + batch]
                outputs = solve([s.input_ids for s in chunk])
                correct += sum(o == s.truth_ids for o, s in zip(outputs, chunk))
            report.cells.append(EvalCell(task, L, len(samples), correct))
    return report


def registry_solvers(registry_dir, tasks: Optional[Sequence[str]] = None) -> dict[str, Solver]:
    from .ism import MissingModule
    from .registry import RegistryDir

    reg = RegistryDir(registry_dir)
    skills = reg.load_skills()
    tasks = list(tasks) if tasks else reg.tasks
    out = {}
    for t in tasks:
        if t not in skills:
            raise MissingModule(t)
        net, registry = reg.network_and_registry(t, skills)
        out[t] = skill_solver(skills[t]) if registry is None else ism_solver(net, registry)
    return out


def scripted_solvers(tasks: Sequence[str]) -> dict[str, Solver]:
    from .ism import MissingModule
    from .registry import scripted_registry

    skills = scripted_registry()
    missing = [t for t in tasks if t not in skills]
    if missing:
        raise MissingModule(missing[0])
    return {t: skill_solver(skills[t]) for t in tasks}
