"""``skillcalc`` command line: generate, train, eval, trace, gradcheck.

Exit codes: 0 ok, 1 mismatch / failed check / unmastered task, 2 error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("skillcalc")


def _csv(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(t) for t in _csv(text)]


def cmd_generate(args) -> int:
    from .ctcs import seeded_rng
    from .expr import generate_samples, parse_task_id, write_dataset

    spec = parse_task_id(args.task, max_digits=args.max_digits, length=args.length)
    samples = generate_samples(spec, args.count, seeded_rng(args.seed, "generate", spec.task_id))
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def _config(args):
    from .config import load_config

    overrides = {"seed": args.seed, "curriculum": args.curriculum, "output_dir": args.output_dir,
                 "no_curriculum": args.no_curriculum,
                 "no_difficulty_sampling": args.no_difficulty_sampling,
                 "no_parameter_adjustment": args.no_parameter_adjustment}
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    from .ctcs import Curriculum, TaskFailed, run_curriculum

    cfg = _config(args)
    curriculum = Curriculum.load(cfg.curriculum) if cfg.curriculum else Curriculum.default()
    out = Path(cfg.output_dir)
    try:
        result = run_curriculum(curriculum, cfg, out, resume=args.resume)
        code = EXIT_OK
    except TaskFailed as exc:
        result, code = exc.result, EXIT_MISMATCH
        print(f"task {exc.task_id} was not mastered; partial registry kept in {out}", file=sys.stderr)
    lines = ["task\tkind\tmastered\tepisodes\tepochs\taccuracy\tstopped_by"]
    for t in result.logs:
        lines.append(f"{t.task_id}\t{t.kind}\t{t.mastered}\t{t.episodes}\t{t.epochs}\t"
                     f"{t.accuracy:.4f}\t{t.stopped_by}")
    (out / "tasks.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return code


def cmd_eval(args) -> int:
    from .evaluation import TABLE_TASKS, evaluate, registry_solvers, scripted_solvers

    tasks = _csv(args.tasks) if args.tasks else None
    if args.scripted:
        solvers = scripted_solvers(tasks or TABLE_TASKS)
    else:
        solvers = registry_solvers(args.registry, tasks)
    report = evaluate(solvers, _ints(args.lengths), args.n, args.seed)
    print(report.render())
    if args.out:
        report.write(args.out)
    return EXIT_OK


def _trace_solver(args):
    """(trajectory-producing fn, registry) for the trace command."""
    from .ism import run_episode
    from .registry import RegistryDir, scripted_registry
    from .scripted import policy_for, run_scripted

    if args.scripted:
        task = args.task or "expr+-*/()"
        skill = scripted_registry().get(task)
        if skill is None or not hasattr(skill.inner, "policy"):
            raise ValueError(f"no scripted policy for {task}")
        inner = skill.inner
        return (lambda tokens: run_scripted(policy_for(task), inner.registry, tokens)), inner.registry
    reg = RegistryDir(args.registry)
    skills = reg.load_skills()
    task = args.task or next(e["task"] for e in reversed(reg.entries) if e["kind"] == "ism")
    net, registry = reg.network_and_registry(task, skills)
    if registry is None:
        raise ValueError(f"{task} is a basic module; there is no episode to trace")
    return (lambda tokens: run_episode(net, registry, tokens)), registry


def cmd_trace(args) -> int:
    from .expr import detokenize, evaluate, parse, tokenize
    from .ism import format_trace
    from .ppo import compute_reward

    tokens = tokenize(args.expression)
    truth = tokenize(str(evaluate(parse(tokens))))
    run, registry = _trace_solver(args)
    traj = run(tokens)
    for line in format_trace(traj, registry):
        print(line)
    answer = "<none>" if traj.output is None else detokenize(traj.output)
    match = traj.output == truth
    print(f"answer {answer} | truth {detokenize(truth)} | match={str(match).lower()} | status {traj.status}")
    if not match:
        print(f"reward {compute_reward(traj.output, truth):.4f}")
    return EXIT_OK if match else EXIT_MISMATCH


def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import check_substrate

    results = check_substrate(seed=args.seed)
    for r in results:
        print(f"{r.op}\t{r.max_rel_error:.3e}\t{r.n_checked}\t{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillcalc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random dataset for one task")
    g.add_argument("--task", required=True, help="S+S, M*S, expr+-*/() ...")
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--length", type=int, default=None)
    g.add_argument("--max-digits", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="run the curriculum")
    t.add_argument("--config", default=None)
    t.add_argument("--curriculum", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--output-dir", default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--no-curriculum", action="store_true")
    t.add_argument("--no-difficulty-sampling", action="store_true")
    t.add_argument("--no-parameter-adjustment", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="exact-match accuracy grid")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--registry")
    src.add_argument("--scripted", action="store_true")
    e.add_argument("--tasks", default=None, help="comma-separated task ids")
    e.add_argument("--lengths", default="5,10,20")
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None, help="TSV output path")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("trace", help="step-by-step execution of one expression")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--registry")
    src.add_argument("--scripted", action="store_true")
    r.add_argument("--task", default=None)
    r.add_argument("expression")
    r.set_defaults(fn=cmd_trace)

    c = sub.add_parser("gradcheck", help="finite-difference checks of every substrate op")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .config import ConfigError
    from .ctcs import CurriculumError
    from .expr import ExprSyntaxError, UnknownCharacter
    from .expr.dataset import FormatError
    from .ism import MissingModule

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CurriculumError, ExprSyntaxError, UnknownCharacter, FormatError,
            MissingModule, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
