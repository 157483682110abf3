"""Saving and loading a trained skill registry as a directory.

``registry.yaml`` lists modules in training order; each entry names its
checkpoint file and, for interactive modules, the modules it may call.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import yaml

from .bsm import BasicSkillModule
from .expr.alphabet import PLUS
from .expr.ast import ExprSyntaxError, parse
from .ism import InteractiveSkillModule, IsmSkill, MissingModule, SkillRegistry
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .scripted import ScriptedSkill
from .skills import MemoSkill, OracleSkill, Skill, SubmoduleError, operator_token, split_binary

MANIFEST = "registry.yaml"
_SAFE = {"+": "plus", "-": "minus", "*": "times", "/": "div", "(": "lp", ")": "rp"}


def file_stem(task_id: str) -> str:
    return "".join(_SAFE.get(c, c) for c in task_id)


def input_validator(task_id: str):
    """What an interactive module accepts as a sub-expression."""
    if len(task_id) == 3 and operator_token(task_id) is not None:
        return lambda tokens: split_binary(tokens, task_id)

    def check(tokens):
        try:
            parse(tuple(tokens))
        except (ExprSyntaxError, ValueError) as exc:
            raise SubmoduleError(str(exc)) from None
    return check


def ism_skill(ism: InteractiveSkillModule, registry: SkillRegistry) -> Skill:
    return MemoSkill(IsmSkill(ism, registry, operator_token(ism.task_id), input_validator(ism.task_id)))


class RegistryDir:
    """A directory of frozen module checkpoints plus its manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.entries: list[dict] = []
        manifest = self.root / MANIFEST
        if manifest.exists():
            self.entries = (yaml.safe_load(manifest.read_text(encoding="utf-8")) or {}).get("modules", [])

    def _write_manifest(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        text = yaml.safe_dump({"modules": self.entries}, sort_keys=False)
        (self.root / MANIFEST).write_text(text, encoding="utf-8")

    def add(self, task_id: str, kind: str, store, uses: Sequence[str] = (),
            mastered: bool = True) -> Path:
        path = self.root / "modules" / f"{file_stem(task_id)}.ckpt"
        save_checkpoint(store, path)
        self.entries = [e for e in self.entries if e["task"] != task_id]
        self.entries.append({"task": task_id, "kind": kind,
                             "checkpoint": str(path.relative_to(self.root)), "uses": list(uses),
                             "mastered": bool(mastered)})
        self._write_manifest()
        return path

    def checkpoint_path(self, task_id: str) -> Path:
        for e in self.entries:
            if e["task"] == task_id:
                return self.root / e["checkpoint"]
        raise MissingModule(task_id)

    @property
    def tasks(self) -> list[str]:
        return [e["task"] for e in self.entries]

    def load_skills(self) -> dict[str, Skill]:
        """Every module as a frozen skill, resolving dependencies in order."""
        skills: dict[str, Skill] = {}
        self.networks: dict = {}
        for e in self.entries:
            store = load_checkpoint(self.root / e["checkpoint"]).freeze()
            if e["kind"] == "bsm":
                net = BasicSkillModule.from_store(store)
                skills[e["task"]] = net.as_skill()
            else:
                net = InteractiveSkillModule.from_store(store)
                reg = SkillRegistry([skills[u] for u in e["uses"]])
                skills[e["task"]] = ism_skill(net, reg)
            self.networks[e["task"]] = net
        return skills

    def network_and_registry(self, task_id: str, skills: Optional[dict] = None):
        """(network, registry) to run ``task_id`` top-level; registry is None
        for a basic module."""
        if skills is None:
            skills = self.load_skills()
        for e in self.entries:
            if e["task"] == task_id:
                if e["kind"] == "bsm":
                    return self.networks[task_id], None
                return self.networks[task_id], SkillRegistry([skills[u] for u in e["uses"]])
        raise MissingModule(task_id)


def scripted_registry() -> dict[str, Skill]:
    """Oracle-backed primitives plus scripted policies where one exists.

    Tasks without a scripted policy are served by exact oracles, so the
    result is an upper bound on what the machine can do, not a trained model.
    """
    skills: dict[str, Skill] = {}
    for t in ("S+S", "S*S", "S-S"):
        skills[t] = MemoSkill(OracleSkill(t))
    skills["M+M"] = MemoSkill(ScriptedSkill("M+M", SkillRegistry([skills["S+S"]]), PLUS))
    skills["M-M"] = MemoSkill(OracleSkill("M-M"))
    skills["M*S"] = MemoSkill(ScriptedSkill("M*S", SkillRegistry([skills["S+S"], skills["S*S"], skills["M+M"]]),
                                            operator_token("M*S")))
    for t in ("M*M", "M/S", "M/M"):
        skills[t] = MemoSkill(OracleSkill(t))
    signed = SkillRegistry([MemoSkill(OracleSkill(f"M{o}M", signed=True)) for o in "+-*/"])
    for t in ("expr+-", "expr+-*", "expr+-*/()"):
        skills[t] = MemoSkill(ScriptedSkill(t, signed))
    return skills
