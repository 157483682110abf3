"""Curriculum teacher and continual-learning student.

The teacher keeps, for each sample of a task's pool, a count of incorrect
attempts and draws training samples with probability softmax(d/τ), so hard
samples come back more often.  The same counts set the entropy bonus
α = min(β, γ·max d).  Tasks are trained in order; a mastered module is
frozen and appended to the registry that later tasks build on.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .expr.tasks import Sample, TaskSpec, enumerate_single_digit, generate_samples, parse_task_id

log = logging.getLogger(__name__)

TAU = 10.0
BETA = 0.5
GAMMA = 0.01
N_C = 64
K_BSM = 500
K_ISM = 200
DEFAULT_ALPHA = 0.01


class IndexOutOfRange(IndexError):
    pass


class TaskFailed(RuntimeError):
    def __init__(self, task_id: str, result=None):
        super().__init__(f"task {task_id} was not mastered within its budget")
        self.task_id = task_id
        self.result = result


class CurriculumError(ValueError):
    pass


def sample_probabilities(d: Sequence[float], tau: float = TAU) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("need at least one sample")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = np.exp((d - d.max()) / tau)
    return z / z.sum()


def draw_batch(d: Sequence[float], n: int, rng: np.random.Generator, tau: float = TAU) -> np.ndarray:
    """``n`` i.i.d. pool indices drawn from :func:`sample_probabilities`."""
    p = sample_probabilities(d, tau)
    return rng.choice(len(p), size=n, p=p)


def entropy_coefficient(d: Sequence[float], beta: float = BETA, gamma: float = GAMMA) -> float:
    return float(min(beta, gamma * max(d)))


class DifficultyState:
    def __init__(self, pool_size: int):
        self.d = np.zeros(pool_size, dtype=np.int64)
        self.consecutive = 0

    def record_outcome(self, j: int, correct: bool) -> None:
        if not 0 <= j < len(self.d):
            raise IndexOutOfRange(f"sample {j} outside pool of {len(self.d)}")
        if correct:
            self.consecutive += 1
        else:
            self.d[j] += 1
            self.consecutive = 0

    def mastery_check(self, k: int) -> bool:
        if k < 1:
            raise ValueError("mastery window must be at least 1")
        return self.consecutive >= k

    def to_dict(self) -> dict:
        return {"d": self.d.tolist(), "consecutive": self.consecutive}

    @classmethod
    def from_dict(cls, data: dict) -> "DifficultyState":
        st = cls(len(data["d"]))
        st.d[:] = data["d"]
        st.consecutive = int(data["consecutive"])
        return st


class Teacher:
    """Sampling and α for one task; the two ablation switches live here."""

    def __init__(self, pool: Sequence[Sample], tau: float = TAU, beta: float = BETA,
                 gamma: float = GAMMA, mastery_k: int = K_ISM,
                 difficulty_sampling: bool = True, adjust_alpha: bool = True,
                 fixed_alpha: float = DEFAULT_ALPHA):
        if not pool:
            raise ValueError("empty sample pool")
        self.pool = list(pool)
        self.state = DifficultyState(len(self.pool))
        self.tau, self.beta, self.gamma = tau, beta, gamma
        self.mastery_k = mastery_k
        self.difficulty_sampling = difficulty_sampling
        self.adjust_alpha = adjust_alpha
        self.fixed_alpha = fixed_alpha

    def draw(self, n: int, rng: np.random.Generator):
        if self.difficulty_sampling:
            idx = draw_batch(self.state.d, n, rng, self.tau)
        else:
            idx = rng.integers(len(self.pool), size=n)
        return [int(i) for i in idx], [self.pool[int(i)] for i in idx]

    def alpha(self) -> float:
        if not self.adjust_alpha:
            return self.fixed_alpha
        return entropy_coefficient(self.state.d, self.beta, self.gamma)

    def record(self, j: int, correct: bool) -> None:
        self.state.record_outcome(j, correct)

    def mastered(self) -> bool:
        return self.state.mastery_check(self.mastery_k)


def seeded_rng(seed: int, *tags) -> np.random.Generator:
    """Independent stream per (seed, tags); string tags are hashed stably."""
    words = [int(seed)] + [t if isinstance(t, int) else zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(words))


# curriculum

# modules a scripted solution of each task calls; used to check task order
DEPENDENCIES = {
    "M+M": ["S+S"],
    "M-M": ["S-S"],
    "M*S": ["S*S", "M+M"],
    "M*M": ["M*S", "M+M"],
    "M/S": ["M-M", "M*S"],
    "M/M": ["M-M", "M*M"],
    "expr+-": ["M+M", "M-M"],
    "expr+-*": ["M+M", "M-M", "M*M"],
    "expr+-*/()": ["M+M", "M-M", "M*M", "M/M"],
}

DEFAULT_ORDER = ["S+S", "S*S", "S-S", "M+M", "M-M", "M*S", "M*M", "M/S", "M/M",
                 "expr+-", "expr+-*", "expr+-*/()"]


@dataclass
class CurriculumTask:
    task_id: str
    kind: str = "ism"
    max_digits: int = 3
    pool_size: int = 1000
    budget: int = 200_000
    epochs: int = 500
    mastery_k: Optional[int] = None
    uses: Optional[list[str]] = None

    def __post_init__(self):
        if self.kind not in ("bsm", "ism"):
            raise CurriculumError(f"{self.task_id}: kind must be bsm or ism")
        if self.kind == "bsm" and not (len(self.task_id) == 3 and self.task_id[0] == self.task_id[2] == "S"):
            raise CurriculumError(f"{self.task_id}: only single-digit tasks can be basic modules")
        if self.mastery_k is None:
            self.mastery_k = K_BSM if self.kind == "bsm" else K_ISM

    @property
    def spec(self) -> TaskSpec:
        return parse_task_id(self.task_id, max_digits=self.max_digits)


@dataclass
class Curriculum:
    tasks: list[CurriculumTask]

    def __post_init__(self):
        seen: list[str] = []
        for t in self.tasks:
            if t.task_id in seen:
                raise CurriculumError(f"{t.task_id} listed twice")
            missing = [d for d in (t.uses if t.uses is not None else DEPENDENCIES.get(t.task_id, []))
                       if d not in seen]
            if missing:
                raise CurriculumError(f"{t.task_id} needs {missing} earlier in the curriculum")
            seen.append(t.task_id)

    @property
    def ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    @classmethod
    def default(cls) -> "Curriculum":
        return cls([CurriculumTask(t, "bsm" if t[0] == "S" else "ism") for t in DEFAULT_ORDER])

    @classmethod
    def from_dict(cls, data: dict) -> "Curriculum":
        tasks = []
        for entry in data.get("tasks", []):
            entry = dict(entry)
            entry["task_id"] = str(entry.pop("id"))
            tasks.append(CurriculumTask(**entry))
        if not tasks:
            raise CurriculumError("curriculum lists no tasks")
        return cls(tasks)

    @classmethod
    def load(cls, path) -> "Curriculum":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        out = []
        for t in self.tasks:
            row = {"id": t.task_id, "kind": t.kind, "max_digits": t.max_digits,
                   "pool_size": t.pool_size, "budget": t.budget, "epochs": t.epochs,
                   "mastery_k": t.mastery_k}
            if t.uses is not None:
                row["uses"] = list(t.uses)
            out.append(row)
        return {"tasks": out}


def training_pool(task: CurriculumTask, rng: np.random.Generator) -> list[Sample]:
    if task.kind == "bsm":
        return enumerate_single_digit(task.task_id[1])
    return generate_samples(task.spec, task.pool_size, rng)


@dataclass
class TaskLog:
    task_id: str
    kind: str
    mastered: bool
    episodes: int = 0
    epochs: int = 0
    accuracy: float = 0.0
    stopped_by: str = ""


@dataclass
class CurriculumResult:
    registry_dir: Path
    logs: list[TaskLog]
    stores: dict
    failed: Optional[str] = None

    @property
    def mastered(self) -> list[str]:
        return [log.task_id for log in self.logs if log.mastered]


def _teacher_for(task: CurriculumTask, pool, config) -> Teacher:
    knobs, ab = config.teacher, config.ablation
    return Teacher(pool, tau=knobs.tau, beta=knobs.beta, gamma=knobs.gamma,
                   mastery_k=task.mastery_k,
                   difficulty_sampling=not ab.no_difficulty_sampling,
                   adjust_alpha=not ab.no_parameter_adjustment, fixed_alpha=knobs.fixed_alpha)


def _substrate(config, task_id: str):
    return replace(config.substrate, seed=int(seeded_rng(config.seed, "init", task_id).integers(2 ** 31)))


def _train_bsm(task, pool, config, rng):
    from .bsm import BasicSkillModule

    bsm = BasicSkillModule(task.task_id, _substrate(config, task.task_id))
    history = bsm.train_supervised(pool, epochs=task.epochs, rng=rng)
    skill = bsm.as_skill()
    # mastery: K consecutive correct answers on teacher-drawn samples
    teacher = _teacher_for(task, pool, config)
    while not teacher.mastered():
        idx, samples = teacher.draw(config.teacher.n_c, rng)
        for j, s in zip(idx, samples):
            teacher.record(j, skill(s.input_ids) == s.truth_ids)
            if teacher.mastered():
                break
        if teacher.state.d.sum() > 0:
            break
    log_ = TaskLog(task.task_id, "bsm", teacher.mastered(), epochs=len(history),
                   accuracy=history[-1].accuracy, stopped_by="mastery" if teacher.mastered() else "epochs")
    return bsm, skill, log_


def _state_path(out: Path, task_id: str) -> Path:
    from .registry import file_stem
    return out / "state" / f"{file_stem(task_id)}.ckpt"


def _train_ism(task, pool, registry, config, rng, out: Path, resume: bool, time_limit=None):
    from .ism import InteractiveSkillModule
    from .nn.checkpoint import load_checkpoint, save_checkpoint
    from .ppo import CurveRow, Progress, train_ism, write_curve
    from .registry import file_stem

    ism = InteractiveSkillModule(task.task_id, len(registry), _substrate(config, task.task_id),
                                 attention_size=config.attention_size)
    teacher = _teacher_for(task, pool, config)
    monitor = generate_samples(task.spec, config.monitor_size,
                               seeded_rng(config.seed, "monitor", task.task_id))
    progress = Progress()
    state_path = _state_path(out, task.task_id)
    best_path = state_path.with_suffix(".best.ckpt")
    if resume and state_path.exists():
        ism.store = load_checkpoint(state_path)
        st = ism.store.meta.pop("train_state")
        teacher.state = DifficultyState.from_dict(st["teacher"])
        rng.bit_generator.state = st["rng"]
        progress = Progress(st["batch"], st["episodes"], st["accuracy"], st["best_accuracy"],
                            load_checkpoint(best_path) if best_path.exists() else None,
                            st["seconds"], [CurveRow(**row) for row in st["curve"]])
        log.info("%s: resuming at batch %d", task.task_id, progress.batch)

    def checkpoint(row):
        if not config.checkpoint_every or row.batch % config.checkpoint_every:
            return
        ism.store.meta["train_state"] = {
            "teacher": teacher.state.to_dict(), "rng": rng.bit_generator.state,
            "batch": progress.batch, "episodes": progress.episodes,
            "accuracy": progress.accuracy, "best_accuracy": progress.best_accuracy,
            "seconds": progress.seconds, "curve": [vars(r) for r in progress.curve]}
        save_checkpoint(ism.store, state_path)
        del ism.store.meta["train_state"]
        if progress.best_state is not None:
            save_checkpoint(progress.best_state, best_path)

    result = train_ism(ism, registry, teacher, config.rl, rng, budget=task.budget,
                       batch_episodes=config.teacher.n_c, eval_samples=monitor,
                       eval_every=config.monitor_every, on_batch=checkpoint, progress=progress,
                       time_limit=time_limit)
    write_curve(result.curve, out / "curves" / f"{file_stem(task.task_id)}.tsv")
    log_ = TaskLog(task.task_id, "ism", result.mastered, episodes=result.episodes,
                   accuracy=result.best_accuracy, stopped_by=result.stopped_by)
    return ism, log_


def run_curriculum(curriculum: Curriculum, config, out_dir=None, resume: bool = False,
                   on_task_done=None, strict: bool = True,
                   time_limit: Optional[float] = None) -> CurriculumResult:
    """Train every task in order, freezing each mastered module.

    With the no-curriculum ablation only the final task is trained, against
    a registry holding nothing but HALT.  Training stops at the first task
    that exhausts its budget unmastered; that module is still saved (flagged
    unmastered) so it can be evaluated, and TaskFailed carries the partial
    result unless ``strict`` is off.  ``time_limit`` caps the wall-clock
    seconds of each interactive task on top of its episode budget.
    """
    from .ism import SkillRegistry
    from .registry import RegistryDir, ism_skill

    out = Path(out_dir or config.output_dir)
    reg_dir = RegistryDir(out)
    tasks = curriculum.tasks[-1:] if config.ablation.no_curriculum else curriculum.tasks
    skills: dict = {}
    stores: dict = {}
    logs: list[TaskLog] = []
    done = {e["task"]: e for e in reg_dir.entries if e.get("mastered", True)} if resume else {}
    if done:
        skills = {k: v for k, v in reg_dir.load_skills().items() if k in done}
        stores = {k: reg_dir.networks[k].store for k in skills}
    for task in tasks:
        if task.task_id in done:
            logs.append(TaskLog(task.task_id, task.kind, True, stopped_by="resumed"))
            continue
        rng = seeded_rng(config.seed, "train", task.task_id)
        pool = training_pool(task, seeded_rng(config.seed, "pool", task.task_id))
        if task.kind == "bsm":
            net, skill, task_log = _train_bsm(task, pool, config, rng)
            uses = []
        else:
            if config.ablation.no_curriculum:
                uses = []
            else:
                uses = task.uses if task.uses is not None else list(skills)
            registry = SkillRegistry([skills[u] for u in uses])
            net, task_log = _train_ism(task, pool, registry, config, rng, out, resume, time_limit)
            skill = None
        net.store.freeze()
        if task.kind == "ism":
            skill = ism_skill(net, registry)
        reg_dir.add(task.task_id, task.kind, net.store, uses, mastered=task_log.mastered)
        stores[task.task_id] = net.store
        logs.append(task_log)
        log.info("%s: mastered=%s (%s)", task.task_id, task_log.mastered, task_log.stopped_by)
        if on_task_done is not None:
            on_task_done(task.task_id, stores)
        if not task_log.mastered:
            result = CurriculumResult(out, logs, stores, failed=task.task_id)
            if strict:
                raise TaskFailed(task.task_id, result)
            return result
        skills[task.task_id] = skill
    return CurriculumResult(out, logs, stores)
