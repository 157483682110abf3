"""Interactive skill modules: a policy over a character memory.

Each step encodes the memory with a Bi-RNN, advances a controller GRU on the
first and last memory encodings, and picks a composite action: which frozen
skill to call, two read spans and one write span.  The skill's answer is
spliced into memory in place of the write span.  Picking HALT ends the
episode and the memory (blanks dropped) is the answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .expr.alphabet import BLANK, OPERATOR_IDS, VOCAB_SIZE, detokenize, strip_blanks
from .nn import ops
from .nn.params import ParamStore, SubstrateConfig
from .skills import HALT, MemoSkill, Skill, SubmoduleError, split_binary

L_MAX = 64
T_MAX = 40
N_POINTERS = 6


class CapacityExceeded(RuntimeError):
    pass


class EmptyMemory(ValueError):
    pass


class MissingModule(KeyError):
    pass


def init_memory(tokens: Sequence[int], capacity: int = L_MAX) -> list[int]:
    tokens = list(tokens)
    if not tokens:
        raise EmptyMemory("memory needs at least one token")
    if len(tokens) > capacity:
        raise CapacityExceeded(f"input of length {len(tokens)} exceeds capacity {capacity}")
    return tokens


class SkillRegistry:
    """Ordered frozen skills; index 0 is always HALT."""

    def __init__(self, skills: Iterable[Skill] = ()):
        self.skills: list[Skill] = [HALT] + [s for s in skills if s is not HALT]

    def __len__(self):
        return len(self.skills)

    def __getitem__(self, i: int) -> Skill:
        return self.skills[i]

    def __iter__(self):
        return iter(self.skills)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.skills]

    def index(self, name: str) -> int:
        for i, s in enumerate(self.skills):
            if s.name == name:
                return i
        raise MissingModule(name)

    def extended(self, skill: Skill) -> "SkillRegistry":
        return SkillRegistry(self.skills[1:] + [skill])


Span = tuple[int, int]
EMPTY: Span = (0, 0)


@dataclass(frozen=True)
class CompositeAction:
    module: int
    read1: Span = EMPTY
    read2: Span = EMPTY
    write: Span = EMPTY

    @classmethod
    def from_pointers(cls, module: int, pointers: Sequence[int]) -> "CompositeAction":
        p = [int(x) for x in pointers]
        return cls(module, (p[0], max(p[0], p[1])), (p[2], max(p[2], p[3])),
                   (p[4], max(p[4], p[5])))

    def validate(self, length: int, n_modules: int) -> None:
        if not 0 <= self.module < n_modules:
            raise ValueError(f"module index {self.module} outside registry of {n_modules}")
        for s, e in (self.read1, self.read2, self.write):
            if not 0 <= s <= e <= length:
                raise ValueError(f"span [{s}, {e}) invalid for memory of length {length}")


@dataclass
class Invocation:
    module: str
    read: tuple[int, ...]
    output: tuple[int, ...]
    error: Optional[str] = None


def join_reads(first: Sequence[int], second: Sequence[int], operator: Optional[int]) -> tuple[int, ...]:
    """Concatenate two read spans into one sub-expression.

    Blanks are dropped.  A binary skill's operator goes between the spans
    when both are non-empty and neither side of the seam is an operator, so
    two bare operands read from different places form ``a op b``.
    """
    a, b = strip_blanks(first), strip_blanks(second)
    if a and b and operator is not None and a[-1] not in OPERATOR_IDS and b[0] not in OPERATOR_IDS:
        return a + (operator,) + b
    return a + b


def apply_action(memory: Sequence[int], action: CompositeAction, registry: SkillRegistry,
                 capacity: int = L_MAX) -> tuple[list[int], Invocation]:
    """One machine step.  HALT leaves memory untouched; a rejected call
    writes a single blank; a result that overflows raises CapacityExceeded."""
    action.validate(len(memory), len(registry))
    skill = registry[action.module]
    if skill is HALT:
        return list(memory), Invocation(skill.name, (), ())
    read = join_reads(memory[slice(*action.read1)], memory[slice(*action.read2)], skill.operator)
    error = None
    try:
        if not read:
            raise SubmoduleError("empty read")
        output = tuple(skill(read))
    except SubmoduleError as exc:
        output, error = (BLANK,), str(exc)
    s, e = action.write
    new = list(memory[:s]) + list(output) + list(memory[e:])
    if len(new) > capacity:
        raise CapacityExceeded(f"memory grew to {len(new)} > {capacity}")
    return new, Invocation(skill.name, read, output, error)


@dataclass
class StepRecord:
    memory: tuple[int, ...]
    action: CompositeAction
    pointers: tuple[int, ...] = ()
    logp: float = 0.0
    value: float = 0.0
    invocation: Optional[Invocation] = None


@dataclass
class Trajectory:
    input: tuple[int, ...]
    steps: list[StepRecord] = field(default_factory=list)
    output: Optional[tuple[int, ...]] = None
    status: str = "running"  # halt | budget | capacity
    reward: float = 0.0

    def __len__(self):
        return len(self.steps)


def format_trace(traj: Trajectory, registry: SkillRegistry) -> list[str]:
    lines = []
    for t, st in enumerate(traj.steps, 1):
        a = st.action
        inv = st.invocation
        out = "-" if inv is None or registry[a.module] is HALT else detokenize(inv.output)
        if inv is not None and inv.error:
            out += f" (rejected: {inv.error})"
        lines.append(f"{t} | {detokenize(st.memory)} | {registry[a.module].name} | "
                     f"[{a.read1[0]},{a.read1[1]}) [{a.read2[0]},{a.read2[1]}) | "
                     f"[{a.write[0]},{a.write[1]}) | {out}")
    return lines


class InteractiveSkillModule:
    """Parameters and batched forward pass of an ISM policy."""

    def __init__(self, task_id: str, n_modules: int, config: Optional[SubstrateConfig] = None,
                 t_max: int = T_MAX, store: Optional[ParamStore] = None, attention_size: int = 32):
        self.task_id = task_id
        self.n_modules = n_modules
        self.t_max = t_max
        if store is None:
            store = ParamStore(config or SubstrateConfig())
            cfg = store.config
            H, E = cfg.hidden_size, cfg.embedding_size
            ops.init_embedding(store, "emb", VOCAB_SIZE, E)
            ops.init_birnn(store, "mem", E, H)
            store.create("end_key", (2 * H,))
            ops.init_gru(store, "ctrl", 4 * H, H)
            ops.init_linear(store, "state", H, H)
            ops.init_linear(store, "module", H, n_modules)
            ops.init_pointer(store, "ptr", key_dim=2 * H, query_dim=H, attn_dim=attention_size,
                             heads=N_POINTERS)
            ops.init_linear(store, "value", H, 1)
            store.meta.update({"task": task_id, "kind": "ism", "n_modules": n_modules, "t_max": t_max})
        self.store = store

    @classmethod
    def from_store(cls, store: ParamStore) -> "InteractiveSkillModule":
        m = store.meta
        return cls(m["task"], m["n_modules"], t_max=m["t_max"], store=store)

    @property
    def hidden_size(self) -> int:
        return self.store.config.hidden_size

    def initial_state(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.hidden_size, dtype=self.store.config.torch_dtype)

    def encode_state(self, memories: Sequence[Sequence[int]], h_prev: torch.Tensor):
        """Returns (s_t, h_t, keys over positions 0..l, key mask)."""
        if any(len(m) == 0 for m in memories):
            raise EmptyMemory("cannot encode an empty memory")
        lengths = torch.tensor([len(m) for m in memories])
        width = int(lengths.max())
        ids = torch.full((len(memories), width), BLANK, dtype=torch.long)
        for i, m in enumerate(memories):
            ids[i, :len(m)] = torch.as_tensor(m)
        pos = torch.arange(width + 1)
        mask = pos[None, :width] < lengths[:, None]
        o = ops.birnn_encode(self.store, "mem", ops.embed(self.store, "emb", ids, with_position=True), mask)
        rows = torch.arange(len(memories))
        ctrl_in = torch.cat([o[:, 0], o[rows, lengths - 1]], -1)
        h = ops.gru_step(self.store, "ctrl", ctrl_in, h_prev)
        s = ops.ffn(self.store, "state", h)
        keys = torch.cat([o, o.new_zeros(len(memories), 1, o.shape[-1])], 1)
        is_end = (pos[None, :] == lengths[:, None])[..., None]
        keys = torch.where(is_end, self.store["end_key"], keys)
        return s, h, keys, pos[None, :] <= lengths[:, None]

    def policy_heads(self, s: torch.Tensor, keys: torch.Tensor, key_mask: torch.Tensor):
        """Log-probs of the module head (B, |Ω|), the six pointer heads
        (B, 6, l+1) and the value estimate (B,)."""
        module_logp = ops.log_softmax_head(self.store, "module", s)
        ptr_logp = torch.log_softmax(ops.pointer_logits(self.store, "ptr", s, keys, key_mask), -1)
        value = ops.linear(self.store, "value", s)[:, 0]
        return module_logp, ptr_logp, value

    def step(self, memories, h_prev):
        s, h, keys, mask = self.encode_state(memories, h_prev)
        module_logp, ptr_logp, value = self.policy_heads(s, keys, mask)
        return module_logp, ptr_logp, value, h


def choose(module_logp: torch.Tensor, ptr_logp: torch.Tensor, greedy: bool,
           rng: Optional[np.random.Generator]) -> tuple[np.ndarray, np.ndarray]:
    """Module ids (B,) and raw pointers (B, 6): argmax, or Gumbel-max sampling."""
    m, p = module_logp.detach().numpy(), ptr_logp.detach().numpy()
    if not greedy:
        m = m + rng.gumbel(size=m.shape)
        p = p + rng.gumbel(size=p.shape)
    return np.argmax(m, -1), np.argmax(p, -1)


def joint_logp(module_logp, ptr_logp, modules, pointers) -> torch.Tensor:
    """Sum of the seven component log-probs of the chosen action."""
    modules = torch.as_tensor(np.asarray(modules), dtype=torch.long)
    pointers = torch.as_tensor(np.asarray(pointers), dtype=torch.long)
    lp = module_logp.gather(1, modules[:, None])[:, 0]
    return lp + ptr_logp.gather(2, pointers[..., None])[..., 0].sum(1)


def head_entropy(module_logp, ptr_logp) -> torch.Tensor:
    """Sum of the seven head entropies per row."""
    return ops.entropy_from_logp(module_logp) + ops.entropy_from_logp(ptr_logp).sum(-1)


def finish(traj: Trajectory, memory: Sequence[int], status: str) -> None:
    traj.status = status
    traj.output = None if status == "capacity" else strip_blanks(memory)


@torch.no_grad()
def rollout(ism: InteractiveSkillModule, registry: SkillRegistry,
            inputs: Sequence[Sequence[int]], greedy: bool = True,
            rng: Optional[np.random.Generator] = None) -> list[Trajectory]:
    """Run a batch of episodes to completion (HALT, step budget or overflow)."""
    if len(registry) != ism.n_modules:
        raise ValueError(f"{ism.task_id} expects {ism.n_modules} modules, registry has {len(registry)}")
    if not greedy and rng is None:
        raise ValueError("sampling needs an rng")
    trajs = [Trajectory(tuple(x)) for x in inputs]
    memories = [init_memory(x) for x in inputs]
    h = ism.initial_state(len(inputs))
    active = list(range(len(inputs)))
    for _ in range(ism.t_max):
        if not active:
            break
        mem_batch = [memories[i] for i in active]
        module_logp, ptr_logp, value, h_new = ism.step(mem_batch, h[active])
        h[active] = h_new
        modules, pointers = choose(module_logp, ptr_logp, greedy, rng)
        logps = joint_logp(module_logp, ptr_logp, modules, pointers).numpy()
        still = []
        for k, i in enumerate(active):
            action = CompositeAction.from_pointers(int(modules[k]), pointers[k])
            rec = StepRecord(tuple(memories[i]), action, tuple(int(x) for x in pointers[k]),
                             float(logps[k]), float(value[k]))
            trajs[i].steps.append(rec)
            try:
                memories[i], rec.invocation = apply_action(memories[i], action, registry)
            except CapacityExceeded:
                finish(trajs[i], memories[i], "capacity")
                continue
            if registry[action.module] is HALT:
                finish(trajs[i], memories[i], "halt")
            else:
                still.append(i)
        active = still
    for i in active:
        finish(trajs[i], memories[i], "budget")
    return trajs


def run_episode(ism, registry, tokens, greedy=True, rng=None) -> Trajectory:
    return rollout(ism, registry, [tokens], greedy, rng)[0]


def replay(ism: InteractiveSkillModule, trajs: Sequence[Trajectory]):
    """Recompute joint log-probs, entropies and values for recorded episodes
    with gradients.  Rows come out in (episode, step) order."""
    n = len(trajs)
    T = max(len(t) for t in trajs)
    h = ism.initial_state(n)
    logps, ents, values, keys = [], [], [], []
    for t in range(T):
        idx = [i for i in range(n) if len(trajs[i]) > t]
        module_logp, ptr_logp, value, h_sub = ism.step([trajs[i].steps[t].memory for i in idx], h[idx])
        h = h.index_copy(0, torch.as_tensor(idx), h_sub)
        modules = [trajs[i].steps[t].action.module for i in idx]
        pointers = [trajs[i].steps[t].pointers for i in idx]
        logps.append(joint_logp(module_logp, ptr_logp, modules, pointers))
        ents.append(head_entropy(module_logp, ptr_logp))
        values.append(value)
        keys.extend((i, t) for i in idx)
    perm = torch.as_tensor(sorted(range(len(keys)), key=keys.__getitem__))
    return torch.cat(logps)[perm], torch.cat(ents)[perm], torch.cat(values)[perm]


class IsmSkill(Skill):
    """A trained ISM behind the skill interface (greedy, deterministic)."""

    kind = "ism"

    def __init__(self, ism: InteractiveSkillModule, registry: SkillRegistry,
                 operator: Optional[int] = None, validate=None):
        self.ism = ism
        self.registry = registry
        self.name = ism.task_id
        self.operator = operator
        self.validate = validate

    def __call__(self, tokens):
        if self.validate is not None:
            self.validate(tokens)
        if len(tokens) > L_MAX:
            raise SubmoduleError("input exceeds memory capacity")
        traj = run_episode(self.ism, self.registry, tokens)
        if traj.output is None:
            raise SubmoduleError(f"{self.name}: episode overflowed memory")
        return traj.output
