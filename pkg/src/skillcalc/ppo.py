"""PPO for interactive skill modules.

Reward arrives only when an episode ends.  The advantage is the discounted
return minus the value head's estimate, normalised per batch.  The ratio is
taken over the joint log-probability of the whole composite action.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .expr.tasks import Sample
from .ism import (
    InteractiveSkillModule, SkillRegistry, Trajectory, replay, rollout,
)
from .nn.params import NonFiniteError
from .skills import Skill

log = logging.getLogger(__name__)


class NonFiniteLoss(NonFiniteError):
    pass


@dataclass
class RlConfig:
    discount: float = 0.99
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    value_weight: float = 0.5
    max_grad_norm: Optional[float] = 1.0
    learning_rate: Optional[float] = None

    def __post_init__(self):
        # math.inf switches clipping off
        if not (0 < self.clip < 1 or self.clip == math.inf):
            raise ValueError("clip must be in (0, 1)")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def compute_reward(output: Optional[Sequence[int]], truth: Sequence[int]) -> float:
    """+1 for an exact answer, else minus the normalised edit distance (capped at 1)."""
    if not truth:
        raise ValueError("truth must be non-empty")
    if output is None:
        return -1.0
    if tuple(output) == tuple(truth):
        return 1.0
    return -min(1.0, levenshtein(output, truth) / max(len(truth), 1))


def discounted_returns(n_steps: int, reward: float, discount: float) -> np.ndarray:
    """G_t = discount^(T−t)·r for t = 1..T."""
    return reward * discount ** np.arange(n_steps - 1, -1, -1, dtype=np.float64)


def normalise(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


def returns_and_advantages(trajs: Sequence[Trajectory], discount: float):
    """Flat (episode, step)-ordered returns and normalised advantages."""
    G = np.concatenate([discounted_returns(len(t), t.reward, discount) for t in trajs])
    V = np.array([s.value for t in trajs for s in t.steps])
    return G, normalise(G - V)


def ppo_loss(new_logp, old_logp, adv, entropy, values, returns, clip, alpha, value_weight):
    """Negated objective: −(clipped surrogate + α·entropy) + w·(V − G)²."""
    ratio = torch.exp(new_logp - old_logp)
    surrogate = torch.min(ratio * adv, torch.clamp(ratio, 1 - clip, 1 + clip) * adv).mean()
    ent = entropy.mean()
    value_loss = ((values - returns) ** 2).mean()
    loss = -(surrogate + alpha * ent) + value_weight * value_loss
    return loss, {"surrogate": surrogate.item(), "entropy": ent.item(), "value_loss": value_loss.item()}


def ppo_update(ism: InteractiveSkillModule, trajs: Sequence[Trajectory], config: RlConfig,
               alpha: float, rng: np.random.Generator) -> dict:
    if not trajs:
        raise ValueError("empty batch")
    store = ism.store
    dtype = store.config.torch_dtype
    G, A = returns_and_advantages(trajs, config.discount)
    offsets = np.cumsum([0] + [len(t) for t in trajs])
    old = np.array([s.logp for t in trajs for s in t.steps])
    stats = []
    for _ in range(config.epochs):
        order = rng.permutation(len(trajs))
        for start in range(0, len(order), config.minibatch):
            eps = sorted(order[start:start + config.minibatch])
            rows = np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in eps])
            new_logp, entropy, values = replay(ism, [trajs[i] for i in eps])
            loss, parts = ppo_loss(new_logp, torch.as_tensor(old[rows], dtype=dtype),
                                   torch.as_tensor(A[rows], dtype=dtype), entropy, values,
                                   torch.as_tensor(G[rows], dtype=dtype), config.clip, alpha,
                                   config.value_weight)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss {loss.item()} ({parts})")
            store.zero_grad()
            loss.backward()
            if config.max_grad_norm is not None:
                store.clip_grad_norm(config.max_grad_norm)
            store.adam_step(lr=config.learning_rate)
            parts["loss"] = loss.item()
            stats.append(parts)
    store.zero_grad()
    return {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}


@dataclass
class CurveRow:
    batch: int
    episodes: int
    greedy_acc: float
    mean_reward: float
    entropy: float
    alpha: float
    loss: float
    seconds: float = 0.0

    COLUMNS = ("batch", "episodes", "greedy_acc", "mean_reward", "entropy", "alpha", "loss")

    def tsv(self) -> str:
        return "\t".join(f"{getattr(self, c):.6g}" if isinstance(getattr(self, c), float)
                         else str(getattr(self, c)) for c in self.COLUMNS)


def write_curve(rows: Sequence[CurveRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(CurveRow.COLUMNS) + "\n")
        for r in rows:
            fh.write(r.tsv() + "\n")


@dataclass
class Progress:
    """Where a training run stands; enough to continue it exactly."""
    batch: int = 0
    episodes: int = 0
    accuracy: float = float("nan")
    best_accuracy: float = -1.0
    best_state: Optional[object] = None
    seconds: float = 0.0
    curve: list = field(default_factory=list)


@dataclass
class TrainResult:
    mastered: bool
    curve: list[CurveRow]
    episodes: int
    best_accuracy: float
    stopped_by: str


def greedy_accuracy(ism, registry, samples: Sequence[Sample], batch: int = 256) -> float:
    hits = 0
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        trajs = rollout(ism, registry, [s.input_ids for s in chunk], greedy=True)
        hits += sum(t.output == s.truth_ids for t, s in zip(trajs, chunk))
    return hits / len(samples)


RewardFn = Callable[[Trajectory, Sample], float]


def answer_reward(traj: Trajectory, sample: Sample) -> float:
    return compute_reward(traj.output, sample.truth_ids)


def train_ism(ism: InteractiveSkillModule, registry: SkillRegistry, teacher, rl: RlConfig,
              rng: np.random.Generator, budget: int = 200_000, batch_episodes: int = 64,
              eval_samples: Sequence[Sample] = (), eval_every: int = 10,
              stop_accuracy: Optional[float] = None, reward_fn: RewardFn = answer_reward,
              correct_fn: Optional[Callable[[Trajectory, Sample], bool]] = None,
              on_batch: Optional[Callable[[CurveRow], None]] = None,
              progress: Optional["Progress"] = None,
              time_limit: Optional[float] = None) -> TrainResult:
    """Collect difficulty-sampled episodes, update with PPO, repeat.

    ``teacher`` supplies ``draw(n, rng)``, ``alpha()``, ``record(j, correct)``
    and ``mastered()``.  Teacher outcomes come from greedy re-attempts on the
    drawn samples.  Stops on mastery, on reaching ``stop_accuracy`` on the
    evaluation samples, or when the episode budget runs out; in the last case
    the best-scoring parameters seen are restored (running past
    ``time_limit`` seconds counts as running out).  ``progress`` is updated
    in place every batch; passing a saved one continues that run.
    """
    torch.set_num_threads(1)
    correct_fn = correct_fn or (lambda traj, s: traj.output == s.truth_ids)
    p = progress if progress is not None else Progress()
    t_start = time.perf_counter()
    t0 = t_start - p.seconds
    stopped_by = "budget"
    while p.episodes < budget:
        p.batch += 1
        indices, samples = teacher.draw(batch_episodes, rng)
        alpha = teacher.alpha()
        trajs = rollout(ism, registry, [s.input_ids for s in samples], greedy=False, rng=rng)
        for traj, s in zip(trajs, samples):
            traj.reward = reward_fn(traj, s)
        p.episodes += len(trajs)
        metrics = ppo_update(ism, trajs, rl, alpha, rng)
        greedy = rollout(ism, registry, [s.input_ids for s in samples], greedy=True)
        for j, traj, s in zip(indices, greedy, samples):
            teacher.record(j, correct_fn(traj, s))
        if eval_samples and (p.batch % eval_every == 0 or p.episodes >= budget):
            p.accuracy = greedy_accuracy(ism, registry, eval_samples)
            if p.accuracy > p.best_accuracy:
                p.best_accuracy, p.best_state = p.accuracy, ism.store.copy()
        p.seconds = time.perf_counter() - t0
        row = CurveRow(p.batch, p.episodes, p.accuracy, float(np.mean([t.reward for t in trajs])),
                       metrics["entropy"], alpha, metrics["loss"], p.seconds)
        p.curve.append(row)
        if on_batch is not None:
            on_batch(row)
        log.debug("%s", row.tsv())
        if teacher.mastered():
            stopped_by = "mastery"
            break
        if (stop_accuracy is not None and eval_samples and p.batch % eval_every == 0
                and p.accuracy >= stop_accuracy):
            stopped_by = "accuracy"
            break
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            stopped_by = "time"
            if eval_samples and p.batch % eval_every:
                p.accuracy = greedy_accuracy(ism, registry, eval_samples)
                if p.accuracy > p.best_accuracy:
                    p.best_accuracy, p.best_state = p.accuracy, ism.store.copy()
            break
    if stopped_by in ("budget", "time") and p.best_state is not None and p.best_accuracy > p.accuracy:
        for name, param in p.best_state:
            with torch.no_grad():
                ism.store[name].copy_(param)
    return TrainResult(stopped_by == "mastery", p.curve, p.episodes, max(p.best_accuracy, 0.0), stopped_by)


class IdentitySkill(Skill):
    """Returns its input unchanged; the non-HALT arm of the bandit check."""

    name = "ID"
    kind = "identity"

    def __call__(self, tokens):
        return tuple(tokens)


def bandit_check(seed: int, episodes: int = 2000, eval_episodes: int = 100,
                 target: int = 1, hidden: int = 32) -> float:
    """Two-arm module-selection bandit: the first step's module choice is
    rewarded +1 if it is ``target`` and −1 otherwise.  Returns the fraction
    of greedy evaluation episodes choosing ``target``."""
    from .ctcs import Teacher
    from .expr.tasks import enumerate_single_digit
    from .nn.params import SubstrateConfig

    rng = np.random.default_rng(seed)
    registry = SkillRegistry([IdentitySkill()])
    ism = InteractiveSkillModule("bandit", len(registry),
                                 SubstrateConfig(hidden_size=hidden, seed=seed), t_max=1)
    pool = enumerate_single_digit("+")
    teacher = Teacher(pool)
    reward = lambda traj, s: 1.0 if traj.steps[0].action.module == target else -1.0
    train_ism(ism, registry, teacher, RlConfig(), rng, budget=episodes, reward_fn=reward,
              correct_fn=lambda traj, s: traj.steps[0].action.module == target)
    eval_rng = np.random.default_rng([seed, 1])
    picks = [pool[int(i)].input_ids for i in eval_rng.integers(len(pool), size=eval_episodes)]
    trajs = rollout(ism, registry, picks, greedy=True)
    return float(np.mean([t.steps[0].action.module == target for t in trajs]))
