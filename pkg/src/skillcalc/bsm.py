"""Basic skill modules: Bi-RNN per-position labelers for single-digit ops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from .expr.alphabet import BLANK, VOCAB_SIZE, strip_blanks, tokenize
from .expr.tasks import Sample
from .nn import ops
from .nn.params import NonFiniteError, ParamStore, SubstrateConfig
from .skills import MemoSkill, Skill, SubmoduleError, operator_token, split_binary

IO_LENGTH = 3


class LengthMismatch(SubmoduleError):
    pass


class DatasetEmpty(ValueError):
    pass


def pad_left(tokens: Sequence[int], length: int) -> list[int]:
    tokens = list(tokens)
    if not tokens or len(tokens) > length:
        raise LengthMismatch(f"input of length {len(tokens)} does not fit {length} slots")
    return [BLANK] * (length - len(tokens)) + tokens


def decode(dist: torch.Tensor) -> tuple[int, ...]:
    """Per-position argmax (lowest id wins ties), blanks removed."""
    return strip_blanks(int(i) for i in torch.argmax(dist, dim=-1))


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float


class BasicSkillModule:
    def __init__(self, task_id: str, config: Optional[SubstrateConfig] = None,
                 io_length: int = IO_LENGTH, store: Optional[ParamStore] = None):
        self.task_id = task_id
        self.io_length = io_length
        if store is None:
            store = ParamStore(config or SubstrateConfig())
            cfg = store.config
            ops.init_embedding(store, "emb", VOCAB_SIZE, cfg.embedding_size)
            ops.init_birnn(store, "enc", cfg.embedding_size, cfg.hidden_size)
            ops.init_linear(store, "out", 2 * cfg.hidden_size, VOCAB_SIZE)
            store.meta.update({"task": task_id, "kind": "bsm", "io_length": io_length})
        self.store = store

    @classmethod
    def from_store(cls, store: ParamStore) -> "BasicSkillModule":
        return cls(store.meta["task"], io_length=store.meta["io_length"], store=store)

    def _ids(self, inputs) -> torch.Tensor:
        if inputs and isinstance(inputs[0], int):
            inputs = [inputs]
        return torch.tensor([pad_left(x, self.io_length) for x in inputs], dtype=torch.long)

    def logits(self, ids: torch.Tensor) -> torch.Tensor:
        x = ops.embed(self.store, "emb", ids)
        return ops.linear(self.store, "out", ops.birnn_encode(self.store, "enc", x))

    def forward(self, inputs) -> torch.Tensor:
        """Distributions (B, l_io, 17) for one token sequence or a list of them."""
        with torch.no_grad():
            return torch.softmax(self.logits(self._ids(inputs)), -1)

    def predict(self, tokens: Sequence[int]) -> tuple[int, ...]:
        return decode(self.forward(list(tokens))[0])

    def accuracy(self, samples: Sequence[Sample]) -> float:
        dist = self.forward([s.input_ids for s in samples])
        hits = sum(decode(d) == s.truth_ids for d, s in zip(dist, samples))
        return hits / len(samples)

    def train_supervised(self, samples: Sequence[Sample], epochs: int = 500,
                         batch_size: int = 10, rng: Optional[np.random.Generator] = None,
                         stop_when_perfect: bool = True) -> list[EpochMetrics]:
        if not samples:
            raise DatasetEmpty(f"{self.task_id}: no training samples")
        rng = rng or np.random.default_rng(self.store.config.seed)
        inputs = self._ids([s.input_ids for s in samples])
        targets = torch.tensor([pad_left(s.truth_ids, self.io_length) for s in samples])
        history = []
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(samples))
            total = 0.0
            for start in range(0, len(order), batch_size):
                idx = torch.as_tensor(order[start:start + batch_size])
                logits = self.logits(inputs[idx])
                loss = torch.nn.functional.cross_entropy(logits.reshape(-1, VOCAB_SIZE),
                                                         targets[idx].reshape(-1))
                if not torch.isfinite(loss):
                    raise NonFiniteError(f"{self.task_id}: loss became {loss.item()}")
                self.store.zero_grad()
                loss.backward()
                self.store.adam_step()
                total += loss.item() * len(idx)
            acc = self.accuracy(samples)
            history.append(EpochMetrics(epoch, total / len(samples), acc))
            if stop_when_perfect and acc == 1.0:
                break
        self.store.zero_grad()
        return history

    def as_skill(self) -> Skill:
        return MemoSkill(BsmSkill(self))


class BsmSkill(Skill):
    """Deterministic wrapper: inputs outside ``d op d`` are rejected."""

    kind = "bsm"

    def __init__(self, bsm: BasicSkillModule):
        self.bsm = bsm
        self.name = bsm.task_id
        self.operator = operator_token(bsm.task_id)

    def __call__(self, tokens):
        if len(tokens) > self.bsm.io_length:
            raise LengthMismatch(f"{self.name}: input longer than {self.bsm.io_length}")
        split_binary(tokens, self.name)
        return self.bsm.predict(tokens)
