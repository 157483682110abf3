"""Central finite-difference gradient checks.

The numeric side only ever calls the forward pass with perturbed parameter
values, so it does not depend on autograd being right.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from . import ops
from .params import ParamStore, SubstrateConfig

TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    op: str
    max_rel_error: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a − n| / max(|a|, |n|, floor); the floor keeps exact zeros from
    turning round-off into huge ratios."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], store: ParamStore,
                            names: Optional[Iterable[str]] = None, eps: float = 1e-6,
                            max_entries: int = 64, rng: Optional[np.random.Generator] = None
                            ) -> tuple[float, int]:
    """Compare autograd against central differences; returns (max rel err, n).

    At most ``max_entries`` randomly chosen entries of each array are probed.
    """
    rng = rng or np.random.default_rng(0)
    names = list(names) if names is not None else store.names()
    store.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst, count = 0.0, 0
    for name in names:
        p = store[name]
        analytic = (p.grad if p.grad is not None else torch.zeros_like(p)).detach().numpy().ravel()
        flat_idx = np.arange(p.numel())
        if p.numel() > max_entries:
            flat_idx = rng.choice(p.numel(), size=max_entries, replace=False)
        numeric = np.empty(len(flat_idx))
        with torch.no_grad():
            view = p.view(-1)
            for k, i in enumerate(flat_idx):
                orig = view[i].item()
                view[i] = orig + eps
                f_plus = float(loss_fn())
                view[i] = orig - eps
                f_minus = float(loss_fn())
                view[i] = orig
                numeric[k] = (f_plus - f_minus) / (2 * eps)
        err = relative_error(analytic[flat_idx], numeric)
        worst = max(worst, float(err.max()))
        count += len(flat_idx)
    store.zero_grad()
    return worst, count


def _store(seed: int) -> ParamStore:
    return ParamStore(SubstrateConfig(hidden_size=6, embedding_size=5, seed=seed, dtype="float64"))


def _projection(rng, shape) -> torch.Tensor:
    return torch.as_tensor(rng.normal(size=shape))


def _case_embed(seed):
    store = _store(seed)
    ops.init_embedding(store, "emb", 17, 5)
    ids = np.random.default_rng(seed).integers(0, 17, size=7)
    proj = _projection(np.random.default_rng(seed + 1), (7, 5))
    return store, lambda: (ops.embed(store, "emb", ids, with_position=True) * proj).sum()


def _case_gru_step(seed):
    store = _store(seed)
    rng = np.random.default_rng(seed)
    ops.init_gru(store, "gru", 5, 6)
    store.set("input.x", rng.uniform(-1, 1, size=(3, 5)))
    store.set("input.h", rng.uniform(-1, 1, size=(3, 6)))
    proj = _projection(rng, (3, 6))
    return store, lambda: (ops.gru_step(store, "gru", store["input.x"], store["input.h"]) * proj).sum()


def _case_birnn(seed):
    store = _store(seed)
    rng = np.random.default_rng(seed)
    ops.init_birnn(store, "rnn", 5, 4)
    store.set("input.x", rng.uniform(-1, 1, size=(2, 5, 5)))
    mask = torch.tensor([[True] * 5, [True] * 3 + [False] * 2])
    proj = _projection(rng, (2, 5, 8)) * mask[..., None]
    return store, lambda: (ops.birnn_encode(store, "rnn", store["input.x"], mask) * proj).sum()


def _case_ffn(seed):
    store = _store(seed)
    rng = np.random.default_rng(seed)
    ops.init_linear(store, "ffn", 6, 4)
    store.set("input.x", rng.uniform(-1, 1, size=(3, 6)))
    proj = _projection(rng, (3, 4))
    return store, lambda: (ops.ffn(store, "ffn", store["input.x"]) * proj).sum()


def _case_softmax_head(seed):
    store = _store(seed)
    rng = np.random.default_rng(seed)
    ops.init_linear(store, "head", 6, 5)
    store.set("input.x", rng.uniform(-1, 1, size=(3, 6)))
    proj = _projection(rng, (3, 5))
    return store, lambda: (ops.softmax_head(store, "head", store["input.x"], 5) * proj).sum()


def _case_pointer(seed):
    store = _store(seed)
    rng = np.random.default_rng(seed)
    ops.init_pointer(store, "ptr", key_dim=4, query_dim=6, attn_dim=5, heads=3)
    store.set("input.keys", rng.uniform(-1, 1, size=(2, 5, 4)))
    store.set("input.query", rng.uniform(-1, 1, size=(2, 6)))
    mask = torch.tensor([[True] * 5, [True] * 4 + [False]])
    proj = _projection(rng, (2, 3, 5))

    def loss():
        logits = ops.pointer_logits(store, "ptr", store["input.query"], store["input.keys"], mask)
        p = torch.softmax(logits, -1)
        return (torch.where(mask[:, None, :], p * proj, torch.zeros_like(p))).sum()
    return store, loss


SUBSTRATE_CASES: dict[str, Callable] = {
    "embed": _case_embed,
    "gru_step": _case_gru_step,
    "birnn_encode": _case_birnn,
    "ffn": _case_ffn,
    "softmax_head": _case_softmax_head,
    "pointer_attention": _case_pointer,
}


def check_substrate(seed: int = 0, cases: Optional[dict[str, Callable]] = None
                    ) -> list[GradcheckResult]:
    results = []
    for name, build in (cases or SUBSTRATE_CASES).items():
        store, loss_fn = build(seed)
        err, n = finite_difference_check(loss_fn, store, rng=np.random.default_rng(seed))
        results.append(GradcheckResult(name, err, n))
    return results
