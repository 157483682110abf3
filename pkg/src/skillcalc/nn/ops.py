"""Differentiable building blocks over a :class:`ParamStore`.

Every op reads its weights from the store under a name prefix and has an
``init_*`` companion that creates them.  Inputs may carry a leading batch
dimension; single examples work too.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Optional, Sequence, Union

import torch

from .params import ParamStore


class ShapeMismatch(ValueError):
    pass


class IdOutOfRange(IndexError):
    pass


class EmptySequence(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


# embeddings

def init_embedding(store: ParamStore, name: str, vocab: int, dim: int) -> None:
    store.create(f"{name}.table", (vocab, dim))


@lru_cache(maxsize=64)
def _sinusoid(length: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(dim, dtype=torch.float64)[None, :]
    angle = pos / torch.pow(10000.0, (2 * torch.div(i, 2, rounding_mode="floor")) / dim)
    pe = torch.where(i.long() % 2 == 0, torch.sin(angle), torch.cos(angle))
    return pe.to(dtype)


def positional_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sinusoid: sin on even dims, cos on odd dims."""
    return _sinusoid(length, dim, dtype)


def embed(store: ParamStore, name: str, ids, with_position: bool = False) -> torch.Tensor:
    table = store[f"{name}.table"]
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise IdOutOfRange(f"token id outside [0, {table.shape[0]})")
    out = table[ids]
    if with_position:
        out = out + positional_encoding(ids.shape[-1], table.shape[1], table.dtype)
    return out


# recurrent layers

def init_gru(store: ParamStore, prefix: str, input_size: int, hidden: int) -> None:
    store.create(f"{prefix}.w_ih", (3 * hidden, input_size))
    store.create(f"{prefix}.w_hh", (3 * hidden, hidden))
    store.create(f"{prefix}.b_ih", (3 * hidden,), init="zeros")
    store.create(f"{prefix}.b_hh", (3 * hidden,), init="zeros")


def gru_step(store: ParamStore, prefix: str, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """r = σ(W_ir x + W_hr h + b_r), z = σ(W_iz x + W_hz h + b_z),
    n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn)), h' = (1 − z) ⊙ n + z ⊙ h."""
    w_ih, w_hh = store[f"{prefix}.w_ih"], store[f"{prefix}.w_hh"]
    _check(x.shape[-1] == w_ih.shape[1], f"{prefix}: input dim {x.shape[-1]} != {w_ih.shape[1]}")
    _check(h.shape[-1] == w_hh.shape[1], f"{prefix}: hidden dim {h.shape[-1]} != {w_hh.shape[1]}")
    single = x.dim() == 1
    if single:
        x, h = x[None], h[None]
    out = torch.gru_cell(x, h, w_ih, w_hh, store[f"{prefix}.b_ih"], store[f"{prefix}.b_hh"])
    return out[0] if single else out


def init_birnn(store: ParamStore, prefix: str, input_size: int, hidden: int) -> None:
    init_gru(store, f"{prefix}.fwd", input_size, hidden)
    init_gru(store, f"{prefix}.bwd", input_size, hidden)


def birnn_encode(store: ParamStore, prefix: str, vectors: torch.Tensor,
                 mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Outputs ``o_k = fwd_k ⊕ bwd_k`` for every position.

    ``vectors`` is (L, E) or (B, L, E).  For batches of different lengths the
    sequences are right-padded and ``mask`` (B, L) marks real positions; the
    backward direction starts from zero at each sequence's true end.
    """
    single = vectors.dim() == 2
    if single:
        vectors = vectors[None]
        mask = None if mask is None else mask[None]
    batch, length, _ = vectors.shape
    if length == 0:
        raise EmptySequence(f"{prefix}: empty sequence")
    hidden = store[f"{prefix}.fwd.w_hh"].shape[1]
    h = vectors.new_zeros(batch, hidden)
    fwd = []
    for t in range(length):
        h = gru_step(store, f"{prefix}.fwd", vectors[:, t], h)
        fwd.append(h)
    h = vectors.new_zeros(batch, hidden)
    bwd = [None] * length
    for t in range(length - 1, -1, -1):
        h_new = gru_step(store, f"{prefix}.bwd", vectors[:, t], h)
        h = h_new if mask is None else torch.where(mask[:, t, None], h_new, h)
        bwd[t] = h
    out = torch.cat([torch.stack(fwd, 1), torch.stack(bwd, 1)], dim=-1)
    return out[0] if single else out


# feed-forward heads

def init_linear(store: ParamStore, prefix: str, in_dim: int, out_dim: int) -> None:
    store.create(f"{prefix}.w", (out_dim, in_dim))
    store.create(f"{prefix}.b", (out_dim,), init="zeros")


def linear(store: ParamStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    w = store[f"{prefix}.w"]
    _check(x.shape[-1] == w.shape[1], f"{prefix}: input dim {x.shape[-1]} != {w.shape[1]}")
    return torch.nn.functional.linear(x, w, store[f"{prefix}.b"])


def ffn(store: ParamStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(linear(store, prefix, x))


def log_softmax_head(store: ParamStore, prefix: str, x: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(linear(store, prefix, x), dim=-1)


def softmax_head(store: ParamStore, prefix: str, x: torch.Tensor,
                 n_classes: Optional[int] = None) -> torch.Tensor:
    if n_classes is not None:
        _check(store[f"{prefix}.w"].shape[0] == n_classes,
               f"{prefix}: head has {store[f'{prefix}.w'].shape[0]} classes, not {n_classes}")
    return torch.softmax(linear(store, prefix, x), dim=-1)


# pointer attention

def init_pointer(store: ParamStore, prefix: str, key_dim: int, query_dim: int,
                 attn_dim: int, heads: Optional[int] = None) -> None:
    lead = () if heads is None else (heads,)
    store.create(f"{prefix}.w_key", lead + (attn_dim, key_dim))
    store.create(f"{prefix}.w_query", lead + (attn_dim, query_dim))
    store.create(f"{prefix}.v", lead + (attn_dim,))


def pointer_logits(store: ParamStore, prefix: str, query: torch.Tensor, keys: torch.Tensor,
                   mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Additive attention scores ``v · tanh(W_k key_j + W_q query)``.

    Single head: query (Q,) or (B, Q), keys (L, K) or (B, L, K) -> (..., L).
    Stacked heads (weights with a leading head axis H): -> (..., H, L).
    Masked-out positions get ``-inf``.
    """
    w_key, w_query, v = store[f"{prefix}.w_key"], store[f"{prefix}.w_query"], store[f"{prefix}.v"]
    if keys.shape[-2] == 0:
        raise EmptySequence(f"{prefix}: no keys")
    _check(keys.shape[-1] == w_key.shape[-1], f"{prefix}: key dim {keys.shape[-1]} != {w_key.shape[-1]}")
    _check(query.shape[-1] == w_query.shape[-1],
           f"{prefix}: query dim {query.shape[-1]} != {w_query.shape[-1]}")
    single = keys.dim() == 2
    if single:
        keys, query = keys[None], query[None]
        mask = None if mask is None else mask[None]
    if w_key.dim() == 2:
        proj_k = keys @ w_key.T                                # (B, L, A)
        proj_q = (query @ w_query.T)[:, None, :]               # (B, 1, A)
        scores = torch.tanh(proj_k + proj_q) @ v               # (B, L)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
    else:
        heads, attn, kdim = w_key.shape
        proj_k = (keys @ w_key.reshape(heads * attn, kdim).T)  # (B, L, H*A)
        proj_k = proj_k.reshape(keys.shape[0], keys.shape[1], heads, attn).transpose(1, 2)
        proj_q = torch.einsum("bq,haq->bha", query, w_query)[:, :, None, :]
        scores = torch.einsum("bhla,ha->bhl", torch.tanh(proj_k + proj_q), v)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
    return scores[0] if single else scores


def pointer_attention(store: ParamStore, prefix: str, query: torch.Tensor, keys: torch.Tensor,
                      mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return torch.softmax(pointer_logits(store, prefix, query, keys, mask), dim=-1)


def entropy_from_logp(logp: torch.Tensor) -> torch.Tensor:
    p = logp.exp()
    # masked entries have logp = -inf and p = 0; count them as 0
    return -(p * torch.where(p > 0, logp, torch.zeros_like(logp))).sum(-1)
