"""Named parameter arrays with Adam state."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Iterator, Mapping, Optional

import numpy as np
import torch

INIT_SCALE = 0.08


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class SubstrateConfig:
    hidden_size: int = 100
    embedding_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden_size <= 0 or self.embedding_size <= 0:
            raise ValueError("hidden_size and embedding_size must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)


class ParamStore:
    """Named dense arrays plus their Adam moments.

    Shapes are fixed at creation.  ``frozen`` stores refuse optimizer steps,
    which is how trained skill modules are protected from later tasks.
    """

    def __init__(self, config: Optional[SubstrateConfig] = None,
                 rng: Optional[np.random.Generator] = None):
        self.config = config or SubstrateConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.params: dict[str, torch.Tensor] = {}
        self.adam_m: dict[str, torch.Tensor] = {}
        self.adam_v: dict[str, torch.Tensor] = {}
        self.adam_t = 0
        self.frozen = False
        self.meta: dict = {}

    # creation and access

    def create(self, name: str, shape: tuple[int, ...], init: str = "uniform") -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        if init == "uniform":
            data = self.rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        return self.set(name, data)

    def set(self, name: str, data) -> torch.Tensor:
        t = torch.tensor(np.array(data), dtype=self.config.torch_dtype)
        if name in self.params and tuple(t.shape) != tuple(self.params[name].shape):
            raise ValueError(f"shape of {name!r} is fixed at {tuple(self.params[name].shape)}")
        t.requires_grad_(True)
        self.params[name] = t
        self.adam_m[name] = torch.zeros_like(t, requires_grad=False)
        self.adam_v[name] = torch.zeros_like(t, requires_grad=False)
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def __iter__(self) -> Iterator[tuple[str, torch.Tensor]]:
        return iter(self.params.items())

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())

    # gradients and optimisation

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: (p.grad if p.grad is not None else torch.zeros_like(p))
                for n, p in self.params.items()}

    def clip_grad_norm(self, max_norm: float) -> float:
        grads = [p.grad for p in self.params.values() if p.grad is not None]
        if not grads:
            return 0.0
        total = float(torch.sqrt(sum((g.detach() ** 2).sum() for g in grads)))
        if not np.isfinite(total):
            raise NonFiniteError("non-finite gradient norm")
        if total > max_norm:
            scale = max_norm / (total + 1e-12)
            for g in grads:
                g.mul_(scale)
        return total

    @torch.no_grad()
    def adam_step(self, grads: Optional[Mapping[str, torch.Tensor]] = None,
                  lr: Optional[float] = None) -> None:
        if self.frozen:
            raise RuntimeError("cannot update a frozen parameter store")
        cfg = self.config
        lr = cfg.learning_rate if lr is None else lr
        self.adam_t += 1
        bc1 = 1.0 - cfg.beta1 ** self.adam_t
        bc2 = 1.0 - cfg.beta2 ** self.adam_t
        for name, p in self.params.items():
            g = grads[name] if grads is not None else p.grad
            if g is None:
                g = torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for {name}")
            m, v = self.adam_m[name], self.adam_v[name]
            m.mul_(cfg.beta1).add_(g, alpha=1 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1 - cfg.beta2)
            step = (m / bc1) / (torch.sqrt(v / bc2) + cfg.adam_eps)
            p.sub_(lr * step)

    # bookkeeping

    def freeze(self) -> "ParamStore":
        self.frozen = True
        for p in self.params.values():
            p.requires_grad_(False)
        return self

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[name] = p.detach().cpu().numpy()
            out["adam.m/" + name] = self.adam_m[name].cpu().numpy()
            out["adam.v/" + name] = self.adam_v[name].cpu().numpy()
        return out

    def copy(self) -> "ParamStore":
        other = ParamStore(self.config, rng=np.random.default_rng())
        other.rng.bit_generator.state = self.rng.bit_generator.state
        for name, p in self.params.items():
            other.set(name, p.detach().cpu().numpy())
            other.adam_m[name] = self.adam_m[name].clone()
            other.adam_v[name] = self.adam_v[name].clone()
        other.adam_t = self.adam_t
        other.meta = dict(self.meta)
        return other
