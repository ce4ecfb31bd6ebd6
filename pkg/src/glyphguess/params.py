"""Named parameter storage, initialization, and the SGD-with-momentum step."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import NonFiniteError, Tensor

PARTITIONS = ("encoder", "decoder", "guesser")


class ParamStore:
    """Named parameter tensors with partition labels and grad accumulators.

    Iteration is always in sorted-name order so that float accumulations
    (clip norms, serialization) are identical no matter how the store was
    built or reloaded.
    """

    _next_uid = 0

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._partition: dict[str, str] = {}
        self.version = 0  # bumped on every optimizer step; used for caches
        ParamStore._next_uid += 1
        self.uid = ParamStore._next_uid

    def register(self, name: str, value: np.ndarray, partition: str) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, name=name)
        self._tensors[name] = t
        self._partition[name] = partition
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._tensors[n]) for n in sorted(self._tensors)]

    def partition_of(self, name: str) -> str:
        return self._partition[name]

    def partition_items(self, *partitions: str) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.items() if self._partition[n] in partitions]

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def partition_bytes(self, partition: str) -> bytes:
        """Raw value bytes of one partition, in name order (for frozen checks)."""
        chunks = [t.data.tobytes() for n, t in self.partition_items(partition)]
        return b"".join(chunks)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._tensors.items():
            out.register(name, t.data.copy(), self._partition[name])
        out.version = self.version
        return out


def uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, shape)


def lstm_init(store: ParamStore, prefix: str, in_dim: int, hidden: int, partition: str, rng: Rng) -> None:
    """Register one LSTM cell (wx, wh, b); forget-gate bias starts at 1.0."""
    store.register(f"{prefix}.wx", uniform_init(rng, (4 * hidden, in_dim), in_dim), partition)
    store.register(f"{prefix}.wh", uniform_init(rng, (4 * hidden, hidden), hidden), partition)
    b = uniform_init(rng, (4 * hidden,), hidden)
    b[hidden : 2 * hidden] = 1.0
    store.register(f"{prefix}.b", b, partition)


def linear_init(store: ParamStore, prefix: str, in_dim: int, out_dim: int, partition: str, rng: Rng) -> None:
    store.register(f"{prefix}.w", uniform_init(rng, (out_dim, in_dim), in_dim), partition)
    store.register(f"{prefix}.b", uniform_init(rng, (out_dim,), in_dim), partition)


@dataclass
class OptimConfig:
    learning_rate: float
    momentum: float = 0.9
    clip_norm: float = 5.0


class SgdMomentum:
    """Gradient descent with momentum and global gradient-norm clipping.

    Only the tensors handed over at construction are touched; anything else
    in the store stays bit-identical no matter how often ``step`` runs.
    """

    def __init__(self, tensors: list[tuple[str, Tensor]], config: OptimConfig, store: ParamStore | None = None):
        self.tensors = list(tensors)
        self.config = config
        self.velocity = {name: np.zeros_like(t.data) for name, t in self.tensors}
        self._store = store

    def step(self) -> None:
        grads = []
        for name, t in self.tensors:
            g = t.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
            grads.append(g)

        sq = 0.0
        for g in grads:
            if g is not None:
                sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        clip = self.config.clip_norm
        factor = clip / norm if clip and norm > clip else 1.0

        mu = self.config.momentum
        lr = self.config.learning_rate
        for (name, t), g in zip(self.tensors, grads):
            v = self.velocity[name]
            if g is None:
                v *= mu
            else:
                v *= mu
                v += factor * g
            t.data = t.data - lr * v
            t.zero_grad()
        if self._store is not None:
            self._store.version += 1

    def state(self) -> dict:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state(self, state: dict) -> None:
        for name in self.velocity:
            if name in state:
                self.velocity[name] = np.asarray(state[name], dtype=np.float64).copy()


class Adam:
    """Adam with the same global-norm clipping and zero-after-step contract.

    The momentum-SGD step above is the reference optimizer primitive; this
    one exists because the recurrent feature regression stalls in a
    predict-the-mean plateau under plain SGD at any stable learning rate,
    while adaptive scaling trains it in a handful of epochs.
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, tensors: list[tuple[str, Tensor]], config: OptimConfig, store: ParamStore | None = None):
        self.tensors = list(tensors)
        self.config = config
        self.m = {name: np.zeros_like(t.data) for name, t in self.tensors}
        self.v = {name: np.zeros_like(t.data) for name, t in self.tensors}
        self.steps = 0
        self._store = store

    def step(self) -> None:
        grads = []
        for name, t in self.tensors:
            g = t.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
            grads.append(g)
        sq = 0.0
        for g in grads:
            if g is not None:
                sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        clip = self.config.clip_norm
        factor = clip / norm if clip and norm > clip else 1.0

        self.steps += 1
        lr = self.config.learning_rate
        bc1 = 1.0 - self.BETA1**self.steps
        bc2 = 1.0 - self.BETA2**self.steps
        for (name, t), g in zip(self.tensors, grads):
            m, v = self.m[name], self.v[name]
            if g is None:
                m *= self.BETA1
                v *= self.BETA2
            else:
                gc = factor * g
                m *= self.BETA1
                m += (1.0 - self.BETA1) * gc
                v *= self.BETA2
                v += (1.0 - self.BETA2) * gc * gc
            t.data = t.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.EPS)
            t.zero_grad()
        if self._store is not None:
            self._store.version += 1

    def state(self) -> dict:
        out = {f"m:{name}": m.copy() for name, m in self.m.items()}
        out.update({f"v:{name}": v.copy() for name, v in self.v.items()})
        out["steps"] = np.array([float(self.steps)])
        return out

    def load_state(self, state: dict) -> None:
        for name in self.m:
            if f"m:{name}" in state:
                self.m[name] = np.asarray(state[f"m:{name}"], dtype=np.float64).copy()
            if f"v:{name}" in state:
                self.v[name] = np.asarray(state[f"v:{name}"], dtype=np.float64).copy()
        if "steps" in state:
            self.steps = int(np.asarray(state["steps"]).ravel()[0])


def make_optimizer(
    kind: str,
    tensors: list[tuple[str, Tensor]],
    config: OptimConfig,
    store: ParamStore | None = None,
):
    if kind == "adam":
        return Adam(tensors, config, store=store)
    if kind == "sgd":
        return SgdMomentum(tensors, config, store=store)
    raise ValueError(f"unknown optimizer {kind!r}")
