"""Reverse-mode differentiation over float64 numpy vectors.

Small define-by-run tape: every operation either records a node with an
analytic backward rule, or (inside a ``no_grad`` block) just computes.
Both paths run the exact same numpy expressions, so training-mode and
inference-mode numerics are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(ValueError):
    """A value that must be finite is NaN or Inf."""


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus an optional position in the backward graph.

    Leaves created with ``requires_grad=True`` accumulate into ``.grad``
    additively across ``backward`` calls; ``.grad`` is ``None`` until the
    first contribution arrives.
    """

    __slots__ = ("data", "grad", "node", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or '<anonymous>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad else "tensor")
        return f"Tensor({tag}, shape={self.shape})"


class _Node:
    """One recorded operation: inputs, outputs, and a backward rule.

    ``backward(out_grads)`` receives one gradient per output (zeros when an
    output was never used downstream) and returns one gradient or None per
    input.
    """

    __slots__ = ("inputs", "outputs", "backward")

    def __init__(
        self,
        inputs: Sequence[Tensor],
        backward: Callable[[list[np.ndarray]], list[np.ndarray | None]],
    ):
        self.inputs = tuple(inputs)
        self.outputs: list[Tensor] = []
        self.backward = backward


def _track(inputs: Sequence[Tensor]) -> bool:
    if not _grad_enabled:
        return False
    return any(t.requires_grad or t.node is not None for t in inputs)


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = False
    out.name = None
    if _track(inputs):
        node = _Node(inputs, backward)
        node.outputs.append(out)
        out.node = node
    return out


def _emit_pair(d0: np.ndarray, d1: np.ndarray, inputs: Sequence[Tensor], backward) -> tuple[Tensor, Tensor]:
    a = Tensor.__new__(Tensor)
    a.data, a.grad, a.node, a.requires_grad, a.name = d0, None, None, False, None
    b = Tensor.__new__(Tensor)
    b.data, b.grad, b.node, b.requires_grad, b.name = d1, None, None, False, None
    if _track(inputs):
        node = _Node(inputs, backward)
        node.outputs.extend((a, b))
        a.node = node
        b.node = node
    return a, b


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires-grad leaf.

    Repeated calls add: callers reset leaf grads explicitly (ParamStore
    handles that for parameters).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("backward called on a non-finite loss")
    if loss.node is None:
        if loss.requires_grad:
            loss.accumulate_grad(np.ones_like(loss.data))
        return

    # Reverse topological order over nodes, iteratively.
    order: list[_Node] = []
    visited: set[int] = set()
    stack: list[tuple[_Node, bool]] = [(loss.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if t.node is not None and id(t.node) not in visited:
                stack.append((t.node, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        out_grads = []
        any_grad = False
        for out in node.outputs:
            g = flowing.get(id(out))
            if g is None:
                g = np.zeros_like(out.data)
            else:
                any_grad = True
            out_grads.append(g)
        if not any_grad:
            continue
        in_grads = node.backward(out_grads)
        for t, g in zip(node.inputs, in_grads):
            if g is None:
                continue
            if t.node is None:
                if t.requires_grad:
                    t.accumulate_grad(g)
            else:
                key = id(t)
                if key in flowing:
                    flowing[key] = flowing[key] + g
                else:
                    flowing[key] = g


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def linear(weights: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """y = W x + b for W (out, in), b (out,), x (in,)."""
    w, bv, xv = weights.data, bias.data, x.data
    if w.ndim != 2 or xv.ndim != 1 or w.shape[1] != xv.shape[0] or bv.shape != (w.shape[0],):
        raise ValueError(
            f"linear shape mismatch: W{w.shape} b{bv.shape} x{xv.shape}"
        )
    y = w @ xv + bv

    def back(out_grads):
        (dy,) = out_grads
        return [np.outer(dy, xv), dy, w.T @ dy]

    return _emit(y, (weights, bias, x), back)


def embed(table: Tensor, token_id: int) -> Tensor:
    """Row lookup; gradient accumulates only into the selected row."""
    tab = table.data
    if not 0 <= token_id < tab.shape[0]:
        raise ValueError(f"token id {token_id} out of range for table of {tab.shape[0]}")
    row = tab[token_id].copy()

    def back(out_grads):
        (dy,) = out_grads
        dt = np.zeros_like(tab)
        dt[token_id] = dy
        return [dt]

    return _emit(row, (table,), back)


def lstm_step(
    x: Tensor,
    h: Tensor,
    c: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell; gate layout [input, forget, candidate, output].

    wx: (4H, in), wh: (4H, H), b: (4H,).
    """
    hid = h.data.shape[0]
    if (
        wx.data.shape[0] != 4 * hid
        or wh.data.shape != (4 * hid, hid)
        or b.data.shape != (4 * hid,)
        or wx.data.shape[1] != x.data.shape[0]
        or c.data.shape != (hid,)
    ):
        raise ValueError(
            f"lstm_step shape mismatch: x{x.data.shape} h{h.data.shape} "
            f"c{c.data.shape} wx{wx.data.shape} wh{wh.data.shape} b{b.data.shape}"
        )
    pre = wx.data @ x.data + wh.data @ h.data + b.data
    gi = _sigmoid(pre[:hid])
    gf = _sigmoid(pre[hid : 2 * hid])
    gg = np.tanh(pre[2 * hid : 3 * hid])
    go = _sigmoid(pre[3 * hid :])
    c_new = gf * c.data + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc

    def back(out_grads):
        dh, dc = out_grads
        d_go = dh * tc
        d_cn = dc + dh * go * (1.0 - tc * tc)
        d_gi = d_cn * gg
        d_gf = d_cn * c.data
        d_gg = d_cn * gi
        d_c = d_cn * gf
        dpre = np.concatenate(
            [
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_gg * (1.0 - gg * gg),
                d_go * go * (1.0 - go),
            ]
        )
        return [
            wx.data.T @ dpre,
            wh.data.T @ dpre,
            d_c,
            np.outer(dpre, x.data),
            np.outer(dpre, h.data),
            dpre,
        ]

    return _emit_pair(h_new, c_new, (x, h, c, wx, wh, b), back)


def softmax(logits: Tensor) -> Tensor:
    """Max-subtracted softmax over a vector."""
    z = logits.data
    if z.ndim != 1 or z.shape[0] < 1:
        raise ValueError(f"softmax needs a non-empty vector, got shape {z.shape}")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    p = e / np.sum(e)

    def back(out_grads):
        (dp,) = out_grads
        return [p * (dp - np.dot(dp, p))]

    return _emit(p, (logits,), back)


def cross_entropy(probs: Tensor, target: int) -> Tensor:
    """-log(probs[target]); pairs with the softmax that produced probs."""
    p = probs.data
    if not 0 <= target < p.shape[0]:
        raise ValueError(f"cross_entropy target {target} out of range {p.shape[0]}")
    loss = np.asarray(-np.log(p[target]))

    def back(out_grads):
        (dl,) = out_grads
        dp = np.zeros_like(p)
        dp[target] = -float(dl) / p[target]
        return [dp]

    return _emit(loss, (probs,), back)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared element differences."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    loss = np.asarray(np.sum(diff * diff) / n)

    def back(out_grads):
        (dl,) = out_grads
        g = (2.0 / n) * float(dl) * diff
        return [g, -g]

    return _emit(loss, (a, b), back)


def sq_dist(a: Tensor, b: Tensor) -> Tensor:
    """Squared euclidean distance between two equal-shape vectors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"sq_dist shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    loss = np.asarray(np.sum(diff * diff))

    def back(out_grads):
        (dl,) = out_grads
        g = 2.0 * float(dl) * diff
        return [g, -g]

    return _emit(loss, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def back(out_grads):
        (dy,) = out_grads
        return [dy, dy]

    return _emit(a.data + b.data, (a, b), back)


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)

    def back(out_grads):
        (dy,) = out_grads
        return [k * dy]

    return _emit(k * a.data, (a,), back)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def concat(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("concat expects 1-D tensors")
    na = a.data.shape[0]

    def back(out_grads):
        (dy,) = out_grads
        return [dy[:na], dy[na:]]

    return _emit(np.concatenate([a.data, b.data]), (a, b), back)


def stack_scalars(items: Sequence[Tensor]) -> Tensor:
    """Pack scalar tensors into one vector."""
    if not items:
        raise ValueError("stack_scalars needs at least one scalar")
    for t in items:
        if t.data.size != 1:
            raise ValueError("stack_scalars expects scalar tensors")
    data = np.array([float(t.data) for t in items])

    def back(out_grads):
        (dy,) = out_grads
        return [np.asarray(dy[i]) for i in range(len(items))]

    return _emit(data, tuple(items), back)


def add_scalars(items: Sequence[Tensor]) -> Tensor:
    """Sum of scalar tensors (left fold, deterministic order)."""
    if not items:
        raise ValueError("add_scalars needs at least one term")
    total = items[0]
    for t in items[1:]:
        total = add(total, t)
    return total


def zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n))
