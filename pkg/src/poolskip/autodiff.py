"""Reverse-mode differentiation, plain SGD and the weight-inertia probe."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import ops
from .errors import IncompleteTape, MissingGradient, ShapeMismatch
from .module import PoolSkipConfig, Variant, poolskip_backward, poolskip_forward


class Node:
    __slots__ = ("value", "parents", "backward_fn", "name", "op", "index", "ctx")

    def __init__(self, value, parents=(), backward_fn=None, name=None, op="leaf"):
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name
        self.op = op
        self.index = -1
        self.ctx = None

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, name={self.name!r}, shape={self.shape})"


class GradTape:
    """Records one forward pass; :meth:`backward` may run exactly once.

    Leaves are created with :meth:`param` (named, differentiable) or
    :meth:`constant`. Every op method records a node whose backward closure maps
    the output gradient to one gradient (or ``None``) per parent.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._consumed = False

    def _push(self, node: Node) -> Node:
        if self._consumed:
            raise IncompleteTape("tape already consumed by backward()")
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        return self._push(Node(np.asarray(value, dtype=np.float64), name=name))

    def constant(self, value) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), op="const")
        return self._push(node)

    def record(self, op: str, value, parents: Sequence[Node], backward_fn: Callable) -> Node:
        for p in parents:
            if p.index < 0 or p.index >= len(self.nodes) or self.nodes[p.index] is not p:
                raise IncompleteTape(f"{op}: input node is not on this tape")
        return self._push(Node(value, parents, backward_fn, op=op))

    # ops

    def conv2d(self, x: Node, w: Node, b: Node | None = None, stride: int = 1) -> Node:
        out = ops.conv2d_forward(x.value, w.value, stride)
        if b is not None:
            out = out + b.value[None, :, None, None]

        def back(g):
            gx, gw = ops.conv2d_backward(x.value, w.value, g, stride)
            grads = [gx, gw]
            if b is not None:
                grads.append(g.sum(axis=(0, 2, 3)))
            return grads

        parents = (x, w) if b is None else (x, w, b)
        return self.record("conv2d", out, parents, back)

    def relu(self, x: Node) -> Node:
        return self.record("relu", ops.relu_forward(x.value), (x,),
                           lambda g: [ops.relu_backward(x.value, g)])

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeMismatch(f"{a.shape} != {b.shape}")
        return self.record("add", a.value + b.value, (a, b), lambda g: [g, g])

    def poolskip(self, y: Node, inner: Node, e: int, variant=Variant.FULL) -> Node:
        cfg = PoolSkipConfig(e, inner.value, variant)
        out, idx = poolskip_forward(y.value, cfg)

        def back(g):
            gy, gk = poolskip_backward(y.value, cfg, idx, g)
            return [gy, gk]

        node = self.record("poolskip", out, (y, inner), back)
        node.ctx = idx
        return node

    def batchnorm(self, x: Node, gamma: Node, beta: Node, eps: float = 1e-5, *,
                  training: bool = True, state: ops.BatchNormState | None = None) -> Node:
        out, cache = ops.batchnorm_forward(x.value, gamma.value, beta.value, eps,
                                           training=training, state=state)
        return self.record("batchnorm", out, (x, gamma, beta),
                           lambda g: list(ops.batchnorm_backward(cache, g)))

    def global_avg_pool(self, x: Node) -> Node:
        shape = x.shape
        return self.record("gap", ops.global_avg_pool_forward(x.value), (x,),
                           lambda g: [ops.global_avg_pool_backward(shape, g)])

    def linear(self, x: Node, w: Node, b: Node) -> Node:
        out = ops.linear_forward(x.value, w.value, b.value)
        return self.record("linear", out, (x, w, b),
                           lambda g: list(ops.linear_backward(x.value, w.value, g)))

    # reverse pass

    def backward(self, output: Node, loss_grad) -> dict[str, np.ndarray]:
        """Propagate ``loss_grad`` from ``output``; returns gradients of named leaves.

        Nodes are visited in exact reverse execution order and gradients from
        multiple consumers are summed in that order. Every named leaf gets an
        entry (zeros if it did not influence ``output``).
        """
        if self._consumed:
            raise IncompleteTape("backward() already ran on this tape")
        if not self.nodes or output.index < 0 or self.nodes[output.index] is not output:
            raise IncompleteTape("output was not produced by a completed forward pass on this tape")
        loss_grad = np.asarray(loss_grad, dtype=np.float64)
        if loss_grad.shape != output.shape:
            raise ShapeMismatch(f"loss_grad {loss_grad.shape} != output {output.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {output.index: loss_grad}
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads.get(node.index)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or parent.op == "const":
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg

        result = {}
        for node in self.nodes:
            if node.name is not None:
                g = grads.get(node.index)
                result[node.name] = np.zeros_like(node.value) if g is None else g
        return result


def backward(tape: GradTape, output: Node, loss_grad) -> dict[str, np.ndarray]:
    return tape.backward(output, loss_grad)


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float
    decay: float = 1.0
    boundaries: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay factor must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for b in self.boundaries if epoch >= b)
        return self.eta * self.decay ** drops


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             cfg: OptimizerConfig, epoch: int = 0) -> dict[str, np.ndarray]:
    """Plain gradient descent ``w - lr * g`` for every parameter."""
    lr = cfg.lr_at(epoch)
    updated = {}
    for name, w in params.items():
        if name not in grads:
            raise MissingGradient(name)
        g = np.asarray(grads[name], dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        updated[name] = w - lr * g
    return updated


def finite_diff_grad(f: Callable[[np.ndarray], float], param, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``param``."""
    if h <= 0:
        raise ValueError("step must be positive")
    base = np.array(param, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(base.copy())
        flat[i] = orig - h
        fm = f(base.copy())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b, floor: float = 1e-4) -> float:
    """Largest elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@dataclass
class InertiaRecord:
    """Consecutive exactly-zero gradient counts per scalar parameter."""

    k: int
    counters: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def update(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            zero = np.asarray(g) == 0.0
            prev = self.counters.get(name)
            if prev is None:
                prev = np.zeros(zero.shape, dtype=np.int64)
            self.counters[name] = np.where(zero, prev + 1, 0)
        self.steps += 1

    def inert_mask(self, name: str) -> np.ndarray:
        return self.counters[name] >= self.k

    def inert_fraction(self, name: str) -> float:
        c = self.counters.get(name)
        return 0.0 if c is None or c.size == 0 else float(np.mean(c >= self.k))

    def inert_set(self) -> dict[str, np.ndarray]:
        return {name: np.argwhere(c >= self.k) for name, c in self.counters.items()}


def inertia_probe(grad_sequence: Sequence[Mapping[str, np.ndarray]], k: int) -> InertiaRecord:
    if not grad_sequence:
        raise ValueError("need at least one gradient snapshot")
    record = InertiaRecord(k)
    for grads in grad_sequence:
        record.update(grads)
    return record
