"""Plain conv stacks with optional Pool Skip insertions, trained on a tape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import GradTape
from .module import Variant, init_inner_kernel


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel: int = 3
    poolskip: bool = False
    variant: Variant = Variant.FULL


class ConvNet:
    """``[conv -> (BN) -> (Pool Skip) -> ReLU] * L -> global avg pool -> linear``.

    Convolutions are valid (unpadded), so each layer shrinks the map by
    ``kernel - 1``. Parameters live in :attr:`params`, an insertion-ordered
    dict keyed ``conv{i}.w``, ``conv{i}.b``, ``bn{i}.gamma``, ``bn{i}.beta``,
    ``ps{i}.w``, ``fc.w``, ``fc.b``.
    """

    def __init__(self, in_channels: int, extent: int, layers: list[ConvLayerSpec], classes: int,
                 rng: np.random.Generator, *, pool_size: int = 2, batchnorm: bool = False,
                 bias_init: float = 0.0, inner_gain: float = 1.0):
        self.layers = list(layers)
        self.pool_size = pool_size
        self.batchnorm = batchnorm
        self.in_channels = in_channels
        self.extent = extent
        self.params: dict[str, np.ndarray] = {}
        self.bn_states: dict[int, ops.BatchNormState] = {}
        c_in = in_channels
        for i, spec in enumerate(self.layers):
            fan_in = c_in * spec.kernel ** 2
            bound = np.sqrt(6.0 / fan_in)
            self.params[f"conv{i}.w"] = rng.uniform(-bound, bound, (spec.out_channels, c_in, spec.kernel, spec.kernel))
            self.params[f"conv{i}.b"] = np.full(spec.out_channels, float(bias_init))
            if batchnorm:
                self.params[f"bn{i}.gamma"] = np.ones(spec.out_channels)
                self.params[f"bn{i}.beta"] = np.zeros(spec.out_channels)
                self.bn_states[i] = ops.BatchNormState.fresh(spec.out_channels)
            if spec.poolskip:
                self.params[f"ps{i}.w"] = init_inner_kernel(spec.out_channels, rng, inner_gain).weights
            c_in = spec.out_channels
        bound = 1.0 / np.sqrt(c_in)
        self.params["fc.w"] = rng.uniform(-bound, bound, (c_in, classes))
        self.params["fc.b"] = np.zeros(classes)

    @property
    def conv_names(self) -> list[str]:
        return [f"conv{i}" for i in range(len(self.layers))]

    def feature_extents(self) -> list[int]:
        """Input extent seen by each conv layer."""
        out, h = [], self.extent
        for spec in self.layers:
            out.append(h)
            h -= spec.kernel - 1
        return out

    def forward(self, tape: GradTape, x, training: bool = True):
        """Record a forward pass; returns ``(logits_node, preactivation_nodes)``."""
        p = {name: tape.param(name, value) for name, value in self.params.items()}
        h = tape.constant(x)
        preacts = []
        for i, spec in enumerate(self.layers):
            h = tape.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            if self.batchnorm:
                h = tape.batchnorm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                                   training=training, state=self.bn_states[i])
            if spec.poolskip:
                h = tape.poolskip(h, p[f"ps{i}.w"], self.pool_size, spec.variant)
            preacts.append(h)
            h = tape.relu(h)
        logits = tape.linear(tape.global_avg_pool(h), p["fc.w"], p["fc.b"])
        return logits, preacts

    def loss_and_grads(self, x, labels):
        tape = GradTape()
        logits, preacts = self.forward(tape, x, training=True)
        loss, grad = ops.softmax_cross_entropy(logits.value, labels)
        grads = tape.backward(logits, grad)
        return loss, grads, [n.value for n in preacts]

    def evaluate(self, x):
        """Inference-mode ``(logits, preactivations)`` without touching BN statistics."""
        tape = GradTape()
        logits, preacts = self.forward(tape, x, training=not self.batchnorm)
        return logits.value, [n.value for n in preacts]

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.evaluate(x)[0], axis=1)
