"""Verification suites shared by the CLI and the test-suite.

``oracle_suite`` compares the Pool Skip pipeline with the closed-form
evaluation over random single-channel configurations. ``gradcheck_suite``
compares reverse-mode gradients with central differences for every layer
type and a few composed networks.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .autodiff import GradTape, finite_diff_grad, rel_error
from .module import (
    PoolSkipConfig,
    Variant,
    compensation_decompose,
    poolskip_backward,
    poolskip_closed_form,
    poolskip_forward,
    validate_pool_size,
)
from .network import ConvLayerSpec, ConvNet

# (e, M) pairs for which some extent <= 16 satisfies every divisibility condition
ORACLE_GRID = [(e, m) for e in (1, 2, 4) for m in (1, 3, 5)
               if any(not validate_pool_size(h, h, m, e) for h in range(m, 17))]


def valid_extents(m: int, e: int, max_extent: int = 16) -> list[int]:
    return [h for h in range(m, max_extent + 1) if h % e == 0 and (h - m + 1) % e == 0]


@dataclass
class OracleReport:
    configs: int
    max_pipeline_dev: float
    max_decompose_dev: float
    e1_all_covered: bool
    seconds: float
    per_cell: dict = field(default_factory=dict)


def oracle_suite(n: int = 200, seed: int = 0, max_extent: int = 16) -> OracleReport:
    """Pipeline vs closed form (and decomposition) on ``n`` random configurations."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst_pipe = worst_dec = 0.0
    e1_ok = True
    per_cell: dict = {}
    for k in range(n):
        e, m = ORACLE_GRID[k % len(ORACLE_GRID)]
        ext = valid_extents(m, e, max_extent)
        h, w = int(rng.choice(ext)), int(rng.choice(ext))
        x = rng.uniform(-2, 2, (h, w))
        wk = rng.uniform(-2, 2, (m, m))
        wt = rng.uniform(-2, 2, (3, 3))
        y = ops.conv2d_forward(x, wk)
        o, _ = poolskip_forward(y, PoolSkipConfig(e, wt))
        closed = poolskip_closed_form(x, wk, wt, e)
        report = compensation_decompose(x, wk, wt, e)
        dev_p = float(np.max(np.abs(o - closed)))
        dev_d = float(np.max(np.abs(report.total - closed)))
        worst_pipe = max(worst_pipe, dev_p)
        worst_dec = max(worst_dec, dev_d)
        if e == 1:
            e1_ok &= bool(report.covered_mask.all())
        cell = per_cell.setdefault((e, m), [0, 0.0])
        cell[0] += 1
        cell[1] = max(cell[1], dev_p)
    return OracleReport(n, worst_pipe, worst_dec, e1_ok, time.perf_counter() - t0, per_cell)


@dataclass
class GradCheck:
    name: str
    rel_error: float
    tolerance: float
    params: int

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tolerance


KINK_MARGIN = 1e-4


def _pool_gap(y, e) -> float:
    """Smallest gap between the largest and second-largest value of any block."""
    if e == 1:
        return np.inf
    y = np.asarray(y)
    h, w = y.shape[-2:]
    blocks = y.reshape(*y.shape[:-2], h // e, e, w // e, e)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*y.shape[:-2], h // e, w // e, e * e)
    top2 = np.sort(blocks, axis=-1)[..., -2:]
    return float(np.min(top2[..., 1] - top2[..., 0]))


def tape_margin(tape: GradTape) -> float:
    """Distance of the recorded pass from any ReLU kink or pooling tie."""
    margin = np.inf
    for node in tape.nodes:
        if node.op == "relu":
            margin = min(margin, float(np.min(np.abs(node.parents[0].value))))
        elif node.op == "poolskip" and node.ctx is not None:
            margin = min(margin, _pool_gap(node.parents[0].value, node.ctx.e))
    return margin


def _check_params(name, loss_fn: Callable[[dict], float], grads: dict, params: dict,
                  h: float, tol: float) -> GradCheck:
    worst = 0.0
    count = 0
    for key, value in params.items():
        def f(v, key=key):
            trial = dict(params)
            trial[key] = v
            return loss_fn(trial)

        num = finite_diff_grad(f, value, h)
        worst = max(worst, rel_error(grads[key], num))
        count += np.size(value)
    return GradCheck(name, worst, tol, count)


def _linear_probe(shape, rng):
    return rng.uniform(-1, 1, shape)


def _op_checks(rng, h, tol):
    checks = []

    # conv2d, stride 1 and 2
    for stride in (1, 2):
        x = rng.uniform(-2, 2, (2, 2, 7, 7))
        w = rng.uniform(-2, 2, (3, 2, 3, 3))
        out_shape = ops.conv2d_forward(x, w, stride).shape
        r = _linear_probe(out_shape, rng)

        def loss(p, stride=stride, r=r):
            return float(np.sum(r * ops.conv2d_forward(p["x"], p["w"], stride)))

        gx, gw = ops.conv2d_backward(x, w, r, stride)
        checks.append(_check_params(f"conv2d stride={stride}", loss, {"x": gx, "w": gw},
                                    {"x": x, "w": w}, h, tol))

    # maxpool / maxunpool, drawn away from ties
    for e in (2, 4):
        while True:
            y = rng.uniform(-2, 2, (2, 3, 8, 8))
            if _pool_gap(y, e) > KINK_MARGIN:
                break
        a, idx = ops.maxpool_forward(y, e)
        r = _linear_probe(a.shape, rng)
        checks.append(_check_params(
            f"maxpool e={e}", lambda p, e=e, r=r: float(np.sum(r * ops.maxpool_forward(p["y"], e)[0])),
            {"y": ops.maxpool_backward(idx, r)}, {"y": y}, h, tol))
        r2 = _linear_probe(y.shape, rng)
        checks.append(_check_params(
            f"maxunpool e={e}", lambda p, idx=idx, r2=r2: float(np.sum(r2 * ops.maxunpool_forward(p["a"], idx))),
            {"a": ops.maxunpool_backward(idx, r2)}, {"a": a}, h, tol))

    y = rng.uniform(-2, 2, (2, 5, 6))
    r = _linear_probe((2, 7, 8), rng)
    checks.append(_check_params(
        "pad_one_ring", lambda p: float(np.sum(r * ops.pad_one_ring(p["y"]))),
        {"y": ops.unpad_one_ring(r)}, {"y": y}, h, tol))

    while True:
        x = rng.uniform(-2, 2, (3, 4, 4))
        if np.min(np.abs(x)) > KINK_MARGIN:
            break
    r = _linear_probe(x.shape, rng)
    checks.append(_check_params(
        "relu", lambda p: float(np.sum(r * ops.relu_forward(p["x"]))),
        {"x": ops.relu_backward(x, r)}, {"x": x}, h, tol))

    x = rng.uniform(-2, 2, (4, 3, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.uniform(-1, 1, 3)
    r = _linear_probe(x.shape, rng)
    _, cache = ops.batchnorm_forward(x, gamma, beta)
    gx, gg, gb = ops.batchnorm_backward(cache, r)
    checks.append(_check_params(
        "batchnorm", lambda p: float(np.sum(r * ops.batchnorm_forward(p["x"], p["g"], p["b"])[0])),
        {"x": gx, "g": gg, "b": gb}, {"x": x, "g": gamma, "b": beta}, h, tol))

    x, w, b = rng.uniform(-2, 2, (4, 5)), rng.uniform(-2, 2, (5, 3)), rng.uniform(-2, 2, 3)
    r = _linear_probe((4, 3), rng)
    gx, gw, gb = ops.linear_backward(x, w, r)
    checks.append(_check_params(
        "linear", lambda p: float(np.sum(r * ops.linear_forward(p["x"], p["w"], p["b"]))),
        {"x": gx, "w": gw, "b": gb}, {"x": x, "w": w, "b": b}, h, tol))

    x = rng.uniform(-2, 2, (2, 3, 4, 5))
    r = _linear_probe((2, 3), rng)
    checks.append(_check_params(
        "global_avg_pool", lambda p: float(np.sum(r * ops.global_avg_pool_forward(p["x"]))),
        {"x": ops.global_avg_pool_backward(x.shape, r)}, {"x": x}, h, tol))

    z = rng.uniform(-2, 2, (5, 4))
    labels = rng.integers(0, 4, 5)
    _, gz = ops.softmax_cross_entropy(z, labels)
    checks.append(_check_params(
        "softmax_cross_entropy", lambda p: ops.softmax_cross_entropy(p["z"], labels)[0],
        {"z": gz}, {"z": z}, h, tol))

    for variant in Variant:
        while True:
            y = rng.uniform(-2, 2, (2, 3, 8, 8))
            if _pool_gap(y, 2) > KINK_MARGIN:
                break
        wt = rng.uniform(-1, 1, (3, 3, 3, 3))
        cfg = PoolSkipConfig(2, wt, variant)
        o, idx = poolskip_forward(y, cfg)
        r = _linear_probe(o.shape, rng)
        gy, gk = poolskip_backward(y, cfg, idx, r)

        def loss(p, variant=variant, r=r):
            return float(np.sum(r * poolskip_forward(p["y"], PoolSkipConfig(2, p["k"], variant))[0]))

        checks.append(_check_params(f"poolskip {variant.value}", loss, {"y": gy, "k": gk},
                                    {"y": y, "k": wt}, h, tol))
    return checks


COMPOSED_NETS = {
    "2-layer conv+relu": dict(layers=[ConvLayerSpec(4), ConvLayerSpec(4)], extent=6, batchnorm=False),
    "4-layer full poolskip + bn": dict(
        layers=[ConvLayerSpec(3, 3, True), ConvLayerSpec(3), ConvLayerSpec(3, 1, True), ConvLayerSpec(3, 3, True)],
        extent=8, batchnorm=True),
    "6-layer mixed variants": dict(
        layers=[ConvLayerSpec(3, 1, True, Variant.FULL), ConvLayerSpec(3, 1, True, Variant.CONV_SKIP_ONLY),
                ConvLayerSpec(3, 3, True, Variant.POOL_CONV_ONLY), ConvLayerSpec(3, 1, True, Variant.POOL_SKIP_ONLY),
                ConvLayerSpec(3, 3, False), ConvLayerSpec(3, 1, True, Variant.FULL)],
        extent=8, batchnorm=False),
}


def _net_checks(rng, h, tol):
    checks = []
    for name, spec in COMPOSED_NETS.items():
        for attempt in range(200):
            net = ConvNet(2, spec["extent"], spec["layers"], 3, rng, batchnorm=spec["batchnorm"],
                          bias_init=0.1, inner_gain=1.0)
            x = rng.uniform(-2, 2, (4, 2, spec["extent"], spec["extent"]))
            labels = rng.integers(0, 3, 4)
            tape = GradTape()
            logits, _ = net.forward(tape, x)
            if tape_margin(tape) > KINK_MARGIN:
                break
        else:
            raise RuntimeError(f"{name}: no kink-free draw found")
        loss0, g = ops.softmax_cross_entropy(logits.value, labels)
        grads = tape.backward(logits, g)

        def loss(p, net=net, x=x, labels=labels):
            saved = net.params
            net.params = p
            try:
                t = GradTape()
                out, _ = net.forward(t, x)
                return ops.softmax_cross_entropy(out.value, labels)[0]
            finally:
                net.params = saved

        checks.append(_check_params(f"net: {name}", loss, grads, dict(net.params), h, tol))
    return checks


def gradcheck_suite(seed: int = 0, h: float = 1e-5, tol: float = 1e-5) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    return _op_checks(rng, h, tol) + _net_checks(rng, h, tol)
