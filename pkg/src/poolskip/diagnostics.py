"""Elimination-singularity metrics for conv layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import InertiaRecord

NA = "NA"


def hoyer_ratio(w) -> float | None:
    """``||w||_2 / ||w||_1`` over the flattened weights; ``None`` if all zero."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    l1 = np.abs(w).sum()
    if l1 == 0.0:
        return None
    return float(np.sqrt(np.dot(w, w)) / l1)


def dead_unit_fraction(preacts, granularity: str = "element") -> float:
    """Fraction of units whose pre-activation is ``<= 0`` on every probe sample.

    ``preacts`` is ``(batch, C, H, W)``. With ``"element"`` each (channel,
    position) is a unit; with ``"channel"`` a unit is a whole feature map.
    """
    z = np.asarray(preacts, dtype=np.float64)
    if z.ndim != 4 or z.shape[0] < 1:
        raise ValueError(f"expected (batch, C, H, W) with batch >= 1, got {z.shape}")
    dead = np.all(z <= 0, axis=0)
    if granularity == "element":
        return float(dead.mean())
    if granularity == "channel":
        return float(np.all(dead, axis=(1, 2)).mean())
    raise ValueError(f"unknown granularity {granularity!r}")


@dataclass(frozen=True)
class LayerDiagnostics:
    layer: str
    l2_l1: float | None
    dead_fraction: float
    zero_weight_count: int
    inert_fraction: float
    step: int

    def csv_fields(self) -> list[str]:
        l2 = NA if self.l2_l1 is None else repr(self.l2_l1)
        return [self.layer, l2, repr(self.dead_fraction), str(self.zero_weight_count),
                repr(self.inert_fraction)]


def snapshot_report(model, probe_x, step: int, inertia: InertiaRecord | None = None,
                    granularity: str = "channel") -> list[LayerDiagnostics]:
    """One record per conv layer of ``model`` in forward order."""
    _, preacts = model.evaluate(probe_x)
    report = []
    for name, z in zip(model.conv_names, preacts):
        w = model.params[f"{name}.w"]
        inert = inertia.inert_fraction(f"{name}.w") if inertia is not None else 0.0
        report.append(LayerDiagnostics(
            layer=name,
            l2_l1=hoyer_ratio(w),
            dead_fraction=dead_unit_fraction(z, granularity),
            zero_weight_count=int(np.count_nonzero(w == 0.0)),
            inert_fraction=inert,
            step=step,
        ))
    return report
