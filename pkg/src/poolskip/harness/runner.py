"""Training loop orchestration and CSV reporting."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import InertiaRecord, OptimizerConfig, sgd_step
from ..diagnostics import LayerDiagnostics, snapshot_report
from ..network import ConvNet
from .config import ExperimentConfig
from .data import gen_synthetic, load_cifar_binary, stack

log = logging.getLogger(__name__)

RESULTS_COLUMNS = ["seed", "epoch", "train_loss", "top1_error"]
DIAGNOSTICS_COLUMNS = ["seed", "step", "layer", "l2_l1", "dead_fraction", "zero_weight_count", "inert_fraction"]
SUMMARY_COLUMNS = ["metric", "mean", "std", "n"]


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class SeedResult:
    seed: int
    results: list[list[str]] = field(default_factory=list)
    diagnostics: list[list[str]] = field(default_factory=list)
    final_train_loss: float = math.nan
    final_top1_error: float = math.nan
    final_report: list[LayerDiagnostics] = field(default_factory=list)

    @property
    def final_dead_fraction(self) -> float:
        return float(np.mean([d.dead_fraction for d in self.final_report]))


class _CsvSink:
    """Append rows and flush immediately so an abort keeps partial results."""

    def __init__(self, path: Path | None, columns):
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._w.writerow(columns)
            self._fh.flush()

    def write(self, row):
        if self._fh is not None:
            self._w.writerow(row)
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def load_dataset(cfg: ExperimentConfig):
    """Return ``(x_train, y_train, x_test, y_test)`` with a fixed 80/20 split."""
    if cfg.source == "cifar":
        samples = load_cifar_binary(cfg.path)[: cfg.num_samples]
    else:
        samples = gen_synthetic(cfg.num_samples, cfg.classes, cfg.extent, cfg.data_seed,
                                cfg.in_channels, cfg.noise)
    x, y = stack(samples)
    order = np.random.default_rng(cfg.data_seed).permutation(len(samples))
    n_train = int(round(0.8 * len(samples)))
    tr, te = order[:n_train], order[n_train:]
    return x[tr], y[tr], x[te], y[te]


def build_model(cfg: ExperimentConfig, rng: np.random.Generator) -> ConvNet:
    return ConvNet(cfg.in_channels, cfg.extent, list(cfg.layers), cfg.classes, rng,
                   pool_size=cfg.pool_size, batchnorm=cfg.batchnorm,
                   bias_init=cfg.bias_init, inner_gain=cfg.inner_gain)


def top1_error(model: ConvNet, x, y, batch: int = 256) -> float:
    if len(y) == 0:
        return math.nan
    wrong = 0
    for i in range(0, len(y), batch):
        wrong += int(np.sum(model.predict(x[i:i + batch]) != y[i:i + batch]))
    return 100.0 * wrong / len(y)


def train_seed(cfg: ExperimentConfig, seed: int, data=None, out_dir: Path | None = None) -> SeedResult:
    x_tr, y_tr, x_te, y_te = data if data is not None else load_dataset(cfg)
    rng = np.random.default_rng(seed)
    model = build_model(cfg, rng)
    opt = OptimizerConfig(cfg.lr, cfg.decay, tuple(cfg.decay_epochs), seed)
    probe = x_tr[: cfg.probe_size]
    inertia = InertiaRecord(cfg.inertia_k)
    conv_keys = [f"{name}.w" for name in model.conv_names]
    res = SeedResult(seed)

    seed_dir = out_dir / f"seed_{seed}" if out_dir is not None else None
    rsink = _CsvSink(seed_dir / "results.csv" if seed_dir else None, RESULTS_COLUMNS)
    dsink = _CsvSink(seed_dir / "diagnostics.csv" if seed_dir else None, DIAGNOSTICS_COLUMNS)

    def snapshot(step):
        report = snapshot_report(model, probe, step, inertia, cfg.dead_granularity)
        for d in report:
            row = [str(seed), str(step), *d.csv_fields()]
            res.diagnostics.append(row)
            dsink.write(row)
        res.final_report = report

    try:
        step = 0
        snapshot(step)
        min_batch = 2 if cfg.batchnorm else 1
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(y_tr))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                if len(batch) < min_batch:
                    continue
                loss, grads, _ = model.loss_and_grads(x_tr[batch], y_tr[batch])
                if not math.isfinite(loss):
                    raise FloatingPointError(f"seed {seed}: non-finite loss at step {step}")
                losses.append(loss)
                inertia.update({k: grads[k] for k in conv_keys})
                model.params = sgd_step(model.params, grads, opt, epoch)
                step += 1
                if step % cfg.snapshot_interval == 0:
                    snapshot(step)
            res.final_train_loss = float(np.mean(losses)) if losses else math.nan
            res.final_top1_error = top1_error(model, x_te, y_te)
            row = [str(seed), str(epoch), _fmt(res.final_train_loss), _fmt(res.final_top1_error)]
            res.results.append(row)
            rsink.write(row)
            log.info("seed %d epoch %d loss %.4f top1 %.2f", seed, epoch,
                     res.final_train_loss, res.final_top1_error)
    finally:
        rsink.close()
        dsink.close()
    return res


def _write_csv(path: Path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _summary_rows(results: list[SeedResult]):
    metrics = {
        "final_train_loss": [r.final_train_loss for r in results],
        "final_top1_error": [r.final_top1_error for r in results],
        "final_dead_fraction": [r.final_dead_fraction for r in results],
    }
    rows = []
    for name, vals in metrics.items():
        arr = np.asarray(vals, dtype=np.float64)
        std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        rows.append([name, _fmt(arr.mean()), _fmt(std), str(arr.size)])
    return rows


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None) -> Path:
    """Train every seed, write per-seed and merged CSVs plus ``manifest.json``.

    Returns the run directory. Re-running with the same config writes
    byte-identical files.
    """
    out_dir = Path(output if output is not None else cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "seeds": list(cfg.seeds),
        "config": cfg.canonical(),
        "complete": False,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    data = load_dataset(cfg)
    results = [train_seed(cfg, seed, data, out_dir) for seed in cfg.seeds]
    _write_csv(out_dir / "results.csv", RESULTS_COLUMNS, [row for r in results for row in r.results])
    _write_csv(out_dir / "diagnostics.csv", DIAGNOSTICS_COLUMNS,
               [row for r in results for row in r.diagnostics])
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, _summary_rows(results))
    manifest["complete"] = True
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return out_dir
