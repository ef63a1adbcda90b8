"""Line-oriented ``key = value`` experiment configs with ``[section]`` headers.

Every key is known in advance: misspellings and duplicates are errors, and
Pool Skip insertions are checked against the statically inferred feature
extents before anything runs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..errors import ParseError, StaticShapeError
from ..module import Variant, validate_pool_size
from ..network import ConvLayerSpec


def _int_list(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text):
    return tuple(t for t in text.replace(",", " ").split())


# section -> key -> (converter, default); default None means required
SCHEMA = {
    "experiment": {
        "name": (str, "experiment"),
        "seeds": (_int_list, (0,)),
        "output": (str, "runs/experiment"),
        "snapshot_interval": (int, 10),
        "inertia_k": (int, 10),
        "probe_size": (int, 64),
        "dead_granularity": (str, "channel"),
    },
    "data": {
        "source": (str, "synthetic"),
        "path": (str, ""),
        "num_samples": (int, 400),
        "classes": (int, 4),
        "extent": (int, 20),
        "channels": (int, 3),
        "noise": (float, 0.25),
        "data_seed": (int, 0),
    },
    "model": {
        "channels": (_int_list, None),
        "kernel": (_int_list, (3,)),
        "bias_init": (float, 0.0),
        "batchnorm": (_bool, False),
        "poolskip": (str, "none"),
        "variant": (_str_list, ("full",)),
        "pool_size": (int, 2),
        "inner_gain": (float, 1.0),
    },
    "train": {
        "epochs": (int, 5),
        "batch_size": (int, 32),
        "lr": (float, 0.1),
        "decay": (float, 1.0),
        "decay_epochs": (_int_list, ()),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    layers: tuple[ConvLayerSpec, ...]
    name: str = "experiment"
    seeds: tuple[int, ...] = (0,)
    output: str = "runs/experiment"
    snapshot_interval: int = 10
    inertia_k: int = 10
    probe_size: int = 64
    dead_granularity: str = "channel"
    source: str = "synthetic"
    path: str = ""
    num_samples: int = 400
    classes: int = 4
    extent: int = 20
    in_channels: int = 3
    noise: float = 0.25
    data_seed: int = 0
    bias_init: float = 0.0
    batchnorm: bool = False
    pool_size: int = 2
    inner_gain: float = 1.0
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.1
    decay: float = 1.0
    decay_epochs: tuple[int, ...] = ()
    source_lines: dict = field(default_factory=dict, compare=False, repr=False)

    def feature_extents(self) -> list[int]:
        out, h = [], self.extent
        for spec in self.layers:
            out.append(h)
            h -= spec.kernel - 1
        return out

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("source_lines")
        d["layers"] = [
            {**asdict(s), "variant": Variant(s.variant).value} for s in self.layers
        ]
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _tokenize(text: str):
    """Yield ``(line_no, section, key, value)`` and collect syntax errors."""
    errors = []
    entries = []
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        hash_at = line.find(" #")
        if hash_at >= 0:
            line = line[:hash_at].rstrip()
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                errors.append((no, f"malformed section header {raw.strip()!r}"))
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append((no, f"unknown section [{section}]"))
            continue
        if "=" not in line:
            errors.append((no, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if section is None:
            errors.append((no, f"key {key!r} appears before any [section]"))
            continue
        entries.append((no, section, key, value))
    return entries, errors


def parse_config(text: str) -> ExperimentConfig:
    entries, errors = _tokenize(text)
    values: dict[tuple[str, str], object] = {}
    lines: dict[tuple[str, str], int] = {}
    for no, section, key, raw in entries:
        schema = SCHEMA.get(section)
        if schema is None:
            continue
        if key not in schema:
            errors.append((no, f"unknown key {key!r} in [{section}]"))
            continue
        if (section, key) in lines:
            first = lines[(section, key)]
            errors.append((no, f"duplicate key {key!r} in [{section}] (lines {first} and {no})"))
            continue
        lines[(section, key)] = no
        conv = schema[key][0]
        try:
            values[(section, key)] = conv(raw)
        except ValueError as exc:
            errors.append((no, f"bad value for {key!r}: {exc}"))

    def get(section, key):
        if (section, key) in values:
            return values[(section, key)]
        return SCHEMA[section][key][1]

    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if default is None and (section, key) not in lines:
                errors.append((0, f"missing required key {key!r} in [{section}]"))
    if errors:
        raise ParseError(sorted(errors))

    def line_of(section, key):
        return lines.get((section, key), 0)

    channels = get("model", "channels")
    depth = len(channels)
    kernels = get("model", "kernel")
    if len(kernels) == 1:
        kernels = kernels * depth
    checks = [
        (depth >= 1, "model", "channels", "need at least one conv layer"),
        (all(c >= 1 for c in channels), "model", "channels", "channel counts must be >= 1"),
        (len(kernels) == depth, "model", "kernel", f"expected 1 or {depth} kernel sizes"),
        (all(k >= 1 and k % 2 == 1 for k in kernels), "model", "kernel", "kernel sizes must be odd"),
        (get("model", "pool_size") >= 1, "model", "pool_size", "pool_size must be >= 1"),
        (len(get("experiment", "seeds")) >= 1, "experiment", "seeds", "seed list is empty"),
        (get("experiment", "snapshot_interval") >= 1, "experiment", "snapshot_interval", "must be >= 1"),
        (get("experiment", "inertia_k") >= 1, "experiment", "inertia_k", "must be >= 1"),
        (get("experiment", "probe_size") >= 1, "experiment", "probe_size", "must be >= 1"),
        (get("experiment", "dead_granularity") in ("channel", "element"), "experiment",
         "dead_granularity", "must be 'channel' or 'element'"),
        (get("data", "source") in ("synthetic", "cifar"), "data", "source", "must be 'synthetic' or 'cifar'"),
        (get("data", "source") != "cifar" or get("data", "path"), "data", "path", "cifar source needs a path"),
        (get("data", "classes") >= 2, "data", "classes", "need at least two classes"),
        (get("data", "num_samples") >= get("data", "classes"), "data", "num_samples", "fewer samples than classes"),
        (get("train", "epochs") >= 1, "train", "epochs", "must be >= 1"),
        (get("train", "batch_size") >= 1, "train", "batch_size", "must be >= 1"),
        (get("train", "lr") > 0, "train", "lr", "learning rate must be positive"),
        (0 < get("train", "decay") <= 1, "train", "decay", "decay must lie in (0, 1]"),
    ]
    errors = [(line_of(s, k), msg) for ok, s, k, msg in checks if not ok]
    if errors:
        raise ParseError(errors)

    # Pool Skip sits after a conv and before its ReLU; only conv indices are valid sites
    ps_raw = get("model", "poolskip").strip().lower()
    if ps_raw == "none":
        sites = ()
    elif ps_raw == "all":
        sites = tuple(range(depth))
    else:
        try:
            sites = _int_list(ps_raw)
        except ValueError:
            raise ParseError([(line_of("model", "poolskip"), f"bad insertion list {ps_raw!r}")])
        bad = [s for s in sites if not 0 <= s < depth]
        if bad or len(set(sites)) != len(sites):
            raise ParseError([(line_of("model", "poolskip"),
                               f"insertion sites must be distinct conv indices in [0, {depth}); got {list(sites)}")])
    variants = get("model", "variant")
    try:
        variants = tuple(Variant(v) for v in variants)
    except ValueError as exc:
        raise ParseError([(line_of("model", "variant"), str(exc))])
    if len(variants) == 1:
        variants = variants * len(sites)
    elif len(variants) != len(sites):
        raise ParseError([(line_of("model", "variant"),
                           f"{len(variants)} variants for {len(sites)} insertion sites")])
    per_site = dict(zip(sorted(sites), variants))

    source = get("data", "source")
    extent = get("data", "extent")
    in_channels = get("data", "channels")
    classes = get("data", "classes")
    if source == "cifar":
        extent, in_channels, classes = 32, 3, 10

    layers = tuple(
        ConvLayerSpec(channels[i], kernels[i], i in per_site, per_site.get(i, Variant.FULL))
        for i in range(depth)
    )
    e = get("model", "pool_size")
    h = extent
    for i, spec in enumerate(layers):
        if spec.kernel > h:
            raise ParseError([(line_of("model", "kernel") or line_of("model", "channels"),
                               f"conv layer {i}: kernel {spec.kernel} exceeds feature extent {h}")])
        if spec.poolskip and spec.variant.uses_pool:
            violations = validate_pool_size(h, h, spec.kernel, e)
            if violations:
                raise StaticShapeError(i, violations, line_of("model", "pool_size") or line_of("model", "poolskip"))
        h -= spec.kernel - 1

    return ExperimentConfig(
        layers=layers,
        name=get("experiment", "name"),
        seeds=get("experiment", "seeds"),
        output=get("experiment", "output"),
        snapshot_interval=get("experiment", "snapshot_interval"),
        inertia_k=get("experiment", "inertia_k"),
        probe_size=get("experiment", "probe_size"),
        dead_granularity=get("experiment", "dead_granularity"),
        source=source,
        path=get("data", "path"),
        num_samples=get("data", "num_samples"),
        classes=classes,
        extent=extent,
        in_channels=in_channels,
        noise=get("data", "noise"),
        data_seed=get("data", "data_seed"),
        bias_init=get("model", "bias_init"),
        batchnorm=get("model", "batchnorm"),
        pool_size=e,
        inner_gain=get("model", "inner_gain"),
        epochs=get("train", "epochs"),
        batch_size=get("train", "batch_size"),
        lr=get("train", "lr"),
        decay=get("train", "decay"),
        decay_epochs=get("train", "decay_epochs"),
        source_lines={f"{s}.{k}": n for (s, k), n in lines.items()},
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
