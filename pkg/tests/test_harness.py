import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poolskip.autodiff import GradTape, OptimizerConfig, sgd_step
from poolskip.errors import LabelOutOfRange, ParseError, StaticShapeError, TruncatedFile
from poolskip.harness import gen_synthetic, load_cifar_binary, parse_config, run_experiment
from poolskip.harness.config import load_config
from poolskip.harness.data import stack
from poolskip.harness.runner import (
    DIAGNOSTICS_COLUMNS,
    RESULTS_COLUMNS,
    build_model,
    load_dataset,
    train_seed,
)
from poolskip.module import Variant, validate_pool_size

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[model]
channels = 4, 4
"""


# config parsing

def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert [s.out_channels for s in cfg.layers] == [4, 4]
    assert [s.kernel for s in cfg.layers] == [3, 3]
    assert not any(s.poolskip for s in cfg.layers)
    assert cfg.seeds == (0,) and cfg.source == "synthetic"
    assert cfg.snapshot_interval == 10 and cfg.probe_size == 64


def test_comments_and_sections():
    cfg = parse_config("""
# leading comment
[experiment]
name = demo   # trailing comment
seeds = 1, 2 3
[model]
channels = 8 8 8
poolskip = 0, 2
variant = full, conv_skip
""")
    assert cfg.name == "demo" and cfg.seeds == (1, 2, 3)
    assert [s.poolskip for s in cfg.layers] == [True, False, True]
    assert cfg.layers[2].variant is Variant.CONV_SKIP_ONLY


def test_static_shape_error_names_conditions():
    text = "[data]\nextent = 8\n[model]\nchannels = 4\npoolskip = all\npool_size = 3\n"
    with pytest.raises(StaticShapeError) as info:
        parse_config(text)
    assert info.value.layer == 0
    assert info.value.violations == ["e does not divide H", "e does not divide W"]
    assert info.value.line == 6


def test_static_shape_error_deeper_layer():
    # extents 12 -> 10: e = 4 divides neither 10 nor 8 at conv 1
    text = "[data]\nextent = 12\n[model]\nchannels = 4, 4\npoolskip = 1\npool_size = 4\n"
    with pytest.raises(StaticShapeError) as info:
        parse_config(text)
    assert info.value.layer == 1
    assert info.value.violations == validate_pool_size(10, 10, 3, 4)


def test_conv_skip_not_gated():
    parse_config("[data]\nextent = 9\n[model]\nchannels = 4\npoolskip = all\nvariant = conv_skip\npool_size = 4\n")


def test_duplicate_key_names_both_lines():
    with pytest.raises(ParseError) as info:
        parse_config("[model]\nchannels = 4\nbias_init = 0\nchannels = 8\n")
    (line, msg), = info.value.errors
    assert line == 4 and "lines 2 and 4" in msg


@pytest.mark.parametrize("text, line, fragment", [
    ("[model]\nchanels = 4\n", 2, "unknown key"),
    ("[modle]\nchannels = 4\n", 1, "unknown section"),
    ("channels = 4\n", 1, "before any"),
    ("[model]\nchannels 4\n", 2, "expected"),
    ("[model]\nchannels = 4\nbatchnorm = maybe\n", 3, "not a boolean"),
    ("[model]\nchannels = 4\n[train]\nlr = -1\n", 4, "positive"),
    ("[model]\nchannels = 4, 4\npoolskip = 5\n", 3, "insertion sites"),
    ("[model]\nchannels = 4\nvariant = fancy\n", 3, "fancy"),
    ("[model]\nchannels = 4\nkernel = 2\n", 3, "odd"),
    ("[train]\nlr = 0.1\n", 0, "missing required"),
])
def test_parse_errors_carry_lines(text, line, fragment):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert any(ln == line and fragment in msg for ln, msg in info.value.errors), info.value.errors


def test_all_errors_reported_together():
    with pytest.raises(ParseError) as info:
        parse_config("[model]\nchannels = 4\nfoo = 1\n[train]\nbar = 2\n")
    assert [ln for ln, _ in info.value.errors] == [3, 5]


def test_cifar_source_forces_shape():
    cfg = parse_config("[data]\nsource = cifar\npath = x.bin\n[model]\nchannels = 4\n")
    assert (cfg.extent, cfg.in_channels, cfg.classes) == (32, 3, 10)


def test_config_hash_stable():
    a, b = parse_config(MINIMAL), parse_config("# other text\n" + MINIMAL)
    assert a.config_hash() == b.config_hash()
    assert a.with_overrides(lr=0.2).config_hash() != a.config_hash()


def test_shipped_configs_validate():
    for path in sorted(CONFIGS.glob("*.cfg")):
        load_config(path)


layer_lists = st.lists(st.tuples(st.integers(1, 4), st.sampled_from([1, 3, 5])), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(6, 16), layer_lists, st.sampled_from([1, 2, 3, 4]), st.data())
def test_static_inference_matches_runtime(extent, layers, e, data):
    sites = data.draw(st.lists(st.integers(0, len(layers) - 1), unique=True))
    text = (f"[data]\nextent = {extent}\nchannels = 2\n[model]\n"
            f"channels = {', '.join(str(c) for c, _ in layers)}\n"
            f"kernel = {', '.join(str(k) for _, k in layers)}\n"
            f"poolskip = {', '.join(map(str, sites)) if sites else 'none'}\npool_size = {e}\n")
    try:
        cfg = parse_config(text)
    except (ParseError, StaticShapeError):
        h = extent
        for i, (_, k) in enumerate(layers):
            if k > h or (i in sites and validate_pool_size(h, h, k, e)):
                return
            h -= k - 1
        raise
    model = build_model(cfg, np.random.default_rng(0))
    tape = GradTape()
    _, pre = model.forward(tape, np.zeros((2, 2, extent, extent)))
    expected = [h - spec.kernel + 1 for h, spec in zip(cfg.feature_extents(), cfg.layers)]
    assert [n.shape[-1] for n in pre] == expected


# data

def cifar_record(label, pixels):
    return bytes([label]) + bytes(pixels)


def test_cifar_byte_layout(tmp_path):
    px = np.zeros(3072, dtype=np.uint8)
    px[0] = 255
    px[1024 + 32 + 2] = 51     # G channel, row 1, col 2
    px[2048 + 1023] = 102      # B channel, last pixel
    path = tmp_path / "batch.bin"
    path.write_bytes(cifar_record(4, px) + cifar_record(9, np.full(3072, 17, np.uint8)))
    samples = load_cifar_binary(path)
    assert len(samples) == 2
    s = samples[0]
    assert s.label == 4 and s.image.shape == (3, 32, 32)
    assert s.image[0, 0, 0] == 1.0
    assert s.image[1, 1, 2] == 0.2
    assert s.image[2, 31, 31] == 0.4
    assert np.count_nonzero(s.image) == 3
    assert samples[1].label == 9 and np.all(samples[1].image == 17 / 255)


def test_cifar_truncated(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(cifar_record(1, np.zeros(3072, np.uint8)) + b"\x00")
    with pytest.raises(TruncatedFile):
        load_cifar_binary(path)


def test_cifar_label_range(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(cifar_record(10, np.zeros(3072, np.uint8)))
    with pytest.raises(LabelOutOfRange):
        load_cifar_binary(path)


def test_synthetic_deterministic():
    a, b = stack(gen_synthetic(50, seed=7)), stack(gen_synthetic(50, seed=7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = stack(gen_synthetic(50, seed=8))
    assert not np.array_equal(a[0], c[0])


def test_synthetic_noise_free_classes_identical():
    x, y = stack(gen_synthetic(40, classes=4, extent=12, noise=0.0))
    for c in range(4):
        imgs = x[y == c]
        assert len(imgs) == 10
        assert np.all(imgs == imgs[0])
    assert len({x[y == c][0].tobytes() for c in range(4)}) == 4


def test_synthetic_range_and_balance():
    x, y = stack(gen_synthetic(101, classes=5, extent=10, channels=2))
    assert x.shape == (101, 2, 10, 10)
    assert x.min() >= 0.0 and x.max() <= 1.0
    assert np.bincount(y).tolist() == [21, 20, 20, 20, 20]


@pytest.mark.parametrize("seed", range(5))
def test_two_layer_net_learns_synthetic(seed):
    cfg = parse_config("[model]\nchannels = 8, 8\n")
    x, y = stack(gen_synthetic(cfg.num_samples, cfg.classes, cfg.extent, cfg.data_seed))
    rng = np.random.default_rng(seed)
    model = build_model(cfg, rng)
    opt = OptimizerConfig(cfg.lr)
    for _ in range(200):
        b = rng.choice(len(y), cfg.batch_size, replace=False)
        _, grads, _ = model.loss_and_grads(x[b], y[b])
        model.params = sgd_step(model.params, grads, opt)
    assert np.mean(model.predict(x) == y) >= 0.95


# runner

def small_cfg(tmp_path, **over):
    cfg = parse_config("""
[experiment]
seeds = 0, 1
snapshot_interval = 10
probe_size = 16
[data]
num_samples = 125
extent = 10
[model]
channels = 4, 4
poolskip = 1
[train]
epochs = 10
batch_size = 10
""")
    return cfg.with_overrides(output=str(tmp_path / "run"), **over)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_snapshot_row_count(tmp_path):
    # 100 training samples, batch 10 -> 10 steps per epoch -> 100 steps
    cfg = small_cfg(tmp_path)
    res = train_seed(cfg, 0, out_dir=tmp_path)
    steps = [int(r[1]) for r in res.diagnostics]
    for layer in ("conv0", "conv1"):
        rows = [r for r in res.diagnostics if r[2] == layer]
        assert len(rows) == 11
    assert sorted(set(steps)) == list(range(0, 101, 10))
    assert read_csv(tmp_path / "seed_0" / "diagnostics.csv")[0] == DIAGNOSTICS_COLUMNS


def test_run_experiment_artifacts(tmp_path):
    cfg = small_cfg(tmp_path)
    out = run_experiment(cfg)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] and manifest["seeds"] == [0, 1]
    assert manifest["config_hash"] == cfg.config_hash()
    results = read_csv(out / "results.csv")
    assert results[0] == RESULTS_COLUMNS and len(results) == 1 + 2 * 10
    diag = read_csv(out / "diagnostics.csv")
    assert diag[0] == DIAGNOSTICS_COLUMNS and len(diag) == 1 + 2 * 2 * 11
    summary = read_csv(out / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["final_train_loss", "final_top1_error", "final_dead_fraction"]
    assert all(r[3] == "2" for r in summary[1:])
    for seed in (0, 1):
        assert (out / f"seed_{seed}" / "results.csv").exists()
    raw = (out / "results.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_rerun_is_byte_identical(tmp_path):
    a = run_experiment(small_cfg(tmp_path), tmp_path / "a")
    b = run_experiment(small_cfg(tmp_path), tmp_path / "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(files) == 3 + 2 * 2
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_baseline_and_poolskip_schemas_match(tmp_path):
    base = run_experiment(small_cfg(tmp_path, layers=tuple(
        type(s)(s.out_channels, s.kernel) for s in small_cfg(tmp_path).layers)), tmp_path / "base")
    ps = run_experiment(small_cfg(tmp_path), tmp_path / "ps")
    for name in ("results.csv", "diagnostics.csv", "summary.csv"):
        ra, rb = read_csv(base / name), read_csv(ps / name)
        assert ra[0] == rb[0] and len(ra) == len(rb)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_partial_results_flushed_on_abort(tmp_path):
    cfg = small_cfg(tmp_path, lr=1e6, bias_init=0.5)
    with pytest.raises(FloatingPointError):
        train_seed(cfg, 0, out_dir=tmp_path)
    rows = read_csv(tmp_path / "seed_0" / "diagnostics.csv")
    assert rows[0] == DIAGNOSTICS_COLUMNS and len(rows) >= 3


def test_dataset_split():
    cfg = parse_config("[data]\nnum_samples = 50\n[model]\nchannels = 2\n")
    x_tr, y_tr, x_te, y_te = load_dataset(cfg)
    assert len(y_tr) == 40 and len(y_te) == 10
