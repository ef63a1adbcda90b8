"""Command line entry point: ``poolskip {run,validate,oracle,gradcheck}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import backend
from .errors import ParseError, StaticShapeError


def _load(path):
    from .harness.config import load_config

    try:
        return load_config(path)
    except ParseError as exc:
        for line, msg in exc.errors:
            print(f"{path}:{line}: {msg}", file=sys.stderr)
    except StaticShapeError as exc:
        print(f"{path}:{exc.line or 0}: {exc}", file=sys.stderr)
    return None


def cmd_run(args) -> int:
    from .harness.runner import run_experiment

    cfg = _load(args.config)
    if cfg is None:
        return 2
    out = run_experiment(cfg, args.output)
    print(f"wrote {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    extents = cfg.feature_extents()
    print(f"ok: {len(cfg.layers)} conv layers, input extents {extents}, config {cfg.config_hash()[:12]}")
    for i, (spec, h) in enumerate(zip(cfg.layers, extents)):
        if spec.poolskip:
            print(f"  pool skip at conv {i}: {spec.variant.value}, e={cfg.pool_size}, H={h}, M={spec.kernel}")
    return 0


def cmd_oracle(args) -> int:
    from .checks import oracle_suite

    rep = oracle_suite(args.configs, args.seed)
    for (e, m), (count, dev) in sorted(rep.per_cell.items()):
        print(f"e={e} M={m}: {count:4d} configs, max |pipeline - closed form| = {dev:.3e}")
    print(f"configs: {rep.configs}")
    print(f"max deviation pipeline vs closed form: {rep.max_pipeline_dev:.3e}")
    print(f"max deviation decomposition vs closed form: {rep.max_decompose_dev:.3e}")
    print(f"e=1 covered everywhere: {rep.e1_all_covered}")
    ok = rep.max_pipeline_dev <= args.tol and rep.max_decompose_dev <= args.tol and rep.e1_all_covered
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    from .checks import gradcheck_suite

    results = gradcheck_suite(args.seed, args.h, args.tol)
    for c in results:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:32s} rel err {c.rel_error:.3e}  ({c.params} params)")
    return 0 if all(c.passed for c in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poolskip", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train every seed of an experiment config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the config's output directory")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="static checks only")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="pipeline vs closed-form equivalence sweep")
    o.add_argument("--configs", type=int, default=200)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--tol", type=float, default=1e-10)
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger(__name__).info("kernel backend: %s", backend.NAME)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
