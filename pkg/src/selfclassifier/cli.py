"""Command-line entry point: gen-data, train, eval, grad-check, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as D
from . import harness as H
from . import metrics as M
from .errors import ConfigError, NonFiniteLossError, SelfClassifierError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_gen_data(args) -> int:
    ds = D.generate_mixture(args.seed, args.classes, args.dim, args.points, args.separation,
                            balanced=not args.unbalanced)
    D.write_csv(ds, args.out)
    print(f"wrote {len(ds)} points ({ds.n_classes} classes, D={ds.dim}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = H.load_config(args.config, _overrides(args.set))
    if args.output_dir:
        cfg.output_dir = args.output_dir
    report = H.train(cfg)
    base = report.final_metrics["base_head"]
    head = report.final_metrics["heads"][base]
    print(f"epochs {len(report.epochs)}  base head C={head['classes']}  acc {head['acc']:.4f}  "
          f"nmi {head['nmi']:.4f}  alarms {len(report.alarms)}  time {report.wall_time:.1f}s")
    if cfg.output_dir:
        print(f"outputs in {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ds = D.read_csv(args.data)
        hierarchy = M.HierarchyMap.read_tsv(args.hierarchy) if args.hierarchy else None
        result = H.evaluate_checkpoint(args.checkpoint, ds, hierarchy, args.knn_k or None)
    except (OSError, ValueError) as exc:
        if isinstance(exc, SelfClassifierError):
            raise
        raise ConfigError(str(exc)) from None
    text = json.dumps(result, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    rep = H.grad_check(tolerance=args.tolerance, seed=args.seed)
    for name, err in rep.errors.items():
        print(f"{'ok  ' if err < rep.tolerance else 'FAIL'} {name:24s} {err:.3e}")
    print(f"max relative error {rep.max_error:.3e} (tolerance {rep.tolerance:g}): "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_report(args) -> int:
    try:
        paths = H.render_report(args.report, args.out_dir)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot render {args.report}: {exc}") from None
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfclassifier", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a Gaussian-mixture dataset CSV")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--points", type=int, default=2000)
    g.add_argument("--separation", type=float, default=10.0)
    g.add_argument("--unbalanced", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a key = value config file")
    t.add_argument("config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--output-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--hierarchy", help="leaf/level/super TSV")
    e.add_argument("--knn-k", type=int, default=20, help="0 disables the K-NN probe")
    e.add_argument("--out", help="write metrics JSON here instead of stdout")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of the full loss gradient")
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_grad_check)

    r = sub.add_parser("report", help="render a report.json to CSV tables")
    r.add_argument("report")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=1, default=str), file=sys.stderr)
        return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SelfClassifierError as exc:
        # parameter and shape errors raised while reading inputs
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_RUNTIME
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
