"""Command-line entry point: ``larskit train|sweep|gradcheck|inspect-norms``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import gradcheck, nd
from .config import load_config
from .errors import ConfigError, FormatError
from .harness import (build_model, default_out_dir, format_summary, load_datasets,
                      run_experiment, run_sweep)
from .nn import Batch, load_checkpoint

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _spec(args):
    spec = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        spec.seed = args.seed
    return spec.validate()


def _out(args, spec):
    return Path(args.out or spec.out_dir or default_out_dir())


def cmd_train(args):
    spec = _spec(args)
    res = run_experiment(spec, _out(args, spec))
    if res.diverged:
        print(f"diverged after {res.steps} steps: {res.divergence}")
        return EXIT_DIVERGED
    print(f"steps={res.steps} base_lr={res.base_lr:.6g} "
          f"train_loss={res.final_train_loss:.6f} test_loss={res.final_test_loss:.6f} "
          f"test_acc={res.final_test_acc:.4f} ({res.wall_seconds:.1f}s)")
    return EXIT_OK


def cmd_sweep(args):
    spec = _spec(args)
    _, rows = run_sweep(spec, args.axis, args.values, _out(args, spec))
    print(format_summary(rows))
    return EXIT_OK


def cmd_gradcheck(args):
    spec = _spec(args)
    rng = nd.Rng(spec.seed)
    train, test = load_datasets(spec, rng)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    model = build_model(spec, train.inputs.shape[1], n_classes, rng)
    n = min(args.batch, len(train))
    batch = Batch(train.inputs[:n], train.labels[:n])
    reports = gradcheck.check_model(model, batch, h=args.step)
    print(f"{'group':<16} {'max rel err':>12} {'threshold':>10} {'skipped':>8}  result")
    for r in reports:
        print(f"{r.group:<16} {r.max_relative_error:>12.3e} {r.threshold:>10.0e} {r.skipped:>8}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    out = _out(args, spec)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "gradcheck.json"
    report_path.write_text(json.dumps([r.as_dict() for r in reports], indent=2) + "\n")
    print(f"report: {report_path}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_inspect_norms(args):
    model, state = load_checkpoint(args.checkpoint)
    print(f"step={state.get('step')}")
    print(f"{'group':<16} {'shape':<14} {'||w||':>12} {'||g||':>12} {'ratio':>12}")
    for g in model.groups:
        w = nd.l2_norm(g.value)
        gn = nd.l2_norm(g.grad)
        ratio = f"{w / gn:12.4g}" if gn else f"{'-':>12}"
        print(f"{g.name:<16} {str(list(g.value.shape)):<14} {w:>12.4g} {gn:>12.4g} {ratio}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="larskit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run a one-axis sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=["lr", "batch", "epochs"])
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck", help="finite-difference check of the configured model")
    g.add_argument("--config", required=True)
    g.add_argument("--batch", type=int, default=8)
    g.add_argument("--step", type=float, default=gradcheck.DEFAULT_STEP)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect-norms", help="print per-group norms from a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect_norms)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
