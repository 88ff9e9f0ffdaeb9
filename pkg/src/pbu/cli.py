"""Command-line entry point: ``pbu <subcommand> ...``."""

import argparse
import json
import logging
import sys

from . import harness
from .classifier import Checkpoint, load_checkpoint, save_checkpoint, train
from .datasets import gen_blobs, gen_rings, save_csv
from .errors import DivergenceError, PBUError
from .unlearning import run_pbu

EXIT_OK, EXIT_CONTRACT, EXIT_DIVERGENCE = 0, 1, 2


def _write_report(report, path):
    with open(path, "w") as fh:
        fh.write(report.to_json() + "\n")


def cmd_gen_data(args):
    if args.kind == "blobs":
        data = gen_blobs(args.d, args.classes, args.n_per_class, args.spread, args.seed)
    else:
        data = gen_rings(args.classes, args.n_per_class, args.noise, args.seed)
    save_csv(data, args.out)


def cmd_train(args):
    cfg = harness.load_config(args.config)
    splits = harness.load_splits(cfg)
    seed = cfg.seeds[0]
    ckpt = train(cfg.model_spec(splits.train.dim), splits.train, cfg.train.config(seed))
    save_checkpoint(ckpt, args.out)


def cmd_unlearn(args):
    cfg = harness.load_config(args.config)
    initial = load_checkpoint(args.ckpt)
    splits = harness.load_splits(cfg)
    s_n, _ = splits.train.split_by_class(cfg.unlearn.forget_class)
    seed = cfg.seeds[0]
    res = run_pbu(initial.spec, initial, s_n, cfg.unlearn.config(seed))
    unlearned = Checkpoint(initial.spec, res.theta_u)
    save_checkpoint(unlearned, args.out)
    if args.report:
        report = harness.evaluate_checkpoint(cfg, unlearned, "pbu", seed)
        report.unlearn_steps = res.steps_run
        report.unlearn_epochs = res.epochs
        report.wall_time_seconds = res.wall_time
        _write_report(report, args.report)


def cmd_eval(args):
    cfg = harness.load_config(args.config)
    report = harness.evaluate_checkpoint(cfg, load_checkpoint(args.ckpt), args.variant)
    _write_report(report, args.report)


def cmd_run(args):
    cfg = harness.load_config(args.config)
    return harness.run_experiment(cfg, out_dir=args.out_dir)


def cmd_ablate(args):
    cfg = harness.load_config(args.config)
    if args.mode == "regularizer":
        return harness.ablate_regularizer(cfg, out_dir=args.out_dir)
    return harness.sweep_alpha(cfg, out_dir=args.out_dir)


class _Parser(argparse.ArgumentParser):
    # argparse would exit with 2, which is reserved for divergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONTRACT, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="pbu", description="Partially blinded class unlearning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--kind", choices=("blobs", "rings"), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--n-per-class", type=int, default=700)
    g.add_argument("--spread", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the initial model")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("unlearn", help="run PBU on a checkpoint")
    u.add_argument("--config", required=True)
    u.add_argument("--ckpt", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--report")
    u.set_defaults(func=cmd_unlearn)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--variant", default="eval")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="full initial/retrain/finetune/pbu pipeline")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("ablate", help="regularizer ablation or alpha sweep")
    a.add_argument("--config", required=True)
    a.add_argument("--mode", choices=("regularizer", "alpha"), required=True)
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        rec = args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (PBUError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    if isinstance(rec, harness.RunRecord):
        if rec.failures:
            print(json.dumps(rec.failures), file=sys.stderr)
            diverged = all(f["error"] in ("DivergenceError", "TrainingError") for f in rec.failures)
            if len(rec.failures) == len(rec.config["seeds"]):
                return EXIT_DIVERGENCE if diverged else EXIT_CONTRACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
