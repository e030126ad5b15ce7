"""Command-line interface: ``prunelab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from prunelab import optim
from prunelab.data import num_batches
from prunelab.errors import PruneLabError
from prunelab.harness import HarnessError, load_records, run
from prunelab.metrics import accuracy, count_cost, reduction
from prunelab.nn import build_architecture, load_checkpoint, save_checkpoint
from prunelab.pipeline import PipelineConfig, can_shrink, fit_schedule, load_data, prune_once, train_original
from prunelab.plotting import PLOT_KINDS, plot
from prunelab.pruning import METHODS, POLICIES, shrink_structured
from prunelab.schedules import KINDS, RETRAIN_KINDS, build_original, build_schedule, get_profile, write_schedule_csv

log = logging.getLogger("prunelab")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed (default 0)")
    p.add_argument("--data-dir", default=argparse.SUPPRESS, help="CIFAR-10 directory (default $PRUNELAB_DATA_DIR)")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory (default ./runs)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS threads (default 1)")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def _data_args(p):
    p.add_argument("--arch", default="cnn-small")
    p.add_argument("--dataset", default="tiny-images", help="cifar10, tiny-images, two-spirals or gaussian-blobs")
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--test-samples", type=int, default=1000)
    p.add_argument("--profile", default="cifar", choices=("cifar", "imagenet"))
    p.add_argument("--original-epochs", type=int, default=None, help="length of the original schedule (scaled profile)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="prunelab", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an unpruned network on the original schedule")
    _data_args(p)
    p.add_argument("--out", help="checkpoint path (default <out-dir>/model.ckpt)")

    p = sub.add_parser("prune", parents=[common], help="prune a checkpoint")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="l1_filter", choices=METHODS)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--policy", default=None, choices=POLICIES)
    p.add_argument("--report", help="write a JSON pruning report here")
    p.add_argument("--no-shrink", action="store_true", help="keep masks instead of removing filters")
    _data_args(p)

    p = sub.add_parser("retrain", parents=[common], help="retrain a (pruned) checkpoint")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="clr", choices=RETRAIN_KINDS)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--warmup-frac", type=float, default=0.1)
    p.add_argument("--lr-max", type=float, default=None)
    p.add_argument("--lr-min", type=float, default=1e-5)
    _data_args(p)

    p = sub.add_parser("pipeline", parents=[common], help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("schedule", parents=[common], help="emit a learning-rate schedule as CSV")
    p.add_argument("--kind", default="clr", choices=KINDS)
    p.add_argument("--profile", default="cifar", choices=("cifar", "imagenet"))
    p.add_argument("--original-epochs", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None, help="retraining budget t (ignored for --kind step)")
    p.add_argument("--steps-per-epoch", type=int, default=1)
    p.add_argument("--warmup-frac", type=float, default=0.1)
    p.add_argument("--lr-max", type=float, default=None)
    p.add_argument("--lr-min", type=float, default=1e-5)
    p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("report", parents=[common], help="parameter/FLOPs report as JSON")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--in", dest="inp")
    g.add_argument("--arch")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--out")

    p = sub.add_parser("plot", parents=[common], help="write an SVG figure")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--records", help="directory containing RunRecord JSON files")
    p.add_argument("--profile", default="cifar", choices=("cifar", "imagenet"))
    p.add_argument("--epochs", type=int, default=72)
    p.add_argument("--steps-per-epoch", type=int, default=10)
    p.add_argument("--out", required=True)
    return parser


def _globals(args):
    args.seed = getattr(args, "seed", 0)
    args.data_dir = getattr(args, "data_dir", None)
    args.out_dir = getattr(args, "out_dir", "runs")
    args.threads = getattr(args, "threads", 1)
    args.verbose = getattr(args, "verbose", 0)


def _pipeline_cfg(args, **kw) -> PipelineConfig:
    return PipelineConfig(
        arch=args.arch, dataset=args.dataset, n_samples=args.n_samples, test_samples=args.test_samples,
        profile=args.profile, original_epochs=args.original_epochs, batch_size=args.batch_size,
        augment=args.augment, dtype=args.dtype, seed=args.seed, data_dir=args.data_dir, **kw,
    )


def _emit(obj, path=None):
    text = json.dumps(obj, indent=1)
    if path:
        Path(path).write_text(text)
    else:
        print(text)


def cmd_train(args):
    cfg = _pipeline_cfg(args, mode="train")
    store, arch, rec = train_original(cfg)
    out = Path(args.out or Path(args.out_dir) / "model.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, store, arch)
    Path(f"{out}.record.json").write_text(rec.to_json())
    _emit({"checkpoint": str(out), **rec.final})


def cmd_prune(args):
    store, arch = load_checkpoint(args.inp)
    cfg = _pipeline_cfg(args, method=args.method, ratio=args.ratio, policy=args.policy)
    data = load_data(cfg) if args.method == "taylor_fo" else None
    before = count_cost(arch)
    mask = prune_once(store, arch, cfg.prune_spec, cfg, data)
    if not args.no_shrink and can_shrink(arch, mask):
        store, arch = shrink_structured(store, arch, mask)
    after = count_cost(arch, store)
    save_checkpoint(args.out, store, arch)
    pd, fd = reduction(before, after)
    report = {
        "method": args.method,
        "ratio": args.ratio,
        "policy": cfg.prune_spec.layer_policy,
        "keep_counts": mask.keep_counts(),
        "sparsity": store.sparsity(),
        "before": {"params": before.params, "macs": before.macs, "flops": before.flops},
        "after": {"params": after.params, "macs": after.macs, "flops": after.flops},
        "params_down_pct": pd,
        "flops_down_pct": fd,
        "convention": before.convention,
        "warnings": mask.warnings,
    }
    _emit(report, args.report)


def cmd_retrain(args):
    store, arch = load_checkpoint(args.inp)
    cfg = _pipeline_cfg(args)
    data = load_data(cfg)
    spe = num_batches(len(data.train), cfg.batch_size)
    original = build_original(cfg.original_profile(), spe)
    schedule = build_schedule(args.kind, original, args.epochs, args.warmup_frac, args.lr_max, args.lr_min)
    optim.reset_state(store)
    rows, _, _ = fit_schedule(store, arch, schedule, data.train, cfg.optim, cfg.seed, augment=cfg.augment, phase="retrain")
    save_checkpoint(args.out, store, arch)
    _emit({"checkpoint": args.out, "test_acc": accuracy(store, arch, data.test), "epochs": len(rows)})


def cmd_pipeline(args):
    try:
        report = run(args.config, args.out_dir, args.workers)
    except HarnessError as e:
        log.error("%s", e)
        return 1
    print(f"wrote {len(report.records)} records and {report.out_dir / 'aggregate.csv'}")
    return 0


def cmd_schedule(args):
    original = build_original(get_profile(args.profile, args.original_epochs), args.steps_per_epoch)
    t = args.epochs if args.epochs is not None else original.budget_epochs
    sch = build_schedule(args.kind, original, t, args.warmup_frac, args.lr_max, args.lr_min)
    write_schedule_csv(sch, args.out or sys.stdout)


def cmd_report(args):
    if args.inp:
        store, arch = load_checkpoint(args.inp)
        cost = count_cost(arch, store)
    else:
        cost = count_cost(build_architecture(args.arch, args.classes))
    _emit(cost.to_dict(), args.out)


def cmd_plot(args):
    if args.kind == "schedule":
        original = build_original(get_profile(args.profile), args.steps_per_epoch)
        items = [build_schedule(k, original, args.epochs) for k in RETRAIN_KINDS]
    else:
        if not args.records:
            raise PruneLabError("--records is required for record plots")
        items = load_records(args.records)
    plot(items, args.kind, args.out)
    print(args.out)


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "retrain": cmd_retrain,
    "pipeline": cmd_pipeline,
    "schedule": cmd_schedule,
    "report": cmd_report,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _globals(args)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(args.threads):
        try:
            return COMMANDS[args.command](args) or 0
        except PruneLabError as e:
            print(f"prunelab: error: {e}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
