"""Command-line interface.

Subcommands cover the whole workflow:

    vcmpre synth              generate a labelled synthetic clip dataset
    vcmpre pretrain-analyzer  train the frozen classifier on clean clips
    vcmpre train              train the preprocessor (or the
                              finetuned-analyzer baseline)
    vcmpre eval               measure rate-accuracy curves and BD-rate
    vcmpre bdrate             recompute BD-rate from a saved ra_points.csv

Exit codes: 0 success; 2 usage or configuration error; 3 training
divergence; 4 missing external tool.
"""

import argparse
import os
import sys

import numpy as np

from . import analyzer, checkpoint, evaluation, synth, training
from . import codec as vcodec
from . import harness as realcodec
from . import preprocessor as _pre
from .runconfig import load_settings, parse_override_args

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MISSING_TOOL = 4


def _load_labeled(manifest):
    items = synth.load_dataset(manifest)
    frames = np.stack([it.clip.luma for it in items])
    labels = np.array([it.label for it in items], dtype=np.int64)
    return items, frames, labels


def cmd_synth(args, extras):
    if extras:
        raise ValueError(f"unrecognized arguments: {' '.join(extras)}")
    labeled = synth.synth_dataset(seed=args.seed, count=args.count,
                                  split=args.split)
    manifest = synth.write_dataset(labeled, args.out)
    print(f"wrote {args.count} clips ({args.split} split, seed {args.seed}) "
          f"-> {manifest}")
    return EXIT_OK


def cmd_pretrain_analyzer(args, extras):
    if extras:
        raise ValueError(f"unrecognized arguments: {' '.join(extras)}")
    _, train_frames, train_labels = _load_labeled(args.data)
    _, val_frames, val_labels = _load_labeled(args.val)

    log_rows = []

    def log(step, loss, acc):
        log_rows.append((step, loss, acc))
        print(f"  step {step}: loss {loss:.4f}, val top-1 {acc:.3f}")

    params = analyzer.pretrain(
        train_frames, train_labels, val_frames, val_labels,
        seed=args.seed, max_steps=args.max_steps,
        target_acc=args.target_acc, log=log,
    )
    val_acc = analyzer.accuracy(params, val_frames, val_labels)

    ckpt = checkpoint.Checkpoint(
        preprocessor=_pre.init_preprocessor(args.seed),
        entropy=vcodec.init_entropy_model(seed=args.seed),
        analyzer=params,
        analyzer_frozen=True,
        adam_m={}, adam_v={}, adam_t=0,
        config={"kind": "analyzer-pretrain", "seed": args.seed,
                "val_top1": val_acc},
        next_step=1,
    )
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    checkpoint.save_checkpoint(args.out, ckpt)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("step,loss,val_top1\n")
            for step, loss, acc in log_rows:
                fh.write("%d,%.9g,%.9g\n" % (step, loss, acc))
    print(f"analyzer val top-1 {val_acc:.3f} -> {args.out}")
    return EXIT_OK


def _merged_path(args_value, settings, section_paths, key, required=False):
    value = args_value if args_value is not None else section_paths.get(key)
    if required and value is None:
        raise ValueError(f"missing required path: give --{key} or set "
                         f"{key} in the config file")
    return value


def cmd_train(args, extras):
    settings = load_settings(args.config, parse_override_args(extras))
    paths = settings.train_paths
    data = _merged_path(args.data, settings, paths, "data", required=True)
    out = _merged_path(args.out, settings, paths, "out", required=True)
    resume = _merged_path(args.resume, settings, paths, "resume")
    analyzer_path = _merged_path(args.analyzer, settings, paths, "analyzer",
                                 required=resume is None)

    items, _, _ = _load_labeled(data)
    analyzer_params = entropy_params = None
    if resume is None:
        src = checkpoint.load_checkpoint(analyzer_path)
        analyzer_params = src.analyzer
        entropy_params = src.entropy

    def progress(step, comps):
        if step % 100 == 0 or step == settings.train.steps:
            print(f"  step {step}/{settings.train.steps}: "
                  f"L {comps['L']:.4f} (D {comps['L_D']:.5f}, "
                  f"R {comps['L_R']:.3f}, Acc {comps['L_Acc']:.4f})")

    final, ckpt_path, log_path = training.train(
        items, settings.train, out,
        analyzer_params=analyzer_params, entropy_params=entropy_params,
        resume=resume, progress=progress,
    )
    print(f"finished at step {final.next_step - 1}: {ckpt_path}")
    print(f"log: {log_path}")
    return EXIT_OK


def cmd_eval(args, extras):
    settings = load_settings(args.config, parse_override_args(extras))
    opts = settings.eval_opts
    data = _merged_path(args.data, settings, opts, "data", required=True)
    out = _merged_path(args.out, settings, opts, "out", required=True)
    analyzer_path = _merged_path(args.analyzer, settings, opts, "analyzer",
                                 required=True)
    ckpt_path = _merged_path(args.checkpoint, settings, opts, "checkpoint")
    codec_name = args.codec or opts.get("codec", "virtual")
    qps = tuple(int(q) for q in args.qps.split(",")) if args.qps \
        else opts.get("qps", evaluation.DEFAULT_QPS)
    method = args.method or opts.get("method", "preprocessed")
    run_dir = _merged_path(args.run_dir, settings, opts, "run_dir") \
        or os.path.join(out, "codec_runs")

    items, _, _ = _load_labeled(data)
    clips = [it.clip for it in items]
    labels = [it.label for it in items]
    ana = checkpoint.load_checkpoint(analyzer_path).analyzer

    trained = checkpoint.load_checkpoint(ckpt_path) if ckpt_path else None
    entropy = trained.entropy if trained else vcodec.init_entropy_model()

    def log(msg):
        print(f"note: {msg}", file=sys.stderr)

    common = dict(codec=codec_name, qps=qps, entropy_params=entropy,
                  codec_cfg=settings.codec, harness_cfg=settings.harness,
                  run_dir=run_dir, log=log)
    curves = [evaluation.measure_curve(clips, labels, ana, method="anchor",
                                       **common)]
    rows = []
    if trained is not None:
        curves.append(evaluation.measure_curve(
            clips, labels, ana, method=method,
            preprocessor_params=trained.preprocessor, **common))
        try:
            bd = evaluation.bd_rate(curves[0], curves[1], log=log)
        except ValueError as exc:
            # Curves were measured and are written either way; BD can be
            # undefined (flat or non-overlapping metric ranges).
            log(f"BD-rate undefined: {exc}")
        else:
            rows.append(evaluation.BDRow(codec_name, curves[0].metric,
                                         "anchor", method, bd))

    paths = evaluation.write_report(curves, rows, out)
    for c in curves:
        pts = ", ".join(f"qp{p.qp}: {p.bpp:.4f} bpp / {p.value:.3f}"
                        for p in c.points)
        print(f"{c.method} ({c.codec}): {pts}")
    for r in rows:
        print(f"BD-rate ({r.codec}, {r.metric}) {r.test} vs {r.anchor}: "
              f"{r.bdrate_pct:+.2f}%")
    print(f"report: {paths[0]}")
    return EXIT_OK


def cmd_bdrate(args, extras):
    if extras:
        raise ValueError(f"unrecognized arguments: {' '.join(extras)}")
    curves = {c.method: c for c in evaluation.load_ra_points(args.points)}
    for name in (args.anchor, args.test):
        if name not in curves:
            raise ValueError(
                f"no curve named {name!r} in {args.points}; "
                f"available: {sorted(curves)}"
            )
    anchor, test = curves[args.anchor], curves[args.test]
    bd = evaluation.bd_rate(anchor, test,
                            log=lambda m: print(f"note: {m}", file=sys.stderr))
    print(f"BD-rate ({anchor.codec}, {anchor.metric}) {test.method} vs "
          f"{anchor.method}: {bd:+.2f}%")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vcmpre",
        description="Preprocess video so machines stay accurate on fewer "
                    "bits: training, evaluation, and BD-rate tooling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=64, help="number of clips")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train",
                   choices=("train", "val", "test"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain-analyzer",
                       help="train the downstream classifier on clean clips")
    p.add_argument("--data", required=True, help="training manifest.csv")
    p.add_argument("--val", required=True, help="validation manifest.csv")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=5000)
    p.add_argument("--target-acc", type=float, default=0.95)
    p.add_argument("--log", help="optional CSV of (step, loss, val_top1)")
    p.set_defaults(func=cmd_pretrain_analyzer)

    p = sub.add_parser("train", help="train the preprocessor")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--data", help="training manifest.csv")
    p.add_argument("--analyzer", help="pretrained analyzer checkpoint")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="measure rate-accuracy curves")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--data", help="evaluation manifest.csv")
    p.add_argument("--analyzer", help="pretrained analyzer checkpoint")
    p.add_argument("--checkpoint",
                   help="trained checkpoint; adds a preprocessed curve")
    p.add_argument("--codec", choices=("virtual", "h264", "h265"))
    p.add_argument("--qps", help="comma-separated QP grid "
                                 "(default 30,35,40,45,50)")
    p.add_argument("--method", help="label for the preprocessed curve")
    p.add_argument("--out", help="report directory")
    p.add_argument("--run-dir", help="where external codec artifacts go")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", help="BD-rate from a saved ra_points.csv")
    p.add_argument("--points", required=True, help="ra_points.csv path")
    p.add_argument("--anchor", default="anchor", help="anchor curve name")
    p.add_argument("--test", default="preprocessed", help="test curve name")
    p.set_defaults(func=cmd_bdrate)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args, extras)
    except training.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except realcodec.MissingToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_TOOL
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
