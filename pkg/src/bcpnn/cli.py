"""Command-line entry points.

Subcommands: train-unsup, extract, train-cls, eval, experiment, report.
Every command echoes its resolved configuration and seeds; `experiment`
additionally writes the same lines to ``<out-dir>/run.log``.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import __version__
from .config import build_config, resolved_lines
from .data import load_idx
from .errors import BcpnnError, ConfigError, ParameterError, ValidationError
from .harness import (
    CLASSIFIER_KINDS,
    ExperimentConfig,
    TRAIN_IMAGES,
    TRAIN_LABELS,
    accuracy,
    aggregate,
    classifier_seed,
    labelled_indices,
    read_results_csv,
    run_experiment,
    split_indices,
    train_classifier,
    write_results_csv,
)
from .classifiers import predict_batch
from .persistence import (
    load_model,
    load_representations,
    save_model,
    save_representations,
)
from .reporting import render_figures, write_curves, write_markdown_table
from .unsup import extract_representations, train_unsupervised

DATA_DIR_ENV = "BCPNN_DATA_DIR"


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")


def _resolve_config(args, extra_overrides: Optional[List[str]] = None) -> ExperimentConfig:
    overrides = list(args.overrides)
    if getattr(args, "mnist_dir", None):
        overrides.append(f"data.dir={args.mnist_dir}")
    config = build_config(args.config, overrides + (extra_overrides or []))
    if config.mnist_dir is None and os.environ.get(DATA_DIR_ENV):
        config.mnist_dir = os.environ[DATA_DIR_ENV]
    return config


def _echo_config(config: ExperimentConfig, sink=None):
    for line in resolved_lines(config):
        print(f"config {line}")
        if sink is not None:
            sink.write(f"config {line}\n")


def _load_train_split(config: ExperimentConfig):
    images, labels = config.train_paths()
    return load_idx(images, labels, split="train")


def cmd_train_unsup(args) -> int:
    config = _resolve_config(args, [f"unsup.epochs={args.epochs}"]
                             if args.epochs is not None else [])
    _echo_config(config)
    print(f"seed {args.seed}")
    data = _load_train_split(config)

    def on_epoch(epoch, seconds, model):
        t = model.projection.traces
        print(f"epoch {epoch}: {seconds:.1f}s  "
              f"p_src [{t.p_src.min():.3e}, {t.p_src.max():.3e}]  "
              f"p_joint [{t.p_joint.min():.3e}, {t.p_joint.max():.3e}]")

    model = train_unsupervised(data, config.unsup_config(args.hidden_hc),
                               args.seed, on_epoch=on_epoch)
    save_model(model, args.out)
    print(f"wrote model {args.out} (fingerprint {model.fingerprint()[:16]})")
    return 0


def cmd_extract(args) -> int:
    config = _resolve_config(args)
    _echo_config(config)
    model = load_model(args.model)
    data = _load_train_split(config)
    reps = extract_representations(model, data)
    save_representations(reps, args.out)
    print(f"wrote {len(reps)} representations to {args.out}")
    return 0


def cmd_train_cls(args) -> int:
    if args.classifier not in CLASSIFIER_KINDS:
        raise ConfigError(f"unknown classifier {args.classifier!r}, "
                          f"expected one of {CLASSIFIER_KINDS}")
    config = _resolve_config(args)
    _echo_config(config)
    reps = load_representations(args.reps)
    data = _load_train_split(config)
    if len(reps) != len(data):
        raise ConfigError(
            f"{args.reps} holds {len(reps)} rows but the training split has "
            f"{len(data)} samples"
        )
    labelled = labelled_indices(data.labels, args.n_labels, config.base_seed,
                                args.split_seed)
    cls_seed = classifier_seed(config.base_seed, args.unsup_seed, args.split_seed,
                               args.n_labels, args.classifier)
    print(f"seeds: split={args.split_seed} unsup={args.unsup_seed} classifier={cls_seed}")
    from dataclasses import replace
    subset = replace(reps, values=reps.values[labelled])
    clf = train_classifier(args.classifier, subset, data.labels[labelled],
                           config, cls_seed)
    train_acc = accuracy(predict_batch(clf, subset.values), data.labels[labelled])
    print(f"train accuracy {train_acc:.4f} on {args.n_labels} labelled samples")
    save_model(clf, args.out)
    print(f"wrote classifier {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    _echo_config(config)
    clf = load_model(args.classifier)
    reps = load_representations(args.reps)
    data = _load_train_split(config)
    if args.n_labels is not None:
        _, validation = split_indices(data.labels, args.n_labels,
                                      config.validation_size, config.base_seed,
                                      args.unsup_seed, args.split_seed)
        idx = validation
        what = f"validation set (n_labels={args.n_labels}, split={args.split_seed})"
    else:
        idx = np.arange(len(data))
        what = "full split"
    preds = predict_batch(clf, reps.values[idx])
    acc = accuracy(preds, data.labels[idx])
    print(f"accuracy {acc:.4f} ({int(round(acc * len(idx)))}/{len(idx)}) on {what}")
    return 0


def cmd_experiment(args) -> int:
    config = _resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    log_path = os.path.join(args.out_dir, "run.log")
    with open(log_path, "w", newline="\n") as log_file:
        _echo_config(config, sink=log_file)

        def log(msg: str):
            print(msg)
            log_file.write(msg + "\n")
            log_file.flush()

        started = time.perf_counter()
        records, failures = run_experiment(config, args.out_dir,
                                           resume=args.resume, jobs=args.jobs,
                                           log=log)
        log(f"{len(records)} records, {len(failures)} failed cells, "
            f"{time.perf_counter() - started:.1f}s total")

    write_results_csv(records, os.path.join(args.out_dir, "results.csv"))
    if failures:
        with open(os.path.join(args.out_dir, "errors.csv"), "w", newline="\n") as fh:
            fh.write("run_id,error\n")
            for failure in failures:
                fh.write(f"{failure.run_id},{failure.error!r}\n")
    if records:
        summaries = aggregate(records)
        write_markdown_table(summaries, os.path.join(args.out_dir, "table.md"))
        write_curves(summaries, os.path.join(args.out_dir, "curves"))
        render_figures(summaries, os.path.join(args.out_dir, "figures"))
        with open(os.path.join(args.out_dir, "table.md")) as fh:
            print(fh.read())
    return 1 if failures else 0


def cmd_report(args) -> int:
    records = read_results_csv(args.results)
    summaries = aggregate(records)
    write_markdown_table(summaries, args.out_table)
    print(f"wrote {args.out_table}")
    curve_paths = write_curves(summaries, args.out_curves)
    print(f"wrote {len(curve_paths)} curve files to {args.out_curves}")
    figures_dir = args.out_figures or args.out_curves
    figure_paths = render_figures(summaries, figures_dir)
    print(f"wrote {len(figure_paths)} figures to {figures_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcpnn",
        description="BCPNN semi-supervised MNIST experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-unsup", help="train one unsupervised network")
    _add_config_flags(p)
    p.add_argument("--mnist-dir", help=f"directory with {TRAIN_IMAGES}/{TRAIN_LABELS}")
    p.add_argument("--hidden-hc", type=int, required=True,
                   help="hidden hypercolumn count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None,
                   help="override unsup.epochs")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train_unsup)

    p = sub.add_parser("extract", help="extract hidden representations")
    _add_config_flags(p)
    p.add_argument("--mnist-dir")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output representation cache")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-cls", help="train one classifier cell")
    _add_config_flags(p)
    p.add_argument("--mnist-dir")
    p.add_argument("--reps", required=True, help="representation cache file")
    p.add_argument("--classifier", required=True, choices=CLASSIFIER_KINDS)
    p.add_argument("--n-labels", type=int, required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--unsup-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_cls)

    p = sub.add_parser("eval", help="score a trained classifier")
    _add_config_flags(p)
    p.add_argument("--mnist-dir")
    p.add_argument("--classifier", required=True, help="classifier model file")
    p.add_argument("--reps", required=True)
    p.add_argument("--n-labels", type=int, default=None,
                   help="score on this cell's validation set instead of the full split")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--unsup-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full evaluation grid")
    _add_config_flags(p)
    p.add_argument("--mnist-dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", action="store_true",
                   help="reuse cached models/representations when present")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for classifier cells")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="aggregate a results CSV")
    p.add_argument("--in", dest="results", required=True, help="results.csv")
    p.add_argument("--out-table", required=True, help="Markdown table path")
    p.add_argument("--out-curves", required=True, help="curve CSV directory")
    p.add_argument("--out-figures", default=None,
                   help="figure directory (default: same as --out-curves)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ParameterError) as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return 2
    except BcpnnError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
