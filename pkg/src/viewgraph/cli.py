"""Command-line entry points.

Subcommands: ``synth`` writes a synthetic dataset, ``train`` fits a model
and writes a checkpoint, ``eval`` scores classification accuracy,
``retrieve`` runs retrieval evaluation and writes CSV reports,
``gradcheck`` compares analytic and numeric gradients on a small random
instance, and ``attention-dump`` exports per-view attention weights.

Exit codes: 0 on success, 1 on an expected failure (unreadable or invalid
files, incompatible shapes, divergence, a failed gradient check), 2 on
command-line usage errors. The ``THREEDVG_LOG`` environment variable sets
verbosity: debug, info (default), warning, error, or quiet.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import dataio, evalmetrics, trainer
from .errors import ViewGraphError
from .model import (
    TrainConfig,
    forward,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger("viewgraph")

_LOG_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "quiet": logging.CRITICAL + 10,
}


def _setup_logging() -> None:
    wanted = os.environ.get("THREEDVG_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(wanted, logging.INFO)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.handlers.clear()
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path, command: str, config, inputs: dict, outputs: list, seconds: float):
    """Record what a run did: config, input hashes, outputs, wall time."""
    payload = {
        "command": command,
        "config": None if config is None else vars(config).copy(),
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "wall_seconds": seconds,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--n-patterns", type=int, default=128,
                       help="latent pattern count (default 128)")
    group.add_argument("--feature-dim", type=int, default=256,
                       help="global feature width (default 256)")
    group.add_argument("--sigma", type=float, default=10.0,
                       help="spatial decay of the view graph (default 10)")
    flags = parser.add_argument_group("ablations")
    flags.add_argument("--no-spatiality", action="store_true",
                       help="weight all view pairs equally")
    flags.add_argument("--no-attention", action="store_true",
                       help="replace attention with uniform weights")
    flags.add_argument("--no-attention-c", action="store_true",
                       help="blind the attention scores to the node descriptors")
    flags.add_argument("--no-attention-wf", action="store_true",
                       help="blind the attention scores to the classifier weights")
    flags.add_argument("--no-latent", action="store_true",
                       help="skip the latent embedding, use raw features")
    flags.add_argument("--no-correlation", action="store_true",
                       help="keep weighted sums as vectors instead of outer products")
    flags.add_argument("--mean-pool", action="store_true",
                       help="mean-pool embeddings, bypassing the view graph")
    flags.add_argument("--max-pool", action="store_true",
                       help="max-pool embeddings, bypassing the view graph")
    flags.add_argument("--drop-eq10-second-term", action="store_true",
                       help="drop the attention-route gradient of the classifier weights")


def _add_optim_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("optimization")
    group.add_argument("--learning-rate", type=float, default=0.009,
                       help="SGD step size (default 0.009)")
    group.add_argument("--epochs", type=int, default=100)
    group.add_argument("--batch-size", type=int, default=16)
    group.add_argument("--seed", type=int, default=0)
    group.add_argument("--threads", type=int, default=1,
                       help="worker threads for per-sample passes (default 1)")
    group.add_argument("--plateau-patience", type=int, default=5,
                       help="epochs without loss improvement before stopping; 0 disables")


def _config_from_args(args, num_classes: int, views: int, input_dim: int) -> TrainConfig:
    return TrainConfig(
        num_classes=num_classes,
        input_dim=input_dim,
        views=views,
        n_patterns=args.n_patterns,
        feature_dim=args.feature_dim,
        sigma=args.sigma,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        no_spatiality=args.no_spatiality,
        no_attention=args.no_attention,
        no_attention_c=args.no_attention_c,
        no_attention_wf=args.no_attention_wf,
        no_latent=args.no_latent,
        no_correlation=args.no_correlation,
        mean_pool=args.mean_pool,
        max_pool=args.max_pool,
        drop_eq10_second_term=args.drop_eq10_second_term,
        plateau_patience=args.plateau_patience,
        threads=args.threads,
    )


def _cmd_synth(args) -> int:
    started = time.perf_counter()
    dataset = dataio.generate_synthetic(
        num_classes=args.classes,
        shapes_per_class=args.per_class,
        views=args.views,
        feature_dim=args.input_dim,
        noise=args.noise,
        seed=args.seed,
        split=args.split,
    )
    dataio.save(dataset, args.out)
    log.info(
        "wrote %s: %d shapes, %d classes, %d views x %d dims",
        args.out, dataset.num_samples, dataset.num_classes,
        dataset.views, dataset.feature_dim,
    )
    if args.manifest:
        _write_manifest(
            args.manifest, "synth", None, {"dataset": args.out}, [args.out],
            time.perf_counter() - started,
        )
    return 0


def _cmd_train(args) -> int:
    started = time.perf_counter()
    dataset = dataio.load(args.data, sigma=args.sigma)
    config = _config_from_args(
        args, dataset.num_classes, dataset.views, dataset.feature_dim
    )
    resume = None
    if args.resume:
        resume, resume_cfg = load_checkpoint(args.resume)
        log.info("resuming from %s (trained with seed %d)", args.resume, resume_cfg.seed)

    log_fh = open(args.log_file, "w") if args.log_file else None

    def on_epoch(stats):
        log.info(
            "epoch %d: loss %.6f, accuracy %.4f (%.2fs)",
            stats.epoch, stats.loss, stats.accuracy, stats.seconds,
        )
        if log_fh is not None:
            json.dump(
                {
                    "epoch": stats.epoch,
                    "loss": stats.loss,
                    "accuracy": stats.accuracy,
                    "seconds": stats.seconds,
                },
                log_fh,
            )
            log_fh.write("\n")
            log_fh.flush()
        return False

    try:
        result = trainer.train(dataset, config, params=resume, callback=on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(args.out, result.params, config)
    final = result.history[-1] if result.history else None
    if final is not None:
        log.info(
            "finished after %d epochs%s: loss %.6f, accuracy %.4f",
            result.epochs_run,
            " (stopped early)" if result.stopped_early else "",
            final.loss, final.accuracy,
        )
    outputs = [args.out] + ([args.log_file] if args.log_file else [])
    if args.manifest:
        _write_manifest(
            args.manifest, "train", config, {"data": args.data}, outputs,
            time.perf_counter() - started,
        )
    return 0


def _load_model_and_data(model_path, data_path):
    params, config = load_checkpoint(model_path)
    dataset = dataio.load(data_path, sigma=config.sigma)
    return params, config, dataset


def _cmd_eval(args) -> int:
    started = time.perf_counter()
    params, config, dataset = _load_model_and_data(args.model, args.data)
    from .model import sample_loss

    losses = []
    hits = 0
    for sample in dataset.samples:
        trace = forward(sample, params, config)
        losses.append(sample_loss(trace, sample))
        hits += int(np.argmax(trace.probs)) == sample.label
    summary = {
        "num_samples": dataset.num_samples,
        "accuracy": hits / dataset.num_samples,
        "mean_loss": float(np.mean(losses)),
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if args.manifest:
        _write_manifest(
            args.manifest, "eval", config,
            {"model": args.model, "data": args.data}, [],
            time.perf_counter() - started,
        )
    return 0


def _cmd_retrieve(args) -> int:
    started = time.perf_counter()
    params, config, dataset = _load_model_and_data(args.model, args.data)
    from .model import predict_features

    features = predict_features(params, config, dataset)
    if args.gallery:
        gallery = dataio.load(args.gallery, sigma=config.sigma)
        gallery_features = predict_features(params, config, gallery)
        run = evalmetrics.RetrievalRun(
            features, dataset.labels, gallery_features, gallery.labels,
            distance=args.distance,
        )
    else:
        run = evalmetrics.RetrievalRun.self_retrieval(
            features, dataset.labels, distance=args.distance
        )
    report = evalmetrics.shrec_metrics(run, cutoff=args.cutoff)
    outputs = []
    if args.metrics_csv:
        evalmetrics.write_metrics_csv(args.metrics_csv, report)
        outputs.append(args.metrics_csv)
    if args.per_query_csv:
        evalmetrics.write_per_query_csv(args.per_query_csv, report)
        outputs.append(args.per_query_csv)
    if args.pr_csv:
        recalls, precisions = evalmetrics.pr_curve(run, points=args.pr_points)
        evalmetrics.write_pr_csv(args.pr_csv, recalls, precisions)
        outputs.append(args.pr_csv)
    summary = {
        "num_queries": run.num_queries,
        "micro": vars(report.micro),
        "macro": vars(report.macro),
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if args.manifest:
        inputs = {"model": args.model, "data": args.data}
        if args.gallery:
            inputs["gallery"] = args.gallery
        _write_manifest(
            args.manifest, "retrieve", config, inputs, outputs,
            time.perf_counter() - started,
        )
    return 0


def _cmd_gradcheck(args) -> int:
    config = _config_from_args(args, args.classes, args.views, args.input_dim)
    rng = np.random.default_rng(args.seed)
    from .geometry import build_view_graph, default_viewpoints
    from .model import init_model

    graph = build_view_graph(default_viewpoints(config.views), config.sigma)
    features = rng.standard_normal((config.views, config.input_dim)).astype(np.float32)
    sample = dataio.ShapeSample(
        label=int(rng.integers(config.num_classes)), features=features, graph=graph
    )
    params = init_model(config, rng)
    # Check at generic O(1) parameters: every block's gradient is then well
    # above the finite-difference noise floor, unlike at the tiny init scale.
    for _, arr in params.blocks():
        arr[...] = rng.standard_normal(arr.shape)
    report = trainer.grad_check(sample, params, config, h=args.h)
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name:16s} relative error {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:.1e})")
    return 0 if worst < args.tol else 1


def _cmd_attention_dump(args) -> int:
    import csv

    params, config, dataset = _load_model_and_data(args.model, args.data)
    if config.pooled_mode:
        raise ViewGraphError("pooled models have no attention weights to dump")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shape_index", "view_index", "alpha", "is_max", "is_min"])
        for si, sample in enumerate(dataset.samples):
            alpha = forward(sample, params, config).alpha
            top = int(np.argmax(alpha))
            bottom = int(np.argmin(alpha))
            for vi, a in enumerate(alpha):
                writer.writerow(
                    [si, vi, f"{a:.17g}", int(vi == top), int(vi == bottom)]
                )
    log.info("wrote %s for %d shapes x %d views", args.out, dataset.num_samples, dataset.views)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewgraph",
        description="Multi-view 3D shape recognition over spatial view graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True, help="shapes per class")
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--input-dim", type=int, default=64, help="per-view feature dim")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", help="split tag stored in the file")
    p.add_argument("--manifest", help="write a JSON run manifest here")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True, help="training dataset path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-file", help="write per-epoch stats as JSON lines")
    p.add_argument("--manifest", help="write a JSON run manifest here")
    _add_model_args(p)
    _add_optim_args(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score classification accuracy")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--manifest", help="write a JSON run manifest here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("retrieve", help="retrieval metrics over global features")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="query dataset path")
    p.add_argument("--gallery", help="separate gallery dataset (default: self-retrieval)")
    p.add_argument("--cutoff", type=int, help="fixed cutoff (default: per-query class size)")
    p.add_argument("--distance", choices=sorted(evalmetrics.DISTANCES),
                   default="euclidean", help="feature-space distance for ranking")
    p.add_argument("--metrics-csv", help="write the micro/macro summary CSV here")
    p.add_argument("--per-query-csv", help="write per-query scores CSV here")
    p.add_argument("--pr-csv", help="write the interpolated PR curve CSV here")
    p.add_argument("--pr-points", type=int, default=21)
    p.add_argument("--manifest", help="write a JSON run manifest here")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("gradcheck", help="finite-difference check on a random instance")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--input-dim", type=int, default=5)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-5, help="max relative error to pass")
    _add_model_args(p)
    _add_optim_args(p)
    # Small dims by default: the check walks every parameter entry.
    p.set_defaults(func=_cmd_gradcheck, n_patterns=4, feature_dim=6)

    p = sub.add_parser("attention-dump", help="export per-view attention weights")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_attention_dump)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ViewGraphError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
