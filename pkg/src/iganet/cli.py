"""Command line: ``iganet {train,eval,predict,gradcheck,ablate,synth}``.

Exit codes: 0 success, 1 check failure, 2 usage / input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation, gradcheck
from .data import PoseFormatError, PoseSample, Dataset, load_dataset, save_dataset, synth_generate
from .metrics import per_action_table
from .model import CheckpointError, ModelConfig, load_params
from .skeleton import SkeletonError, get_graph
from .training import TrainConfig, TrainingDiverged, evaluate, predict_batch, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

_TRAIN_DEFAULTS = TrainConfig()
_MODEL_DEFAULTS = ModelConfig()


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {path}")
    return p


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model (overrides --config)")
    g.argument_default = argparse.SUPPRESS
    g.add_argument("--config", help="model config JSON (keys of ModelConfig)")
    g.add_argument("--graph", default="h36m17", help="skeleton name or skeleton JSON path")
    g.add_argument("--channels", type=int, help=f"channel dim C (default {_MODEL_DEFAULTS.channels})")
    g.add_argument("--heads", type=int, help=f"attention heads (default {_MODEL_DEFAULTS.heads})")
    g.add_argument("--bottleneck", type=int, help="uMLP bottleneck width (default C/2)")
    g.add_argument("--blocks", type=int, help=f"number of IGA+uMLP blocks N (default {_MODEL_DEFAULTS.num_blocks})")
    g.add_argument("--s-g2a", type=float, help=f"G2A scale (default {_MODEL_DEFAULTS.s_g2a})")
    g.add_argument("--s-a2g", type=float, help=f"A2G scale (default {_MODEL_DEFAULTS.s_a2g})")
    g.add_argument("--adjacency-norm", choices=["row", "symmetric"], help="adjacency normalization (default row)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=_TRAIN_DEFAULTS.seed, help="random seed")
    g.add_argument("--epochs", type=int, default=_TRAIN_DEFAULTS.epochs, help="training epochs")
    g.add_argument("--batch", type=int, default=_TRAIN_DEFAULTS.batch_size, help="batch size")
    g.add_argument("--lr", type=float, default=_TRAIN_DEFAULTS.lr0, help="initial Adam learning rate")
    g.add_argument("--lr-decay", type=float, default=_TRAIN_DEFAULTS.lr_decay, help="per-epoch lr decay factor")
    g.add_argument("--flip-prob", type=float, default=_TRAIN_DEFAULTS.flip_prob, help="flip augmentation probability")
    g.add_argument("--max-steps", type=int, default=None, help="stop after this many optimizer steps")
    g.add_argument("--eval-every", type=int, default=_TRAIN_DEFAULTS.eval_every, help="epochs between evaluations")
    g.add_argument("--grad-clip", type=float, default=None, help="global gradient-norm clip (off by default)")
    g.add_argument("--workers", type=int, default=1,
                   help="data-parallel threads per batch; >1 is not bitwise reproducible")


def _model_config(args) -> ModelConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(_existing(args.config).read_text())
        except ValueError as exc:
            raise UsageError(f"bad config JSON {args.config}: {exc}") from exc
        doc = doc.get("model", doc)
    flags = {
        "channels": "channels", "heads": "heads", "bottleneck": "bottleneck", "num_blocks": "blocks",
        "s_g2a": "s_g2a", "s_a2g": "s_a2g", "adjacency_norm": "adjacency_norm",
    }
    doc.update({k: getattr(args, a) for k, a in flags.items() if hasattr(args, a)})
    if hasattr(args, "channels") and not hasattr(args, "bottleneck"):
        doc.pop("bottleneck", None)  # re-derive C/2 for the new width
    try:
        return ModelConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=args.epochs, batch_size=args.batch, lr0=args.lr, lr_decay=args.lr_decay,
            seed=args.seed, eval_every=args.eval_every, flip_prob=args.flip_prob,
            grad_clip=args.grad_clip, max_steps=args.max_steps, workers=args.workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _graph(args):
    try:
        return get_graph(args.graph)
    except SkeletonError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    graph = _graph(args)
    train_set = load_dataset(_existing(args.data), graph)
    eval_set = load_dataset(_existing(args.eval_data), graph) if args.eval_data else None
    mcfg, tcfg = _model_config(args), _train_config(args)
    mcfg = dataclasses.replace(mcfg, num_joints=graph.num_joints)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    try:
        result = train(train_set, mcfg, tcfg, graph, eval_set=eval_set,
                       checkpoint_path=ckpt, log_path=out / "train_log.jsonl")
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}; best checkpoint kept at {ckpt}", file=sys.stderr)
        return EXIT_DIVERGED
    (out / "train_config.json").write_text(
        json.dumps({"model": mcfg.to_dict(), "train": tcfg.to_dict()}, indent=2, sort_keys=True)
    )
    print(f"trained {result.steps} steps; best eval MPJPE {result.best_eval:.3f} mm -> {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    graph = _graph(args)
    config, params, _ = load_params(_existing(args.ckpt))
    ds = load_dataset(_existing(args.data), graph)
    report = evaluate(ds, params, config, graph, flip_test=not args.no_flip, verbose=args.verbose)
    print(f"MPJPE {report.mpjpe_mm:.3f} mm | PCK@150 {report.pck_pct:.2f} % | AUC {report.auc_pct:.2f} %")
    for k, v in report.extra.items():
        if k.startswith("mpjpe"):
            print(f"  {k}: {v:.3f} mm")
    table = None
    if report.per_action:
        groups: dict[str, list[float]] = {}
        for a, e in zip(ds.actions(), report.per_sample):
            groups.setdefault(a, []).append(e)
        table = per_action_table(groups, args.avg_mode)
        print(table.to_text())
    if args.out:
        out = Path(args.out)
        doc = report.to_dict()
        if table is not None:
            doc["table"] = table.to_dict()
        out.write_text(json.dumps(doc, indent=2))
        csv = out.with_suffix(".csv")
        if table is not None:
            csv.write_text(table.to_csv())
        else:
            csv.write_text(f"metric,value\nmpjpe_mm,{report.mpjpe_mm!r}\npck_pct,{report.pck_pct!r}\n"
                           f"auc_pct,{report.auc_pct!r}\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    graph = _graph(args)
    config, params, _ = load_params(_existing(args.ckpt))
    ds = load_dataset(_existing(args.data), graph, require_target=False)
    pred = predict_batch(ds.inputs(), params, config, graph, flip_test=not args.no_flip) if len(ds) else []
    if len(ds):
        pred[:, graph.root_index] = 0.0  # pose-v1 targets are root-relative
    out = Dataset(
        [PoseSample(s.input2d, np.asarray(p), s.action, s.subject) for s, p in zip(ds.samples, pred)],
        ds.graph_name,
    )
    save_dataset(args.out, out)
    print(f"wrote {len(out)} predictions to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    doc = dict(gradcheck.PROBE_CONFIG)
    if args.config:
        doc.update(json.loads(_existing(args.config).read_text()))
    try:
        config = ModelConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model config: {exc}") from exc
    results = gradcheck.run_suite(config, seed=args.seed, eps=args.eps)
    width = max(len(r.name) for r in results)
    failed = [r for r in results if not r.passed(args.tol)]
    for r in results:
        flag = "ok  " if r.passed(args.tol) else "FAIL"
        print(f"{flag} {r.name:<{width}}  {r.max_rel_error:.3e}  ({r.size} entries)")
    worst = max(results, key=lambda r: r.max_rel_error)
    print(f"worst: {worst.name} {worst.max_rel_error:.3e} (tol {args.tol:g})")
    if failed:
        print(f"gradient check failed for: {', '.join(r.name for r in failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_ablate(args) -> int:
    graph = _graph(args)
    try:
        grid = ablation.load_grid(args.grid)
    except ablation.GridError as exc:
        raise UsageError(str(exc)) from exc
    train_set = load_dataset(_existing(args.data), graph)
    eval_set = load_dataset(_existing(args.eval_data), graph) if args.eval_data else train_set
    mcfg = dataclasses.replace(_model_config(args), num_joints=graph.num_joints)
    tcfg = _train_config(args)
    try:
        rows = ablation.run_grid(grid, train_set, eval_set, mcfg, tcfg, graph)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    table = ablation.format_table(rows)
    print(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table + "\n")
    (out / "ablation.csv").write_text(ablation.to_csv(rows))
    (out / "ablation.json").write_text(json.dumps(
        {"rows": [dataclasses.asdict(r) for r in rows], "ranking": ablation.ranking(rows)}, indent=2
    ))
    return EXIT_OK


def cmd_synth(args) -> int:
    graph = _graph(args)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    ds = synth_generate(args.n, args.seed, graph, with_actions=args.actions)
    save_dataset(args.out, ds)
    print(f"wrote {args.n} synthetic samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="iganet", description="2D-to-3D pose lifting with interweaved GCN/attention blocks")
    parser.add_argument("-v", "--verbose-log", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--data", required=True, help="pose-v1 training file")
    p.add_argument("--eval-data", help="pose-v1 evaluation file (default: training data)")
    p.add_argument("--out", default="runs/train", help="output directory (checkpoint, log)")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--data", required=True, help="pose-v1 file with 3D targets")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", help="JSON report path; a CSV is written next to it")
    p.add_argument("--graph", default="h36m17", help="skeleton name or skeleton JSON path")
    p.add_argument("--no-flip", action="store_true", help="disable flip-merge test augmentation")
    p.add_argument("--verbose", action="store_true", help="also report MPJPE for the other flip setting")
    p.add_argument("--avg-mode", choices=["sample", "row"], default="sample", help="per-action Avg column")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="lift 2D poses to 3D", formatter_class=fmt)
    p.add_argument("--data", required=True, help="pose-v1 file (3D targets optional)")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", required=True, help="output pose-v1 file with predicted 3D")
    p.add_argument("--graph", default="h36m17", help="skeleton name or skeleton JSON path")
    p.add_argument("--no-flip", action="store_true", help="disable flip-merge test augmentation")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    p.add_argument("--config", help="model config JSON overriding the probe config "
                                    f"{gradcheck.PROBE_CONFIG}")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--eps", type=float, default=gradcheck.DEFAULT_EPS, help="central-difference step")
    p.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL, help="max relative error allowed")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare a grid of ablation configs", formatter_class=fmt)
    p.add_argument("--data", required=True, help="pose-v1 training file")
    p.add_argument("--eval-data", help="pose-v1 evaluation file (default: training data)")
    p.add_argument("--grid", default="design", help="grid JSON file, or 'design' for the built-in 7 rows")
    p.add_argument("--out", default="runs/ablate", help="output directory")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate synthetic pose data", formatter_class=fmt)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="output pose-v1 file")
    p.add_argument("--graph", default="h36m17", help="skeleton name or skeleton JSON path")
    p.add_argument("--actions", action="store_true", help="attach cyclic action labels")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose_log:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, PoseFormatError, CheckpointError, SkeletonError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
