"""Command-line entry point: ``focaldet {eval,train-toy,cdf,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training diverged.
Failures print one JSON object on stderr, e.g.
``{"error": "data", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import __version__
from .analysis import (NEGATIVE, POSITIVE, TABLE_GRID, cdf_curves, curves_to_csv, hardest_share,
                       ks_distance, pair_grid, sample_anchors, sweep, sweep_to_csv)
from .detector import ToyModel, TrainConfig, predict, train
from .evaluation import DEFAULT_IOU, map_eval, recall_at
from .focal import FocalParams
from .ingest import AnnotationError, DetectionFormatError, load_sequences, read_detections
from .structures import CLASS_NAMES
from .synth import SceneConfig, gen_dataset, iter_scenes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

SHIPPED_CHECKPOINT = "toy_gamma2.ckpt"
# scene-index offsets keep training, held-out and analysis scenes disjoint
HELDOUT_OFFSET = 1_000_000
ANALYSIS_OFFSET = 2_000_000

log = logging.getLogger("focaldet")


class CommandError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind, self.code = kind, code


def _usage(msg):
    return CommandError("usage", msg, EXIT_USAGE)


def _data(msg):
    return CommandError("data", msg, EXIT_DATA)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _usage(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _focal(args) -> FocalParams:
    try:
        return FocalParams(gamma=args.gamma, alpha=args.alpha, prior=args.prior)
    except ValueError as exc:
        raise _usage(str(exc)) from None


def _schedule(iters: int, seed: int, hidden: int, focal: FocalParams) -> TrainConfig:
    """Full-length schedule shape scaled to ``iters``: drops at 7/11 and 9/11 of the run."""
    if iters < 0:
        raise _usage("--iters must be >= 0")
    drops = tuple(d for d in (iters * 7 // 11, iters * 9 // 11) if 0 < d < iters)
    return TrainConfig(total_iterations=iters, lr_drop_iterations=tuple(sorted(set(drops))),
                       seed=seed, hidden=hidden, focal=focal)


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def shipped_checkpoint() -> Path:
    return Path(str(resources.files("focaldet") / "data" / SHIPPED_CHECKPOINT))


def cmd_eval(args) -> list[Path]:
    if not 0.0 < args.iou <= 1.0:
        raise _usage(f"--iou must lie in (0, 1], got {args.iou}")
    for p in [*args.gt, args.det]:
        if not Path(p).is_file():
            raise _data(f"file not found: {p}")
    try:
        seqs = load_sequences(args.gt)
        dets = read_detections(Path(args.det).read_text())
    except (AnnotationError, DetectionFormatError) as exc:
        raise _data(str(exc)) from None
    if not any(s.frames for s in seqs):
        raise _data("ground truth contains zero usable frames")
    key = (lambda name, num: (name, num)) if len(seqs) > 1 else None
    gts = [g for s in seqs for g in s.ground_truths(key)]
    result = map_eval(dets, gts, range(len(CLASS_NAMES)), args.iou)
    table = result.to_table(args.method)
    out = _outdir(args.out)
    (out / "eval.json").write_text(result.to_json() + "\n")
    (out / "eval_table.txt").write_text(table)
    sys.stdout.write(table)
    return [out / "eval.json", out / "eval_table.txt"]


def cmd_train_toy(args) -> list[Path]:
    focal = _focal(args)
    if args.scenes < 1:
        raise _usage("--scenes must be >= 1")
    cfg = _schedule(args.iters, args.seed, args.hidden, focal)
    scene_cfg = SceneConfig(seed=args.seed)
    grid = scene_cfg.default_grid()
    data = gen_dataset(scene_cfg, args.scenes, grid)
    model, trace = train(cfg, data, grid)
    out = _outdir(args.out)
    model.save(out / "model.ckpt")
    (out / "trace.csv").write_text(trace.to_csv())
    summary = {"status": trace.status, "iterations_run": trace.iterations_run,
               "diverged_at": trace.diverged_at, "gamma": focal.gamma, "alpha": focal.alpha,
               "prior": focal.prior, "seed": args.seed}
    if not trace.diverged and args.eval_scenes:
        held_out = gen_dataset(scene_cfg, args.eval_scenes, grid, start=HELDOUT_OFFSET)
        dets, gts = [], []
        for s in held_out:
            dets += predict(model, s, grid)
            gts += s.ground_truths
        summary["recall@0.5"] = recall_at(dets, gts, 0.5)
        if summary["recall@0.5"] < 0.1:
            print(f"warning: degenerate model, foreground recall {summary['recall@0.5']:.3f}", file=sys.stderr)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    artifacts = [out / "model.ckpt", out / "trace.csv", out / "summary.json"]
    if trace.diverged:
        raise CommandError("diverged", f"training diverged at iteration {trace.diverged_at}", EXIT_DIVERGED)
    return artifacts


def cmd_cdf(args) -> list[Path]:
    path = Path(args.model) if args.model else shipped_checkpoint()
    if not path.is_file():
        raise _data(f"checkpoint not found: {path}")
    if args.n_pos < 1 or args.n_neg < 1:
        raise _usage("--n-pos and --n-neg must be >= 1")
    try:
        model = ToyModel.load(path)
    except ValueError as exc:
        raise _data(f"{path}: {exc}") from None
    scene_cfg = SceneConfig(seed=args.seed, class_count=model.num_classes, feature_dim=model.feature_dim)
    grid = scene_cfg.default_grid()
    scenes = iter_scenes(scene_cfg, args.max_scenes, grid, start=ANALYSIS_OFFSET)
    sample = sample_anchors(model, scenes, grid, args.n_neg, args.n_pos, seed=args.seed, stop_when_full=True)
    if not sample.complete:
        print(f"warning: only {sample.pos_available} positive / {sample.neg_available} negative anchors "
              f"available", file=sys.stderr)
    curves = cdf_curves(sample, args.gammas, alpha=args.alpha)
    out = _outdir(args.out)
    (out / "cdf.csv").write_text(curves_to_csv(curves, args.points))
    summary = {"n_pos": int(sample.pos_logits.shape[0]), "n_neg": int(sample.neg_logits.shape[0]),
               "complete": sample.complete, "gammas": list(args.gammas), "hardest_share": {}}
    for g in args.gammas:
        pos, neg = sample.losses(FocalParams(gamma=g, alpha=args.alpha))
        summary["hardest_share"][f"{g:g}"] = {"positive@0.18": hardest_share(pos, 0.18),
                                              "negative@0.1": hardest_share(neg, 0.1)}
    by = {(c.gamma, c.group): c for c in curves}
    if 0.0 in args.gammas and 2.0 in args.gammas:
        summary["ks_negative_gamma0_vs_gamma2"] = ks_distance(by[0.0, NEGATIVE], by[2.0, NEGATIVE])
    pos_curves = [c for c in curves if c.group == POSITIVE]
    summary["ks_positive_max_pairwise"] = max(
        (ks_distance(a, b) for i, a in enumerate(pos_curves) for b in pos_curves[i + 1:]), default=0.0)
    (out / "cdf_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return [out / "cdf.csv", out / "cdf_summary.json"]


def cmd_sweep(args) -> list[Path]:
    try:
        cells = pair_grid(args.gammas, args.alphas)
        base = _schedule(args.iters, args.seed, args.hidden, FocalParams(prior=args.prior))
        for g, a in cells:
            FocalParams(gamma=g, alpha=a, prior=args.prior)
    except ValueError as exc:
        raise _usage(str(exc)) from None
    scene_cfg = SceneConfig(seed=args.seed)
    grid = scene_cfg.default_grid()
    train_data = gen_dataset(scene_cfg, args.scenes, grid)
    eval_data = gen_dataset(scene_cfg, args.eval_scenes, grid, start=HELDOUT_OFFSET)
    rows = sweep([g for g, _ in cells], [a for _, a in cells], base, train_data, eval_data, grid,
                 iou_thr=args.iou, workers=args.workers)
    out = _outdir(args.out)
    (out / "sweep.csv").write_text(sweep_to_csv(rows))
    sys.stdout.write(sweep_to_csv(rows))
    return [out / "sweep.csv"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="focaldet", description="Focal-loss dense detection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", help="score JSON-lines detections against DETRAC XML annotations")
    p.add_argument("--gt", nargs="+", required=True, help="DETRAC XML annotation files")
    p.add_argument("--det", required=True, help="detections in JSON-lines format")
    p.add_argument("--iou", type=float, default=DEFAULT_IOU, help="IoU threshold (default %(default)s)")
    p.add_argument("--method", default="detector", help="row label in the results table")
    p.add_argument("--out", required=True, help="output directory for eval.json and eval_table.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="train the toy detector on synthetic scenes")
    p.add_argument("--gamma", type=float, default=2.0, help="focusing exponent (default %(default)s)")
    p.add_argument("--alpha", type=float, default=0.25, help="foreground weight (default %(default)s)")
    p.add_argument("--prior", type=float, default=0.01, help="initial foreground probability (default %(default)s)")
    p.add_argument("--iters", type=int, default=11_000, help="SGD iterations (default %(default)s)")
    p.add_argument("--hidden", type=int, default=0, help="hidden width, 0 for linear (default %(default)s)")
    p.add_argument("--scenes", type=int, default=128, help="training scenes (default %(default)s)")
    p.add_argument("--eval-scenes", type=int, default=40, help="held-out scenes for the recall check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for model.ckpt, trace.csv, summary.json")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("cdf", help="loss CDFs of a trained toy model across gammas")
    p.add_argument("--model", help="checkpoint (default: the shipped gamma=2 model)")
    p.add_argument("--gammas", type=_floats, default=[0.0, 0.5, 1.0, 2.0])
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--n-pos", type=int, default=10_000, help="positive anchors sampled (default %(default)s)")
    p.add_argument("--n-neg", type=int, default=1_000_000, help="negative anchors sampled (default %(default)s)")
    p.add_argument("--max-scenes", type=int, default=5000, help="upper bound on scenes drawn")
    p.add_argument("--points", type=int, default=1000, help="points per exported curve")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for cdf.csv and cdf_summary.json")
    p.set_defaults(func=cmd_cdf)

    p = sub.add_parser("sweep", help="train one toy model per (gamma, alpha) row and report mAP")
    p.add_argument("--gammas", type=_floats, default=[g for g, _ in TABLE_GRID])
    p.add_argument("--alphas", type=_floats, default=[a for _, a in TABLE_GRID],
                   help="one alpha per gamma, or a single shared alpha")
    p.add_argument("--prior", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=11_000)
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--scenes", type=int, default=128)
    p.add_argument("--eval-scenes", type=int, default=40)
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for toy mAP")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for sweep.csv")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return EXIT_OK
    except CommandError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
