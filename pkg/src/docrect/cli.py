"""Command-line surface: warping, rectification, flow conversion, and
batch evaluation.

Exit codes: 0 success, 2 usage/parameter, 3 data/format, 4 internal.
``DOCRECT_THREADS`` overrides ``--workers`` for evaluation.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import flow as fl
from . import imaging, losses, metrics, rectnet, weights
from .errors import DocrectError, ParameterError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
PREVIEW_MAX_SIDE = 512


def _load_image(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParameterError(f"cannot read image file {path}: {exc}") from exc
    return imaging.decode_image(data)


def _save_image(path, plane) -> None:
    suffix = Path(path).suffix.lower()
    fmt = "JPEG" if suffix in (".jpg", ".jpeg") else "PNG"
    Path(path).write_bytes(imaging.encode_image(plane, format=fmt))


def cmd_warp(args) -> int:
    img = _load_image(args.image)
    flow, semantics = fl.read_flow(args.flow)
    if flow.direction != fl.BACKWARD:
        print("error: flow direction must be backward", file=sys.stderr)
        return 2
    if semantics != fl.SEMANTICS_ABSOLUTE:
        print("error: flow must hold absolute coordinates", file=sys.stderr)
        return 2
    _save_image(args.out, fl.apply_backward_flow(img, flow))
    return 0


def _preview(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape[:2]
    side = max(h, w)
    if side <= PREVIEW_MAX_SIDE:
        return plane
    scale = PREVIEW_MAX_SIDE / side
    return imaging.resize_bilinear(plane, max(1, round(h * scale)), max(1, round(w * scale)))


def cmd_rectify(args) -> int:
    if args.iters < 1:
        raise ParameterError(f"--iters must be >= 1, got {args.iters}")
    img = _load_image(args.image)
    store = weights.read_weights(args.weights)
    conf = None
    if args.mask:
        conf = imaging.luma(_load_image(args.mask))
    rectified, trace = rectnet.rectify_document(
        img, store, iterations=args.iters, conf=conf, tau=args.tau
    )
    _save_image(args.out, rectified)
    if args.trace:
        trace_dir = Path(args.trace)
        trace_dir.mkdir(parents=True, exist_ok=True)
        orig_c = imaging.resize_bilinear(img, rectnet.CANONICAL_SIZE, rectnet.CANONICAL_SIZE)
        for k, flow_k in enumerate(trace.flows, start=1):
            fl.write_flow(trace_dir / f"flow_{k:04d}.dsfl", flow_k)
            preview = _preview(fl.apply_backward_flow(orig_c, flow_k))
            _save_image(trace_dir / f"iter_{k:04d}.png", preview)
    return 0


def cmd_flow_convert(args) -> int:
    g, _ = fl.read_flow(args.forward)
    if g.direction != fl.FORWARD:
        print("error: input flow direction must be forward", file=sys.stderr)
        return 2
    backward, coverage = fl.forward_to_backward_with_coverage(g)
    fl.write_flow(args.out, backward)
    h, w = g.shape
    print(
        f"converted {h}x{w} forward flow: splat coverage {coverage:.4f}, "
        f"remaining holes filled by neighbor averaging"
    )
    return 0


def _collect_stems(directory: Path) -> dict[str, Path]:
    stems = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES:
            stems.setdefault(path.stem, path)
    return stems


def _read_pairs_manifest(path: Path):
    pairs = []
    base = path.parent
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 5):
            raise ParameterError(
                f"{path}:{lineno}: expected 'id<TAB>pred<TAB>gt[<TAB>pred_text<TAB>gt_text]'"
            )
        resolved = [parts[0]] + [str((base / p) if not os.path.isabs(p) else p) for p in parts[1:]]
        pairs.append(tuple(resolved) + (None,) * (6 - len(parts) - 1))
    return pairs


def _eval_one(task):
    pair_id, pred_path, gt_path, pred_text_path, gt_text_path, config = task
    try:
        gt_img = _load_image(gt_path)
        pred_img = _load_image(pred_path)
        gt_text = Path(gt_text_path).read_text() if gt_text_path else None
        hyp_text = Path(pred_text_path).read_text() if pred_text_path else None
        return metrics.evaluate_pair(
            gt_img, pred_img, gt_text=gt_text, hyp_text=hyp_text,
            config=config, pair_id=pair_id,
        )
    except Exception as exc:  # per-image isolation: one bad pair must not abort
        return metrics.PairMetrics(id=pair_id, error=f"{type(exc).__name__}: {exc}")


def _build_tasks(args):
    config = metrics.EvalConfig(target_area=args.target_area)
    if args.pairs:
        tasks = []
        for pair_id, pred, gt, pred_text, gt_text in _read_pairs_manifest(Path(args.pairs)):
            tasks.append((pair_id, pred, gt, pred_text, gt_text, config))
        return tasks
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        raise ParameterError("--pred-dir and --gt-dir must be directories")
    preds = _collect_stems(pred_dir)
    gts = _collect_stems(gt_dir)
    shared = sorted(set(preds) & set(gts))
    for stem in sorted(set(preds) ^ set(gts)):
        print(f"unmatched: {stem}", file=sys.stderr)
    tasks = []
    for stem in shared:
        pred_text = gt_text = None
        if args.text_pred_dir:
            cand = Path(args.text_pred_dir) / f"{stem}.txt"
            pred_text = str(cand) if cand.exists() else None
        if args.text_gt_dir:
            cand = Path(args.text_gt_dir) / f"{stem}.txt"
            gt_text = str(cand) if cand.exists() else None
        tasks.append((stem, str(preds[stem]), str(gts[stem]), pred_text, gt_text, config))
    return tasks


def cmd_eval(args) -> int:
    tasks = _build_tasks(args)
    if not tasks:
        print("error: no pairs", file=sys.stderr)
        return 2
    workers = int(os.environ.get("DOCRECT_THREADS", args.workers))
    workers = max(1, min(workers, len(tasks)))
    if workers == 1:
        rows = [_eval_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_eval_one, tasks))
    report = metrics.MetricReport.build(rows, tasks[0][5])
    if args.report:
        text = report.to_csv() if args.format == "csv" else report.to_json()
        Path(args.report).write_text(text)
    for row in report.rows:
        if row.error is not None:
            print(f"failed: {row.id}: {row.error}", file=sys.stderr)
    print(report.summary_line())
    return 3 if report.aggregates["failed"] else 0


def cmd_eval_loss(args) -> int:
    if args.conf:
        conf = imaging.luma(_load_image(args.conf))
        if not args.gt_mask:
            raise ParameterError("--bce evaluation needs --gt-mask")
        mask = (imaging.luma(_load_image(args.gt_mask)) >= 0.5).astype(np.float32)
        print(f"bce {losses.bce_loss(conf, mask):.6f}")
        return 0
    if not args.pred or not args.gt:
        raise ParameterError("flow-loss evaluation needs --pred and --gt")
    gt_flow, _ = fl.read_flow(args.gt)
    gt_backward = fl.FlowField(gt_flow.u, gt_flow.v, fl.BACKWARD)
    gt_forward = None
    if args.gt_forward:
        gf, _ = fl.read_flow(args.gt_forward)
        gt_forward = fl.FlowField(gf.u, gf.v, fl.FORWARD)
    per_iter = []
    for pred_path in args.pred:
        pred, _ = fl.read_flow(pred_path)
        pred_backward = fl.FlowField(pred.u, pred.v, fl.BACKWARD)
        l_f = losses.l1_flow_loss(pred_backward, gt_backward)
        l_line = (
            losses.circle_line_loss(pred_backward, gt_forward) if gt_forward is not None else 0.0
        )
        per_iter.append((l_f, l_line))
    breakdown = losses.total_loss(per_iter, lam=args.lam, alpha=args.alpha)
    for k, item in enumerate(breakdown.per_iteration, start=1):
        print(f"iter {k}: l_f {item.l_f:.6f} l_line {item.l_line:.6f} combined {item.combined:.6f}")
    print(f"total {breakdown.total:.6f} (lambda {args.lam}, alpha {args.alpha})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docrect", description="Document rectification flows, inference, and metrics"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="apply a backward DSFL flow to an image")
    p.add_argument("image")
    p.add_argument("flow")
    p.add_argument("out")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("rectify", help="run progressive rectification inference")
    p.add_argument("image")
    p.add_argument("weights")
    p.add_argument("out")
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--mask", help="confidence map image for background removal")
    p.add_argument("--trace", help="directory for per-iteration flows and previews")
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("flow-convert", help="convert a forward DSFL flow to backward")
    p.add_argument("forward")
    p.add_argument("out")
    p.set_defaults(func=cmd_flow_convert)

    p = sub.add_parser("eval", help="batch-evaluate rectified images against ground truth")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-dir")
    p.add_argument("--pairs", help="TSV manifest: id, pred, gt[, pred_text, gt_text]")
    p.add_argument("--text-pred-dir")
    p.add_argument("--text-gt-dir")
    p.add_argument("--report")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--target-area", type=int, default=metrics.TARGET_AREA,
        help="pixel area images are normalized to before scoring",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-loss", help="evaluate training losses on flows or masks")
    p.add_argument("--pred", action="append", help="predicted backward flow (repeatable)")
    p.add_argument("--gt", help="ground-truth backward flow")
    p.add_argument("--gt-forward", help="ground-truth forward flow for the line loss")
    p.add_argument("--lam", type=float, default=0.85)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--conf", help="confidence map image (BCE mode)")
    p.add_argument("--gt-mask", help="ground-truth mask image (BCE mode)")
    p.set_defaults(func=cmd_eval_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except DocrectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
