"""``densim`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import aggregation, calibration, theory
from .experiment import (SimConfig, asymptotic_error, compare_to_theory, run_simulation,
                         sweep, theory_row, write_json, write_sweep_outputs)
from .sensing import read_snapshot_csv, write_snapshot_csv


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _load_config(args) -> SimConfig:
    cfg = SimConfig.from_json(args.config) if args.config else SimConfig()
    overrides = {k: getattr(args, k) for k in ("steps", "coarsen", "stride") if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    if args.p is not None:
        cfg = replace(cfg, p=args.p)
    if args.lam is not None:
        cfg = replace(cfg, lam=args.lam)
    res = run_simulation(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.series.write_csv(out / "decay_0-0_0.csv")
    write_snapshot_csv(res.field, out / "snapshot.csv")
    h, c = theory.mean_density(res.phi), theory.shape_c(res.phi)
    report = {
        "config": cfg.to_dict(),
        "asymptotic_error": asymptotic_error(res.series, cfg.tail),
        "final_error": float(res.series.errors[-1]),
        "h": h,
        "c": c,
        **theory_row(cfg.p, cfg.lam, h, c),
    }
    write_json(report, out / "report.json")
    print(json.dumps({k: report[k] for k in ("asymptotic_error", "closed_form", "bound_loose")}))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    table = sweep(cfg, args.p, args.lam, args.runs, seed_root=cfg.seed, workers=args.workers)
    report = compare_to_theory(table)
    write_sweep_outputs(table, report, args.out)
    print(f"wrote {len(table.cells)} cells to {args.out}; "
          f"{report['n_exceeding_bound']} above the loose bound")
    return 0


def cmd_theory(args) -> int:
    out: dict = {}
    if args.snapshot:
        snap = read_snapshot_csv(args.snapshot)
        phi = snap["phi"]
        h, c = theory.mean_density(phi), theory.shape_c(phi)
        out["measured_error"] = theory.normalized_error(snap["psi"], phi)
        out["h_sensed"] = theory.mean_density(snap["psi"])
    else:
        if args.h is None or args.c is None:
            raise SystemExit("theory: give --h and --c, or --snapshot")
        h, c = args.h, args.c
    out.update({"p": args.p, "lambda": args.lam, "h": h, "c": c})
    out.update(theory_row(args.p, args.lam, h, c))
    if args.h_hat is not None:
        try:
            out["bound_from_sampled_density"] = theory.bound_from_sampled_density(args.lam, args.h_hat)
            out["h_unbiased"] = theory.unbiased_h(args.h_hat, args.p, args.lam) if args.p > 0 else None
        except theory.UninformativeBound as exc:
            out["bound_from_sampled_density"] = None
            out["note"] = str(exc)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    dets = calibration.load_detections(args.detections)
    gts = calibration.load_ground_truth(args.ground_truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    thresholds = args.thresholds if args.thresholds else np.round(np.arange(0, 11) / 10, 1).tolist()
    curve = calibration.pr_curve(dets, gts, thresholds, min_height=args.min_height, iou_min=args.iou_min)
    calibration.write_pr_csv(curve, out / "pr.csv")
    tp = fp = fn = 0
    for img in set(dets) | set(gts):
        m = calibration.match_detections(dets.get(img, []), gts.get(img, []), args.iou_min,
                                         args.min_height, args.score_min)
        a, b, c = m.counts
        tp, fp, fn = tp + a, fp + b, fn + c
    precision, recall = calibration.precision_recall(tp, fp, fn)
    report = {
        "operating_point": {"score_min": args.score_min, "min_height": args.min_height,
                            "iou_min": args.iou_min, "tp": tp, "fp": fp, "fn": fn,
                            "precision": precision, "recall": recall},
        "pr_curve": [{"threshold": t, "precision": p, "recall": r} for t, p, r in curve],
    }
    pairs = calibration.image_counts(dets, gts, args.min_height, args.score_min)
    try:
        fit = calibration.fit_sensing_params(pairs)
    except np.linalg.LinAlgError as exc:
        report["fit_error"] = str(exc)
    else:
        h_hat = args.h_hat if args.h_hat is not None else float(np.mean([m for _, m in pairs]))
        report["calibration"] = calibration.calibration_report(fit, h_hat)
    write_json(report, out / "report.json")
    print(json.dumps(report["operating_point"]))
    return 0


def cmd_aggregate(args) -> int:
    rejected: list = []
    records = aggregation.load_records(args.records, strict=not args.lenient,
                                       utc_offset_hours=args.utc_offset, rejected=rejected)
    segments = aggregation.load_segments(args.segments)
    idx = aggregation.build_index(segments, args.spacing)
    res = aggregation.aggregate(records, idx, args.max_distance)
    by_hour, by_weekday = aggregation.temporal_histograms(records, args.utc_offset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aggregation.export_heatmap(res.stats, segments, out / "heatmap.geojson", out / "segments.csv")
    write_json({
        "n_records": res.total,
        "n_assigned": res.total - res.dropped,
        "n_dropped": res.dropped,
        "dropped_record_ids": res.dropped_ids,
        "rejected_rows": [{"line": n, "error": msg} for n, msg in rejected],
        "n_segments_with_records": len(res.stats),
        "by_hour": by_hour.tolist(),
        "by_weekday": by_weekday.tolist(),
    }, out / "report.json")
    print(f"{res.total - res.dropped}/{res.total} records assigned to {len(res.stats)} segments")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="densim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--coarsen", type=int)
        sp.add_argument("--stride", type=int)

    sp = sub.add_parser("simulate", help="run one seeded simulation")
    sim_common(sp)
    sp.add_argument("--p", type=float)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--out", default="densim_out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="sweep (p, lambda) cells")
    sim_common(sp)
    sp.add_argument("--p", type=_floats, required=True, help="e.g. '0.2,0.5,1.0'")
    sp.add_argument("--lambda", dest="lam", type=_floats, required=True)
    sp.add_argument("--runs", type=int, default=5)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default="sweep_out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("theory", help="closed-form error and bounds as JSON")
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--h", type=float)
    sp.add_argument("--c", type=float)
    sp.add_argument("--h-hat", type=float)
    sp.add_argument("--snapshot", help="snapshot CSV from 'simulate'")
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("evaluate", help="score detections and fit (p, lambda)")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--ground-truth", required=True)
    sp.add_argument("--score-min", type=float, default=calibration.DEFAULT_SCORE_MIN)
    sp.add_argument("--min-height", type=float, default=calibration.DEFAULT_MIN_HEIGHT)
    sp.add_argument("--iou-min", type=float, default=calibration.DEFAULT_IOU_MIN)
    sp.add_argument("--thresholds", type=_floats)
    sp.add_argument("--h-hat", type=float)
    sp.add_argument("--out", default="evaluate_out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("aggregate", help="aggregate detection counts by street segment")
    sp.add_argument("--records", required=True)
    sp.add_argument("--segments", required=True)
    sp.add_argument("--spacing", type=float, default=5.0)
    sp.add_argument("--max-distance", type=float, default=30.0)
    sp.add_argument("--utc-offset", type=float, default=0.0)
    sp.add_argument("--lenient", action="store_true")
    sp.add_argument("--out", default="aggregate_out")
    sp.set_defaults(func=cmd_aggregate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
