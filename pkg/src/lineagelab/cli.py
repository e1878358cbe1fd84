"""Batch entry points: track, propagate, evaluate, plan, simulate,
export, stats.

All thresholds come from an optional JSON config file plus command-line
overrides; the effective configuration is echoed into every output file.
Outputs are canonical and byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import datastore, metrics, simulator
from .lineage import propagate_labels
from .tracking import TrackingError, TrackParams, TrackState

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFLICT = 2


def _load_config(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _track_params(cfg, args):
    base = dict(cfg.get("track", {}))
    for name in ("iou_gate", "centroid_gate", "event_overlap_min",
                 "shape_change_max"):
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
    if getattr(args, "size_ratio_bounds", None):
        base["size_ratio_bounds"] = tuple(args.size_ratio_bounds)
    if "size_ratio_bounds" in base:
        base["size_ratio_bounds"] = tuple(base["size_ratio_bounds"])
    return TrackParams(**base)


def _echo_config(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    return obj


def _write_json(path, payload):
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n")


def cmd_track(args):
    cfg = _load_config(args.config)
    params = _track_params(cfg, args)
    manifest = datastore.load_annotations(args.input)
    try:
        state = TrackState(manifest.as_track_frames(), params)
        forest = state.run()
    except TrackingError as e:
        print(f"track: {e}", file=sys.stderr)
        return EXIT_ERROR
    datastore.save_forest(forest, args.out, roi=manifest.roi,
                          frame_size=manifest.frame_size)
    _write_json(str(args.out) + ".config.json",
                {"command": "track", "params": _echo_config(params),
                 "input": str(args.input)})
    return EXIT_OK


def cmd_propagate(args):
    forest = datastore.load_forest(args.forest)
    seeds = forest.seeds
    if args.seeds:
        seeds = json.loads(Path(args.seeds).read_text())
    result = propagate_labels(forest, seeds)
    if not result.ok:
        _write_json(args.out, {
            "ok": False,
            "conflicts": [{"node": c.node, "labels": sorted(c.labels),
                           "seeds": sorted(c.seeds)} for c in result.conflicts],
        })
        print(f"propagate: {len(result.conflicts)} conflicts", file=sys.stderr)
        return EXIT_CONFLICT
    uncat = sorted(datastore.find_uncategorizable(forest))
    _write_json(args.out, {
        "ok": True,
        "labels": dict(sorted(result.labels.items())),
        "uncategorizable": uncat,
        "seeds": dict(sorted(seeds.items())),
    })
    return EXIT_OK


def _evaluate_frame(pair, match_iou, part_containment):
    frame, dets, gts = pair
    mr = metrics.match_frame(dets, gts, match_iou)
    mr.frame = frame
    return metrics.classify_failures(mr, gts, dets, match_iou,
                                     part_containment)


def cmd_evaluate(args):
    cfg = _load_config(args.config)
    match_iou = args.match_iou if args.match_iou is not None \
        else cfg.get("evaluate", {}).get("match_iou", 0.5)
    part_containment = cfg.get("evaluate", {}).get("part_containment", 0.5)
    gt = datastore.load_annotations(args.gt)
    det = datastore.load_annotations(args.det)
    frames = [f for f in gt.frames if f in set(det.frames)]
    work = [(f, det.cells_by_frame.get(f, []), gt.cells_by_frame.get(f, []))
            for f in frames]
    with ThreadPoolExecutor(max_workers=max(args.jobs, 1)) as pool:
        taxonomies = list(pool.map(
            lambda p: _evaluate_frame(p, match_iou, part_containment), work))
    tax_by_frame = {t.frame: t for t in taxonomies}
    rows = metrics.frame_wise_report(tax_by_frame)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datastore.write_csv(rows, out_dir / "frames.csv")

    totals = {}
    for t in taxonomies:
        for k, v in t.counts().items():
            totals[k] = totals.get(k, 0) + v
    samples = metrics.collect_roc_samples(taxonomies)
    summary = {
        # worker count deliberately not echoed: outputs are identical
        # for any --jobs value
        "config": {"match_iou": match_iou,
                   "part_containment": part_containment},
        "frames": frames,
        "totals": totals,
        "n_roc_samples": len(samples),
    }
    has_pos = any(p for _, p in samples)
    has_neg = any(not p for _, p in samples)
    if has_pos and has_neg:
        curve = metrics.roc_curve(samples)
        summary["auc"] = curve.auc
        summary["partial_auc"] = {
            str(m): dataclasses.asdict(curve.partial_aucs[m])
            for m in metrics.PAPER_FP_MAXIMA}
    else:
        summary["auc"] = None
        summary["partial_auc"] = None
    ipsc_dets = [d for f in frames for d in det.cells_by_frame.get(f, [])
                 if d.label == "iPSC"]
    ipsc_gts = [g for f in frames for g in gt.cells_by_frame.get(f, [])
                if g.label == "iPSC"]
    if ipsc_gts:
        pr = metrics.pr_metrics(ipsc_dets, ipsc_gts, match_iou)
        summary["ap"] = pr.ap
        summary["rp_auc"] = pr.rp_auc
    else:
        summary["ap"] = None
        summary["rp_auc"] = None
    _write_json(out_dir / "summary.json", summary)
    return EXIT_OK


def _parse_frames(spec):
    if "," in spec:
        return [int(f) for f in spec.split(",")]
    if "-" in spec:
        lo, hi = spec.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(spec)]


def cmd_plan(args):
    plan = metrics.subsequence_plan(_parse_frames(args.frames),
                                    args.mode, args.size)
    _write_json(args.out, {
        "mode": plan.mode,
        "size": plan.size,
        "subsequences": plan.subsequences,
        "targets": plan.targets,
    })
    return EXIT_OK


def cmd_simulate(args):
    cfg = _load_config(args.config)
    sim_cfg = dict(cfg.get("simulate", {}))
    if args.seed is not None:
        sim_cfg["rng_seed"] = args.seed
    if args.frames is not None:
        sim_cfg["frame_count"] = args.frames
    if args.cells is not None:
        sim_cfg["initial_cells"] = args.cells
    for key in ("frame_size", "radius_range"):
        if key in sim_cfg:
            sim_cfg[key] = tuple(sim_cfg[key])
    scfg = simulator.ScenarioConfig(**sim_cfg)
    scenario = simulator.generate_scenario(scfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = datastore.SequenceManifest(
        roi=scfg.roi, frame_size=scfg.frame_size,
        frames=[f for f, _ in scenario.frames],
        cells_by_frame={f: cells for f, cells in scenario.frames},
        provenance="tracker")
    datastore.save_annotations(manifest, out_dir / "annotations.jsonl")
    datastore.save_forest(scenario.forest, out_dir / "forest.jsonl",
                          roi=scfg.roi, frame_size=scfg.frame_size)
    if args.detections:
        noise = simulator.DetectionNoise(**cfg.get("noise", {}))
        ds = simulator.synthesize_detections(scenario, noise)
        det_manifest = datastore.SequenceManifest(
            roi=scfg.roi, frame_size=scfg.frame_size,
            frames=sorted(ds.dets_by_frame),
            cells_by_frame=ds.dets_by_frame, provenance="detector")
        datastore.save_annotations(det_manifest, out_dir / "detections.jsonl")
        gt_manifest = datastore.SequenceManifest(
            roi=scfg.roi, frame_size=scfg.frame_size,
            frames=sorted(ds.gts_by_frame),
            cells_by_frame=ds.gts_by_frame, provenance="manual")
        datastore.save_annotations(gt_manifest, out_dir / "gt.jsonl")
        _write_json(out_dir / "expected_counts.json",
                    {"per_frame": {str(k): v for k, v in ds.expected.items()},
                     "totals": ds.expected_totals()})
    _write_json(out_dir / "scenario_config.json", _echo_config(scfg))
    return EXIT_OK


def cmd_export(args):
    if args.kind == "splits":
        splits = datastore.define_splits()
        _write_json(args.out, {name: {"frames": s.frames(),
                                      "size": len(s.frames())}
                               for name, s in splits.items()})
        return EXIT_OK
    manifest = datastore.load_annotations(args.annotations)
    forest = datastore.load_forest(args.forest) if args.forest else None
    if args.kind == "features":
        rows, warnings = datastore.export_features(manifest, forest)
        columns = (["roi", "frame", "id"] + list(datastore.FEATURE_NAMES)
                   + ["label"])
        datastore.write_csv(rows, args.out, columns)
        if warnings:
            _write_json(str(args.out) + ".warnings.json", warnings)
    elif args.kind == "patches":
        records = datastore.export_patches(manifest, forest,
                                           border=args.border)
        _write_json(args.out, records)
    else:
        print(f"export: unknown kind {args.kind}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def cmd_stats(args):
    manifests = [datastore.load_annotations(p) for p in args.annotations]
    stats = datastore.dataset_stats(manifests)
    if args.out:
        _write_json(args.out, stats)
    else:
        print(json.dumps(stats, sort_keys=True, indent=2))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="lineagelab",
        description="cell lineage tracking, label propagation and "
                    "detection evaluation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track a sequence into a lineage forest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--iou-gate", dest="iou_gate", type=float)
    p.add_argument("--centroid-gate", dest="centroid_gate", type=float)
    p.add_argument("--event-overlap-min", dest="event_overlap_min", type=float)
    p.add_argument("--shape-change-max", dest="shape_change_max", type=float)
    p.add_argument("--size-ratio-bounds", dest="size_ratio_bounds",
                   nargs=2, type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("propagate", help="propagate seed labels backward")
    p.add_argument("--forest", required=True)
    p.add_argument("--seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("evaluate", help="evaluate detections against GT")
    p.add_argument("--gt", required=True)
    p.add_argument("--det", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--match-iou", dest="match_iou", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plan", help="subsequential inference plan")
    p.add_argument("--frames", required=True,
                   help="comma list or lo-hi range, e.g. 146-162")
    p.add_argument("--mode", choices=["incremental", "fixed"], required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--cells", type=int)
    p.add_argument("--detections", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="export splits, features or patches")
    p.add_argument("--kind", choices=["splits", "features", "patches"],
                   required=True)
    p.add_argument("--annotations")
    p.add_argument("--forest")
    p.add_argument("--border", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("stats", help="dataset census")
    p.add_argument("annotations", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
