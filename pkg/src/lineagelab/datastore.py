"""File formats, dataset splits and feature/patch export.

Annotations and detections share one line-delimited JSON format: a `meta`
record first, then one `cell` record per instance. Forests add `edge` and
`seed` records. Serialization is canonical (sorted keys, sorted records,
fixed float formatting) so identical data always produces identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import FEATURE_NAMES, GeometryError, Mask, dilate_bbox, shape_features
from .lineage import LineageForest, find_uncategorizable
from .tracking import CellInstance


class DatastoreError(ValueError):
    pass


# Paper-default frame universe and splits
FRAME_RANGE = (146, 275)
BLURRY_FRAMES = (155, 186, 189)
EARLY_RANGE = (163, 202)
LATE_RANGE = (203, 275)
TEST_RANGE = (146, 162)


@dataclass
class SequenceManifest:
    roi: str
    frame_size: tuple
    frames: list  # strictly increasing frame indices
    cells_by_frame: dict = field(default_factory=dict)
    provenance: str = "manual"  # manual | tracker | detector
    image_paths: dict = field(default_factory=dict)  # frame -> relative path

    def __post_init__(self):
        if list(self.frames) != sorted(set(self.frames)):
            raise DatastoreError("frame ids must be strictly increasing")

    def all_cells(self):
        for f in self.frames:
            yield from self.cells_by_frame.get(f, [])

    def as_track_frames(self):
        return [(f, list(self.cells_by_frame.get(f, []))) for f in self.frames]


def _cell_record(c: CellInstance):
    rec = {
        "type": "cell",
        "roi": c.roi,
        "frame": c.frame,
        "id": c.id,
        "polygon": [[round(float(x), 4), round(float(y), 4)]
                    for x, y in c.mask.polygon],
        "label": c.label if c.label in ("iPSC", "DfC") else None,
        "confidence": None if c.confidence is None
        else round(float(c.confidence), 6),
        "track": c.track,
    }
    return rec


def _cell_from_record(rec, frame_size):
    required = ("roi", "frame", "id", "polygon")
    for key in required:
        if key not in rec:
            raise DatastoreError(
                f"cell record {rec.get('id', '?')!r} missing field {key!r}")
    try:
        mask = Mask(rec["polygon"], frame_size)
    except GeometryError as e:
        raise DatastoreError(f"cell record {rec['id']!r}: {e}") from e
    return CellInstance(rec["id"], rec["frame"], rec["roi"], mask,
                        label=rec.get("label") or "Unlabeled",
                        confidence=rec.get("confidence"),
                        track=rec.get("track"))


def _dump_line(rec):
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def save_annotations(m: SequenceManifest, path):
    path = Path(path)
    lines = [_dump_line({
        "type": "meta",
        "kind": "annotations",
        "roi": m.roi,
        "frame_size": list(m.frame_size),
        "frames": list(m.frames),
        "provenance": m.provenance,
        "image_paths": {str(k): v for k, v in sorted(m.image_paths.items())},
    })]
    for f in m.frames:
        for c in sorted(m.cells_by_frame.get(f, []), key=lambda c: c.id):
            lines.append(_dump_line(_cell_record(c)))
    path.write_text("\n".join(lines) + "\n")


def load_annotations(path) -> SequenceManifest:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DatastoreError(f"{path}: empty file, missing meta record")
    meta = json.loads(lines[0])
    if meta.get("type") != "meta":
        raise DatastoreError(f"{path}: first record must be meta")
    frame_size = tuple(meta["frame_size"])
    frames = list(meta["frames"])
    m = SequenceManifest(
        roi=meta["roi"], frame_size=frame_size, frames=frames,
        provenance=meta.get("provenance", "manual"),
        image_paths={int(k): v for k, v in meta.get("image_paths", {}).items()})
    for i, ln in enumerate(lines[1:], start=2):
        rec = json.loads(ln)
        if rec.get("type") != "cell":
            continue
        cell = _cell_from_record(rec, frame_size)
        if cell.frame not in frames:
            raise DatastoreError(
                f"{path}:{i}: cell {cell.id!r} references unlisted frame "
                f"{cell.frame}")
        m.cells_by_frame.setdefault(cell.frame, []).append(cell)
    for f in m.cells_by_frame:
        m.cells_by_frame[f].sort(key=lambda c: c.id)
    return m


def save_forest(forest: LineageForest, path, roi="", frame_size=(0, 0)):
    path = Path(path)
    lines = [_dump_line({
        "type": "meta",
        "kind": "forest",
        "roi": roi,
        "frame_size": list(frame_size),
        "final_frame": forest.final_frame,
        "frames": sorted({c.frame for c in forest.nodes.values()}),
    })]
    for nid in sorted(forest.nodes):
        lines.append(_dump_line(_cell_record(forest.nodes[nid])))
    for e, l, k in sorted(forest.edges):
        lines.append(_dump_line(
            {"type": "edge", "earlier": e, "later": l, "kind": k}))
    for nid in sorted(forest.seeds):
        lines.append(_dump_line(
            {"type": "seed", "node": nid, "label": forest.seeds[nid]}))
    path.write_text("\n".join(lines) + "\n")


def load_forest(path) -> LineageForest:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    meta = json.loads(lines[0])
    if meta.get("kind") != "forest":
        raise DatastoreError(f"{path}: not a forest file")
    forest = LineageForest(final_frame=meta["final_frame"])
    frame_size = tuple(meta["frame_size"])
    for ln in lines[1:]:
        rec = json.loads(ln)
        if rec["type"] == "cell":
            forest.add_node(_cell_from_record(rec, frame_size))
        elif rec["type"] == "edge":
            forest.add_edge(rec["earlier"], rec["later"], rec["kind"])
        elif rec["type"] == "seed":
            forest.seeds[rec["node"]] = rec["label"]
    return forest


@dataclass(frozen=True)
class SplitSpec:
    name: str
    start: int
    end: int  # inclusive
    exclude: tuple = ()

    def __post_init__(self):
        for f in self.exclude:
            if not (self.start <= f <= self.end):
                raise DatastoreError(
                    f"excluded frame {f} outside split {self.name}")

    def frames(self):
        return [f for f in range(self.start, self.end + 1)
                if f not in self.exclude]


def define_splits(custom=None):
    """Default early/late/test splits; sizes (38, 73, 16)."""
    if custom is None:
        splits = [
            SplitSpec("early", *EARLY_RANGE,
                      exclude=tuple(f for f in BLURRY_FRAMES
                                    if EARLY_RANGE[0] <= f <= EARLY_RANGE[1])),
            SplitSpec("late", *LATE_RANGE,
                      exclude=tuple(f for f in BLURRY_FRAMES
                                    if LATE_RANGE[0] <= f <= LATE_RANGE[1])),
            SplitSpec("test", *TEST_RANGE,
                      exclude=tuple(f for f in BLURRY_FRAMES
                                    if TEST_RANGE[0] <= f <= TEST_RANGE[1])),
        ]
    else:
        splits = list(custom)
    seen = {}
    for s in splits:
        for f in s.frames():
            if f in seen:
                raise DatastoreError(
                    f"frame {f} in both {seen[f]!r} and {s.name!r}")
            seen[f] = s.name
    return {s.name: s for s in splits}


def export_patches(m: SequenceManifest, forest: LineageForest = None,
                   border=5):
    """One patch record per labeled, categorizable cell.

    Pixel crops are only referenced when the manifest lists image paths;
    otherwise records are emitted without payload and flagged.
    """
    uncat = find_uncategorizable(forest) if forest is not None else set()
    records = []
    for c in m.all_cells():
        if c.label not in ("iPSC", "DfC") or c.id in uncat:
            continue
        box = dilate_bbox(c.bbox, border, m.frame_size)
        records.append({
            "roi": m.roi,
            "frame": c.frame,
            "id": c.id,
            "label": c.label,
            "bbox": [box.x_min, box.y_min, box.x_max, box.y_max],
            "image": m.image_paths.get(c.frame),
            "has_pixels": c.frame in m.image_paths,
        })
    return records


def export_features(m: SequenceManifest, forest: LineageForest = None):
    """Feature table rows (7 shape descriptors + label) per categorizable
    cell; degenerate masks are skipped and reported as warnings."""
    uncat = find_uncategorizable(forest) if forest is not None else set()
    rows, warnings = [], []
    for c in m.all_cells():
        if c.label not in ("iPSC", "DfC") or c.id in uncat:
            continue
        try:
            feats = shape_features(c.mask)
        except GeometryError as e:
            warnings.append({"roi": m.roi, "frame": c.frame, "id": c.id,
                             "reason": str(e)})
            continue
        row = {"roi": m.roi, "frame": c.frame, "id": c.id}
        for name in FEATURE_NAMES:
            row[name] = getattr(feats, name)
        row["label"] = c.label
        rows.append(row)
    return rows, warnings


def write_csv(rows, path, columns=None):
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k))
                             for k in columns})


def dataset_stats(manifests):
    """Sequence/frame/cell census plus class balance."""
    n_frames = 0
    n_cells = 0
    labels = {"iPSC": 0, "DfC": 0, "unlabeled": 0}
    for m in manifests:
        n_frames += len(m.frames)
        for c in m.all_cells():
            n_cells += 1
            if c.label in labels:
                labels[c.label] += 1
            else:
                labels["unlabeled"] += 1
    total_labeled = labels["iPSC"] + labels["DfC"]
    return {
        "sequences": len(manifests),
        "frames": n_frames,
        "cells": n_cells,
        "labels": labels,
        "dfc_fraction": (labels["DfC"] / total_labeled
                         if total_labeled else None),
    }
