"""Detection evaluation: GT matching, failure taxonomy, ROC with partial
AUCs, precision-recall, frame-wise reports and subsequential-inference
planning.

Confidence values are scores for the positive (iPSC) class. Failure
classes follow the taxonomy: FP-CLS (GT DfC predicted iPSC), FP-DUP
(extra matched-quality detection of an already-matched GT iPSC), FP-NEX
(no corresponding GT cell; WHOLE vs PART by containment in a labeled GT
mask), FN-CLS (GT iPSC predicted DfC), FN-DET (GT iPSC undetected).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry

IPSC = "iPSC"
DFC = "DfC"


class MetricsError(ValueError):
    pass


@dataclass
class MatchResult:
    frame: int
    matches: list  # (det_id, gt_id, iou)
    unmatched_dets: list
    unmatched_gts: list


def match_frame(dets, gts, match_iou=0.5) -> MatchResult:
    """Greedy class-agnostic one-to-one matching by descending IOU.

    Pairs with IOU >= match_iou are eligible (boundary inclusive).
    """
    dets = sorted(dets, key=lambda c: c.id)
    gts = sorted(gts, key=lambda c: c.id)
    frame = dets[0].frame if dets else (gts[0].frame if gts else -1)
    pairs = []
    for d in dets:
        for g in gts:
            v = geometry.iou(d.mask, g.mask)
            if v >= match_iou:
                pairs.append((-v, d.id, g.id))
    pairs.sort()
    used_d, used_g = set(), set()
    matches = []
    for neg_v, did, gid in pairs:
        if did in used_d or gid in used_g:
            continue
        used_d.add(did)
        used_g.add(gid)
        matches.append((did, gid, -neg_v))
    return MatchResult(
        frame=frame,
        matches=matches,
        unmatched_dets=[d.id for d in dets if d.id not in used_d],
        unmatched_gts=[g.id for g in gts if g.id not in used_g],
    )


@dataclass
class FailureTaxonomy:
    """Partition of one frame's detections and GT iPSCs.

    Detection side: every detection is in exactly one of tp_dets, fp_cls,
    fp_dup, fp_nex_whole, fp_nex_part (tp_dets holds all matched,
    non-duplicate detections that are not FP-CLS, including the detections
    behind FN-CLS entries). GT side: every GT iPSC is in exactly one of
    tp_ipsc, fn_cls, fn_det.
    """

    frame: int
    tp_dets: list = field(default_factory=list)
    fp_cls: list = field(default_factory=list)
    fp_dup: list = field(default_factory=list)
    fp_nex_whole: list = field(default_factory=list)
    fp_nex_part: list = field(default_factory=list)
    tp_ipsc: list = field(default_factory=list)
    fn_cls: list = field(default_factory=list)
    fn_det: list = field(default_factory=list)
    # (confidence, is_gt_ipsc) for every matched detection on a labeled GT
    roc_samples: list = field(default_factory=list)

    def counts(self):
        return {
            "TP": len(self.tp_dets),
            "FP-CLS": len(self.fp_cls),
            "FP-DUP": len(self.fp_dup),
            "FP-NEX-WHOLE": len(self.fp_nex_whole),
            "FP-NEX-PART": len(self.fp_nex_part),
            "TP-iPSC": len(self.tp_ipsc),
            "FN-CLS": len(self.fn_cls),
            "FN-DET": len(self.fn_det),
        }


def classify_failures(mr: MatchResult, gts, dets, match_iou=0.5,
                      part_containment=0.5) -> FailureTaxonomy:
    """Partition detections and GT iPSCs into the failure taxonomy."""
    gt_by_id = {g.id: g for g in gts}
    det_by_id = {d.id: d for d in dets}
    for g in gts:
        if g.label not in (IPSC, DFC, None, "Unlabeled"):
            raise MetricsError(f"unknown GT label {g.label!r}")
    for d in dets:
        if d.label not in (IPSC, DFC):
            raise MetricsError(f"unknown predicted label {d.label!r}")

    tax = FailureTaxonomy(frame=mr.frame)
    matched_gt = {}
    for did, gid, _ in mr.matches:
        matched_gt[gid] = did
    labeled_gts = [g for g in gts if g.label in (IPSC, DFC)]

    for did, gid, _ in sorted(mr.matches):
        d, g = det_by_id[did], gt_by_id[gid]
        if g.label not in (IPSC, DFC):
            # detection of an uncategorizable cell: no label to judge
            tax.fp_nex_whole.append(did)
            continue
        tax.roc_samples.append((d.confidence, g.label == IPSC))
        if g.label == DFC and d.label == IPSC:
            tax.fp_cls.append(did)
        else:
            tax.tp_dets.append(did)
        if g.label == IPSC:
            if d.label == IPSC:
                tax.tp_ipsc.append(gid)
            else:
                tax.fn_cls.append(gid)

    for did in sorted(mr.unmatched_dets):
        d = det_by_id[did]
        dup = False
        for gid, _ in sorted(matched_gt.items()):
            g = gt_by_id[gid]
            if g.label == IPSC and geometry.iou(d.mask, g.mask) >= match_iou:
                dup = True
                break
        if dup:
            tax.fp_dup.append(did)
            continue
        containment = 0.0
        for g in labeled_gts:
            inter = geometry.intersection_area(d.mask, g.mask)
            containment = max(containment, inter / d.mask.area)
        if containment >= part_containment:
            tax.fp_nex_part.append(did)
        else:
            tax.fp_nex_whole.append(did)

    for gid in sorted(mr.unmatched_gts):
        if gt_by_id[gid].label == IPSC:
            tax.fn_det.append(gid)
    return tax


def collect_roc_samples(taxonomies):
    """(confidence, is_gt_iPSC) pairs from the TP / FP-CLS / FN-CLS
    populations; FP-NEX, FP-DUP and FN-DET carry no usable sample."""
    out = []
    for tax in taxonomies:
        out.extend(tax.roc_samples)
    return out


PAPER_FP_MAXIMA = (0.001, 0.01, 0.1)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    partial_aucs: dict = field(default_factory=dict)


def roc_curve(samples) -> RocCurve:
    """ROC over descending unique scores; tied scores form one step."""
    if not samples:
        raise MetricsError("no samples")
    scores = np.array([s for s, _ in samples], dtype=np.float64)
    pos = np.array([bool(p) for _, p in samples])
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes; got a single class")
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    pos = pos[order]
    # one operating point per unique score
    distinct = np.r_[np.flatnonzero(np.diff(scores)), len(scores) - 1]
    tp = np.cumsum(pos)[distinct]
    fp = np.cumsum(~pos)[distinct]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thr = np.r_[np.inf, scores[distinct]]
    auc = float(np.trapezoid(tpr, fpr))
    curve = RocCurve(fpr=fpr, tpr=tpr, thresholds=thr, auc=auc)
    curve.partial_aucs = {m: partial_auc(curve, m) for m in PAPER_FP_MAXIMA}
    return curve


@dataclass(frozen=True)
class PartialAuc:
    fp_max: float
    raw: float
    normalized: float
    mcclish: float


def partial_auc(c: RocCurve, fp_max) -> PartialAuc:
    """Area under the ROC restricted to FPR in [0, fp_max].

    raw: trapezoidal area with linear interpolation at the fp_max
    boundary; normalized: raw / fp_max; mcclish: standardized to [0.5, 1]
    between the chance and perfect curves over the same FPR range.
    """
    if not (0.0 < fp_max <= 1.0):
        raise MetricsError("fp_max must be in (0, 1]")
    fpr, tpr = c.fpr, c.tpr
    if fp_max >= fpr[-1]:
        raw = float(np.trapezoid(tpr, fpr))
    else:
        stop = int(np.searchsorted(fpr, fp_max, side="right"))
        x = fpr[:stop]
        y = tpr[:stop]
        if fpr[stop] > fpr[stop - 1]:
            frac = (fp_max - fpr[stop - 1]) / (fpr[stop] - fpr[stop - 1])
            y_b = tpr[stop - 1] + frac * (tpr[stop] - tpr[stop - 1])
        else:
            y_b = tpr[stop - 1]
        x = np.r_[x, fp_max]
        y = np.r_[y, y_b]
        raw = float(np.trapezoid(y, x))
    normalized = raw / fp_max
    min_area = fp_max * fp_max / 2.0
    max_area = fp_max
    mcclish = 0.5 * (1.0 + (raw - min_area) / (max_area - min_area))
    return PartialAuc(fp_max=fp_max, raw=raw, normalized=normalized,
                      mcclish=mcclish)


@dataclass
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    rp_auc: float


def pr_metrics(dets, gts, match_iou=0.5) -> PrCurve:
    """Single-class precision-recall over descending confidence.

    `gts` are the positive GT instances; `dets` are scored detections of
    that class. AP uses the all-point precision envelope; RP-AUC is the
    raw trapezoidal area without the envelope.
    """
    if not gts:
        raise MetricsError("no GT positives")
    gts_by_frame = {}
    for g in gts:
        gts_by_frame.setdefault(g.frame, []).append(g)
    ranked = sorted(dets, key=lambda d: (-d.confidence, d.id))
    matched = set()
    is_tp = np.zeros(len(ranked), dtype=bool)
    for i, d in enumerate(ranked):
        best, best_iou = None, 0.0
        for g in gts_by_frame.get(d.frame, ()):
            if g.id in matched:
                continue
            v = geometry.iou(d.mask, g.mask)
            if v >= match_iou and v > best_iou:
                best, best_iou = g, v
        if best is not None:
            matched.add(best.id)
            is_tp[i] = True
    cum_tp = np.cumsum(is_tp)
    recall = cum_tp / len(gts)
    precision = cum_tp / np.arange(1, len(ranked) + 1)
    if len(ranked) == 0:
        recall = np.array([0.0])
        precision = np.array([1.0])
    # all-point interpolated AP
    env = np.maximum.accumulate(precision[::-1])[::-1]
    r_prev = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - r_prev) * p
        r_prev = r
    rp_auc = float(np.trapezoid(np.r_[precision[0], precision],
                            np.r_[0.0, recall]))
    return PrCurve(recall=recall, precision=precision, ap=float(ap),
                   rp_auc=rp_auc)


def frame_wise_report(taxonomies_by_frame: dict) -> list:
    """One metrics row per frame; single-class frames report None AUCs."""
    rows = []
    for frame in sorted(taxonomies_by_frame):
        tax = taxonomies_by_frame[frame]
        row = {"frame": frame}
        row.update(tax.counts())
        samples = tax.roc_samples
        has_both = any(p for _, p in samples) and any(not p for _, p in samples)
        if has_both:
            curve = roc_curve(samples)
            row["auc"] = curve.auc
            for m in PAPER_FP_MAXIMA:
                row[f"pauc_raw_{m}"] = curve.partial_aucs[m].raw
                row[f"pauc_norm_{m}"] = curve.partial_aucs[m].normalized
                row[f"pauc_mcclish_{m}"] = curve.partial_aucs[m].mcclish
        else:
            row["auc"] = None
            for m in PAPER_FP_MAXIMA:
                row[f"pauc_raw_{m}"] = None
                row[f"pauc_norm_{m}"] = None
                row[f"pauc_mcclish_{m}"] = None
        rows.append(row)
    return rows


@dataclass
class SubsequencePlan:
    mode: str  # "incremental" or "fixed"
    size: int | None
    subsequences: list  # list of frame-index lists
    targets: list  # per-subsequence frames to evaluate


def subsequence_plan(frames, mode, size=None) -> SubsequencePlan:
    """Plan detector runs over prefixes or fixed-size chunks.

    incremental: the i-th subsequence is the first i frames, evaluated at
    its last frame. fixed(k): non-overlapping consecutive chunks covering
    all frames once, every frame a target.
    """
    frames = list(frames)
    if not frames:
        raise MetricsError("empty frame list")
    if mode == "incremental":
        subs = [frames[:i] for i in range(1, len(frames) + 1)]
        targets = [[s[-1]] for s in subs]
        return SubsequencePlan("incremental", None, subs, targets)
    if mode == "fixed":
        if not size or size < 1:
            raise MetricsError("fixed mode needs size >= 1")
        subs = [frames[i:i + size] for i in range(0, len(frames), size)]
        return SubsequencePlan("fixed", size, subs, [list(s) for s in subs])
    raise MetricsError(f"unknown plan mode {mode!r}")


def split_on_discontinuity(frames, breakpoints):
    """Split an ordered frame list into runs, each breakpoint ending one."""
    frames = list(frames)
    for b in breakpoints:
        if b not in frames:
            raise MetricsError(f"breakpoint {b} outside frame range")
    bset = set(breakpoints)
    runs, cur = [], []
    for f in frames:
        cur.append(f)
        if f in bset:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs
