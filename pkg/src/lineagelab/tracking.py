"""Backward-in-time association of annotated cells and division/fusion
event detection between adjacent frames.

Associations are greedy by descending mask IOU (centroid distance, then
instance id, break ties), as in classic IOU tracking. An association whose
size or shape change is implausible for a single cell is dissolved again
and its members handed to the event heuristics, which look for one-to-many
(division) and many-to-one (fusion) overlap patterns among unmatched cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import geometry
from .geometry import Mask, shape_distance, shape_features
from .lineage import LineageForest


class TrackingError(ValueError):
    pass


class CellInstance:
    """One cell observation in one frame."""

    def __init__(self, id, frame, roi, mask: Mask, label="Unlabeled",
                 confidence=None, track=None):
        if confidence is not None and not (0.0 <= confidence <= 1.0):
            raise TrackingError(f"confidence {confidence} outside [0, 1]")
        self.id = str(id)
        self.frame = int(frame)
        self.roi = str(roi)
        self.mask = mask
        self.label = label
        self.confidence = confidence
        self.track = track
        self.bbox = mask.bbox
        self.centroid = geometry.centroid(mask)
        self._features = None

    @property
    def features(self):
        if self._features is None:
            self._features = shape_features(self.mask)
        return self._features

    @property
    def area(self):
        return self.mask.area

    def __repr__(self):
        return f"CellInstance({self.id!r}, frame={self.frame}, label={self.label!r})"


@dataclass(frozen=True)
class TrackParams:
    iou_gate: float = 0.3
    centroid_gate: float = 50.0
    size_ratio_bounds: tuple[float, float] = (0.6, 1.67)
    event_overlap_min: float = 0.5
    shape_change_max: float = 3.0

    def __post_init__(self):
        if not (0.0 < self.iou_gate < 1.0):
            raise TrackingError("iou_gate must be in (0, 1)")
        low, high = self.size_ratio_bounds
        if not (low < 1.0 < high):
            raise TrackingError("size_ratio_bounds must straddle 1")


CONTINUATION = "Continuation"
DIVISION = "Division"
FUSION = "Fusion"
APPEARANCE = "Appearance"
DISAPPEARANCE = "Disappearance"


@dataclass(frozen=True)
class TrackEvent:
    """Cell event between two adjacent frames, in forward-time orientation.

    `at_frame` is the later frame of the pair. `earlier`/`later` hold
    instance ids on each side.
    """

    kind: str
    at_frame: int
    earlier: tuple
    later: tuple

    def key(self):
        return (self.kind, self.at_frame, tuple(sorted(self.earlier)),
                tuple(sorted(self.later)))


def association_score(a: CellInstance, b: CellInstance, p: TrackParams):
    """Score a candidate link between cells in adjacent frames.

    Returns (iou, centroid_distance) or None when both gates reject.
    IOU is the primary ranking key; centroid distance breaks ties.
    """
    overlap = geometry.iou(a.mask, b.mask)
    dist = math.dist(a.centroid, b.centroid)
    if overlap < p.iou_gate and dist > p.centroid_gate:
        return None
    return (overlap, dist)


@dataclass
class FrameAssociation:
    matches: list = field(default_factory=list)  # (earlier, later, iou, dist)
    unmatched_earlier: list = field(default_factory=list)
    unmatched_later: list = field(default_factory=list)


def associate_frames(earlier, later, p: TrackParams) -> FrameAssociation:
    """Greedy one-to-one association between two adjacent frames."""
    earlier = sorted(earlier, key=lambda c: c.id)
    later = sorted(later, key=lambda c: c.id)
    candidates = []
    for a in earlier:
        for b in later:
            s = association_score(a, b, p)
            if s is not None:
                candidates.append((-s[0], s[1], a.id, b.id, a, b))
    candidates.sort(key=lambda t: t[:4])
    used_e, used_l = set(), set()
    out = FrameAssociation()
    for neg_iou, dist, _, _, a, b in candidates:
        if a.id in used_e or b.id in used_l:
            continue
        used_e.add(a.id)
        used_l.add(b.id)
        out.matches.append((a, b, -neg_iou, dist))
    out.unmatched_earlier = [c for c in earlier if c.id not in used_e]
    out.unmatched_later = [c for c in later if c.id not in used_l]
    return out


def _containment(part: CellInstance, whole: CellInstance):
    return geometry.intersection_area(part.mask, whole.mask) / part.area


def detect_events(assoc: FrameAssociation, earlier, later,
                  p: TrackParams) -> list[TrackEvent]:
    """Partition both frames' instances into events.

    Matched pairs whose area ratio leaves `size_ratio_bounds` or whose
    shape distance exceeds `shape_change_max` are dissolved before the
    division/fusion search, since a genuine division or fusion produces
    exactly that kind of implausible one-to-one link.
    """
    at = later[0].frame if later else (earlier[0].frame + 1 if earlier else 0)
    events = []
    pool_e, pool_l = [], []
    low, high = p.size_ratio_bounds
    for a, b, _, _ in assoc.matches:
        ratio = b.area / a.area
        if low <= ratio <= high and \
                shape_distance(a.features, b.features) <= p.shape_change_max:
            events.append(TrackEvent(CONTINUATION, at, (a.id,), (b.id,)))
        else:
            pool_e.append(a)
            pool_l.append(b)
    pool_e.extend(assoc.unmatched_earlier)
    pool_l.extend(assoc.unmatched_later)
    pool_e.sort(key=lambda c: c.id)
    pool_l.sort(key=lambda c: c.id)

    def group(parent, pool):
        """Children of `parent` among `pool`, best-overlap first."""
        cands = []
        for c in pool:
            cont = _containment(c, parent)
            if cont >= p.event_overlap_min:
                cands.append((-cont, c.id, c))
        cands.sort(key=lambda t: t[:2])
        chosen = [c for _, _, c in cands]
        while len(chosen) >= 2:
            ratio = sum(c.area for c in chosen) / parent.area
            if low <= ratio <= high:
                return chosen
            if ratio > high:
                chosen.pop()  # weakest overlap contributes least evidence
            else:
                return None
        return None

    taken_l = set()
    for parent in list(pool_e):
        children = group(parent, [c for c in pool_l if c.id not in taken_l])
        if children:
            events.append(TrackEvent(DIVISION, at, (parent.id,),
                                     tuple(c.id for c in children)))
            pool_e.remove(parent)
            taken_l.update(c.id for c in children)
    pool_l = [c for c in pool_l if c.id not in taken_l]

    taken_e = set()
    for child in list(pool_l):
        parents = group(child, [c for c in pool_e if c.id not in taken_e])
        if parents:
            events.append(TrackEvent(FUSION, at,
                                     tuple(c.id for c in parents), (child.id,)))
            pool_l.remove(child)
            taken_e.update(c.id for c in parents)
    pool_e = [c for c in pool_e if c.id not in taken_e]

    for c in pool_e:
        events.append(TrackEvent(DISAPPEARANCE, at, (c.id,), ()))
    for c in pool_l:
        events.append(TrackEvent(APPEARANCE, c.frame, (), (c.id,)))
    return events


_EDGE_KIND = {CONTINUATION: "continuation", DIVISION: "division",
              FUSION: "fusion"}


def _forest_from(frames, events):
    forest = LineageForest(final_frame=frames[-1][0])
    for _, cells in frames:
        for c in cells:
            forest.add_node(c)
    for ev in events:
        kind = _EDGE_KIND.get(ev.kind)
        if kind is None:
            continue
        if ev.kind == DIVISION:
            for child in ev.later:
                forest.add_edge(ev.earlier[0], child, kind)
        elif ev.kind == FUSION:
            for parent in ev.earlier:
                forest.add_edge(parent, ev.later[0], kind)
        else:
            forest.add_edge(ev.earlier[0], ev.later[0], kind)
    return forest


class TrackState:
    """Backward tracking over one ROI sequence, resumable after fixes.

    `frames` is a list of (frame_index, [CellInstance]) in ascending frame
    order. Events for the pair (t-1, t) are tagged by the later frame t.
    """

    def __init__(self, frames, params: TrackParams = None):
        if len(frames) < 2:
            raise TrackingError("needs >= 2 frames")
        indices = [f for f, _ in frames]
        if indices != sorted(indices) or len(set(indices)) != len(indices):
            raise TrackingError("frames out of order")
        self.frames = [(f, sorted(cells, key=lambda c: c.id))
                       for f, cells in frames]
        self.params = params or TrackParams()
        self.events_by_pair = {}

    @property
    def frame_indices(self):
        return [f for f, _ in self.frames]

    def _cells(self, frame):
        for f, cells in self.frames:
            if f == frame:
                return cells
        raise TrackingError(f"unknown frame {frame}")

    def _track_pair(self, f_earlier, f_later):
        earlier = self._cells(f_earlier)
        later = self._cells(f_later)
        assoc = associate_frames(earlier, later, self.params)
        self.events_by_pair[f_later] = detect_events(assoc, earlier, later,
                                                     self.params)

    def run(self) -> LineageForest:
        idx = self.frame_indices
        for k in range(len(idx) - 1, 0, -1):  # backward in time
            self._track_pair(idx[k - 1], idx[k])
        return self.forest()

    def resume(self, frame_index, corrections=None) -> LineageForest:
        """Recompute the backward portion at and below `frame_index`.

        `corrections` maps instance id -> replacement CellInstance (same
        id and frame). Pairs whose later frame exceeds `frame_index` keep
        their accepted events.
        """
        idx = self.frame_indices
        if frame_index not in idx:
            raise TrackingError(f"frame {frame_index} not in sequence")
        for iid, repl in (corrections or {}).items():
            found = False
            for fi, (f, cells) in enumerate(self.frames):
                for ci, c in enumerate(cells):
                    if c.id == iid:
                        if repl.id != iid or repl.frame != f:
                            raise TrackingError(
                                "correction must keep instance id and frame")
                        cells[ci] = repl
                        found = True
            if not found:
                raise TrackingError(f"correction references unknown instance {iid}")
        for k in range(1, len(idx)):
            if idx[k] <= frame_index:
                self._track_pair(idx[k - 1], idx[k])
        return self.forest()

    def events(self):
        out = []
        seen_app = set()
        for f in sorted(self.events_by_pair):
            for ev in self.events_by_pair[f]:
                # an instance can look like an appearance in pair (t, t+1)
                # and be resolved by pair (t-1, t); keep pairwise events
                # as-is, appearances are deduplicated by instance
                out.append(ev)
        return self._consolidate(out)

    def _consolidate(self, events):
        """Drop Appearance/Disappearance claims contradicted by the
        neighbouring pair's events (each pair only sees two frames)."""
        has_pred = set()
        has_succ = set()
        for ev in events:
            if ev.kind in (CONTINUATION, DIVISION, FUSION):
                has_succ.update(ev.earlier)
                has_pred.update(ev.later)
        first = self.frame_indices[0]
        last = self.frame_indices[-1]
        out = []
        for ev in events:
            if ev.kind == APPEARANCE:
                iid = ev.later[0]
                if iid in has_pred:
                    continue
                cell_frame = ev.at_frame
                if cell_frame == first:
                    continue  # sequence start, not an appearance
                out.append(ev)
            elif ev.kind == DISAPPEARANCE:
                iid = ev.earlier[0]
                if iid in has_succ:
                    continue
                if ev.at_frame - 1 == last:
                    continue
                out.append(ev)
            else:
                out.append(ev)
        return out

    def forest(self) -> LineageForest:
        flat = [ev for f in sorted(self.events_by_pair)
                for ev in self.events_by_pair[f]]
        return _forest_from(self.frames, flat)


def track_sequence(frames, params: TrackParams = None,
                   direction="backward") -> LineageForest:
    """Track one ROI sequence and return its lineage forest."""
    if direction != "backward":
        raise TrackingError("only backward tracking is supported")
    state = TrackState(frames, params)
    return state.run()
