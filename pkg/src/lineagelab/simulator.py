"""Synthetic time-lapse colony generator with exact lineage ground truth
and a detection-noise model with per-failure bookkeeping.

Cells are boundary-perturbed ellipses. Division replaces a cell by two
half-area children tiling the parent footprint; fusion replaces two
overlapping same-label cells by the convex hull of their outlines, so the
generated forest is conflict-free by construction. All randomness flows
from a single seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import MultiPoint

from .geometry import GeometryError, Mask, intersection_area, iou
from .lineage import LineageForest, find_uncategorizable
from .tracking import (APPEARANCE, CONTINUATION, DISAPPEARANCE, DIVISION,
                       FUSION, CellInstance, TrackEvent, _forest_from)


class SimulatorError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    frame_count: int = 30
    frame_size: tuple = (512, 512)
    initial_cells: int = 20
    motion_sigma: float = 2.0
    growth_rate: float = 1.01
    division_prob: float = 0.02
    fusion_prob: float = 0.0
    appearance_rate: float = 0.0
    disappearance_prob: float = 0.0
    rng_seed: int = 0
    radius_range: tuple = (9.0, 14.0)
    boundary_points: int = 12
    boundary_noise: float = 0.08
    axis_ratio_max: float = 1.6
    overlap_cap: float = 0.05
    ipsc_fraction: float = 0.25
    roi: str = "sim"

    def __post_init__(self):
        for name in ("division_prob", "fusion_prob", "disappearance_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise SimulatorError(f"{name}={v} outside [0, 1]")
        if self.frame_count < 2:
            raise SimulatorError("frame_count must be >= 2")
        if not (8 <= self.boundary_points <= 16):
            raise SimulatorError("boundary_points must be in [8, 16]")


@dataclass
class Scenario:
    config: ScenarioConfig
    frames: list  # [(frame_index, [CellInstance])]
    forest: LineageForest
    events: list  # ground-truth TrackEvents, forward orientation
    labels: dict  # instance id -> simulated label
    seeds: dict  # final-frame instance id -> label

    def event_counts(self):
        out = {}
        for ev in self.events:
            out[ev.kind] = out.get(ev.kind, 0) + 1
        return out


def _boundary_polygon(rng, center, r_major, r_minor, angle, n, noise):
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    coef = rng.normal(0.0, 1.0, 4)
    wobble = (coef[0] * np.cos(theta) + coef[1] * np.sin(theta)
              + coef[2] * np.cos(2 * theta) + coef[3] * np.sin(2 * theta))
    mult = np.clip(1.0 + noise * wobble / 2.0, 0.7, 1.3)
    x = r_major * mult * np.cos(theta)
    y = r_minor * mult * np.sin(theta)
    ca, sa = math.cos(angle), math.sin(angle)
    px = center[0] + ca * x - sa * y
    py = center[1] + sa * x + ca * y
    return np.stack([px, py], axis=1)


def _clamp_polygon(poly, frame_size, margin=0.5):
    w, h = frame_size
    shift_x = max(margin - poly[:, 0].min(), 0.0) + \
        min(w - margin - poly[:, 0].max(), 0.0)
    shift_y = max(margin - poly[:, 1].min(), 0.0) + \
        min(h - margin - poly[:, 1].max(), 0.0)
    out = poly.copy()
    out[:, 0] += shift_x
    out[:, 1] += shift_y
    if out[:, 0].min() < 0 or out[:, 0].max() > w or \
            out[:, 1].min() < 0 or out[:, 1].max() > h:
        raise SimulatorError("cell does not fit in frame")
    return out


class _Sim:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.counter = 0
        self.events = []
        self.frames = []
        self.labels = {}

    def new_id(self):
        self.counter += 1
        return f"n{self.counter:05d}"

    def make_cell(self, frame, poly, label):
        iid = self.new_id()
        cell = CellInstance(iid, frame, self.cfg.roi,
                            Mask(poly, self.cfg.frame_size), label=label)
        self.labels[iid] = label
        return cell

    def overlap_frac(self, mask, others):
        worst = 0.0
        for o in others:
            inter = intersection_area(mask, o.mask)
            if inter:
                worst = max(worst, inter / min(mask.area, o.mask.area))
        return worst

    def place_new_cell(self, frame, existing, tries=200):
        cfg = self.cfg
        w, h = cfg.frame_size
        r_hi = cfg.radius_range[1]
        margin = 2.5 * r_hi
        for _ in range(tries):
            r = self.rng.uniform(*cfg.radius_range)
            ratio = self.rng.uniform(1.0, cfg.axis_ratio_max)
            r_major = r * math.sqrt(ratio)
            r_minor = r / math.sqrt(ratio)
            center = (self.rng.uniform(margin, w - margin),
                      self.rng.uniform(margin, h - margin))
            angle = self.rng.uniform(0.0, math.pi)
            poly = _boundary_polygon(self.rng, center, r_major, r_minor,
                                     angle, cfg.boundary_points,
                                     cfg.boundary_noise)
            try:
                mask = Mask(poly, cfg.frame_size)
            except GeometryError:
                continue
            if self.overlap_frac(mask, existing) <= cfg.overlap_cap:
                label = "iPSC" if self.rng.random() < cfg.ipsc_fraction else "DfC"
                return self.make_cell(frame, poly, label)
        raise SimulatorError("infeasible packing: too many cells for frame")

    def moved_polygon(self, cell, toward=None, cells=None):
        cfg = self.cfg
        poly = cell.mask.polygon.copy()
        c = np.array(cell.centroid)
        poly = c + (poly - c) * cfg.growth_rate
        if toward is not None:
            partner = next(o for o in cells if o.id == toward)
            d = np.array(partner.centroid) - c
            norm = np.linalg.norm(d)
            step = min(0.5 * norm, max(cfg.motion_sigma, 2.0))
            poly += d / norm * step if norm > 1e-6 else 0.0
            poly += self.rng.normal(0.0, 0.3, 2)
        else:
            poly += self.rng.normal(0.0, cfg.motion_sigma, 2)
        return _clamp_polygon(poly, cfg.frame_size)

    def division_children(self, cell, frame):
        ys, xs = np.nonzero(cell.mask.raster)
        x0, y0 = cell.mask.origin
        pts = np.stack([xs + x0 + 0.5, ys + y0 + 0.5], axis=1).astype(float)
        c = pts.mean(axis=0)
        cov = np.cov(pts, rowvar=False, bias=True)
        evals, evecs = np.linalg.eigh(cov)
        u = evecs[:, 1]  # major axis
        a = 2.0 * math.sqrt(max(evals[1], 1.0))
        b = 2.0 * math.sqrt(max(evals[0], 1.0))
        angle = math.atan2(u[1], u[0])
        out = []
        for sign in (1.0, -1.0):
            center = c + sign * u * (a / 2.0)
            poly = _boundary_polygon(self.rng, center, a / 2.0, b, angle,
                                     self.cfg.boundary_points,
                                     self.cfg.boundary_noise / 2.0)
            w, h = self.cfg.frame_size
            if poly[:, 0].min() < 0 or poly[:, 0].max() > w or \
                    poly[:, 1].min() < 0 or poly[:, 1].max() > h:
                return None  # too close to the border; skip this division
            out.append(self.make_cell(frame, poly, cell.label))
        return out

    def run(self) -> Scenario:
        cfg = self.cfg
        cells = []
        for _ in range(cfg.initial_cells):
            cells.append(self.place_new_cell(0, cells))
        cells.sort(key=lambda c: c.id)
        self.frames.append((0, list(cells)))
        courting = []  # (id_a, id_b, age) steered toward fusion

        for t in range(cfg.frame_count - 1):
            court_ids = {i for a, b, _ in courting for i in (a, b)}
            nxt = []
            parent_of = {}
            for cell in cells:
                roll = self.rng.random()
                if cell.id not in court_ids:
                    if roll < cfg.disappearance_prob:
                        self.events.append(
                            TrackEvent(DISAPPEARANCE, t + 1, (cell.id,), ()))
                        continue
                    # divisions stay clear of ongoing courtships so that the
                    # unmatched cells of concurrent events can never fall
                    # within each other's association range
                    if roll < cfg.disappearance_prob + cfg.division_prob and \
                            self.overlap_frac(
                                cell.mask,
                                [c for c in cells if c.id != cell.id]) \
                            <= 0.05 and all(
                                math.dist(cell.centroid, o.centroid) > 70.0
                                for o in cells if o.id in court_ids):
                        children = self.division_children(cell, t + 1)
                        if children is not None and all(
                                self.overlap_frac(
                                    ch.mask,
                                    [c for c in cells if c.id != cell.id])
                                <= 0.05
                                and intersection_area(ch.mask, cell.mask)
                                >= 0.7 * ch.area
                                for ch in children):
                            self.events.append(TrackEvent(
                                DIVISION, t + 1, (cell.id,),
                                tuple(ch.id for ch in children)))
                            nxt.extend(children)
                            continue
                try:
                    partner = None
                    for a, b, _ in courting:
                        if cell.id == a:
                            partner = b
                        elif cell.id == b:
                            partner = a
                    poly = self.moved_polygon(cell, toward=partner, cells=cells)
                    moved = self.make_cell(t + 1, poly, cell.label)
                except (GeometryError, SimulatorError):
                    self.events.append(
                        TrackEvent(DISAPPEARANCE, t + 1, (cell.id,), ()))
                    continue
                parent_of[moved.id] = cell.id
                nxt.append(moved)

            succ_of = {v: k for k, v in parent_of.items()}
            courting = [(succ_of[a], succ_of[b], age + 1)
                        for a, b, age in courting
                        if a in succ_of and b in succ_of and age < 8]
            nxt, courting = self.fusion_pass(nxt, parent_of, courting, t + 1)
            # cells born from an event this frame (division children, merged
            # cells) must stay on their parents' footprint, so the
            # separation pass moves their neighbours instead
            pinned = {c.id for c in nxt if c.id not in parent_of}
            nxt = self.separation_pass(nxt, parent_of, courting, pinned=pinned)
            nxt = self.fidelity_pass(cells, nxt, parent_of)
            for cid in sorted(parent_of):
                self.events.append(TrackEvent(
                    CONTINUATION, t + 1, (parent_of[cid],), (cid,)))
            if cfg.fusion_prob > 0:
                courting.extend(self.new_courtships(nxt, courting))

            n_new = self.rng.poisson(cfg.appearance_rate) \
                if cfg.appearance_rate > 0 else 0
            for _ in range(n_new):
                try:
                    born = self.place_new_cell(t + 1, nxt, tries=50)
                except SimulatorError:
                    continue
                nxt.append(born)
                self.events.append(TrackEvent(APPEARANCE, t + 1, (), (born.id,)))

            nxt.sort(key=lambda c: c.id)
            self.frames.append((t + 1, nxt))
            cells = nxt

        forest = _forest_from(self.frames, self.events)
        seeds = {c.id: self.labels[c.id] for c in self.frames[-1][1]}
        forest.seeds = dict(seeds)
        return Scenario(config=cfg, frames=self.frames, forest=forest,
                        events=self.events, labels=self.labels, seeds=seeds)

    def fusion_pass(self, nxt, parent_of, courting, frame):
        """Merge courting pairs whose masks overlap enough; the merged
        outline is the convex hull of both outlines, so its area clearly
        exceeds either parent's."""
        by_id = {c.id: c for c in nxt}
        gone = set()
        still = []
        for ida, idb, age in courting:
            a, b = by_id[ida], by_id[idb]
            inter = intersection_area(a.mask, b.mask)
            if inter < 0.2 * min(a.area, b.area):
                still.append((ida, idb, age))
                continue
            hull = MultiPoint(
                np.vstack([a.mask.polygon, b.mask.polygon])).convex_hull
            poly = np.array(hull.exterior.coords[:-1])
            try:
                merged = self.make_cell(frame, poly, a.label)
            except GeometryError:
                continue  # cancel: the pair separates again
            # the merged outline must be unmistakably larger than either
            # parent and cover both, otherwise cancel the courtship
            if merged.area < 1.8 * max(a.area, b.area) or \
                    min(intersection_area(c.mask, merged.mask) / c.area
                        for c in (a, b)) < 0.7:
                self.counter -= 1
                del self.labels[merged.id]
                continue
            self.events.append(TrackEvent(
                FUSION, frame,
                tuple(sorted((parent_of[ida], parent_of[idb]))),
                (merged.id,)))
            gone.update((ida, idb))
            del parent_of[ida]
            del parent_of[idb]
            by_id[merged.id] = merged
        out = [c for cid, c in sorted(by_id.items()) if cid not in gone]
        return out, still

    def fidelity_pass(self, prev, nxt, parent_of, margin=0.05):
        """Keep every continuation unambiguous: a moved cell must overlap
        its own parent strictly more than any other previous-frame cell,
        and the parent must overlap its own successor strictly more than
        any other moved cell. Ambiguous moves (e.g. two neighbours pushed
        past each other) are pulled back toward the parent outline."""
        prev_by_id = {c.id: c for c in prev}
        by_id = {c.id: c for c in nxt}
        for _ in range(6):
            clean = True
            for cid in sorted(parent_of):
                child = by_id[cid]
                parent = prev_by_id[parent_of[cid]]
                own = iou(child.mask, parent.mask)
                rival = 0.0
                for p in prev:
                    if p.id != parent.id:
                        rival = max(rival, iou(child.mask, p.mask))
                for other in by_id.values():
                    if other.id != cid and \
                            parent_of.get(other.id) != parent.id:
                        rival = max(rival, iou(other.mask, parent.mask))
                if own > rival + margin:
                    continue
                clean = False
                shift = 0.5 * (np.array(parent.centroid)
                               - np.array(child.centroid))
                poly = _clamp_polygon(child.mask.polygon + shift,
                                      self.cfg.frame_size)
                by_id[cid] = CellInstance(cid, child.frame, child.roi,
                                          Mask(poly, self.cfg.frame_size),
                                          label=child.label)
            if clean:
                break
        return [by_id[cid] for cid in sorted(by_id)]

    def new_courtships(self, cells, courting, range_factor=3.5):
        """Pick same-label neighbour pairs that will drift together and
        fuse over the coming frames."""
        cfg = self.cfg
        busy = {i for x, y, _ in courting for i in (x, y)}
        fresh = []
        ordered = sorted(cells, key=lambda c: c.id)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                if a.id in busy or b.id in busy:
                    continue
                if a.label != b.label:
                    continue
                if 0.75 > a.area / b.area or a.area / b.area > 1.33:
                    continue
                dist = math.dist(a.centroid, b.centroid)
                if dist > range_factor * cfg.radius_range[1]:
                    continue
                if any(math.dist(c.centroid, o.centroid) <= 70.0
                       for c in (a, b) for o in cells if o.id in busy):
                    continue
                if self.rng.random() < cfg.fusion_prob:
                    fresh.append((a.id, b.id, 0))
                    busy.update((a.id, b.id))
        return fresh

    def separation_pass(self, cells, parent_of, courting, cap=0.12,
                        pinned=frozenset()):
        """Push deeply overlapping non-fusing neighbours apart so distinct
        cell lines stay separable. Pinned cells never move; their
        neighbours absorb the full displacement."""
        exempt = {frozenset((a, b)) for a, b, _ in courting}
        by_id = {c.id: c for c in cells}
        for _ in range(5):
            pushed = False
            ordered = sorted(by_id)
            for i, ida in enumerate(ordered):
                for idb in ordered[i + 1:]:
                    if frozenset((ida, idb)) in exempt:
                        continue
                    if ida in pinned and idb in pinned:
                        continue
                    a, b = by_id[ida], by_id[idb]
                    inter = intersection_area(a.mask, b.mask)
                    if inter <= cap * min(a.area, b.area):
                        continue
                    ca = np.array(a.centroid)
                    cb = np.array(b.centroid)
                    d = cb - ca
                    norm = np.linalg.norm(d)
                    d = d / norm if norm > 1e-6 else np.array([1.0, 0.0])
                    moves = [(a, -1.5), (b, 1.5)]
                    if a.id in pinned:
                        moves = [(b, 3.0)]
                    elif b.id in pinned:
                        moves = [(a, -3.0)]
                    for cell, sign in moves:
                        poly = _clamp_polygon(cell.mask.polygon + sign * d,
                                              self.cfg.frame_size)
                        repl = CellInstance(cell.id, cell.frame, cell.roi,
                                            Mask(poly, self.cfg.frame_size),
                                            label=cell.label)
                        by_id[cell.id] = repl
                    pushed = True
            if not pushed:
                break
        return [by_id[cid] for cid in sorted(by_id)]


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Deterministic for a fixed rng_seed."""
    return _Sim(cfg).run()


def generate_scenario_with_events(cfg: ScenarioConfig, min_divisions=0,
                                  min_fusions=0, max_tries=200) -> Scenario:
    """Search derived seeds until the scenario holds enough scripted events."""
    for k in range(max_tries):
        s = generate_scenario(replace(cfg, rng_seed=cfg.rng_seed + 7919 * k))
        counts = s.event_counts()
        if counts.get(DIVISION, 0) >= min_divisions and \
                counts.get(FUSION, 0) >= min_fusions:
            return s
    raise SimulatorError(
        f"no scenario with >= {min_divisions} divisions and "
        f">= {min_fusions} fusions in {max_tries} tries")


@dataclass(frozen=True)
class DetectionNoise:
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    flip_prob: float = 0.0
    jitter_px: float = 0.0
    spurious_whole_per_frame: int = 0
    spurious_part_per_frame: int = 0
    rng_seed: int = 0
    score_pos: tuple = (0.55, 0.99)  # iPSC-score range for predicted iPSC
    score_neg: tuple = (0.01, 0.45)  # and for predicted DfC


_COUNT_KEYS = ("TP", "FP-CLS", "FP-DUP", "FP-NEX-WHOLE", "FP-NEX-PART",
               "TP-iPSC", "FN-CLS", "FN-DET")


@dataclass
class DetectionSet:
    dets_by_frame: dict  # frame -> [CellInstance with confidence]
    gts_by_frame: dict  # frame -> [CellInstance], uncategorizable unlabeled
    expected: dict  # frame -> {taxonomy key: injected count}

    def expected_totals(self):
        out = {k: 0 for k in _COUNT_KEYS}
        for counts in self.expected.values():
            for k, v in counts.items():
                out[k] += v
        return out


def synthesize_detections(scenario: Scenario, noise: DetectionNoise,
                          frames=None) -> DetectionSet:
    """Derive noisy detections plus exact per-failure bookkeeping.

    GT labels come from lineage reachability: cells on lines that never
    reach the final frame are exported unlabeled, so their detections are
    booked as FP-NEX-WHOLE.
    """
    rng = np.random.default_rng(noise.rng_seed)
    uncat = find_uncategorizable(scenario.forest)
    frame_list = [f for f, _ in scenario.frames]
    wanted = set(frames) if frames is not None else set(frame_list)
    cfg = scenario.config

    dets_by_frame = {}
    gts_by_frame = {}
    expected = {}
    det_counter = 0

    def new_det(frame, poly, label, iid_hint):
        nonlocal det_counter
        det_counter += 1
        conf_range = noise.score_pos if label == "iPSC" else noise.score_neg
        conf = float(rng.uniform(*conf_range))
        return CellInstance(f"d{det_counter:05d}", frame, cfg.roi,
                            Mask(poly, cfg.frame_size), label=label,
                            confidence=conf)

    for frame, cells in scenario.frames:
        if frame not in wanted:
            continue
        gts = []
        for c in cells:
            label = None if c.id in uncat else scenario.labels[c.id]
            gts.append(CellInstance(c.id, frame, cfg.roi, c.mask, label=label))
        gts_by_frame[frame] = gts

        counts = {k: 0 for k in _COUNT_KEYS}
        dets = []
        labeled = [g for g in gts if g.label is not None]
        for g in gts:
            if rng.random() < noise.drop_prob:
                if g.label == "iPSC":
                    counts["FN-DET"] += 1
                continue
            poly = g.mask.polygon.copy()
            if noise.jitter_px > 0:
                poly = poly + rng.normal(0.0, noise.jitter_px, 2)
                poly = _clamp_polygon(poly, cfg.frame_size)
            if g.label is None:
                dets.append(new_det(frame, poly, "iPSC", g.id))
                counts["FP-NEX-WHOLE"] += 1
                continue
            pred = g.label
            if rng.random() < noise.flip_prob:
                pred = "DfC" if pred == "iPSC" else "iPSC"
            dets.append(new_det(frame, poly, pred, g.id))
            if g.label == "DfC" and pred == "iPSC":
                counts["FP-CLS"] += 1
            else:
                counts["TP"] += 1
            if g.label == "iPSC":
                if pred == "iPSC":
                    counts["TP-iPSC"] += 1
                else:
                    counts["FN-CLS"] += 1
            if g.label == "iPSC" and rng.random() < noise.dup_prob:
                dets.append(new_det(frame, g.mask.polygon.copy(), "iPSC", g.id))
                counts["FP-DUP"] += 1

        for _ in range(noise.spurious_whole_per_frame):
            blob = _spurious_blob(rng, cfg, gts)
            if blob is None:
                continue
            dets.append(new_det(frame, blob, "iPSC", "spurious"))
            counts["FP-NEX-WHOLE"] += 1
        if labeled:
            for _ in range(noise.spurious_part_per_frame):
                g = labeled[int(rng.integers(len(labeled)))]
                c = np.array(g.centroid)
                poly = c + (g.mask.polygon - c) * 0.5
                dets.append(new_det(frame, poly, "iPSC", g.id))
                counts["FP-NEX-PART"] += 1

        dets_by_frame[frame] = dets
        expected[frame] = counts
    return DetectionSet(dets_by_frame=dets_by_frame,
                        gts_by_frame=gts_by_frame, expected=expected)


def _spurious_blob(rng, cfg, gts, tries=100):
    w, h = cfg.frame_size
    for _ in range(tries):
        r = rng.uniform(3.0, 6.0)
        center = (rng.uniform(r + 1, w - r - 1), rng.uniform(r + 1, h - r - 1))
        poly = _boundary_polygon(rng, center, r, r, 0.0, 10, 0.1)
        try:
            mask = Mask(poly, cfg.frame_size)
        except GeometryError:
            continue
        if all(intersection_area(mask, g.mask) == 0 for g in gts):
            return poly
    return None
