import numpy as np
import pytest

from lineagelab import geometry
from lineagelab.geometry import Mask
from lineagelab.tracking import (APPEARANCE, CONTINUATION, DISAPPEARANCE,
                                 DIVISION, FUSION, CellInstance,
                                 TrackingError, TrackParams, TrackState,
                                 associate_frames, association_score,
                                 detect_events, track_sequence)

from conftest import FRAME, cell, disc, square


def _greedy_oracle(earlier, later, p):
    """Independent greedy matcher: enumerate, sort, sweep."""
    pairs = []
    for a in earlier:
        for b in later:
            v = geometry.iou(a.mask, b.mask)
            import math
            d = math.dist(a.centroid, b.centroid)
            if v < p.iou_gate and d > p.centroid_gate:
                continue
            pairs.append((-v, d, a.id, b.id))
    pairs.sort()
    used_a, used_b, out = set(), set(), []
    for _, _, aid, bid in pairs:
        if aid in used_a or bid in used_b:
            continue
        used_a.add(aid)
        used_b.add(bid)
        out.append((aid, bid))
    return sorted(out)


class TestCellInstance:
    def test_confidence_validated(self):
        with pytest.raises(TrackingError):
            cell("c1", 0, square(2, 2), confidence=1.5)

    def test_features_cached(self):
        c = cell("c1", 0, square(2, 2))
        assert c.features is c.features

    def test_area_and_centroid(self):
        c = cell("c1", 0, square(2, 2, side=4))
        assert c.area == 16
        assert c.centroid == (4.0, 4.0)


class TestTrackParams:
    def test_defaults(self):
        p = TrackParams()
        assert p.iou_gate == 0.3
        assert p.centroid_gate == 50.0
        assert p.size_ratio_bounds == (0.6, 1.67)
        assert p.event_overlap_min == 0.5
        assert p.shape_change_max == 3.0

    def test_iou_gate_bounds(self):
        with pytest.raises(TrackingError):
            TrackParams(iou_gate=1.5)

    def test_size_ratio_must_straddle_one(self):
        with pytest.raises(TrackingError):
            TrackParams(size_ratio_bounds=(1.2, 1.67))


class TestAssociationScore:
    def test_rejects_only_when_both_gates_fail(self):
        p = TrackParams(centroid_gate=10.0)
        a = cell("a", 0, square(2, 2, side=4))
        near = cell("b", 1, square(4, 2, side=4))  # iou 1/3, dist 2
        far_but_close_enough = cell("c", 1, square(10, 2, side=4))  # iou 0
        far = cell("d", 1, square(30, 30, side=4, frame_size=FRAME))
        assert association_score(a, near, p) is not None
        assert association_score(a, far_but_close_enough, p) is not None
        assert association_score(a, far, p) is None

    def test_score_is_iou_then_distance(self):
        p = TrackParams()
        a = cell("a", 0, square(2, 2, side=4))
        b = cell("b", 1, square(3, 2, side=4))
        s = association_score(a, b, p)
        assert s[0] == pytest.approx(geometry.iou(a.mask, b.mask))


class TestAssociateFrames:
    @pytest.mark.parametrize("seed", range(40))
    def test_matches_greedy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = TrackParams()
        frame_size = (128, 128)
        earlier, later = [], []
        n = int(rng.integers(2, 9))
        for i in range(n):
            cx, cy = rng.uniform(20, 108, 2)
            r = rng.uniform(4, 9)
            earlier.append(cell(f"a{i}", 0,
                                disc(cx, cy, r, frame_size=frame_size)))
            if rng.random() < 0.8:  # most cells persist with some motion
                dx, dy = rng.normal(0, 3, 2)
                later.append(cell(
                    f"b{i}", 1,
                    disc(np.clip(cx + dx, 15, 113),
                         np.clip(cy + dy, 15, 113), r,
                         frame_size=frame_size)))
        out = associate_frames(earlier, later, p)
        got = sorted((a.id, b.id) for a, b, _, _ in out.matches)
        assert got == _greedy_oracle(earlier, later, p)

    def test_one_to_one(self):
        p = TrackParams()
        earlier = [cell("a1", 0, square(2, 2, side=6)),
                   cell("a2", 0, square(12, 2, side=6))]
        later = [cell("b1", 1, square(3, 2, side=6))]
        out = associate_frames(earlier, later, p)
        assert len(out.matches) == 1
        assert out.matches[0][0].id == "a1"
        assert [c.id for c in out.unmatched_earlier] == ["a2"]
        assert out.unmatched_later == []

    def test_deterministic_tie_break_by_id(self):
        p = TrackParams()
        # two identical earlier squares equidistant from one later square
        earlier = [cell("a2", 0, square(10, 10, side=6)),
                   cell("a1", 0, square(10, 10, side=6))]
        later = [cell("b1", 1, square(10, 10, side=6))]
        out = associate_frames(earlier, later, p)
        assert out.matches[0][0].id == "a1"


class TestDetectEvents:
    def _events(self, earlier, later, p=None):
        p = p or TrackParams()
        assoc = associate_frames(earlier, later, p)
        return detect_events(assoc, earlier, later, p)

    def test_plain_continuation(self):
        earlier = [cell("a", 0, square(10, 10, side=8))]
        later = [cell("b", 1, square(11, 10, side=8))]
        evs = self._events(earlier, later)
        assert [e.kind for e in evs] == [CONTINUATION]
        assert evs[0].earlier == ("a",) and evs[0].later == ("b",)
        assert evs[0].at_frame == 1

    def test_division_detected(self):
        parent = cell("p", 0, square(10, 10, side=8))
        c1 = cell("c1", 1, Mask([(10, 10), (18, 10), (18, 14), (10, 14)],
                                FRAME))
        c2 = cell("c2", 1, Mask([(10, 14), (18, 14), (18, 18), (10, 18)],
                                FRAME))
        evs = self._events([parent], [c1, c2])
        assert [e.kind for e in evs] == [DIVISION]
        assert evs[0].earlier == ("p",)
        assert set(evs[0].later) == {"c1", "c2"}

    def test_fusion_detected(self):
        a = cell("a", 0, Mask([(10, 10), (18, 10), (18, 14), (10, 14)],
                              FRAME))
        b = cell("b", 0, Mask([(10, 14), (18, 14), (18, 18), (10, 18)],
                              FRAME))
        merged = cell("m", 1, square(10, 10, side=8))
        evs = self._events([a, b], [merged])
        assert [e.kind for e in evs] == [FUSION]
        assert set(evs[0].earlier) == {"a", "b"}
        assert evs[0].later == ("m",)

    def test_implausible_size_change_dissolved(self):
        # matched pair whose area doubles: not a continuation
        a = cell("a", 0, square(10, 10, side=6))
        b = cell("b", 1, square(9, 9, side=9))
        evs = self._events([a], [b])
        kinds = sorted(e.kind for e in evs)
        assert CONTINUATION not in kinds
        assert kinds == sorted([DISAPPEARANCE, APPEARANCE])

    def test_appearance_and_disappearance(self):
        a = cell("a", 0, square(2, 2, side=5))
        b = cell("b", 1, square(50, 50, side=5))
        evs = self._events([a], [b], TrackParams(centroid_gate=10.0))
        assert sorted(e.kind for e in evs) == sorted([APPEARANCE,
                                                      DISAPPEARANCE])

    def test_division_children_need_min_containment(self):
        parent = cell("p", 0, square(10, 10, side=8))
        # children mostly outside the parent footprint
        c1 = cell("c1", 1, square(20, 10, side=5))
        c2 = cell("c2", 1, square(20, 16, side=5))
        evs = self._events([parent], [c1, c2],
                           TrackParams(centroid_gate=5.0))
        assert DIVISION not in [e.kind for e in evs]


class TestTrackState:
    def _two_cell_frames(self, n_frames=4):
        frames = []
        for t in range(n_frames):
            frames.append((t, [cell(f"a{t}", t, square(10 + t, 10, side=8)),
                               cell(f"b{t}", t, square(40, 40 + t, side=8))]))
        return frames

    def test_needs_two_frames(self):
        with pytest.raises(TrackingError):
            TrackState([(0, [])])

    def test_frames_must_be_ordered(self):
        f = self._two_cell_frames()
        with pytest.raises(TrackingError):
            TrackState([f[1], f[0], f[2], f[3]])

    def test_run_links_tracks(self):
        forest = TrackState(self._two_cell_frames()).run()
        assert ("a0", "a1", "continuation") in forest.edges
        assert ("b2", "b3", "continuation") in forest.edges
        assert len(forest.edges) == 6

    def test_track_sequence_only_backward(self):
        with pytest.raises(TrackingError):
            track_sequence(self._two_cell_frames(), direction="forward")

    def test_resume_is_noop_without_corrections(self):
        state = TrackState(self._two_cell_frames())
        before = state.run()
        after = state.resume(3)
        assert before.same_structure(after)

    def test_resume_applies_correction(self):
        frames = self._two_cell_frames()
        state = TrackState(frames)
        state.run()
        # shrink a1 so the a-track link dissolves at the corrected frame
        fixed = cell("a1", 1, square(10, 10, side=4))
        forest = state.resume(3, corrections={"a1": fixed})
        assert ("a0", "a1", "continuation") not in forest.edges
        assert ("b0", "b1", "continuation") in forest.edges

    def test_resume_correction_must_keep_identity(self):
        state = TrackState(self._two_cell_frames())
        state.run()
        wrong_frame = cell("a1", 2, square(10, 10, side=8))
        with pytest.raises(TrackingError):
            state.resume(3, corrections={"a1": wrong_frame})

    def test_resume_unknown_instance(self):
        state = TrackState(self._two_cell_frames())
        state.run()
        with pytest.raises(TrackingError):
            state.resume(3, corrections={"zz": cell("zz", 1, square(2, 2))})

    def test_resume_unknown_frame(self):
        state = TrackState(self._two_cell_frames())
        state.run()
        with pytest.raises(TrackingError):
            state.resume(99)

    def test_partial_resume_keeps_later_pairs(self):
        frames = self._two_cell_frames()
        state = TrackState(frames)
        state.run()
        kept = {f: list(evs) for f, evs in state.events_by_pair.items()}
        state.resume(2)  # pairs with later frame 3 untouched
        assert state.events_by_pair[3] == kept[3]

    def test_events_consolidation_drops_boundary_claims(self):
        state = TrackState(self._two_cell_frames())
        state.run()
        evs = state.events()
        assert all(e.kind == CONTINUATION for e in evs)
