"""Shared geometry and graph builders for the test suite."""

import math

import numpy as np
import pytest

from lineagelab.geometry import Mask
from lineagelab.lineage import LineageForest
from lineagelab.tracking import CellInstance

FRAME = (64, 64)


def square(x, y, side=4.0, frame_size=FRAME):
    """Axis-aligned square polygon with top-left corner (x, y)."""
    poly = [(x, y), (x + side, y), (x + side, y + side), (x, y + side)]
    return Mask(poly, frame_size)


def disc(cx, cy, r, n=16, frame_size=FRAME):
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    poly = np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
    return Mask(poly, frame_size)


def cell(iid, frame, mask, label="Unlabeled", confidence=None):
    return CellInstance(iid, frame, "test", mask, label=label,
                        confidence=confidence)


@pytest.fixture
def sq():
    return square


@pytest.fixture
def mk_cell():
    return cell


def random_forest(rng, max_nodes=60, final_frame=None):
    """Random structurally valid lineage forest.

    Nodes are spread over consecutive frames; edges between adjacent
    frames follow the same cardinality rules as the tracker output
    (single continuation per side, divisions >= 2 children, fusions >= 2
    parents, unmixed edge kinds per node).
    """
    n_frames = int(rng.integers(3, 9))
    per_frame = []
    total = 0
    for _ in range(n_frames):
        n = int(rng.integers(1, max(2, max_nodes // n_frames + 1)))
        per_frame.append(n)
        total += n
        if total >= max_nodes:
            break
    forest = LineageForest(final_frame=len(per_frame) - 1)
    ids_by_frame = []
    counter = 0
    for f, n in enumerate(per_frame):
        ids = []
        for _ in range(n):
            counter += 1
            iid = f"r{counter:05d}"
            forest.add_node(_BareCell(iid, f))
            ids.append(iid)
        ids_by_frame.append(ids)

    for f in range(len(per_frame) - 1):
        earlier = list(ids_by_frame[f])
        later = list(ids_by_frame[f + 1])
        rng.shuffle(earlier)
        rng.shuffle(later)
        while earlier and later:
            roll = rng.random()
            if roll < 0.15 and len(later) >= 2:  # division
                k = int(rng.integers(2, min(3, len(later)) + 1))
                parent = earlier.pop()
                for _ in range(k):
                    forest.add_edge(parent, later.pop(), "division")
            elif roll < 0.3 and len(earlier) >= 2:  # fusion
                k = int(rng.integers(2, min(3, len(earlier)) + 1))
                child = later.pop()
                for _ in range(k):
                    forest.add_edge(earlier.pop(), child, "fusion")
            elif roll < 0.9:  # continuation
                forest.add_edge(earlier.pop(), later.pop(), "continuation")
            else:  # leave one side dangling (appearance/disappearance)
                (earlier if rng.random() < 0.5 else later).pop()
    return forest


class _BareCell:
    """Graph-only stand-in for CellInstance (no mask needed)."""

    __slots__ = ("id", "frame", "label", "confidence")

    def __init__(self, iid, frame):
        self.id = iid
        self.frame = frame
        self.label = "Unlabeled"
        self.confidence = None
