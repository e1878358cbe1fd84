"""Lineage forest storage, retrospective label propagation, and edit
operations for human correction.

Edges are (earlier_id, later_id, kind) with kind in {continuation,
division, fusion}, always oriented forward in time. Labels seeded on
final-frame nodes flow backward (later -> earlier): a node's label is the
unanimous label of the final-frame nodes it can reach; disagreement is a
Conflict and aborts the whole propagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EDGE_KINDS = ("continuation", "division", "fusion")
LABELS = ("iPSC", "DfC")


class LineageError(ValueError):
    pass


class EditError(LineageError):
    """Edit rejected; `reason` names the violated invariant."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Conflict:
    node: str
    labels: frozenset
    seeds: frozenset  # contributing final-frame seed node ids


class LineageForest:
    """Directed acyclic graph over cell instances with typed edges."""

    def __init__(self, final_frame):
        self.nodes = {}
        self.edges = set()  # (earlier_id, later_id, kind)
        self.final_frame = int(final_frame)
        self.seeds = {}  # final-frame node id -> label
        self.revision = 0

    def add_node(self, cell):
        self.nodes[cell.id] = cell

    def add_edge(self, earlier, later, kind):
        if kind not in EDGE_KINDS:
            raise LineageError(f"unknown edge kind {kind!r}")
        self.edges.add((str(earlier), str(later), kind))

    def remove_edge(self, earlier, later, kind):
        self.edges.discard((earlier, later, kind))

    def successors(self, node_id):
        return [(l, k) for e, l, k in self.edges if e == node_id]

    def predecessors(self, node_id):
        return [(e, k) for e, l, k in self.edges if l == node_id]

    def out_edges_by_node(self):
        out = {}
        for e, l, k in self.edges:
            out.setdefault(e, []).append((l, k))
        return out

    def in_edges_by_node(self):
        out = {}
        for e, l, k in self.edges:
            out.setdefault(l, []).append((e, k))
        return out

    def final_frame_nodes(self):
        return sorted(i for i, c in self.nodes.items()
                      if c.frame == self.final_frame)

    def copy(self):
        f = LineageForest(self.final_frame)
        f.nodes = dict(self.nodes)
        f.edges = set(self.edges)
        f.seeds = dict(self.seeds)
        f.revision = self.revision
        return f

    def same_structure(self, other):
        return (self.nodes.keys() == other.nodes.keys()
                and self.edges == other.edges
                and self.final_frame == other.final_frame)


def validate_forest(f: LineageForest):
    """Check every structural invariant; returns a list of violations."""
    violations = []
    for e, l, k in sorted(f.edges):
        if e not in f.nodes or l not in f.nodes:
            violations.append(f"edge ({e}, {l}, {k}) references unknown node")
            continue
        if f.nodes[e].frame >= f.nodes[l].frame:
            violations.append(
                f"edge ({e}, {l}, {k}) does not go earlier to later in time")
    out = f.out_edges_by_node()
    for node, succ in sorted(out.items()):
        kinds = sorted({k for _, k in succ})
        cont = [l for l, k in succ if k == "continuation"]
        div = [l for l, k in succ if k == "division"]
        if len(cont) > 1:
            violations.append(f"node {node} has {len(cont)} continuation successors")
        if div and len(div) < 2:
            violations.append(f"division at node {node} has {len(div)} child, needs >= 2")
        if len(kinds) > 1:
            violations.append(f"node {node} mixes outgoing edge kinds {kinds}")
        if "fusion" in kinds and len(succ) > 1:
            violations.append(f"fusion parent {node} has multiple successors")
    inc = f.in_edges_by_node()
    for node, pred in sorted(inc.items()):
        kinds = sorted({k for _, k in pred})
        cont = [e for e, k in pred if k == "continuation"]
        fus = [e for e, k in pred if k == "fusion"]
        if len(cont) > 1:
            violations.append(f"node {node} has {len(cont)} continuation predecessors")
        if fus and len(fus) < 2:
            violations.append(f"fusion at node {node} has {len(fus)} parent, needs >= 2")
        if len(kinds) > 1:
            violations.append(f"node {node} mixes incoming edge kinds {kinds}")
        if "division" in kinds and len(pred) > 1:
            violations.append(f"division child {node} has multiple predecessors")
    for seed in f.seeds:
        if seed not in f.nodes or f.nodes[seed].frame != f.final_frame:
            violations.append(f"seed label on non-final-frame node {seed}")
    return violations


def _nodes_by_descending_frame(f: LineageForest):
    return sorted(f.nodes, key=lambda i: (-f.nodes[i].frame, i))


@dataclass
class PropagationResult:
    labels: dict = field(default_factory=dict)
    conflicts: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.conflicts


def propagate_labels(f: LineageForest, seeds: dict) -> PropagationResult:
    """Flow final-frame labels backward along all edges.

    All-or-nothing: any node reached by two distinct labels yields a
    Conflict and no labels are committed. Idempotent. Nodes reaching no
    seed stay unlabeled (see find_uncategorizable).
    """
    if not seeds:
        raise LineageError("no seed labels given")
    for node, label in seeds.items():
        if node not in f.nodes or f.nodes[node].frame != f.final_frame:
            raise LineageError(f"seed on non-final-frame node {node}")
        if label not in LABELS:
            raise LineageError(f"unknown label {label!r}")
    out = f.out_edges_by_node()
    label_sets = {}
    seed_sets = {}
    # successors always live in later frames, so descending frame order is
    # a reverse topological order
    for node in _nodes_by_descending_frame(f):
        labels = set()
        contrib = set()
        if node in seeds:
            labels.add(seeds[node])
            contrib.add(node)
        for succ, _ in out.get(node, ()):
            labels |= label_sets.get(succ, set())
            contrib |= seed_sets.get(succ, set())
        label_sets[node] = labels
        seed_sets[node] = contrib
    conflicts = [Conflict(n, frozenset(label_sets[n]), frozenset(seed_sets[n]))
                 for n in sorted(label_sets) if len(label_sets[n]) > 1]
    if conflicts:
        return PropagationResult(labels={}, conflicts=conflicts)
    labels = {n: next(iter(s)) for n, s in label_sets.items() if s}
    return PropagationResult(labels=labels, conflicts=[])


def find_uncategorizable(f: LineageForest):
    """Ids of nodes with no directed path to any final-frame node."""
    out = f.out_edges_by_node()
    reaches = {}
    for node in _nodes_by_descending_frame(f):
        r = f.nodes[node].frame == f.final_frame
        if not r:
            r = any(reaches.get(succ, False) for succ, _ in out.get(node, ()))
        reaches[node] = r
    return {n for n, r in reaches.items() if not r}


def apply_edit(f: LineageForest, edit: dict) -> LineageForest:
    """Apply one correction atomically; invalid edits raise EditError.

    Ops: add-edge, remove-edge, set-event-kind, split-track, merge-tracks,
    set-seed-label.
    """
    op = edit.get("op")
    g = f.copy()
    if op == "add-edge":
        _require_nodes(g, edit, "earlier", "later")
        if edit["kind"] not in EDGE_KINDS:
            raise EditError(f"unknown edge kind {edit['kind']!r}")
        g.add_edge(edit["earlier"], edit["later"], edit["kind"])
    elif op == "remove-edge":
        key = (edit["earlier"], edit["later"], edit["kind"])
        if key not in g.edges:
            raise EditError(f"edge {key} not in forest")
        g.edges.remove(key)
    elif op == "set-event-kind":
        node = edit["node"]
        _require_nodes(g, edit, "node")
        old, new = edit["kind_from"], edit["kind_to"]
        if new not in EDGE_KINDS:
            raise EditError(f"unknown edge kind {new!r}")
        if old in ("continuation", "division"):
            targets = [(e, l, k) for e, l, k in g.edges if e == node and k == old]
        else:
            targets = [(e, l, k) for e, l, k in g.edges if l == node and k == old]
        if not targets:
            raise EditError(f"node {node} has no {old} event")
        for e, l, k in targets:
            g.edges.remove((e, l, k))
            g.edges.add((e, l, new))
    elif op == "split-track":
        node = edit["node"]
        _require_nodes(g, edit, "node")
        cont = [(e, l, k) for e, l, k in g.edges
                if e == node and k == "continuation"]
        if not cont:
            raise EditError(f"node {node} has no continuation successor")
        g.edges.remove(cont[0])
    elif op == "merge-tracks":
        _require_nodes(g, edit, "earlier", "later")
        g.add_edge(edit["earlier"], edit["later"], "continuation")
    elif op == "set-seed-label":
        node = edit["node"]
        _require_nodes(g, edit, "node")
        if g.nodes[node].frame != g.final_frame:
            raise EditError(f"seed label on non-final-frame node {node}")
        if edit["label"] not in LABELS:
            raise EditError(f"unknown label {edit['label']!r}")
        g.seeds[node] = edit["label"]
    else:
        raise EditError(f"unknown edit op {op!r}")
    violations = validate_forest(g)
    if violations:
        raise EditError("; ".join(violations))
    g.revision = f.revision + 1
    return g


def _require_nodes(g, edit, *keys):
    for key in keys:
        if edit.get(key) not in g.nodes:
            raise EditError(f"unknown node {edit.get(key)!r}")
