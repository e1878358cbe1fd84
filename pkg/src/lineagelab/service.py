"""HTTP API for the interactive review workflow.

Sequences are held in memory per session; every mutating call carries the
client's last-seen revision and is rejected with 409 when stale. Division
and fusion detections are surfaced as proposals and only enter the forest
when accepted. The accepted-mutation log replays to the current forest.
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import datastore
from .lineage import (EditError, LineageForest, apply_edit,
                      find_uncategorizable, propagate_labels, validate_forest)
from .tracking import (CONTINUATION, DIVISION, FUSION, TrackParams,
                       TrackState, TrackingError)


class Session:
    def __init__(self, sid, manifest):
        self.sid = sid
        self.manifest = manifest
        self.revision = 0
        self.state = None
        self.forest = LineageForest(final_frame=manifest.frames[-1])
        for c in manifest.all_cells():
            self.forest.add_node(c)
        self.proposals = {}
        self.proposal_counter = 0
        self.mutation_log = []

    def bump(self, mutation):
        self.revision += 1
        self.forest.revision = self.revision
        self.mutation_log.append(mutation)

    def add_proposal(self, event):
        self.proposal_counter += 1
        pid = f"p{self.proposal_counter:04d}"
        self.proposals[pid] = event
        return pid


def _event_edges(event):
    if event.kind == DIVISION:
        return [(event.earlier[0], child, "division") for child in event.later]
    if event.kind == FUSION:
        return [(parent, event.later[0], "fusion") for parent in event.earlier]
    return [(event.earlier[0], event.later[0], "continuation")]


def _cell_payload(c):
    return {
        "id": c.id,
        "frame": c.frame,
        "roi": c.roi,
        "polygon": [[float(x), float(y)] for x, y in c.mask.polygon],
        "bbox": [c.bbox.x_min, c.bbox.y_min, c.bbox.x_max, c.bbox.y_max],
        "centroid": list(c.centroid),
        "label": c.label if c.label in ("iPSC", "DfC") else None,
        "confidence": c.confidence,
        "track": c.track,
    }


def _forest_payload(s: Session):
    return {
        "revision": s.revision,
        "final_frame": s.forest.final_frame,
        "nodes": sorted(s.forest.nodes),
        "edges": [{"earlier": e, "later": l, "kind": k}
                  for e, l, k in sorted(s.forest.edges)],
        "seeds": dict(sorted(s.forest.seeds.items())),
    }


def create_app(data_dir=None) -> FastAPI:
    app = FastAPI(title="lineagelab review service")
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    if data_dir:
        for path in sorted(Path(data_dir).glob("*.jsonl")):
            try:
                manifest = datastore.load_annotations(path)
            except (datastore.DatastoreError, json.JSONDecodeError):
                continue
            sessions[manifest.roi] = Session(manifest.roi, manifest)

    def get_session(sid) -> Session:
        if sid not in sessions:
            raise HTTPException(404, f"unknown sequence {sid!r}")
        return sessions[sid]

    def check_revision(s: Session, body):
        if body.get("revision") != s.revision:
            raise HTTPException(
                409, {"error": "stale revision",
                      "current_revision": s.revision})

    @app.get("/api/v1/sequences")
    def list_sequences():
        return [{"id": s.sid, "frames": s.manifest.frames,
                 "revision": s.revision,
                 "n_cells": sum(len(v) for v in
                                s.manifest.cells_by_frame.values())}
                for s in sessions.values()]

    @app.post("/api/v1/sequences", status_code=201)
    def create_sequence(body: dict):
        meta = body["meta"]
        manifest = datastore.SequenceManifest(
            roi=meta["roi"], frame_size=tuple(meta["frame_size"]),
            frames=list(meta["frames"]),
            provenance=meta.get("provenance", "manual"))
        for rec in body.get("cells", []):
            cell = datastore._cell_from_record(
                {**rec, "type": "cell"}, manifest.frame_size)
            manifest.cells_by_frame.setdefault(cell.frame, []).append(cell)
        for f in manifest.cells_by_frame:
            manifest.cells_by_frame[f].sort(key=lambda c: c.id)
        sessions[manifest.roi] = Session(manifest.roi, manifest)
        return {"id": manifest.roi, "revision": 0}

    @app.get("/api/v1/sequences/{sid}")
    def get_sequence(sid: str):
        s = get_session(sid)
        return {"id": s.sid, "frames": s.manifest.frames,
                "frame_size": list(s.manifest.frame_size),
                "revision": s.revision,
                "final_frame": s.forest.final_frame}

    @app.get("/api/v1/sequences/{sid}/frames/{frame}/annotations")
    def get_frame_annotations(sid: str, frame: int):
        s = get_session(sid)
        if frame not in s.manifest.frames:
            raise HTTPException(404, f"unknown frame {frame}")
        cells = s.manifest.cells_by_frame.get(frame, [])
        return {"revision": s.revision, "frame": frame,
                "cells": [_cell_payload(c) for c in cells]}

    @app.post("/api/v1/sequences/{sid}/track")
    def start_tracking(sid: str, body: dict = None):
        s = get_session(sid)
        body = body or {}
        check_revision(s, body)
        params = TrackParams(**body.get("params", {}))
        try:
            s.state = TrackState(s.manifest.as_track_frames(), params)
            s.state.run()
        except TrackingError as e:
            raise HTTPException(422, str(e))
        _rebuild_from_state(s)
        s.proposals.clear()
        for ev in s.state.events():
            if ev.kind in (DIVISION, FUSION):
                s.add_proposal(ev)
        s.bump({"op": "track", "params": body.get("params", {})})
        return {"revision": s.revision,
                "proposals": len(s.proposals),
                "edges": len(s.forest.edges)}

    def _rebuild_from_state(s: Session):
        # continuation edges commit immediately; division/fusion wait for
        # proposal acceptance
        forest = LineageForest(final_frame=s.manifest.frames[-1])
        for c in s.manifest.all_cells():
            forest.add_node(c)
        for ev in s.state.events():
            if ev.kind == CONTINUATION:
                forest.add_edge(ev.earlier[0], ev.later[0], "continuation")
        forest.seeds = dict(s.forest.seeds)
        s.forest = forest

    @app.get("/api/v1/sequences/{sid}/proposals")
    def get_proposals(sid: str):
        s = get_session(sid)
        return {"revision": s.revision,
                "proposals": [
                    {"id": pid, "kind": ev.kind, "at_frame": ev.at_frame,
                     "earlier": list(ev.earlier), "later": list(ev.later)}
                    for pid, ev in sorted(s.proposals.items())]}

    @app.post("/api/v1/sequences/{sid}/proposals/{pid}/accept")
    def accept_proposal(sid: str, pid: str, body: dict):
        s = get_session(sid)
        check_revision(s, body)
        if pid not in s.proposals:
            raise HTTPException(404, f"unknown proposal {pid!r}")
        ev = s.proposals[pid]
        g = s.forest.copy()
        for e, l, k in _event_edges(ev):
            g.add_edge(e, l, k)
        violations = validate_forest(g)
        if violations:
            raise HTTPException(422, {"error": "invariant violation",
                                      "violations": violations})
        s.forest = g
        del s.proposals[pid]
        s.bump({"op": "accept", "proposal": pid,
                "edges": _event_edges(ev)})
        return {"revision": s.revision}

    @app.post("/api/v1/sequences/{sid}/proposals/{pid}/reject")
    def reject_proposal(sid: str, pid: str, body: dict):
        s = get_session(sid)
        check_revision(s, body)
        if pid not in s.proposals:
            raise HTTPException(404, f"unknown proposal {pid!r}")
        del s.proposals[pid]
        s.bump({"op": "reject", "proposal": pid})
        return {"revision": s.revision}

    @app.post("/api/v1/sequences/{sid}/edits")
    def post_edit(sid: str, body: dict):
        s = get_session(sid)
        check_revision(s, body)
        try:
            s.forest = apply_edit(s.forest, body["edit"])
        except EditError as e:
            raise HTTPException(422, {"error": "invariant violation",
                                      "reason": e.reason})
        s.bump({"op": "edit", "edit": body["edit"]})
        return {"revision": s.revision}

    @app.post("/api/v1/sequences/{sid}/resume")
    def resume(sid: str, body: dict):
        s = get_session(sid)
        check_revision(s, body)
        if s.state is None:
            raise HTTPException(422, "tracking has not been started")
        corrections = {}
        for rec in body.get("corrections", []):
            cell = datastore._cell_from_record(
                {**rec, "type": "cell"}, s.manifest.frame_size)
            corrections[cell.id] = cell
        try:
            s.state.resume(body["frame"], corrections)
        except TrackingError as e:
            raise HTTPException(422, str(e))
        _rebuild_from_state(s)
        s.proposals.clear()
        for ev in s.state.events():
            if ev.kind in (DIVISION, FUSION):
                s.add_proposal(ev)
        s.bump({"op": "resume", "frame": body["frame"]})
        return {"revision": s.revision, "proposals": len(s.proposals)}

    @app.put("/api/v1/sequences/{sid}/seeds")
    def put_seeds(sid: str, body: dict):
        s = get_session(sid)
        check_revision(s, body)
        final = s.forest.final_frame
        for node, label in body.get("labels", {}).items():
            if node not in s.forest.nodes:
                raise HTTPException(404, f"unknown node {node!r}")
            if s.forest.nodes[node].frame != final:
                raise HTTPException(
                    422, {"error": "invariant violation",
                          "reason": f"seed label on non-final-frame node {node}"})
            if label not in ("iPSC", "DfC"):
                raise HTTPException(422, {"error": "invariant violation",
                                          "reason": f"unknown label {label!r}"})
        s.forest.seeds.update(body.get("labels", {}))
        s.bump({"op": "seeds", "labels": body.get("labels", {})})
        return {"revision": s.revision, "seeds": dict(sorted(s.forest.seeds.items()))}

    @app.post("/api/v1/sequences/{sid}/propagate")
    def propagate(sid: str, body: dict = None):
        s = get_session(sid)
        if not s.forest.seeds:
            raise HTTPException(422, "no seed labels set")
        result = propagate_labels(s.forest, s.forest.seeds)
        if not result.ok:
            return JSONResponse({
                "revision": s.revision, "ok": False,
                "conflicts": [{"node": c.node, "labels": sorted(c.labels),
                               "seeds": sorted(c.seeds)}
                              for c in result.conflicts]})
        return {"revision": s.revision, "ok": True,
                "labels": dict(sorted(result.labels.items())),
                "uncategorizable": sorted(find_uncategorizable(s.forest))}

    @app.get("/api/v1/sequences/{sid}/forest")
    def get_forest(sid: str):
        return _forest_payload(get_session(sid))

    @app.get("/api/v1/sequences/{sid}/metrics")
    def get_metrics(sid: str):
        s = get_session(sid)
        kinds = {}
        for _, _, k in s.forest.edges:
            kinds[k] = kinds.get(k, 0) + 1
        return {"revision": s.revision,
                "edge_counts": kinds,
                "pending_proposals": len(s.proposals),
                "uncategorizable": sorted(find_uncategorizable(s.forest)),
                "violations": validate_forest(s.forest)}

    return app


app = create_app()

if __name__ == "__main__":  # pragma: no cover
    import os

    import uvicorn

    uvicorn.run(create_app(os.environ.get("LINEAGELAB_DATA")),
                host="127.0.0.1", port=int(os.environ.get("PORT", "8077")))
