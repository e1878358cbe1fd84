/** Wire types for the lineagelab review service (/api/v1). */

export type Label = "iPSC" | "DfC";

export type EdgeKind = "continuation" | "division" | "fusion";

/** Minimal cell record accepted when creating a sequence. */
export interface CellRecord {
  roi: string;
  frame: number;
  id: string;
  polygon: [number, number][];
  label?: string;
  confidence?: number;
}

/** Cell as returned by the frame-annotations endpoint. */
export interface CellAnnotation {
  id: string;
  frame: number;
  roi: string;
  polygon: [number, number][];
  bbox: [number, number, number, number];
  centroid: [number, number];
  label: Label | null;
  confidence: number | null;
  track: string | null;
}

export interface SequenceMeta {
  roi: string;
  frame_size: [number, number];
  frames: number[];
  provenance?: string;
}

export interface SequenceSummary {
  id: string;
  frames: number[];
  revision: number;
  n_cells: number;
}

export interface SequenceInfo {
  id: string;
  frames: number[];
  frame_size: [number, number];
  revision: number;
  final_frame: number;
}

export interface Proposal {
  id: string;
  kind: "Division" | "Fusion";
  at_frame: number;
  earlier: string[];
  later: string[];
}

export interface ForestEdge {
  earlier: string;
  later: string;
  kind: EdgeKind;
}

export interface ForestSnapshot {
  revision: number;
  final_frame: number;
  nodes: string[];
  edges: ForestEdge[];
  seeds: Record<string, Label>;
}

export interface LabelConflict {
  node: string;
  labels: Label[];
  seeds: string[];
}

export interface PropagationOutcome {
  revision: number;
  ok: boolean;
  labels?: Record<string, Label>;
  uncategorizable?: string[];
  conflicts?: LabelConflict[];
}

export interface SequenceMetrics {
  revision: number;
  edge_counts: Partial<Record<EdgeKind, number>>;
  pending_proposals: number;
  uncategorizable: string[];
  violations: string[];
}

/** Subset of tracker thresholds the reviewer may override. */
export interface TrackParamOverrides {
  iou_gate?: number;
  centroid_gate?: number;
  event_overlap_min?: number;
  shape_change_max?: number;
}

export interface ForestEdit {
  op: string;
  [key: string]: unknown;
}
