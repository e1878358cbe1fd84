/** View-state for one review session.
 *
 * The store mirrors the server: it remembers the last revision it saw
 * and sends it with every mutation. When the server answers 409 the
 * store refreshes its snapshot and retries the mutation once with the
 * fresh revision; a second 409 propagates to the caller (someone else is
 * actively editing the same sequence).
 */

import { ApiClient, StaleRevisionError } from "./client";
import type {
  CellAnnotation,
  Label,
  LabelConflict,
  PropagationOutcome,
  Proposal,
  SequenceInfo,
  TrackParamOverrides,
} from "./types";

export type SessionPhase =
  | "idle"
  | "loaded"
  | "tracked"
  | "labeled"
  | "conflict";

export class ReviewStore {
  private info: SequenceInfo | null = null;
  private frameIndex = 0;
  private readonly frameCache = new Map<number, CellAnnotation[]>();

  revision = 0;
  phase: SessionPhase = "idle";
  proposals: Proposal[] = [];
  labels: Record<string, Label> = {};
  uncategorizable: string[] = [];
  conflicts: LabelConflict[] = [];

  constructor(
    private readonly client: ApiClient,
    readonly sequenceId: string,
  ) {}

  // ---- loading / timeline ------------------------------------------

  async open(): Promise<void> {
    this.info = await this.client.getSequence(this.sequenceId);
    this.revision = this.info.revision;
    this.frameIndex = 0;
    this.frameCache.clear();
    this.phase = "loaded";
  }

  get frames(): number[] {
    if (!this.info) throw new Error("sequence not opened");
    return this.info.frames;
  }

  get currentFrame(): number {
    const f = this.frames[this.frameIndex];
    if (f === undefined) throw new Error("empty sequence");
    return f;
  }

  /** Jump the timeline to `frame` (clamped to the sequence range). */
  scrubTo(frame: number): number {
    const frames = this.frames;
    let best = 0;
    for (let i = 0; i < frames.length; i++) {
      if (frames[i]! <= frame) best = i;
    }
    this.frameIndex = frame < frames[0]! ? 0 : best;
    return this.currentFrame;
  }

  step(delta: number): number {
    const n = this.frames.length;
    this.frameIndex = Math.min(n - 1, Math.max(0, this.frameIndex + delta));
    return this.currentFrame;
  }

  async cellsAt(frame: number): Promise<CellAnnotation[]> {
    const cached = this.frameCache.get(frame);
    if (cached) return cached;
    const payload = await this.client.frameAnnotations(this.sequenceId, frame);
    this.frameCache.set(frame, payload.cells);
    return payload.cells;
  }

  // ---- revision handling -------------------------------------------

  /** Run a mutation with the current revision; on 409 refresh once and
   * retry with the server's revision. */
  private async withRevision<T extends { revision: number }>(
    fn: (revision: number) => Promise<T>,
  ): Promise<T> {
    try {
      const out = await fn(this.revision);
      this.revision = out.revision;
      return out;
    } catch (err) {
      if (!(err instanceof StaleRevisionError)) throw err;
      await this.refresh();
      const out = await fn(this.revision);
      this.revision = out.revision;
      return out;
    }
  }

  /** Re-sync revision and proposal queue from the server. */
  async refresh(): Promise<void> {
    const payload = await this.client.getProposals(this.sequenceId);
    this.revision = payload.revision;
    this.proposals = payload.proposals;
  }

  // ---- tracking / proposal review ----------------------------------

  async startTracking(params?: TrackParamOverrides): Promise<number> {
    const out = await this.withRevision((rev) =>
      this.client.startTracking(this.sequenceId, rev, params),
    );
    await this.refresh();
    this.labels = {};
    this.conflicts = [];
    this.phase = "tracked";
    return out.proposals;
  }

  /** Re-run tracking from scratch, e.g. after changing thresholds.
   * Discards the pending proposal queue and any propagated labels. */
  restartTracking(params?: TrackParamOverrides): Promise<number> {
    return this.startTracking(params);
  }

  /** Pending proposals in review order: earliest frame first, divisions
   * before fusions at the same frame. */
  get proposalQueue(): Proposal[] {
    return [...this.proposals].sort(
      (a, b) =>
        a.at_frame - b.at_frame ||
        a.kind.localeCompare(b.kind) ||
        a.id.localeCompare(b.id),
    );
  }

  async acceptProposal(pid: string): Promise<void> {
    await this.withRevision((rev) =>
      this.client.acceptProposal(this.sequenceId, pid, rev),
    );
    this.proposals = this.proposals.filter((p) => p.id !== pid);
  }

  async rejectProposal(pid: string): Promise<void> {
    await this.withRevision((rev) =>
      this.client.rejectProposal(this.sequenceId, pid, rev),
    );
    this.proposals = this.proposals.filter((p) => p.id !== pid);
  }

  // ---- labeling ----------------------------------------------------

  async seedLabels(labels: Record<string, Label>): Promise<void> {
    await this.withRevision((rev) =>
      this.client.putSeeds(this.sequenceId, rev, labels),
    );
  }

  async propagate(): Promise<PropagationOutcome> {
    const out = await this.client.propagate(this.sequenceId);
    this.revision = out.revision;
    if (out.ok) {
      this.labels = out.labels ?? {};
      this.uncategorizable = out.uncategorizable ?? [];
      this.conflicts = [];
      this.phase = "labeled";
    } else {
      this.conflicts = out.conflicts ?? [];
      this.labels = {};
      this.phase = "conflict";
    }
    return out;
  }

  /** Seed final-frame labels and immediately propagate them backward. */
  async seedAndPropagate(
    labels: Record<string, Label>,
  ): Promise<PropagationOutcome> {
    await this.seedLabels(labels);
    return this.propagate();
  }

  get hasConflicts(): boolean {
    return this.conflicts.length > 0;
  }

  labelOf(cellId: string): Label | null {
    return this.labels[cellId] ?? null;
  }
}
