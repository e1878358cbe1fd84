/** Thin typed client for the review service. Every method maps to one
 * endpoint; mutating calls carry the caller's last-seen revision and a
 * stale revision surfaces as StaleRevisionError so view code can refresh
 * and retry. */

import type {
  CellAnnotation,
  CellRecord,
  ForestEdit,
  ForestSnapshot,
  PropagationOutcome,
  Proposal,
  SequenceInfo,
  SequenceMeta,
  SequenceMetrics,
  SequenceSummary,
  TrackParamOverrides,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
    message?: string,
  ) {
    super(message ?? `request failed with status ${status}`);
    this.name = "ApiError";
  }
}

/** The server rejected a mutation because our revision is out of date. */
export class StaleRevisionError extends ApiError {
  constructor(readonly currentRevision: number, detail: unknown) {
    super(409, detail, `stale revision; server is at ${currentRevision}`);
    this.name = "StaleRevisionError";
  }
}

/** The edit would violate a forest invariant; `reason` names it. */
export class InvariantError extends ApiError {
  constructor(readonly reason: string, detail: unknown) {
    super(422, detail, reason);
    this.name = "InvariantError";
  }
}

export class ApiClient {
  constructor(private readonly baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const res = await fetch(`${this.baseUrl}/api/v1${path}`, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = res.status === 204 ? null : await res.json();
    if (res.ok) return payload as T;

    const detail = (payload as { detail?: unknown })?.detail ?? payload;
    if (res.status === 409) {
      const rev = (detail as { current_revision?: number })?.current_revision;
      throw new StaleRevisionError(rev ?? -1, detail);
    }
    if (res.status === 422) {
      const reason =
        (detail as { reason?: string })?.reason ?? String(detail);
      throw new InvariantError(reason, detail);
    }
    throw new ApiError(res.status, detail);
  }

  listSequences(): Promise<SequenceSummary[]> {
    return this.request("GET", "/sequences");
  }

  createSequence(
    meta: SequenceMeta,
    cells: CellRecord[],
  ): Promise<{ id: string; revision: number }> {
    return this.request("POST", "/sequences", { meta, cells });
  }

  getSequence(sid: string): Promise<SequenceInfo> {
    return this.request("GET", `/sequences/${sid}`);
  }

  frameAnnotations(
    sid: string,
    frame: number,
  ): Promise<{ revision: number; frame: number; cells: CellAnnotation[] }> {
    return this.request("GET", `/sequences/${sid}/frames/${frame}/annotations`);
  }

  startTracking(
    sid: string,
    revision: number,
    params?: TrackParamOverrides,
  ): Promise<{ revision: number; proposals: number; edges: number }> {
    return this.request("POST", `/sequences/${sid}/track`, {
      revision,
      ...(params ? { params } : {}),
    });
  }

  resumeTracking(
    sid: string,
    revision: number,
    frame: number,
    corrections: CellRecord[] = [],
  ): Promise<{ revision: number; proposals: number }> {
    return this.request("POST", `/sequences/${sid}/resume`, {
      revision,
      frame,
      corrections,
    });
  }

  getProposals(
    sid: string,
  ): Promise<{ revision: number; proposals: Proposal[] }> {
    return this.request("GET", `/sequences/${sid}/proposals`);
  }

  acceptProposal(
    sid: string,
    pid: string,
    revision: number,
  ): Promise<{ revision: number }> {
    return this.request("POST", `/sequences/${sid}/proposals/${pid}/accept`, {
      revision,
    });
  }

  rejectProposal(
    sid: string,
    pid: string,
    revision: number,
  ): Promise<{ revision: number }> {
    return this.request("POST", `/sequences/${sid}/proposals/${pid}/reject`, {
      revision,
    });
  }

  putSeeds(
    sid: string,
    revision: number,
    labels: Record<string, string>,
  ): Promise<{ revision: number; seeds: Record<string, string> }> {
    return this.request("PUT", `/sequences/${sid}/seeds`, { revision, labels });
  }

  propagate(sid: string): Promise<PropagationOutcome> {
    return this.request("POST", `/sequences/${sid}/propagate`, {});
  }

  postEdit(
    sid: string,
    revision: number,
    edit: ForestEdit,
  ): Promise<{ revision: number }> {
    return this.request("POST", `/sequences/${sid}/edits`, { revision, edit });
  }

  getForest(sid: string): Promise<ForestSnapshot> {
    return this.request("GET", `/sequences/${sid}/forest`);
  }

  getMetrics(sid: string): Promise<SequenceMetrics> {
    return this.request("GET", `/sequences/${sid}/metrics`);
  }
}
