/** End-to-end review session against the real service.
 *
 * The fixture is a simulated 10-frame sequence with known ground truth:
 * the expected propagated labels, the final-frame seed labels, and a
 * pair of seed labels engineered to conflict at a division ancestor.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, StaleRevisionError } from "../src/client";
import { fnv1a, trackColor } from "../src/colors";
import { ReviewStore } from "../src/store";
import type { CellRecord, Label, SequenceMeta } from "../src/types";

import { type ServiceHandle, startService } from "./server";

interface Fixture {
  meta: SequenceMeta;
  cells: CellRecord[];
  seeds: Record<string, Label>;
  expected_labels: Record<string, Label>;
  conflict: { parent: string; seeds: Record<string, Label> };
}

const here = dirname(fileURLToPath(import.meta.url));
const fixture: Fixture = JSON.parse(
  readFileSync(join(here, "fixtures", "session.json"), "utf-8"),
);

let service: ServiceHandle;
let client: ApiClient;
let store: ReviewStore;

beforeAll(async () => {
  service = await startService();
  client = new ApiClient(service.baseUrl);
  const created = await client.createSequence(fixture.meta, fixture.cells);
  expect(created).toEqual({ id: fixture.meta.roi, revision: 0 });
  store = new ReviewStore(client, fixture.meta.roi);
  await store.open();
}, 60000);

afterAll(() => {
  service?.stop();
});

describe("review session", () => {
  it("opens the sequence and scrubs the timeline", async () => {
    expect(store.frames).toEqual(fixture.meta.frames);
    expect(store.currentFrame).toBe(fixture.meta.frames[0]);

    const mid = fixture.meta.frames[4]!;
    expect(store.scrubTo(mid)).toBe(mid);
    expect(store.step(1)).toBe(fixture.meta.frames[5]);
    expect(store.step(-100)).toBe(fixture.meta.frames[0]);
    expect(store.scrubTo(10_000)).toBe(fixture.meta.frames.at(-1));

    const cells = await store.cellsAt(store.frames[0]!);
    expect(cells.length).toBeGreaterThan(0);
    expect(cells[0]).toHaveProperty("polygon");
    expect(cells[0]).toHaveProperty("bbox");
  });

  it("tracks and queues division/fusion proposals", async () => {
    const n = await store.startTracking();
    expect(n).toBeGreaterThanOrEqual(2);
    expect(store.phase).toBe("tracked");

    const queue = store.proposalQueue;
    expect(queue.map((p) => p.kind)).toContain("Division");
    expect(queue.map((p) => p.kind)).toContain("Fusion");
    // queue is ordered by frame for front-to-back review
    const frames = queue.map((p) => p.at_frame);
    expect(frames).toEqual([...frames].sort((a, b) => a - b));
  });

  it("accepts a division proposal, adding its edges to the forest", async () => {
    const division = store.proposalQueue.find((p) => p.kind === "Division")!;
    expect(division.earlier).toHaveLength(1);
    expect(division.later.length).toBeGreaterThanOrEqual(2);

    const before = await client.getForest(store.sequenceId);
    await store.acceptProposal(division.id);
    const after = await client.getForest(store.sequenceId);

    expect(after.edges.length).toBe(
      before.edges.length + division.later.length,
    );
    for (const child of division.later) {
      expect(after.edges).toContainEqual({
        earlier: division.earlier[0],
        later: child,
        kind: "division",
      });
    }
    expect(store.proposalQueue.map((p) => p.id)).not.toContain(division.id);
  });

  it("recovers from a stale revision with one refresh-and-retry", async () => {
    // a second client mutates behind the store's back
    const other = new ApiClient(service.baseUrl);
    const proposals = await other.getProposals(store.sequenceId);
    const victim = proposals.proposals[0]!;
    await other.acceptProposal(
      store.sequenceId,
      victim.id,
      proposals.revision,
    );

    // the raw client sees the conflict ...
    await expect(
      client.putSeeds(store.sequenceId, store.revision, {}),
    ).rejects.toBeInstanceOf(StaleRevisionError);

    // ... while the store refreshes and retries transparently
    const next = store.proposalQueue.find((p) => p.id !== victim.id)!;
    await store.acceptProposal(next.id);
    const forest = await client.getForest(store.sequenceId);
    expect(store.revision).toBe(forest.revision);
  });

  it("seeds two labels, then the rest, and propagates exactly", async () => {
    while (store.proposalQueue.length > 0) {
      await store.acceptProposal(store.proposalQueue[0]!.id);
    }

    const entries = Object.entries(fixture.seeds) as [string, Label][];
    const firstTwo = Object.fromEntries(entries.slice(0, 2));
    const rest = Object.fromEntries(entries.slice(2));

    await store.seedLabels(firstTwo);
    const outcome = await store.seedAndPropagate(rest);

    expect(outcome.ok).toBe(true);
    expect(store.phase).toBe("labeled");
    expect(store.hasConflicts).toBe(false);
    // every propagated label matches the service's ground truth
    expect(store.labels).toEqual(fixture.expected_labels);
    expect(store.labelOf(entries[0]![0])).toBe(entries[0]![1]);

    const metrics = await client.getMetrics(store.sequenceId);
    expect(metrics.violations).toEqual([]);
    expect(metrics.pending_proposals).toBe(0);
  });

  it("flags an engineered seed conflict at the division ancestor", async () => {
    const outcome = await store.seedAndPropagate(fixture.conflict.seeds);

    expect(outcome.ok).toBe(false);
    expect(store.phase).toBe("conflict");
    expect(store.hasConflicts).toBe(true);
    expect(store.labels).toEqual({});

    const nodes = store.conflicts.map((c) => c.node);
    expect(nodes).toContain(fixture.conflict.parent);
    const hit = store.conflicts.find(
      (c) => c.node === fixture.conflict.parent,
    )!;
    expect([...hit.labels].sort()).toEqual(["DfC", "iPSC"]);
  });
});

describe("track colors", () => {
  it("hashes stably and spreads hues", () => {
    expect(fnv1a("n00001")).toBe(fnv1a("n00001"));
    expect(trackColor("n00001")).toBe(trackColor("n00001"));
    const hues = new Set(
      Array.from({ length: 50 }, (_, i) => trackColor(`n${i}`)),
    );
    expect(hues.size).toBeGreaterThan(30);
  });
});
