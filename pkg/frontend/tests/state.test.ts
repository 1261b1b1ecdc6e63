import { describe, expect, it } from "vitest";

import { ExplorerStore, minimalDistanceIds } from "../src/state.js";
import { MockApi } from "./mock.js";

async function loadedStore(): Promise<{ api: MockApi; store: ExplorerStore }> {
  const api = new MockApi();
  const store = new ExplorerStore(api);
  await store.loadSag("img_0001");
  return { api, store };
}

describe("ExplorerStore", () => {
  it("loads a graph and issues the empty-subset query", async () => {
    const { store } = await loadedStore();
    expect(store.state.graph?.nodes.length).toBeGreaterThan(0);
    expect(store.state.querySubset).toEqual([]);
    // the readout is whatever the service answered for the empty subset
    expect(store.state.lastWhatIf?.confidence).toBeCloseTo(0.42, 10);
    expect(store.state.highlighted.length).toBeGreaterThan(0);
  });

  it("toggling flips membership and toggling twice restores the state", async () => {
    const { store } = await loadedStore();
    const before = { ...store.state, querySubset: [...store.state.querySubset] };
    await store.togglePatch(5);
    expect(store.state.querySubset).toEqual([5]);
    await store.togglePatch(5);
    expect(store.state.querySubset).toEqual(before.querySubset);
    expect(store.state.lastWhatIf).toEqual(before.lastWhatIf);
    expect(store.state.highlighted).toEqual(before.highlighted);
  });

  it("rejects out-of-bounds patch indices", async () => {
    const { store } = await loadedStore();
    await expect(store.togglePatch(49)).rejects.toThrow(/out of grid bounds/);
    await expect(store.togglePatch(-1)).rejects.toThrow(/out of grid bounds/);
    expect(store.state.querySubset).toEqual([]);
  });

  it("highlighted nodes always equal the minimal-distance nearest response", async () => {
    const { api, store } = await loadedStore();
    await store.togglePatch(1);
    await store.togglePatch(2);
    await store.togglePatch(3);
    const nearest = await api.nearest("img_0001", [1, 2, 3]);
    expect(store.state.highlighted).toEqual(minimalDistanceIds(nearest));
    expect(store.state.nearest).toEqual(nearest);
  });

  it("discards responses from superseded queries", async () => {
    const { api, store } = await loadedStore();
    api.manualMode = true;

    const first = store.togglePatch(1); // query for {1} stays pending
    const second = store.togglePatch(2); // query for {1,2} stays pending
    expect(api.pending.length).toBe(2);

    api.release(1); // newest query resolves first
    await second;
    const settled = store.state.lastWhatIf;
    expect(store.state.querySubset).toEqual([1, 2]);

    api.release(0); // the stale {1} response must be dropped
    await first;
    expect(store.state.lastWhatIf).toEqual(settled);
    expect(store.state.querySubset).toEqual([1, 2]);
  });

  it("marks the readout stale when the service is unreachable, preserving state", async () => {
    const { api, store } = await loadedStore();
    await store.togglePatch(4);
    const lastGood = store.state.lastWhatIf;

    api.failNext = true;
    await store.togglePatch(5);
    expect(store.state.stale).toBe(true);
    expect(store.state.lastWhatIf).toEqual(lastGood); // last good readout kept
    expect(store.state.querySubset).toEqual([4, 5]);

    api.failNext = false;
    await store.togglePatch(5);
    expect(store.state.stale).toBe(false);
  });

  it("reports a load error without a partial graph", async () => {
    const api = new MockApi();
    api.fetchSag = async () => {
      throw new Error("boom");
    };
    const store = new ExplorerStore(api);
    await store.loadSag("img_0001");
    expect(store.state.graph).toBeNull();
    expect(store.state.error).toContain("boom");
  });
});
