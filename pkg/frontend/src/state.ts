/**
 * Explorer state and the what-if interaction loop.
 *
 * Toggling a patch flips its membership in the query subset and issues both a
 * what-if confidence query and a nearest-node query.  Responses carry the
 * sequence number of the query that produced them; anything older than the
 * latest query is discarded, so the readout always corresponds to the subset
 * on screen.  A failed round trip sets a stale-data flag and leaves the last
 * good readout in place.
 */

import { ExplorerApi, NearestResponse, SagGraph, WhatIfResponse } from "./api.js";

export interface ExplorerState {
  sagId: string | null;
  graph: SagGraph | null;
  querySubset: number[]; // sorted patch indices
  lastWhatIf: WhatIfResponse | null;
  nearest: NearestResponse | null;
  highlighted: number[]; // node ids at minimal distance in `nearest`
  stale: boolean;
  error: string | null;
}

export type Listener = (state: ExplorerState) => void;

function initialState(): ExplorerState {
  return {
    sagId: null,
    graph: null,
    querySubset: [],
    lastWhatIf: null,
    nearest: null,
    highlighted: [],
    stale: false,
    error: null,
  };
}

export function minimalDistanceIds(nearest: NearestResponse): number[] {
  if (nearest.node_ids.length === 0) {
    return [];
  }
  const best = Math.min(...nearest.distances);
  return nearest.node_ids.filter((_, i) => nearest.distances[i] === best);
}

export class ExplorerStore {
  state: ExplorerState = initialState();
  private sequence = 0;
  private listeners: Listener[] = [];

  constructor(private readonly api: ExplorerApi) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  async loadSag(sagId: string): Promise<void> {
    this.sequence += 1;
    try {
      const graph = await this.api.fetchSag(sagId);
      this.state = { ...initialState(), sagId, graph };
    } catch (err) {
      this.state = { ...initialState(), error: String(err) };
    }
    this.notify();
    if (this.state.graph) {
      await this.refreshQuery();
    }
  }

  patchCount(): number {
    const graph = this.state.graph;
    return graph ? graph.grid.rows * graph.grid.cols : 0;
  }

  async togglePatch(index: number): Promise<void> {
    if (!this.state.graph) {
      return;
    }
    if (!Number.isInteger(index) || index < 0 || index >= this.patchCount()) {
      throw new Error(`patch index ${index} out of grid bounds`);
    }
    const subset = new Set(this.state.querySubset);
    if (subset.has(index)) {
      subset.delete(index);
    } else {
      subset.add(index);
    }
    this.state = { ...this.state, querySubset: [...subset].sort((a, b) => a - b) };
    this.notify();
    await this.refreshQuery();
  }

  private async refreshQuery(): Promise<void> {
    const graph = this.state.graph;
    const sagId = this.state.sagId;
    if (!graph || !sagId) {
      return;
    }
    const seq = ++this.sequence;
    const patches = this.state.querySubset;
    try {
      const [whatIf, nearest] = await Promise.all([
        this.api.whatIf(graph.image_id, graph.class_index, patches),
        this.api.nearest(sagId, patches),
      ]);
      if (seq !== this.sequence) {
        return; // a newer query superseded this one
      }
      this.state = {
        ...this.state,
        lastWhatIf: whatIf,
        nearest,
        highlighted: minimalDistanceIds(nearest),
        stale: false,
      };
    } catch {
      if (seq !== this.sequence) {
        return;
      }
      this.state = { ...this.state, stale: true };
    }
    this.notify();
  }
}
