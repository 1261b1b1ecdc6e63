/**
 * Deterministic in-memory stand-in for the explanation service.
 *
 * It mirrors the service semantics the explorer depends on (nearest =
 * symmetric difference with node-id tie break) and records every confidence
 * it serves, so tests can assert that nothing on screen was invented
 * client-side.
 */

import {
  ExplorerApi,
  NearestResponse,
  SagGraph,
  SagNode,
  WhatIfResponse,
} from "../src/api.js";

function patchKey(patches: number[]): string {
  return [...patches].sort((a, b) => a - b).join(",");
}

export function buildFixtureSag(): SagGraph {
  // two overlapping size-3 roots with every one- and two-patch removal,
  // deduplicated by subset identity, exactly as the engine builds them
  const subsets: number[][] = [];
  const ids = new Map<string, number>();
  const isRoot = new Map<number, boolean>();
  const edges: { from: number; to: number }[] = [];
  const edgeSeen = new Set<string>();

  const intern = (subset: number[], root = false): number => {
    const key = patchKey(subset);
    if (!ids.has(key)) {
      ids.set(key, subsets.length);
      subsets.push([...subset].sort((a, b) => a - b));
      isRoot.set(ids.get(key)!, root);
    } else if (root) {
      isRoot.set(ids.get(key)!, true);
    }
    return ids.get(key)!;
  };

  const addEdge = (from: number, to: number): void => {
    const key = `${from}->${to}`;
    if (!edgeSeen.has(key)) {
      edgeSeen.add(key);
      edges.push({ from, to });
    }
  };

  for (const root of [[1, 2, 3], [2, 3, 4]]) {
    const rootId = intern(root, true);
    for (const removed of root) {
      const child = root.filter((p) => p !== removed);
      const childId = intern(child);
      addEdge(rootId, childId);
      for (const again of child) {
        const grandchildId = intern(child.filter((p) => p !== again));
        addEdge(childId, grandchildId);
      }
    }
  }

  const nodes: SagNode[] = subsets.map((patches, id) => ({
    id,
    patches,
    confidence: Math.max(0.05, 0.914 - 0.11 * (3 - patches.length)),
    is_root: isRoot.get(id) ?? false,
  }));
  return {
    image_id: "img_0001",
    class_index: 1,
    grid: { rows: 7, cols: 7 },
    full_confidence: 0.97,
    nodes,
    edges,
  };
}

export class MockApi implements ExplorerApi {
  graph: SagGraph;
  servedConfidences: number[] = [];
  whatIfByKey = new Map<string, WhatIfResponse>();
  defaultWhatIf: WhatIfResponse;
  failNext = false;
  pending: Array<{ resolve: (value: WhatIfResponse) => void; key: string }> = [];
  manualMode = false;

  constructor(graph: SagGraph = buildFixtureSag()) {
    this.graph = graph;
    this.defaultWhatIf = {
      confidence: 0.42,
      full_confidence: graph.full_confidence,
      ratio: 0.42 / graph.full_confidence,
    };
    // querying a node's exact subset returns its stored confidence, the same
    // way the live service recomputes the same number
    for (const node of graph.nodes) {
      this.whatIfByKey.set(patchKey(node.patches), {
        confidence: node.confidence,
        full_confidence: graph.full_confidence,
        ratio: node.confidence / graph.full_confidence,
      });
    }
  }

  async listSags(): Promise<string[]> {
    return [this.graph.image_id];
  }

  async fetchSag(): Promise<SagGraph> {
    for (const node of this.graph.nodes) {
      this.servedConfidences.push(node.confidence);
    }
    this.servedConfidences.push(this.graph.full_confidence);
    return this.graph;
  }

  whatIf(_imageId: string, _classIndex: number, patches: number[]): Promise<WhatIfResponse> {
    if (this.failNext) {
      return Promise.reject(new Error("service unreachable"));
    }
    const key = patchKey(patches);
    if (this.manualMode) {
      return new Promise((resolve) => {
        this.pending.push({
          key,
          resolve: (value) => {
            this.servedConfidences.push(value.confidence);
            resolve(value);
          },
        });
      });
    }
    const response = this.whatIfByKey.get(key) ?? this.defaultWhatIf;
    this.servedConfidences.push(response.confidence);
    return Promise.resolve(response);
  }

  /** Resolve the pending manual-mode query at `index` with its mapped response. */
  release(index: number): void {
    const entry = this.pending[index];
    const response = this.whatIfByKey.get(entry.key) ?? this.defaultWhatIf;
    entry.resolve(response);
  }

  async nearest(_sagId: string, patches: number[]): Promise<NearestResponse> {
    if (this.failNext) {
      throw new Error("service unreachable");
    }
    const query = new Set(patches);
    const ranked = this.graph.nodes
      .map((node) => {
        const other = new Set(node.patches);
        let distance = 0;
        for (const p of query) {
          if (!other.has(p)) distance += 1;
        }
        for (const p of other) {
          if (!query.has(p)) distance += 1;
        }
        return { id: node.id, distance };
      })
      .sort((a, b) => a.distance - b.distance || a.id - b.id);
    return {
      node_ids: ranked.map((r) => r.id),
      distances: ranked.map((r) => r.distance),
    };
  }

  renderUrl(imageId: string, patches: number[], classIndex?: number): string {
    const suffix = classIndex === undefined ? "" : `&class_index=${classIndex}`;
    return `/render?image_id=${imageId}&patches=${patches.join(",")}${suffix}`;
  }
}
