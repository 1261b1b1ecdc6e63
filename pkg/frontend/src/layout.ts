/** Layering for the DAG view: roots on top, then minus-one, then minus-two. */

import { SagGraph, SagNode } from "./api.js";

export interface Layer {
  size: number;
  nodes: SagNode[];
}

export function layerBySubsetSize(graph: SagGraph): Layer[] {
  const bySize = new Map<number, SagNode[]>();
  for (const node of graph.nodes) {
    const size = node.patches.length;
    const bucket = bySize.get(size);
    if (bucket) {
      bucket.push(node);
    } else {
      bySize.set(size, [node]);
    }
  }
  const sizes = [...bySize.keys()].sort((a, b) => b - a);
  return sizes.map((size) => ({
    size,
    nodes: bySize.get(size)!.slice().sort((a, b) => a.id - b.id),
  }));
}
