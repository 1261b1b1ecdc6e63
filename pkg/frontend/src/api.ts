/**
 * Typed client for the explanation service.
 *
 * The explorer never computes model outputs on its own: every confidence it
 * shows comes back from one of these endpoints.
 */

export interface SagNode {
  id: number;
  patches: number[];
  confidence: number;
  is_root: boolean;
}

export interface SagEdge {
  from: number;
  to: number;
}

export interface SagGraph {
  image_id: string;
  class_index: number;
  grid: { rows: number; cols: number };
  full_confidence: number;
  nodes: SagNode[];
  edges: SagEdge[];
}

export interface WhatIfResponse {
  confidence: number;
  full_confidence: number;
  ratio: number | null;
}

export interface NearestResponse {
  node_ids: number[];
  distances: number[];
}

export interface ExplorerApi {
  listSags(): Promise<string[]>;
  fetchSag(id: string): Promise<SagGraph>;
  whatIf(imageId: string, classIndex: number, patches: number[]): Promise<WhatIfResponse>;
  nearest(sagId: string, patches: number[]): Promise<NearestResponse>;
  renderUrl(imageId: string, patches: number[], classIndex?: number): string;
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    throw new Error(`service error ${response.status}: ${await response.text()}`);
  }
  return (await response.json()) as T;
}

export class HttpApi implements ExplorerApi {
  constructor(private readonly baseUrl: string) {}

  async listSags(): Promise<string[]> {
    const body = await asJson<{ sag_ids: string[] }>(await fetch(`${this.baseUrl}/sags`));
    return body.sag_ids;
  }

  async fetchSag(id: string): Promise<SagGraph> {
    return asJson<SagGraph>(await fetch(`${this.baseUrl}/sags/${encodeURIComponent(id)}`));
  }

  async whatIf(imageId: string, classIndex: number, patches: number[]): Promise<WhatIfResponse> {
    const response = await fetch(`${this.baseUrl}/whatif`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ image_id: imageId, class_index: classIndex, patches }),
    });
    return asJson<WhatIfResponse>(response);
  }

  async nearest(sagId: string, patches: number[]): Promise<NearestResponse> {
    const query = patches.join(",");
    return asJson<NearestResponse>(
      await fetch(`${this.baseUrl}/nearest?sag_id=${encodeURIComponent(sagId)}&patches=${query}`),
    );
  }

  renderUrl(imageId: string, patches: number[], classIndex?: number): string {
    const params = new URLSearchParams({ image_id: imageId, patches: patches.join(",") });
    if (classIndex !== undefined) {
      params.set("class_index", String(classIndex));
    }
    return `${this.baseUrl}/render?${params.toString()}`;
  }
}
