/**
 * DOM rendering for the explorer.
 *
 * Every confidence on screen is a value received from the service: node
 * badges come from the SAG JSON, the readout from the latest what-if
 * response.  Nothing is recomputed client-side.
 */

import { ExplorerApi, SagGraph } from "./api.js";
import { formatPercent } from "./format.js";
import { layerBySubsetSize } from "./layout.js";
import { ExplorerState } from "./state.js";

export function renderError(container: HTMLElement, message: string): void {
  container.replaceChildren();
  const banner = document.createElement("div");
  banner.className = "error-banner";
  banner.textContent = message;
  container.appendChild(banner);
}

export function renderSag(
  container: HTMLElement,
  graph: SagGraph,
  api: ExplorerApi,
  onTogglePatch: (index: number) => void,
): void {
  container.replaceChildren();

  const header = document.createElement("header");
  header.className = "sag-header";
  header.textContent =
    `${graph.image_id} / class ${graph.class_index} — ` +
    `full confidence ${formatPercent(graph.full_confidence)}`;
  container.appendChild(header);

  container.appendChild(buildQueryPanel(graph, onTogglePatch));

  if (graph.nodes.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "This graph has no explanations to show.";
    container.appendChild(empty);
    return;
  }

  const dag = document.createElement("div");
  dag.className = "sag-graph";
  for (const layer of layerBySubsetSize(graph)) {
    const row = document.createElement("div");
    row.className = "sag-layer";
    row.dataset.size = String(layer.size);
    for (const node of layer.nodes) {
      const card = document.createElement("figure");
      card.className = node.is_root ? "sag-node root" : "sag-node";
      card.dataset.nodeId = String(node.id);

      const img = document.createElement("img");
      img.src = api.renderUrl(graph.image_id, node.patches, graph.class_index);
      img.alt = `patches ${node.patches.join(", ") || "none"}`;
      card.appendChild(img);

      const caption = document.createElement("figcaption");
      caption.className = "confidence";
      caption.textContent = formatPercent(node.confidence);
      card.appendChild(caption);
      row.appendChild(card);
    }
    dag.appendChild(row);
  }
  container.appendChild(dag);

  const edges = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  edges.setAttribute("class", "sag-edges");
  for (const edge of graph.edges) {
    const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
    line.setAttribute("data-from", String(edge.from));
    line.setAttribute("data-to", String(edge.to));
    edges.appendChild(line);
  }
  container.appendChild(edges);
}

function buildQueryPanel(
  graph: SagGraph,
  onTogglePatch: (index: number) => void,
): HTMLElement {
  const panel = document.createElement("section");
  panel.className = "query-panel";

  const grid = document.createElement("div");
  grid.className = "patch-grid";
  grid.style.setProperty("--cols", String(graph.grid.cols));
  for (let index = 0; index < graph.grid.rows * graph.grid.cols; index += 1) {
    const cell = document.createElement("button");
    cell.className = "patch-cell";
    cell.dataset.index = String(index);
    cell.addEventListener("click", () => onTogglePatch(index));
    grid.appendChild(cell);
  }
  panel.appendChild(grid);

  const readout = document.createElement("div");
  readout.className = "whatif-readout";
  readout.textContent = "Toggle patches to query the classifier.";
  panel.appendChild(readout);
  return panel;
}

export function applyState(container: HTMLElement, state: ExplorerState): void {
  const readout = container.querySelector<HTMLElement>(".whatif-readout");
  if (readout) {
    if (state.lastWhatIf) {
      const ratio = state.lastWhatIf.ratio;
      readout.textContent =
        `confidence ${formatPercent(state.lastWhatIf.confidence)}` +
        (ratio === null ? "" : ` (${formatPercent(ratio)} of full)`);
    }
    readout.classList.toggle("stale", state.stale);
  }

  for (const cell of container.querySelectorAll<HTMLElement>(".patch-cell")) {
    const index = Number(cell.dataset.index);
    cell.classList.toggle("selected", state.querySubset.includes(index));
  }

  const highlighted = new Set(state.highlighted);
  for (const card of container.querySelectorAll<HTMLElement>(".sag-node")) {
    const id = Number(card.dataset.nodeId);
    card.classList.toggle("highlight", highlighted.has(id));
    if (state.nearest) {
      const position = state.nearest.node_ids.indexOf(id);
      if (position >= 0) {
        card.dataset.distance = String(state.nearest.distances[position]);
      }
    }
  }
}
