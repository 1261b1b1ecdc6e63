/** Bootstrap: connect to the service, offer the SAG list, render the explorer. */

import { HttpApi } from "./api.js";
import { applyState, renderError, renderSag } from "./render.js";
import { ExplorerStore } from "./state.js";

const DEFAULT_SERVICE = "http://127.0.0.1:8008";

export async function bootstrap(root: HTMLElement): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const api = new HttpApi(params.get("service") ?? DEFAULT_SERVICE);
  const store = new ExplorerStore(api);

  const picker = document.createElement("select");
  picker.className = "sag-picker";
  const stage = document.createElement("main");
  root.replaceChildren(picker, stage);

  store.subscribe((state) => {
    if (state.error) {
      renderError(stage, state.error);
      return;
    }
    if (state.graph && !stage.querySelector(".sag-graph") && !stage.querySelector(".empty-state")) {
      renderSag(stage, state.graph, api, (index) => {
        void store.togglePatch(index);
      });
    }
    applyState(stage, state);
  });

  let ids: string[] = [];
  try {
    ids = await api.listSags();
  } catch (err) {
    renderError(stage, `Could not reach the explanation service: ${err}`);
    return;
  }
  for (const id of ids) {
    const option = document.createElement("option");
    option.value = id;
    option.textContent = id;
    picker.appendChild(option);
  }
  picker.addEventListener("change", () => {
    stage.replaceChildren();
    void store.loadSag(picker.value);
  });
  if (ids.length > 0) {
    await store.loadSag(ids[0]);
  } else {
    renderError(stage, "The service has no structured attention graphs loaded.");
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void bootstrap(document.getElementById("app") as HTMLElement);
}
