/** Console bootstrap: wires the gallery, detail view and flag store. */

import { ApiClient, ImageInfo } from "./api.js";
import { ExplainController, ExplainViewElements, ModelPanelElements } from "./explain.js";
import { FlagStore } from "./flags.js";
import { PAGE_SIZE, renderGallery } from "./gallery.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function panelElements(prefix: string): ModelPanelElements {
  return {
    root: el(`${prefix}`),
    title: el(`${prefix}-title`),
    prediction: el(`${prefix}-prediction`),
    overlay: el<HTMLImageElement>(`${prefix}-overlay`),
    fidelity: el(`${prefix}-fidelity`),
    cacheHit: el(`${prefix}-cache`),
  };
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const flags = new FlagStore(window.localStorage);
  const banner = el("banner");

  const view: ExplainViewElements = {
    original: el<HTMLImageElement>("original-image"),
    panelA: panelElements("panel-a"),
    panelB: panelElements("panel-b"),
    compareRow: el("compare-row"),
    error: el("param-error"),
    controls: {
      k: el<HTMLInputElement>("control-k"),
      samples: el<HTMLInputElement>("control-samples"),
      seed: el<HTMLInputElement>("control-seed"),
      gridRows: el<HTMLInputElement>("control-grid-rows"),
      gridCols: el<HTMLInputElement>("control-grid-cols"),
    },
  };
  const controller = new ExplainController(api, view);

  let models: string[] = [];
  let page = 0;
  let selectedImage: string | null = null;

  const modelSelect = el<HTMLSelectElement>("model-select");
  const compareSelect = el<HTMLSelectElement>("compare-select");
  const detail = el("detail");

  function currentModels(): { a: string; b: string | null } {
    const a = modelSelect.value;
    const b = compareSelect.value === "none" ? null : compareSelect.value;
    return { a, b: b === a ? null : b };
  }

  async function openDetail(imageId: string): Promise<void> {
    selectedImage = imageId;
    detail.hidden = false;
    const { a, b } = currentModels();
    await controller.select(imageId, a, b);
  }

  async function loadGallery(): Promise<void> {
    try {
      const pageDoc = await api.listImages(PAGE_SIZE, page * PAGE_SIZE);
      banner.hidden = true;
      renderGallery(el("gallery"), api, pageDoc.images as ImageInfo[], pageDoc.total, page, {
        onSelect: (id) => void openDetail(id),
        onPage: (p) => {
          page = p;
          void loadGallery();
        },
      });
    } catch (err) {
      banner.hidden = false;
      banner.textContent = `service unreachable: ${String(err)} `;
      const retry = document.createElement("button");
      retry.textContent = "retry";
      retry.addEventListener("click", () => void loadGallery());
      banner.appendChild(retry);
    }
  }

  modelSelect.addEventListener("change", () => {
    if (selectedImage !== null) {
      void openDetail(selectedImage);
    }
  });
  compareSelect.addEventListener("change", () => {
    if (selectedImage !== null) {
      void openDetail(selectedImage);
    }
  });

  el("flag-button").addEventListener("click", () => {
    if (selectedImage === null || controller.modelA === null) {
      return;
    }
    const note = el<HTMLInputElement>("flag-note").value;
    flags.add(controller.modelA, selectedImage, controller.params, note);
    el("flag-count").textContent = String(flags.list().length);
  });

  el("export-button").addEventListener("click", () => {
    const doc = JSON.stringify(flags.exportDocument(), null, 2);
    const blob = new Blob([doc], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "flagged-explanations.json";
    link.click();
    URL.revokeObjectURL(link.href);
  });
  el("flag-count").textContent = String(flags.list().length);

  try {
    models = (await api.listModels()).map((m) => m.id);
  } catch {
    models = [];
  }
  modelSelect.replaceChildren(
    ...models.map((id) => new Option(id, id)),
  );
  compareSelect.replaceChildren(
    new Option("none", "none"),
    ...models.map((id) => new Option(id, id)),
  );
  await loadGallery();
}

window.addEventListener("DOMContentLoaded", () => void boot());
