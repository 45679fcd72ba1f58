/** Detail view: prediction, overlay, what-if parameter controls, comparison. */

import { ApiClient, ApiError, ExplainEnvelope, ExplainParams, CompareResponse } from "./api.js";
import { DEFAULT_PARAMS, validateParams } from "./params.js";
import { numberCell, probabilityText } from "./format.js";

export interface ExplainViewElements {
  original: HTMLImageElement;
  panelA: ModelPanelElements;
  panelB: ModelPanelElements;
  compareRow: HTMLElement;
  error: HTMLElement;
  controls: {
    k: HTMLInputElement;
    samples: HTMLInputElement;
    seed: HTMLInputElement;
    gridRows: HTMLInputElement;
    gridCols: HTMLInputElement;
  };
}

export interface ModelPanelElements {
  root: HTMLElement;
  title: HTMLElement;
  prediction: HTMLElement;
  overlay: HTMLImageElement;
  fidelity: HTMLElement;
  cacheHit: HTMLElement;
}

export class ExplainController {
  params: ExplainParams = { ...DEFAULT_PARAMS, grid: [...DEFAULT_PARAMS.grid] };
  imageId: string | null = null;
  modelA: string | null = null;
  modelB: string | null = null; // side-by-side when set

  private requestToken = 0;
  lastEnvelopeA: ExplainEnvelope | null = null;
  lastEnvelopeB: ExplainEnvelope | null = null;
  lastCompare: CompareResponse | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly view: ExplainViewElements,
  ) {
    this.bindControls();
  }

  private bindControls(): void {
    const { controls } = this.view;
    controls.k.value = String(this.params.k);
    controls.samples.value = String(this.params.samples);
    controls.seed.value = String(this.params.seed);
    controls.gridRows.value = String(this.params.grid[0]);
    controls.gridCols.value = String(this.params.grid[1]);
    controls.k.addEventListener("change", () => this.onParamChange());
    controls.samples.addEventListener("change", () => this.onParamChange());
    controls.seed.addEventListener("change", () => this.onParamChange());
    controls.gridRows.addEventListener("change", () => this.onParamChange());
    controls.gridCols.addEventListener("change", () => this.onParamChange());
  }

  private readParams(): ExplainParams {
    const { controls } = this.view;
    return {
      k: Number(controls.k.value),
      samples: Number(controls.samples.value),
      seed: Number(controls.seed.value),
      grid: [Number(controls.gridRows.value), Number(controls.gridCols.value)],
    };
  }

  /** A parameter edit issues exactly one refresh for the current selection. */
  onParamChange(): void {
    const next = this.readParams();
    const issues = validateParams(next);
    if (issues.length > 0) {
      this.showError(issues.map((i) => `${i.field}: ${i.message}`).join("; "));
      return;
    }
    this.params = next;
    void this.refresh();
  }

  select(imageId: string, modelA: string, modelB: string | null): Promise<void> {
    this.imageId = imageId;
    this.modelA = modelA;
    this.modelB = modelB;
    return this.refresh();
  }

  /** Re-query the service; stale responses are discarded by token. */
  async refresh(): Promise<void> {
    if (this.imageId === null || this.modelA === null) {
      return;
    }
    const token = ++this.requestToken;
    this.showError("");
    this.view.original.src = this.api.imageUrl(this.imageId);
    try {
      const tasks: Promise<unknown>[] = [
        this.api.explain(this.modelA, this.imageId, this.params),
      ];
      if (this.modelB !== null) {
        // both models share the seed: identical perturbation masks
        tasks.push(this.api.explain(this.modelB, this.imageId, this.params));
        tasks.push(this.api.compare(this.modelA, this.modelB, this.imageId, this.params));
      }
      const results = await Promise.all(tasks);
      if (token !== this.requestToken) {
        return; // a newer request superseded this one
      }
      this.lastEnvelopeA = results[0] as ExplainEnvelope;
      this.lastEnvelopeB = this.modelB !== null ? (results[1] as ExplainEnvelope) : null;
      this.lastCompare = this.modelB !== null ? (results[2] as CompareResponse) : null;
      this.render();
    } catch (err) {
      if (token !== this.requestToken) {
        return;
      }
      this.showError(err instanceof ApiError ? err.detail : String(err));
    }
  }

  private render(): void {
    this.renderPanel(this.view.panelA, this.modelA, this.lastEnvelopeA);
    if (this.lastEnvelopeB !== null) {
      this.view.panelB.root.hidden = false;
      this.renderPanel(this.view.panelB, this.modelB, this.lastEnvelopeB);
    } else {
      this.view.panelB.root.hidden = true;
    }
    this.renderCompare();
  }

  private renderPanel(
    panel: ModelPanelElements,
    modelId: string | null,
    envelope: ExplainEnvelope | null,
  ): void {
    if (modelId === null || envelope === null) {
      return;
    }
    const doc = envelope.document;
    panel.title.textContent = modelId;
    panel.prediction.textContent = `${doc.predicted_class} (${probabilityText(doc.probability)})`;
    panel.prediction.title = String(doc.probability);
    panel.overlay.src = this.api.overlayUrl(envelope.overlay_url);
    numberCell(panel.fidelity, doc.r2);
    panel.cacheHit.textContent = envelope.cache_hit ? "cached" : "computed";
    panel.cacheHit.className = envelope.cache_hit ? "cache-hit" : "cache-miss";
  }

  private renderCompare(): void {
    const row = this.view.compareRow;
    row.replaceChildren();
    if (this.lastCompare === null) {
      row.hidden = true;
      return;
    }
    row.hidden = false;
    const cells: Array<[string, number]> = [
      ["jaccard", this.lastCompare.row.jaccard_selected_pixels],
      ["border mass A", this.lastCompare.row.border_mass_a],
      ["border mass B", this.lastCompare.row.border_mass_b],
    ];
    for (const [label, value] of cells) {
      const cell = document.createElement("span");
      cell.className = "compare-cell";
      const name = document.createElement("b");
      name.textContent = `${label}: `;
      const num = document.createElement("span");
      num.dataset.metric = label;
      numberCell(num, value);
      cell.append(name, num);
      row.appendChild(cell);
    }
    const agreement = document.createElement("span");
    agreement.className = "compare-cell";
    agreement.textContent = this.lastCompare.row.prediction_agreement
      ? "predictions agree"
      : "predictions disagree";
    row.appendChild(agreement);
  }

  private showError(message: string): void {
    this.view.error.textContent = message;
    this.view.error.hidden = message === "";
  }
}
