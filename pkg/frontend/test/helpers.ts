import type { CompareResponse, ExplainEnvelope, ExplanationDocument } from "../src/api.js";

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

/** fetch stand-in that records calls and replies from a route table. */
export function fakeFetch(routes: (call: RecordedCall) => unknown) {
  const calls: RecordedCall[] = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    const call: RecordedCall = {
      url,
      method: init?.method ?? "GET",
      body: init?.body ? JSON.parse(init.body as string) : null,
    };
    calls.push(call);
    const result = routes(call);
    if (result instanceof Response) {
      return result;
    }
    return jsonResponse(result);
  };
  return { fn, calls };
}

export function explanationDocument(over: Partial<ExplanationDocument> = {}): ExplanationDocument {
  return {
    version: 1,
    model_id: "alpha",
    image_id: "parasitized/img.png",
    predicted_class: "parasitized",
    probability: 0.9231,
    config: { k: 2, num_samples: 1000, seed: 0, kernel_width: 0.25, lambda: 1.0, grid: [8, 8] },
    segments: [],
    intercept: 0.5,
    r2: 0.87654321,
    ...over,
  };
}

export function explainEnvelope(over: Partial<ExplainEnvelope> = {}): ExplainEnvelope {
  return {
    document: explanationDocument(),
    overlay_url: "/api/overlays/abc.png",
    cache_hit: false,
    ...over,
  };
}

export function compareResponse(over: Partial<CompareResponse> = {}): CompareResponse {
  return {
    version: 1,
    model_a: "alpha",
    model_b: "beta",
    row: {
      image_id: "parasitized/img.png",
      jaccard_selected_pixels: 0.3333333333333333,
      border_mass_a: 0.125,
      border_mass_b: 0.75,
      artifact_a: false,
      artifact_b: true,
      prediction_agreement: true,
    },
    overlay_url_a: "/api/overlays/a.png",
    overlay_url_b: "/api/overlays/b.png",
    ...over,
  };
}

/** Build the DOM skeleton the explain controller binds to. */
export function mountExplainView() {
  document.body.innerHTML = `
    <img id="original-image" />
    <div id="panel-a"><span id="panel-a-title"></span><b id="panel-a-prediction"></b>
      <img id="panel-a-overlay" /><span id="panel-a-fidelity"></span><span id="panel-a-cache"></span></div>
    <div id="panel-b" hidden><span id="panel-b-title"></span><b id="panel-b-prediction"></b>
      <img id="panel-b-overlay" /><span id="panel-b-fidelity"></span><span id="panel-b-cache"></span></div>
    <div id="compare-row" hidden></div>
    <span id="param-error" hidden></span>
    <input id="control-k" value="2" />
    <input id="control-samples" value="1000" />
    <input id="control-seed" value="0" />
    <input id="control-grid-rows" value="8" />
    <input id="control-grid-cols" value="8" />
  `;
  const get = (id: string) => document.getElementById(id)! as HTMLElement;
  return {
    original: get("original-image") as HTMLImageElement,
    panelA: {
      root: get("panel-a"),
      title: get("panel-a-title"),
      prediction: get("panel-a-prediction"),
      overlay: get("panel-a-overlay") as HTMLImageElement,
      fidelity: get("panel-a-fidelity"),
      cacheHit: get("panel-a-cache"),
    },
    panelB: {
      root: get("panel-b"),
      title: get("panel-b-title"),
      prediction: get("panel-b-prediction"),
      overlay: get("panel-b-overlay") as HTMLImageElement,
      fidelity: get("panel-b-fidelity"),
      cacheHit: get("panel-b-cache"),
    },
    compareRow: get("compare-row"),
    error: get("param-error"),
    controls: {
      k: get("control-k") as HTMLInputElement,
      samples: get("control-samples") as HTMLInputElement,
      seed: get("control-seed") as HTMLInputElement,
      gridRows: get("control-grid-rows") as HTMLInputElement,
      gridCols: get("control-grid-cols") as HTMLInputElement,
    },
  };
}
