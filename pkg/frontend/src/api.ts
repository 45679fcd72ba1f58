/** Typed client for the limelens HTTP service. */

export interface ModelInfo {
  id: string;
  architecture: string;
  input_shape: number[];
}

export interface ImageInfo {
  id: string;
  label: string;
}

export interface ImagePage {
  version: number;
  total: number;
  offset: number;
  images: ImageInfo[];
}

export interface ExplainParams {
  k: number;
  samples: number;
  seed: number;
  grid: [number, number];
}

export interface SegmentEntry {
  id: number;
  weight: number;
  selected: boolean;
  sign: "supports" | "opposes";
}

export interface ExplanationDocument {
  version: number;
  model_id: string;
  image_id: string;
  predicted_class: string;
  probability: number;
  config: {
    k: number;
    num_samples: number;
    seed: number;
    kernel_width: number;
    lambda: number;
    grid: [number, number];
  };
  segments: SegmentEntry[];
  intercept: number;
  r2: number;
}

export interface ExplainEnvelope {
  document: ExplanationDocument;
  overlay_url: string;
  cache_hit: boolean;
}

export interface PredictionDocument {
  version: number;
  model_id: string;
  image_id: string;
  probability: number;
  predicted_class: string;
  threshold: number;
}

export interface CompareRow {
  image_id: string;
  jaccard_selected_pixels: number;
  border_mass_a: number;
  border_mass_b: number;
  artifact_a: boolean;
  artifact_b: boolean;
  prediction_agreement: boolean;
}

export interface CompareResponse {
  version: number;
  model_a: string;
  model_b: string;
  row: CompareRow;
  overlay_url_a: string;
  overlay_url_b: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, body?.detail ?? "request failed");
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async listModels(): Promise<ModelInfo[]> {
    const body = await this.request<{ models: ModelInfo[] }>("/api/models");
    return body.models;
  }

  listImages(limit: number, offset: number): Promise<ImagePage> {
    return this.request<ImagePage>(`/api/images?limit=${limit}&offset=${offset}`);
  }

  /** URL of the raw image PNG (served by the same host). */
  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${imageId}`;
  }

  overlayUrl(path: string): string {
    return this.baseUrl + path;
  }

  predict(modelId: string, imageId: string): Promise<PredictionDocument> {
    return this.post<PredictionDocument>("/api/predict", {
      model_id: modelId,
      image_id: imageId,
    });
  }

  explain(modelId: string, imageId: string, params: ExplainParams): Promise<ExplainEnvelope> {
    return this.post<ExplainEnvelope>("/api/explain", {
      model_id: modelId,
      image_id: imageId,
      k: params.k,
      samples: params.samples,
      seed: params.seed,
      grid: params.grid,
    });
  }

  compare(
    modelA: string,
    modelB: string,
    imageId: string,
    params: ExplainParams,
  ): Promise<CompareResponse> {
    return this.post<CompareResponse>("/api/compare", {
      model_a: modelA,
      model_b: modelB,
      image_id: imageId,
      k: params.k,
      samples: params.samples,
      seed: params.seed,
      grid: params.grid,
    });
  }
}
