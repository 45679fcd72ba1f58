/** Explanation parameter handling shared by the controls and the flag store. */

import type { ExplainParams } from "./api.js";

export const DEFAULT_PARAMS: ExplainParams = {
  k: 2,
  samples: 1000,
  seed: 0,
  grid: [8, 8],
};

export interface ParamIssue {
  field: string;
  message: string;
}

/** Mirror of the server-side validation so errors surface before a round trip. */
export function validateParams(params: ExplainParams): ParamIssue[] {
  const issues: ParamIssue[] = [];
  const d = params.grid[0] * params.grid[1];
  if (!Number.isInteger(params.k) || params.k < 1) {
    issues.push({ field: "k", message: "k must be a positive integer" });
  } else if (params.k > d) {
    issues.push({ field: "k", message: `k must be at most ${d} (grid segments)` });
  }
  if (!Number.isInteger(params.samples) || params.samples < d + 2) {
    issues.push({ field: "samples", message: `samples must be at least ${d + 2}` });
  }
  if (!Number.isInteger(params.seed) || params.seed < 0) {
    issues.push({ field: "seed", message: "seed must be a non-negative integer" });
  }
  for (const axis of [0, 1] as const) {
    if (!Number.isInteger(params.grid[axis]) || params.grid[axis] < 1) {
      issues.push({ field: "grid", message: "grid dimensions must be positive integers" });
    }
  }
  return issues;
}

/** Key-sorted canonical string, stable across property insertion order. */
export function canonicalParams(params: ExplainParams): string {
  return JSON.stringify({
    grid: params.grid,
    k: params.k,
    samples: params.samples,
    seed: params.seed,
  });
}

/** djb2 hex digest; enough to correlate a flag with its explanation config. */
export function configHash(params: ExplainParams): string {
  const text = canonicalParams(params);
  let hash = 5381;
  for (let i = 0; i < text.length; i++) {
    hash = ((hash << 5) + hash + text.charCodeAt(i)) >>> 0;
  }
  return hash.toString(16).padStart(8, "0");
}
