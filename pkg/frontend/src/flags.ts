/** Locally persisted record of explanations the reviewer marked questionable. */

import type { ExplainParams } from "./api.js";
import { configHash } from "./params.js";

export interface ExplanationFlag {
  model_id: string;
  image_id: string;
  config_hash: string;
  note: string;
  created_utc_ms: number;
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const STORAGE_KEY = "limelens.flags";

export class FlagStore {
  constructor(private readonly storage: StorageLike) {}

  list(): ExplanationFlag[] {
    const raw = this.storage.getItem(STORAGE_KEY);
    if (raw === null) {
      return [];
    }
    try {
      return JSON.parse(raw) as ExplanationFlag[];
    } catch {
      return [];
    }
  }

  add(modelId: string, imageId: string, params: ExplainParams, note: string): ExplanationFlag {
    const flag: ExplanationFlag = {
      model_id: modelId,
      image_id: imageId,
      config_hash: configHash(params),
      note,
      created_utc_ms: Date.now(),
    };
    const flags = this.list();
    flags.push(flag);
    this.storage.setItem(STORAGE_KEY, JSON.stringify(flags));
    return flag;
  }

  /** Versioned export document, mirroring the service's document style. */
  exportDocument(): { version: number; flags: ExplanationFlag[] } {
    return { version: 1, flags: this.list() };
  }
}
