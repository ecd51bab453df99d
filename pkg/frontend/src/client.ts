/** Thin typed client for the inference HTTP API.
 *
 * All payloads are base64 PNG strings; this module keeps that encoding
 * detail out of the session logic. Works in the browser and under node
 * (global fetch).
 */

import type { TaskInfo } from "./types.js";

export interface PredictResponse {
  composite: string;
  raw: string;
  palette: string;
  overlays: Record<string, string>;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export function toBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") return Buffer.from(bytes).toString("base64");
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

export function fromBase64(value: string): Uint8Array {
  if (typeof Buffer !== "undefined") return new Uint8Array(Buffer.from(value, "base64"));
  const bin = atob(value);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export class StudioClient {
  constructor(readonly baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      throw new ApiError(res.status, typeof body.detail === "string" ? body.detail : res.statusText);
    }
    return body as T;
  }

  /** Task ids, names, and legend colors. */
  async tasks(): Promise<TaskInfo[]> {
    return this.request<TaskInfo[]>("/v1/tasks");
  }

  /** Run the composed network on an image with a palette (both PNG bytes). */
  async predict(imagePng: Uint8Array, palettePng: Uint8Array | "auto"): Promise<PredictResponse> {
    return this.request<PredictResponse>("/v1/predict", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        image: toBase64(imagePng),
        palette: palettePng === "auto" ? "auto" : toBase64(palettePng),
      }),
    });
  }

  /** Predict a palette from the image alone; returns palette PNG bytes. */
  async predictPalette(imagePng: Uint8Array): Promise<Uint8Array> {
    const body = await this.request<{ palette: string }>("/v1/palette/predict", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image: toBase64(imagePng) }),
    });
    return fromBase64(body.palette);
  }
}
