/** Shared types for the palette studio. */

export type TaskId = number;

export interface TaskInfo {
  id: TaskId;
  name: string;
  /** Legend color as [r, g, b], 0-255. */
  color: [number, number, number];
}

/** A circular brush stroke or an axis-aligned rectangle, in canvas pixels. */
export type Stroke =
  | { kind: "brush"; task: TaskId; points: Array<{ x: number; y: number }>; radius: number }
  | { kind: "rect"; task: TaskId; x0: number; y0: number; x1: number; y1: number };

/** Decoded layers of one /v1/predict response. */
export interface PredictionLayers {
  /** Composite render as decoded RGBA pixels. */
  composite: RgbaImage;
  /** Per-task overlay renders, keyed by task name. */
  overlays: Map<string, RgbaImage>;
  /** The palette the server actually used (echoed back). */
  palette: Uint8Array;
  /** Raw network output container bytes, opaque to the UI. */
  raw: Uint8Array;
}

export interface RgbaImage {
  width: number;
  height: number;
  /** RGBA, row-major, 4 bytes per pixel. */
  data: Uint8Array;
}
