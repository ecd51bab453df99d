/** Editable palette layer: a total per-pixel task map with undo history.
 *
 * The layer is always total — every pixel holds a valid task id — and every
 * mutation pushes the exact prior state so undo restores it bit-for-bit.
 */

import type { Stroke, TaskId } from "./types.js";

export class PaletteLayer {
  readonly width: number;
  readonly height: number;
  private pixels: Uint8Array;
  private history: Uint8Array[] = [];

  constructor(width: number, height: number, readonly numTasks: number, fill: TaskId = 0) {
    if (width <= 0 || height <= 0) throw new Error(`bad size ${width}x${height}`);
    if (fill < 0 || fill >= numTasks) throw new Error(`task id ${fill} out of range`);
    this.width = width;
    this.height = height;
    this.pixels = new Uint8Array(width * height).fill(fill);
  }

  get(x: number, y: number): TaskId {
    return this.pixels[y * this.width + x]!;
  }

  /** A defensive copy of the current pixel data. */
  snapshot(): Uint8Array {
    return this.pixels.slice();
  }

  /** Replace the whole layer (e.g. with a server-predicted palette),
   * preserving history so the previous state is one undo away. */
  load(data: Uint8Array): void {
    if (data.length !== this.width * this.height) {
      throw new Error(`palette has ${data.length} pixels, canvas needs ${this.width * this.height}`);
    }
    for (const v of data) {
      if (v >= this.numTasks) throw new Error(`task id ${v} out of range`);
    }
    this.history.push(this.pixels);
    this.pixels = data.slice();
  }

  /** Apply a stroke; pixels outside the canvas are clipped away. */
  paint(stroke: Stroke): void {
    if (stroke.task < 0 || stroke.task >= this.numTasks) {
      throw new Error(`task id ${stroke.task} out of range`);
    }
    this.history.push(this.pixels.slice());
    if (stroke.kind === "rect") {
      const x0 = Math.max(0, Math.min(stroke.x0, stroke.x1));
      const y0 = Math.max(0, Math.min(stroke.y0, stroke.y1));
      const x1 = Math.min(this.width - 1, Math.max(stroke.x0, stroke.x1));
      const y1 = Math.min(this.height - 1, Math.max(stroke.y0, stroke.y1));
      for (let y = y0; y <= y1; y++) {
        this.pixels.fill(stroke.task, y * this.width + x0, y * this.width + x1 + 1);
      }
      return;
    }
    const r = Math.max(0, stroke.radius);
    const r2 = r * r;
    for (const p of stroke.points) {
      const xLo = Math.max(0, Math.ceil(p.x - r));
      const xHi = Math.min(this.width - 1, Math.floor(p.x + r));
      const yLo = Math.max(0, Math.ceil(p.y - r));
      const yHi = Math.min(this.height - 1, Math.floor(p.y + r));
      for (let y = yLo; y <= yHi; y++) {
        for (let x = xLo; x <= xHi; x++) {
          const dx = x - p.x;
          const dy = y - p.y;
          if (dx * dx + dy * dy <= r2) this.pixels[y * this.width + x] = stroke.task;
        }
      }
    }
  }

  get canUndo(): boolean {
    return this.history.length > 0;
  }

  /** Restore the exact palette from before the last paint/load. */
  undo(): boolean {
    const prev = this.history.pop();
    if (!prev) return false;
    this.pixels = prev;
    return true;
  }
}

/** Indices where two palettes differ (for confining-edit checks and
 * highlighting changed regions). */
export function paletteDiff(a: Uint8Array, b: Uint8Array): number[] {
  if (a.length !== b.length) throw new Error("palette sizes differ");
  const out: number[] = [];
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) out.push(i);
  return out;
}
