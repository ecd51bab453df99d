/** Studio session: one loaded image, an editable palette layer, and the
 * prediction layers fetched for it.
 *
 * All edits are local; nothing reaches the server until requestPrediction.
 * The previous prediction is retained for side-by-side comparison, and at
 * most one request is in flight — later calls queue behind it.
 */

import { StudioClient, fromBase64 } from "./client.js";
import { PaletteLayer, paletteDiff } from "./palette.js";
import type { PredictionLayers, RgbaImage, Stroke, TaskInfo } from "./types.js";

type MaybePromise<T> = T | Promise<T>;

/** PNG encode/decode, injected so the same session logic runs in the
 * browser (async canvas-based codec) and under node (sync pngjs). */
export interface PngCodec {
  encodePalette(data: Uint8Array, width: number, height: number): MaybePromise<Uint8Array>;
  decodePalette(bytes: Uint8Array): MaybePromise<{ data: Uint8Array; width: number; height: number }>;
  decodeRgba(bytes: Uint8Array): MaybePromise<RgbaImage>;
}

export class StudioSession {
  readonly palette: PaletteLayer;
  /** Most recent prediction, if any. */
  current: PredictionLayers | null = null;
  /** The prediction before `current`, kept for side-by-side comparison. */
  previous: PredictionLayers | null = null;
  /** Palette that produced `current` (for diff highlighting). */
  private predictedWith: Uint8Array | null = null;
  private inFlight: Promise<unknown> = Promise.resolve();

  constructor(
    private readonly client: StudioClient,
    private readonly codec: PngCodec,
    readonly imagePng: Uint8Array,
    readonly width: number,
    readonly height: number,
    readonly tasks: TaskInfo[],
  ) {
    this.palette = new PaletteLayer(width, height, tasks.length, 0);
  }

  /** Load the image and task legend, and start with a uniform palette. */
  static async open(client: StudioClient, codec: PngCodec, imagePng: Uint8Array): Promise<StudioSession> {
    const tasks = await client.tasks();
    const decoded = await codec.decodeRgba(imagePng);
    return new StudioSession(client, codec, imagePng, decoded.width, decoded.height, tasks);
  }

  paint(stroke: Stroke): void {
    this.palette.paint(stroke);
  }

  undo(): boolean {
    return this.palette.undo();
  }

  /** Pixels (flat indices) where the working palette differs from the one
   * behind the current prediction. */
  dirtyPixels(): number[] {
    if (!this.predictedWith) return [];
    return paletteDiff(this.predictedWith, this.palette.snapshot());
  }

  /** POST the current palette; on success the old layers move to
   * `previous`. Errors leave both layer sets untouched. Requests queue
   * behind any in-flight one. */
  requestPrediction(): Promise<PredictionLayers> {
    const run = this.inFlight.then(
      () => this.predictNow(),
      () => this.predictNow(),
    );
    this.inFlight = run;
    return run;
  }

  private async predictNow(): Promise<PredictionLayers> {
    const snapshot = this.palette.snapshot();
    const palettePng = await this.codec.encodePalette(snapshot, this.width, this.height);
    const res = await this.client.predict(this.imagePng, palettePng);
    const overlays = new Map<string, RgbaImage>();
    for (const [name, b64] of Object.entries(res.overlays)) {
      overlays.set(name, await this.codec.decodeRgba(fromBase64(b64)));
    }
    const layers: PredictionLayers = {
      composite: await this.codec.decodeRgba(fromBase64(res.composite)),
      overlays,
      palette: (await this.codec.decodePalette(fromBase64(res.palette))).data,
      raw: fromBase64(res.raw),
    };
    this.previous = this.current;
    this.current = layers;
    this.predictedWith = snapshot;
    return layers;
  }

  /** Replace the editable layer with the server-predicted palette; the
   * previous palette stays one undo away. */
  async fetchPredictedPalette(): Promise<void> {
    const png = await this.client.predictPalette(this.imagePng);
    const decoded = await this.codec.decodePalette(png);
    if (decoded.width !== this.width || decoded.height !== this.height) {
      throw new Error(`predicted palette is ${decoded.width}x${decoded.height}, canvas is ${this.width}x${this.height}`);
    }
    this.palette.load(decoded.data);
  }
}
