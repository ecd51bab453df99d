/** PNG codecs for palettes and rendered layers (pngjs-based; used by the
 * node test harness and the static dev server; the browser entry decodes
 * server layers through Image/canvas instead). */

import { PNG } from "pngjs";
import type { RgbaImage } from "./types.js";

/** Encode a per-pixel task map as a single-channel (grayscale) PNG, the
 * format the server expects for palettes. */
export function encodePalettePng(data: Uint8Array, width: number, height: number): Uint8Array {
  if (data.length !== width * height) throw new Error("palette size mismatch");
  const png = new PNG({ width, height, colorType: 0, inputColorType: 0, inputHasAlpha: false });
  png.data = Buffer.from(data);
  return new Uint8Array(PNG.sync.write(png, { colorType: 0, inputColorType: 0, inputHasAlpha: false }));
}

/** Decode a palette PNG back to one task id per pixel. Accepts grayscale or
 * RGB(A) encodings (the red channel carries the id). */
export function decodePalettePng(bytes: Uint8Array): { data: Uint8Array; width: number; height: number } {
  const png = PNG.sync.read(Buffer.from(bytes));
  const out = new Uint8Array(png.width * png.height);
  for (let i = 0; i < out.length; i++) out[i] = png.data[i * 4]!;
  return { data: out, width: png.width, height: png.height };
}

/** Decode any rendered layer to RGBA pixels. */
export function decodeRgbaPng(bytes: Uint8Array): RgbaImage {
  const png = PNG.sync.read(Buffer.from(bytes));
  return { width: png.width, height: png.height, data: new Uint8Array(png.data) };
}

/** Encode RGBA pixels (e.g. a synthetic test image) as PNG. */
export function encodeRgbaPng(image: RgbaImage): Uint8Array {
  const png = new PNG({ width: image.width, height: image.height });
  png.data = Buffer.from(image.data);
  return new Uint8Array(PNG.sync.write(png));
}
