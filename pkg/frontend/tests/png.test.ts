import { describe, expect, it } from "vitest";

import { decodePalettePng, decodeRgbaPng, encodePalettePng, encodeRgbaPng } from "../src/png.js";

describe("palette png codec", () => {
  it("round-trips task ids exactly", () => {
    const data = new Uint8Array(12 * 9).map((_, i) => i % 5);
    const bytes = encodePalettePng(data, 12, 9);
    const back = decodePalettePng(bytes);
    expect(back.width).toBe(12);
    expect(back.height).toBe(9);
    expect(back.data).toEqual(data);
  });

  it("rejects mismatched sizes", () => {
    expect(() => encodePalettePng(new Uint8Array(10), 4, 4)).toThrow();
  });
});

describe("rgba png codec", () => {
  it("round-trips pixels", () => {
    const data = new Uint8Array(4 * 3 * 4).map((_, i) => (i * 37) % 256);
    for (let i = 3; i < data.length; i += 4) data[i] = 255; // opaque
    const bytes = encodeRgbaPng({ width: 4, height: 3, data });
    const back = decodeRgbaPng(bytes);
    expect(back.width).toBe(4);
    expect(back.height).toBe(3);
    expect(back.data).toEqual(data);
  });
});
