import { describe, expect, it } from "vitest";

import { ApiError, StudioClient, toBase64 } from "../src/client.js";
import { decodePalettePng, decodeRgbaPng, encodePalettePng, encodeRgbaPng } from "../src/png.js";
import { StudioSession, type PngCodec } from "../src/session.js";
import type { RgbaImage } from "../src/types.js";

const codec: PngCodec = {
  encodePalette: encodePalettePng,
  decodePalette: decodePalettePng,
  decodeRgba: decodeRgbaPng,
};

const W = 8;
const H = 6;

function testImage(): Uint8Array {
  const data = new Uint8Array(W * H * 4);
  for (let i = 0; i < W * H; i++) {
    data[i * 4] = (i * 13) % 256;
    data[i * 4 + 1] = (i * 29) % 256;
    data[i * 4 + 2] = (i * 47) % 256;
    data[i * 4 + 3] = 255;
  }
  return encodeRgbaPng({ width: W, height: H, data });
}

const TASKS = [0, 1, 2, 3, 4].map((id) => ({
  id,
  name: `task${id}`,
  color: [id * 50, 0, 0] as [number, number, number],
}));

/** In-memory server: echoes the palette and renders a composite whose red
 * channel is the task id, so tests can verify what the server received. */
function fakeServer(opts: { predictor?: Uint8Array; fail?: number } = {}) {
  const calls: { path: string; palette?: Uint8Array }[] = [];
  const fetchFn = (async (url: string, init?: RequestInit) => {
    const path = new URL(url).pathname;
    const respond = (status: number, body: unknown) =>
      ({ ok: status < 400, status, statusText: "", json: async () => body }) as Response;
    if (opts.fail) return respond(opts.fail, { detail: "injected failure" });
    if (path === "/v1/tasks") {
      calls.push({ path });
      return respond(200, TASKS);
    }
    if (path === "/v1/predict") {
      const req = JSON.parse(String(init?.body));
      const palette = decodePalettePng(Buffer.from(req.palette, "base64")).data;
      calls.push({ path, palette });
      const composite: RgbaImage = { width: W, height: H, data: new Uint8Array(W * H * 4) };
      for (let i = 0; i < palette.length; i++) {
        composite.data[i * 4] = palette[i]!;
        composite.data[i * 4 + 3] = 255;
      }
      return respond(200, {
        composite: toBase64(encodeRgbaPng(composite)),
        raw: toBase64(new Uint8Array([1, 2, 3])),
        palette: req.palette,
        overlays: { task0: toBase64(encodeRgbaPng(composite)) },
      });
    }
    if (path === "/v1/palette/predict") {
      calls.push({ path });
      if (!opts.predictor) return respond(409, { detail: "no palette predictor deployed" });
      return respond(200, { palette: toBase64(encodePalettePng(opts.predictor, W, H)) });
    }
    return respond(404, { detail: "not found" });
  }) as typeof fetch;
  return { fetchFn, calls };
}

async function openSession(server = fakeServer()) {
  const client = new StudioClient("http://fake", server.fetchFn);
  const session = await StudioSession.open(client, codec, testImage());
  return { session, server };
}

describe("StudioSession", () => {
  it("opens with canvas-sized total palette and the server legend", async () => {
    const { session } = await openSession();
    expect(session.width).toBe(W);
    expect(session.height).toBe(H);
    expect(session.tasks).toHaveLength(5);
    expect(session.palette.snapshot()).toEqual(new Uint8Array(W * H).fill(0));
  });

  it("prediction layers match the canvas and palette echoes verbatim", async () => {
    const { session } = await openSession();
    session.paint({ kind: "rect", task: 3, x0: 0, y0: 0, x1: 3, y1: 2 });
    const layers = await session.requestPrediction();
    expect(layers.composite.width).toBe(W);
    expect(layers.composite.height).toBe(H);
    expect(layers.palette).toEqual(session.palette.snapshot());
  });

  it("identical palettes give identical layers; edits move old layers aside", async () => {
    const { session } = await openSession();
    const first = await session.requestPrediction();
    const second = await session.requestPrediction();
    expect(second.composite.data).toEqual(first.composite.data);

    session.paint({ kind: "rect", task: 2, x0: 0, y0: 0, x1: 1, y1: 1 });
    const third = await session.requestPrediction();
    expect(session.previous).toBe(second);
    expect(session.current).toBe(third);
    expect(third.composite.data).not.toEqual(second.composite.data);
  });

  it("dirtyPixels reports exactly the edited region", async () => {
    const { session } = await openSession();
    await session.requestPrediction();
    expect(session.dirtyPixels()).toEqual([]);
    session.paint({ kind: "rect", task: 1, x0: 2, y0: 1, x1: 3, y1: 2 });
    const dirty = session.dirtyPixels();
    expect(dirty).toEqual([1 * W + 2, 1 * W + 3, 2 * W + 2, 2 * W + 3]);
  });

  it("HTTP errors are surfaced without touching existing layers", async () => {
    const opts: { fail?: number } = {};
    const base = fakeServer();
    const flaky = ((url: string, init?: RequestInit) =>
      opts.fail
        ? Promise.resolve({ ok: false, status: opts.fail, statusText: "", json: async () => ({ detail: "down" }) } as Response)
        : base.fetchFn(url, init)) as typeof fetch;
    const client = new StudioClient("http://fake", flaky);
    const session = await StudioSession.open(client, codec, testImage());
    const good = await session.requestPrediction();
    opts.fail = 422;
    await expect(session.requestPrediction()).rejects.toThrow(ApiError);
    expect(session.current).toBe(good);
    expect(session.previous).toBeNull();
    opts.fail = undefined;
    await expect(session.requestPrediction()).resolves.toBeTruthy(); // queue recovers
  });

  it("fetchPredictedPalette loads the prediction, one undo away", async () => {
    const predicted = new Uint8Array(W * H).map((_, i) => i % 5);
    const { session } = await openSession(fakeServer({ predictor: predicted }));
    session.paint({ kind: "rect", task: 4, x0: 0, y0: 0, x1: W - 1, y1: H - 1 });
    await session.fetchPredictedPalette();
    expect(session.palette.snapshot()).toEqual(predicted);
    session.undo();
    expect(session.palette.snapshot()).toEqual(new Uint8Array(W * H).fill(4));
  });

  it("surfaces 409 when no predictor is deployed", async () => {
    const { session } = await openSession(fakeServer());
    await expect(session.fetchPredictedPalette()).rejects.toMatchObject({ status: 409 });
  });

  it("queues prediction requests so only one is in flight", async () => {
    let inFlight = 0;
    let maxInFlight = 0;
    const base = fakeServer();
    const gated = (async (url: string, init?: RequestInit) => {
      if (new URL(url).pathname === "/v1/predict") {
        inFlight += 1;
        maxInFlight = Math.max(maxInFlight, inFlight);
        await new Promise((r) => setTimeout(r, 10));
        inFlight -= 1;
      }
      return base.fetchFn(url, init);
    }) as typeof fetch;
    const client = new StudioClient("http://fake", gated);
    const session = await StudioSession.open(client, codec, testImage());
    await Promise.all([session.requestPrediction(), session.requestPrediction(), session.requestPrediction()]);
    expect(maxInFlight).toBe(1);
  });
});
