/** Browser entry: canvas painting UI over the session/client modules. */

import { StudioClient } from "./client.js";
import { StudioSession, type PngCodec } from "./session.js";
import type { RgbaImage, TaskInfo } from "./types.js";

async function decodePng(bytes: Uint8Array): Promise<RgbaImage> {
  const blob = new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const img = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  return { width: img.width, height: img.height, data: new Uint8Array(img.data.buffer) };
}

const canvasCodec: PngCodec = {
  encodePalette(data, width, height) {
    // grayscale values survive the RGBA round trip: r == task id
    const canvas = document.createElement("canvas");
    canvas.width = width;
    canvas.height = height;
    const ctx = canvas.getContext("2d")!;
    const img = ctx.createImageData(width, height);
    for (let i = 0; i < data.length; i++) {
      img.data[i * 4] = img.data[i * 4 + 1] = img.data[i * 4 + 2] = data[i]!;
      img.data[i * 4 + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    const url = canvas.toDataURL("image/png");
    const b64 = url.slice(url.indexOf(",") + 1);
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  },
  async decodePalette(bytes) {
    const rgba = await decodePng(bytes);
    const data = new Uint8Array(rgba.width * rgba.height);
    for (let i = 0; i < data.length; i++) data[i] = rgba.data[i * 4]!;
    return { data, width: rgba.width, height: rgba.height };
  },
  decodeRgba: decodePng,
};

function drawRgba(canvas: HTMLCanvasElement, image: RgbaImage): void {
  canvas.width = image.width;
  canvas.height = image.height;
  const ctx = canvas.getContext("2d")!;
  const data = new ImageData(new Uint8ClampedArray(image.data), image.width, image.height);
  ctx.putImageData(data, 0, 0);
}

function drawPalette(canvas: HTMLCanvasElement, palette: Uint8Array, w: number, h: number, tasks: TaskInfo[]): void {
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < palette.length; i++) {
    const c = tasks[palette[i]!]?.color ?? [255, 0, 255];
    img.data[i * 4] = c[0];
    img.data[i * 4 + 1] = c[1];
    img.data[i * 4 + 2] = c[2];
    img.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

function status(msg: string): void {
  document.getElementById("status")!.textContent = msg;
}

async function boot(): Promise<void> {
  const base = (document.getElementById("server") as HTMLInputElement).value;
  const client = new StudioClient(base);
  const file = (document.getElementById("file") as HTMLInputElement).files?.[0];
  if (!file) {
    status("choose an image first");
    return;
  }
  const bytes = new Uint8Array(await file.arrayBuffer());
  const decoded = await decodePng(bytes);
  const session = await StudioSession.open(client, canvasCodec, bytes);
  const tasks = session.tasks;

  const legend = document.getElementById("legend")!;
  legend.innerHTML = "";
  let activeTask = 0;
  for (const t of tasks) {
    const btn = document.createElement("button");
    btn.textContent = `${t.id} ${t.name}`;
    btn.style.borderLeft = `12px solid rgb(${t.color.join(",")})`;
    btn.onclick = () => {
      activeTask = t.id;
      status(`brush: ${t.name}`);
    };
    legend.appendChild(btn);
  }

  const imageCanvas = document.getElementById("image") as HTMLCanvasElement;
  const paletteCanvas = document.getElementById("palette") as HTMLCanvasElement;
  drawRgba(imageCanvas, decoded);
  const redraw = () => drawPalette(paletteCanvas, session.palette.snapshot(), session.width, session.height, tasks);
  redraw();

  const radius = document.getElementById("radius") as HTMLInputElement;
  const rectTool = document.getElementById("rect") as HTMLInputElement;
  let painting = false;
  let rectStart: { x: number; y: number } | null = null;

  const pos = (e: PointerEvent) => {
    const r = paletteCanvas.getBoundingClientRect();
    return {
      x: Math.floor(((e.clientX - r.left) / r.width) * session.width),
      y: Math.floor(((e.clientY - r.top) / r.height) * session.height),
    };
  };
  paletteCanvas.onpointerdown = (e) => {
    const p = pos(e);
    if (rectTool.checked) {
      rectStart = p;
    } else {
      painting = true;
      session.paint({ kind: "brush", task: activeTask, points: [p], radius: Number(radius.value) });
      redraw();
    }
  };
  paletteCanvas.onpointermove = (e) => {
    if (!painting) return;
    session.paint({ kind: "brush", task: activeTask, points: [pos(e)], radius: Number(radius.value) });
    redraw();
  };
  paletteCanvas.onpointerup = (e) => {
    if (rectStart) {
      const p = pos(e);
      session.paint({ kind: "rect", task: activeTask, x0: rectStart.x, y0: rectStart.y, x1: p.x, y1: p.y });
      rectStart = null;
      redraw();
    }
    painting = false;
  };

  (document.getElementById("undo") as HTMLButtonElement).onclick = () => {
    session.undo();
    redraw();
  };

  (document.getElementById("predict") as HTMLButtonElement).onclick = async () => {
    status("predicting...");
    try {
      const layers = await session.requestPrediction();
      drawRgba(document.getElementById("current") as HTMLCanvasElement, layers.composite);
      if (session.previous) {
        drawRgba(document.getElementById("prev") as HTMLCanvasElement, session.previous.composite);
      }
      status("done");
    } catch (err) {
      status(String(err)); // surfaced non-destructively; layers unchanged
    }
  };

  (document.getElementById("fetch-palette") as HTMLButtonElement).onclick = async () => {
    status("fetching predicted palette...");
    try {
      await session.fetchPredictedPalette();
      redraw();
      status("predicted palette loaded (undo restores the previous one)");
    } catch (err) {
      status(String(err));
    }
  };
}

(document.getElementById("load") as HTMLButtonElement).onclick = () => {
  boot().catch((err) => status(String(err)));
};
