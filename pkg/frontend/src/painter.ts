// Canvas rendering: three stacked layers at native patch resolution, CSS
// scales them up with nearest-neighbour so single pixels stay readable.
//
//   base    — depth preview (grayscale PNG from the service)
//   state   — current mask tinted blue, hint map green/red, shared opacity
//   preview — the gesture being drawn right now; wiped on every response

import type { PatchState } from "./controller.js";
import { rasterizeStroke } from "./raster.js";
import type { BrushSettings, MetricPoint } from "./types.js";

const MASK_RGB: [number, number, number] = [86, 160, 255];
const ADD_RGB: [number, number, number] = [46, 204, 64];
const ERASE_RGB: [number, number, number] = [255, 65, 54];

function loadPng(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("broken PNG payload"));
    img.src = "data:image/png;base64," + b64;
  });
}

function context(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");
  return ctx;
}

/** Decode a grayscale PNG into a per-pixel boolean (luminance > 127). */
async function decodeMask(b64: string, size: number): Promise<Uint8Array> {
  const img = await loadPng(b64);
  const scratch = document.createElement("canvas");
  scratch.width = size;
  scratch.height = size;
  const ctx = context(scratch);
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, size, size).data;
  const out = new Uint8Array(size * size);
  for (let i = 0; i < out.length; i++) out[i] = data[i * 4] > 127 ? 1 : 0;
  return out;
}

export class PatchPainter {
  private epoch = 0;
  private shown: PatchState | null = null;
  private shownOpacity = -1;
  private maskCache = new Map<string, Uint8Array>();

  constructor(
    private readonly base: HTMLCanvasElement,
    private readonly state: HTMLCanvasElement,
    private readonly preview: HTMLCanvasElement,
    readonly size: number,
  ) {
    for (const canvas of [base, state, preview]) {
      canvas.width = size;
      canvas.height = size;
    }
  }

  /** Repaint if the patch object or opacity changed since the last call. */
  async showPatch(p: PatchState, opacity: number): Promise<void> {
    if (this.shown === p && this.shownOpacity === opacity) return;
    const epoch = ++this.epoch;

    const depthImg = await loadPng(p.depthPng);
    let mask = this.maskCache.get(p.maskPng);
    if (!mask) {
      mask = await decodeMask(p.maskPng, this.size);
      this.maskCache.set(p.maskPng, mask);
      // A handful of masks per patch is plenty; drop old decodes.
      if (this.maskCache.size > 16) {
        const oldest = this.maskCache.keys().next().value;
        if (oldest !== undefined) this.maskCache.delete(oldest);
      }
    }
    if (epoch !== this.epoch) return; // a newer patch superseded this one

    context(this.base).drawImage(depthImg, 0, 0);
    this.paintState(mask, p.delta, opacity);
    this.clearPreview();
    this.shown = p;
    this.shownOpacity = opacity;
  }

  private paintState(mask: Uint8Array, delta: Int8Array, opacity: number): void {
    const n = this.size * this.size;
    const image = new ImageData(this.size, this.size);
    const px = image.data;
    const alpha = Math.round(opacity * 255);
    for (let i = 0; i < n; i++) {
      let rgb: [number, number, number] | null = null;
      if (delta[i] > 0) rgb = ADD_RGB;
      else if (delta[i] < 0) rgb = ERASE_RGB;
      else if (mask[i]) rgb = MASK_RGB;
      if (!rgb) continue;
      const o = i * 4;
      px[o] = rgb[0];
      px[o + 1] = rgb[1];
      px[o + 2] = rgb[2];
      px[o + 3] = alpha;
    }
    context(this.state).putImageData(image, 0, 0);
  }

  /**
   * Paint the in-progress gesture with the same footprint the server will
   * rasterize. Never merged into state — a response always wipes it.
   */
  previewStroke(
    points: [number, number][],
    brush: BrushSettings,
    valid: [number, number],
  ): void {
    const sign = brush.sign === "add" ? 1 : -1;
    const stroke = rasterizeStroke(
      this.size, this.size, points, brush.width, sign as 1 | -1, valid,
    );
    const rgb = sign > 0 ? ADD_RGB : ERASE_RGB;
    const image = new ImageData(this.size, this.size);
    const px = image.data;
    for (let i = 0; i < stroke.length; i++) {
      if (!stroke[i]) continue;
      const o = i * 4;
      px[o] = rgb[0];
      px[o + 1] = rgb[1];
      px[o + 2] = rgb[2];
      px[o + 3] = 210;
    }
    context(this.preview).putImageData(image, 0, 0);
  }

  clearPreview(): void {
    context(this.preview).clearRect(0, 0, this.size, this.size);
  }
}

/** Depth + mask composite for a navigator tile. */
export async function renderThumb(
  canvas: HTMLCanvasElement,
  p: PatchState,
  size: number,
): Promise<void> {
  const depthImg = await loadPng(p.depthPng);
  const maskImg = await loadPng(p.maskPng);
  const ctx = context(canvas);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(depthImg, 0, 0, size, size, 0, 0, canvas.width, canvas.height);
  ctx.globalAlpha = 0.55;
  ctx.drawImage(maskImg, 0, 0, size, size, 0, 0, canvas.width, canvas.height);
  ctx.globalAlpha = 1;
}

/** Annotated-pixel history as a bare polyline, newest point rightmost. */
export function drawSparkline(
  canvas: HTMLCanvasElement,
  history: MetricPoint[],
): void {
  const ctx = context(canvas);
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  if (history.length < 2) return;
  const top = Math.max(...history.map((p) => p.annotatedPixels), 1);
  ctx.strokeStyle = "#56a0ff";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  history.forEach((point, i) => {
    const x = (i / (history.length - 1)) * (w - 4) + 2;
    const y = h - 3 - (point.annotatedPixels / top) * (h - 6);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
