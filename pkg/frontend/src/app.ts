// DOM wiring. All session logic lives in SessionController; this file only
// translates events into controller calls and controller state into pixels.

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import type { PatchState } from "./controller.js";
import { PatchPainter, drawSparkline, renderThumb } from "./painter.js";
import { canvasToPatchPoint } from "./raster.js";

const THUMB_PX = 72;

function $<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const els = {
  mirrorSelect: $<HTMLSelectElement>("mirror-select"),
  openBtn: $<HTMLButtonElement>("open-btn"),
  sessionLabel: $<HTMLSpanElement>("session-label"),
  banner: $<HTMLDivElement>("banner"),
  bannerText: $<HTMLSpanElement>("banner-text"),
  retryBtn: $<HTMLButtonElement>("retry-btn"),
  empty: $<HTMLDivElement>("empty-state"),
  workspace: $<HTMLDivElement>("workspace"),
  stage: $<HTMLDivElement>("stage"),
  base: $<HTMLCanvasElement>("canvas-base"),
  state: $<HTMLCanvasElement>("canvas-state"),
  preview: $<HTMLCanvasElement>("canvas-preview"),
  toolAdd: $<HTMLButtonElement>("tool-add"),
  toolErase: $<HTMLButtonElement>("tool-erase"),
  brushWidth: $<HTMLInputElement>("brush-width"),
  brushWidthOut: $<HTMLSpanElement>("brush-width-out"),
  overlayOpacity: $<HTMLInputElement>("overlay-opacity"),
  undoBtn: $<HTMLButtonElement>("undo-btn"),
  reportLink: $<HTMLAnchorElement>("report-link"),
  patchLabel: $<HTMLSpanElement>("patch-label"),
  countInteractions: $<HTMLSpanElement>("count-interactions"),
  countAnnotated: $<HTMLSpanElement>("count-annotated"),
  brushDefault: $<HTMLSpanElement>("brush-default"),
  sparkline: $<HTMLCanvasElement>("sparkline"),
  navigator: $<HTMLDivElement>("navigator"),
  navigatorTiles: $<HTMLDivElement>("navigator-tiles"),
};

const api = new ApiClient("");
let ctrl: SessionController | null = null;
let painter: PatchPainter | null = null;
let unsubscribe: (() => void) | null = null;

// Gesture capture state (canvas CSS coordinates until submission).
let drawing = false;
let gesture: { x: number; y: number }[] = [];
let gestureScale = 1;

const thumbCanvases = new Map<number, HTMLCanvasElement>();
const thumbShown = new Map<number, PatchState>();

// ---------------------------------------------------------------------------
// Session lifecycle
// ---------------------------------------------------------------------------

function hashState(): { session?: string; mirror?: string; patch: number } {
  const params = new URLSearchParams(location.hash.replace(/^#/, ""));
  return {
    session: params.get("s") ?? undefined,
    mirror: params.get("m") ?? undefined,
    patch: Number(params.get("k") ?? 0) || 0,
  };
}

function writeHash(): void {
  if (!ctrl) return;
  const params = new URLSearchParams();
  params.set("s", ctrl.sessionId);
  params.set("m", ctrl.mirrorId);
  params.set("k", String(ctrl.view.patch));
  history.replaceState(null, "", "#" + params.toString());
}

function mountController(next: SessionController): void {
  unsubscribe?.();
  ctrl = next;
  painter = new PatchPainter(els.base, els.state, els.preview, ctrl.patchSize);
  thumbCanvases.clear();
  thumbShown.clear();
  els.navigatorTiles.textContent = "";
  els.brushWidth.value = String(ctrl.view.brush.width);
  els.reportLink.href = `/v1/session/${ctrl.sessionId}/report`;
  unsubscribe = ctrl.subscribe(render);
  render();
  void prefetchThumbs(next);
}

async function prefetchThumbs(owner: SessionController): Promise<void> {
  for (const k of owner.keptPatches) {
    if (ctrl !== owner) return; // session switched mid-prefetch
    try {
      await owner.ensurePatch(k);
      render();
    } catch {
      return; // render path already surfaces session-level failures
    }
  }
}

async function openMirror(mirrorId: string): Promise<void> {
  try {
    els.openBtn.disabled = true;
    mountController(await SessionController.open(api, mirrorId));
  } catch (err) {
    showBootError(err);
  } finally {
    els.openBtn.disabled = false;
  }
}

async function boot(): Promise<void> {
  try {
    const { mirrors } = await api.listMirrors();
    els.mirrorSelect.textContent = "";
    for (const id of mirrors) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      els.mirrorSelect.append(opt);
    }
  } catch (err) {
    showBootError(err);
    return;
  }
  const fromHash = hashState();
  if (fromHash.session && fromHash.mirror) {
    try {
      mountController(await SessionController.attach(
        api, fromHash.session, fromHash.mirror, fromHash.patch,
      ));
      return;
    } catch {
      // Stale hash (service restarted); fall through to the picker.
      history.replaceState(null, "", "#");
    }
  }
}

function showBootError(err: unknown): void {
  els.banner.hidden = false;
  els.retryBtn.hidden = true;
  els.bannerText.textContent = err instanceof Error ? err.message : String(err);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

function render(): void {
  if (!ctrl || !painter) return;
  const view = ctrl.view;

  els.empty.hidden = true;
  els.workspace.hidden = false;
  els.sessionLabel.textContent =
    `${ctrl.mirrorId} · session ${ctrl.sessionId.slice(0, 8)}`;

  // Banner
  if (ctrl.banner.kind === "idle") {
    els.banner.hidden = true;
  } else {
    els.banner.hidden = false;
    els.bannerText.textContent = ctrl.banner.message;
    els.retryBtn.hidden = ctrl.banner.kind !== "retry";
  }

  // Brush + tool state; the brush is off limits while a request is out.
  els.stage.classList.toggle("busy", ctrl.busy);
  els.undoBtn.disabled = ctrl.busy;
  els.toolAdd.classList.toggle("active", view.brush.sign === "add");
  els.toolErase.classList.toggle("active", view.brush.sign === "erase");
  els.brushWidthOut.textContent = `${view.brush.width}px`;

  // Workload panel
  els.countInteractions.textContent = String(ctrl.summary.interaction_count);
  els.countAnnotated.textContent = String(ctrl.summary.annotated_pixels);
  els.brushDefault.textContent =
    ctrl.summary.conservative_width.toFixed(1) + "px";
  drawSparkline(els.sparkline, view.metricHistory);

  els.patchLabel.textContent =
    `patch ${view.patch} / ${ctrl.keptPatches.length} kept`;

  renderNavigator();
  writeHash();

  const patch = ctrl.currentPatch;
  if (patch) void painter.showPatch(patch, view.overlayOpacity);
}

function renderNavigator(): void {
  if (!ctrl) return;
  if (!ctrl.navigatorVisible()) {
    els.navigator.hidden = true;
    return;
  }
  els.navigator.hidden = false;
  const order = ctrl.summary.suggested;
  order.forEach((k, position) => {
    let canvas = thumbCanvases.get(k);
    if (!canvas) {
      canvas = document.createElement("canvas");
      canvas.width = THUMB_PX;
      canvas.height = THUMB_PX;
      canvas.className = "thumb";
      canvas.title = `patch ${k}`;
      canvas.addEventListener("click", () => void ctrl?.selectPatch(k));
      thumbCanvases.set(k, canvas);
    }
    canvas.style.order = String(position); // server order, no DOM churn
    canvas.classList.toggle("suggested-next", position === 0);
    canvas.classList.toggle("current", k === ctrl!.view.patch);
    if (!canvas.isConnected) els.navigatorTiles.append(canvas);
    const state = ctrl!.patches.get(k);
    if (state && thumbShown.get(k) !== state) {
      thumbShown.set(k, state);
      void renderThumb(canvas, state, ctrl!.patchSize);
    }
  });
}

// ---------------------------------------------------------------------------
// Painting gestures
// ---------------------------------------------------------------------------

function gesturePoint(event: PointerEvent): { x: number; y: number } {
  const rect = els.preview.getBoundingClientRect();
  return { x: event.clientX - rect.left, y: event.clientY - rect.top };
}

function refreshPreview(): void {
  if (!ctrl || !painter || gesture.length < 2) return;
  const patch = ctrl.currentPatch;
  if (!patch) return;
  const points = gesture.map((p) => canvasToPatchPoint(p.x, p.y, gestureScale));
  painter.previewStroke(points, ctrl.view.brush, patch.valid);
}

els.preview.addEventListener("pointerdown", (event) => {
  if (!ctrl || ctrl.busy || !ctrl.currentPatch) return;
  drawing = true;
  const rect = els.preview.getBoundingClientRect();
  gestureScale = rect.width / ctrl.patchSize;
  gesture = [gesturePoint(event)];
  els.preview.setPointerCapture(event.pointerId);
});

els.preview.addEventListener("pointermove", (event) => {
  if (!drawing) return;
  gesture.push(gesturePoint(event));
  refreshPreview();
});

els.preview.addEventListener("pointerup", (event) => {
  if (!drawing) return;
  drawing = false;
  els.preview.releasePointerCapture(event.pointerId);
  const stroke = {
    polyline: gesture,
    width: ctrl!.view.brush.width,
    sign: ctrl!.view.brush.sign,
  };
  gesture = [];
  void (async () => {
    const verdict = await ctrl!.submitStroke(stroke, gestureScale);
    // Keep the local preview only while a transport failure holds the
    // stroke for retry; any settled outcome discards it (a successful
    // response repaints state from the server anyway).
    if (verdict !== "sent" || !ctrl!.hasPendingStroke()) {
      painter?.clearPreview();
    }
  })();
});

els.preview.addEventListener("pointercancel", () => {
  drawing = false;
  gesture = [];
  painter?.clearPreview();
});

// ---------------------------------------------------------------------------
// Controls
// ---------------------------------------------------------------------------

els.openBtn.addEventListener("click", () => {
  const id = els.mirrorSelect.value;
  if (id) void openMirror(id);
});

els.retryBtn.addEventListener("click", () => ctrl?.retryPending());
els.undoBtn.addEventListener("click", () => void ctrl?.undo());
els.toolAdd.addEventListener("click", () => ctrl?.setBrushSign("add"));
els.toolErase.addEventListener("click", () => ctrl?.setBrushSign("erase"));

els.brushWidth.addEventListener("input", () => {
  ctrl?.setBrushWidth(Number(els.brushWidth.value));
});

els.overlayOpacity.addEventListener("input", () => {
  ctrl?.setOverlayOpacity(Number(els.overlayOpacity.value) / 100);
});

document.addEventListener("keydown", (event) => {
  if (!ctrl) return;
  const target = event.target as HTMLElement | null;
  if (target && /^(INPUT|SELECT|TEXTAREA)$/.test(target.tagName)) return;
  if (event.key === "ArrowRight") {
    ctrl.cyclePatch(1);
    event.preventDefault();
  } else if (event.key === "ArrowLeft") {
    ctrl.cyclePatch(-1);
    event.preventDefault();
  }
});

void boot();
