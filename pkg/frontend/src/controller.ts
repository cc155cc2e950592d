// Session state machine, kept free of DOM so it can be driven by tests the
// same way pointer handlers drive it.
//
// Ground rules, enforced here rather than in the widgets:
//  - the server's response is the only source of mask/hint state; nothing
//    drawn locally is ever folded back into the cache,
//  - one mutation in flight at a time (hint or undo),
//  - a stroke that fails in transit is kept for retry; a stroke the server
//    rejects is dropped with the reason shown.

import { ApiClient, ApiError } from "./api.js";
import { canvasToPatchPoint, rleDecode } from "./raster.js";
import type {
  HintResponse,
  PatchPayload,
  SessionInfo,
  SessionSummary,
  StrokeInput,
  ViewState,
} from "./types.js";
import { BRUSH_WIDTH_MAX, BRUSH_WIDTH_MIN } from "./types.js";

/** Cached display state of one patch, replaced wholesale on every change. */
export interface PatchState {
  patch: number;
  origin: [number, number];
  valid: [number, number];
  depthPng: string;
  maskPng: string;
  hintsPng: string;
  delta: Int8Array;
}

export type Banner =
  | { kind: "idle" }
  | { kind: "error"; message: string }
  | { kind: "retry"; message: string };

export type SubmitVerdict = "sent" | "rejected-empty" | "rejected-busy";

function summaryOf(body: SessionSummary): SessionSummary {
  return {
    annotated_pixels: body.annotated_pixels,
    interaction_count: body.interaction_count,
    activity: body.activity,
    suggested: body.suggested,
    conservative_width: body.conservative_width,
  };
}

export function defaultBrushWidth(conservativeWidth: number): number {
  const w = Math.round(conservativeWidth);
  return Math.min(Math.max(w, BRUSH_WIDTH_MIN), BRUSH_WIDTH_MAX);
}

export class SessionController {
  readonly view: ViewState;
  summary: SessionSummary;
  banner: Banner = { kind: "idle" };
  readonly patches = new Map<number, PatchState>();

  private inFlight = false;
  private pendingStroke: StrokeInput | null = null;
  private pendingScale = 1;
  private pendingPatch = 0;
  private readonly listeners = new Set<() => void>();

  private constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    readonly mirrorId: string,
    readonly patchSize: number,
    readonly keptPatches: number[],
    summary: SessionSummary,
    startPatch: number,
  ) {
    this.summary = summaryOf(summary);
    this.view = {
      patch: startPatch,
      overlayOpacity: 0.6,
      brush: {
        width: defaultBrushWidth(summary.conservative_width),
        sign: "add",
      },
      metricHistory: [
        {
          interactions: summary.interaction_count,
          annotatedPixels: summary.annotated_pixels,
        },
      ],
    };
  }

  /** Start a fresh session on a mirror. */
  static async open(api: ApiClient, mirrorId: string): Promise<SessionController> {
    const info: SessionInfo = await api.createSession(mirrorId);
    const kept = info.keep.flatMap((keep, k) => (keep ? [k] : []));
    const start = info.suggested[0] ?? 0;
    const ctrl = new SessionController(
      api, info.session_id, mirrorId, info.patch_size, kept, info, start,
    );
    await ctrl.selectPatch(start);
    return ctrl;
  }

  /**
   * Re-join an existing session (page reload). Everything needed comes off
   * one patch payload: activity has one slot per patch, suggested lists
   * exactly the kept ones.
   */
  static async attach(
    api: ApiClient,
    sessionId: string,
    mirrorId: string,
    patch: number,
  ): Promise<SessionController> {
    const payload = await api.getPatch(sessionId, patch);
    const kept = [...payload.suggested].sort((a, b) => a - b);
    const ctrl = new SessionController(
      api, sessionId, mirrorId, payload.patch_size, kept, payload, patch,
    );
    ctrl.ingestPatch(payload);
    return ctrl;
  }

  // -------------------------------------------------------------------
  // Subscriptions
  // -------------------------------------------------------------------

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  // -------------------------------------------------------------------
  // Read side
  // -------------------------------------------------------------------

  get busy(): boolean {
    return this.inFlight;
  }

  get currentPatch(): PatchState | undefined {
    return this.patches.get(this.view.patch);
  }

  hasPendingStroke(): boolean {
    return this.pendingStroke !== null;
  }

  /** The navigator collapses when there is nothing to navigate between. */
  navigatorVisible(): boolean {
    return this.keptPatches.length > 1;
  }

  // -------------------------------------------------------------------
  // View-only settings
  // -------------------------------------------------------------------

  setOverlayOpacity(value: number): void {
    this.view.overlayOpacity = Math.min(Math.max(value, 0), 1);
    this.emit();
  }

  setBrushWidth(width: number): void {
    this.view.brush.width = Math.min(
      Math.max(Math.round(width), BRUSH_WIDTH_MIN), BRUSH_WIDTH_MAX,
    );
    this.emit();
  }

  setBrushSign(sign: "add" | "erase"): void {
    this.view.brush.sign = sign;
    this.emit();
  }

  // -------------------------------------------------------------------
  // Patch navigation
  // -------------------------------------------------------------------

  async ensurePatch(k: number): Promise<PatchState> {
    const cached = this.patches.get(k);
    if (cached) return cached;
    const payload = await this.api.getPatch(this.sessionId, k);
    this.ingestPatch(payload);
    return this.patches.get(k)!;
  }

  async selectPatch(k: number): Promise<void> {
    try {
      await this.ensurePatch(k);
      this.view.patch = k;
      this.emit();
    } catch (err) {
      this.showError(err);
    }
  }

  /**
   * Step through the server-suggested order. The order itself shifts as
   * activity accrues, but for a fixed state the cycle is fixed.
   */
  cyclePatch(direction: 1 | -1): number {
    const order = this.summary.suggested;
    if (order.length === 0) return this.view.patch;
    const pos = order.indexOf(this.view.patch);
    const next = pos < 0
      ? order[0]
      : order[(pos + direction + order.length) % order.length];
    void this.selectPatch(next);
    return next;
  }

  // -------------------------------------------------------------------
  // Mutations
  // -------------------------------------------------------------------

  /**
   * Convert a drawn gesture to patch space and post it. The returned
   * verdict is for the caller's preview layer only — actual state changes
   * arrive through subscribe().
   */
  async submitStroke(stroke: StrokeInput, scale: number): Promise<SubmitVerdict> {
    if (stroke.polyline.length < 2) {
      this.banner = { kind: "error", message: "zero-length stroke discarded" };
      this.emit();
      return "rejected-empty";
    }
    if (stroke.width < 1) {
      this.banner = { kind: "error", message: `brush width ${stroke.width} below 1px` };
      this.emit();
      return "rejected-empty";
    }
    if (this.inFlight) return "rejected-busy";
    this.pendingStroke = stroke;
    this.pendingScale = scale;
    this.pendingPatch = this.view.patch;
    await this.flushPending();
    return "sent";
  }

  /** Resubmit the stroke held back by a transport failure. */
  retryPending(): void {
    if (this.pendingStroke === null || this.inFlight) return;
    void this.flushPending();
  }

  private async flushPending(): Promise<void> {
    const stroke = this.pendingStroke!;
    this.inFlight = true;
    this.banner = { kind: "idle" };
    this.emit();
    const points = stroke.polyline.map((p) =>
      canvasToPatchPoint(p.x, p.y, this.pendingScale),
    );
    try {
      const res = await this.api.postHint(this.sessionId, {
        patch: this.pendingPatch,
        points,
        width: stroke.width,
        sign: stroke.sign === "add" ? 1 : -1,
      });
      this.pendingStroke = null;
      this.ingestHint(res);
    } catch (err) {
      if (err instanceof ApiError) {
        // A verdict: the stroke is unusable, keeping it would just replay
        // the rejection.
        this.pendingStroke = null;
        this.banner = { kind: "error", message: err.message };
      } else {
        this.banner = {
          kind: "retry",
          message: "network failure — stroke kept, retry when the service is back",
        };
      }
    } finally {
      this.inFlight = false;
      this.emit();
    }
  }

  async undo(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    this.banner = { kind: "idle" };
    this.emit();
    try {
      const payload = await this.api.undo(this.sessionId);
      this.ingestPatch(payload, true);
      this.view.patch = payload.patch;
    } catch (err) {
      this.showError(err);
    } finally {
      this.inFlight = false;
      this.emit();
    }
  }

  // -------------------------------------------------------------------
  // Response ingestion — the only writers of patch state
  // -------------------------------------------------------------------

  private ingestPatch(payload: PatchPayload, recordMetric = false): void {
    const size = this.patchSize;
    this.patches.set(payload.patch, {
      patch: payload.patch,
      origin: payload.origin,
      valid: payload.valid,
      depthPng: payload.depth_png,
      maskPng: payload.mask_png,
      hintsPng: payload.hints_png,
      delta: rleDecode(payload.hints_rle, size * size),
    });
    this.updateSummary(payload, recordMetric);
  }

  private ingestHint(res: HintResponse): void {
    const prev = this.patches.get(res.patch);
    if (!prev) return; // can only draw on a loaded patch
    const size = this.patchSize;
    this.patches.set(res.patch, {
      ...prev,
      maskPng: res.mask_png,
      hintsPng: res.hints_png,
      delta: rleDecode(res.hints_rle, size * size),
    });
    this.updateSummary(res, true);
  }

  private updateSummary(body: SessionSummary, recordMetric: boolean): void {
    this.summary = summaryOf(body);
    if (recordMetric) {
      this.view.metricHistory.push({
        interactions: body.interaction_count,
        annotatedPixels: body.annotated_pixels,
      });
    }
  }

  private showError(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.banner = { kind: "error", message };
    this.emit();
  }
}
