// Wire types for the annotation service plus the view-side state shapes.
// Field names follow the JSON payloads exactly — do not camelCase them.

/** Row-major run-length pairs: [value, run]. Covers the whole patch. */
export type RleRuns = [number, number][];

/** Counters and ordering hints attached to every session response. */
export interface SessionSummary {
  annotated_pixels: number;
  interaction_count: number;
  /** Interactions so far, per patch index. Length == patch count. */
  activity: number[];
  /** Kept patches, least-touched first — the navigation order. */
  suggested: number[];
  /** Safe default brush width (mu - 2*sigma of the stroke-width model). */
  conservative_width: number;
}

export interface SessionInfo extends SessionSummary {
  session_id: string;
  mirror_id: string;
  patch_size: number;
  /** Mirror pixel dimensions [height, width]. */
  grid: [number, number];
  patches: number;
  keep: boolean[];
  journal: string | null;
}

export interface PatchPayload extends SessionSummary {
  patch: number;
  origin: [number, number];
  patch_size: number;
  /** In-bounds (rows, cols) before the zero padding of edge patches. */
  valid: [number, number];
  depth_png: string;
  mask_png: string;
  hints_png: string;
  hints_rle: RleRuns;
}

export interface HintResponse extends SessionSummary {
  patch: number;
  mask_png: string;
  hints_png: string;
  hints_rle: RleRuns;
}

export interface HintRequestBody {
  patch: number;
  /** Patch-space (row, col) floats; the server rounds and rasterizes. */
  points: [number, number][];
  width: number;
  sign: 1 | -1;
}

// ---------------------------------------------------------------------------
// View state
// ---------------------------------------------------------------------------

export type StrokeSign = "add" | "erase";

/** One drawn gesture, in canvas (x, y) coordinates. */
export interface StrokeInput {
  polyline: { x: number; y: number }[];
  width: number;
  sign: StrokeSign;
}

export interface BrushSettings {
  /** 1..20 px (the wire accepts more, the UI does not need it). */
  width: number;
  sign: StrokeSign;
}

export interface MetricPoint {
  interactions: number;
  annotatedPixels: number;
}

export interface ViewState {
  patch: number;
  /** Overlay alpha in [0, 1]. */
  overlayOpacity: number;
  brush: BrushSettings;
  metricHistory: MetricPoint[];
}

export const BRUSH_WIDTH_MIN = 1;
export const BRUSH_WIDTH_MAX = 20;
