// Client-side raster math.
//
// The stroke footprint here is a pixel-exact port of what the server stores
// (Bresenham center-line, then a floor(width/2)-radius disk), so the preview
// layer shows the true footprint of a gesture before the round-trip. The
// preview is still throwaway: session state always comes back over the wire.

/** Python-style round: halves go to the nearest even integer. */
export function roundHalfToEven(v: number): number {
  const floor = Math.floor(v);
  const frac = v - floor;
  if (frac > 0.5) return floor + 1;
  if (frac < 0.5) return floor;
  return floor % 2 === 0 ? floor : floor + 1;
}

/** Plot a polyline's center-line pixels, clipped to h x w. */
export function polylineCenterline(
  h: number,
  w: number,
  points: [number, number][],
): Uint8Array {
  if (points.length === 0) {
    throw new Error("polyline needs at least one point");
  }
  const pts = points.map(
    ([r, c]) => [roundHalfToEven(r), roundHalfToEven(c)] as [number, number],
  );
  const grid = new Uint8Array(h * w);
  const plot = (r: number, c: number) => {
    if (r >= 0 && r < h && c >= 0 && c < w) grid[r * w + c] = 1;
  };
  plot(pts[0][0], pts[0][1]);
  for (let i = 1; i < pts.length; i++) {
    let [r, c] = pts[i - 1];
    const [r1, c1] = pts[i];
    const dr = Math.abs(r1 - r);
    const dc = Math.abs(c1 - c);
    const sr = r < r1 ? 1 : -1;
    const sc = c < c1 ? 1 : -1;
    let err = dr - dc;
    for (;;) {
      plot(r, c);
      if (r === r1 && c === c1) break;
      const e2 = 2 * err;
      if (e2 > -dc) {
        err -= dc;
        r += sr;
      }
      if (e2 < dr) {
        err += dr;
        c += sc;
      }
    }
  }
  return grid;
}

/**
 * Dilate with a disk whose radius is floor(width/2); width below 2 leaves
 * the mask unchanged, mirroring the server's width semantics.
 */
export function dilateDisk(
  src: Uint8Array,
  h: number,
  w: number,
  width: number,
): Uint8Array {
  if (width < 0) throw new Error(`dilation width must be >= 0, got ${width}`);
  const radius = Math.floor(width / 2);
  const out = src.slice();
  if (radius === 0) return out;
  const offsets: [number, number][] = [];
  for (let dy = -radius; dy <= radius; dy++) {
    for (let dx = -radius; dx <= radius; dx++) {
      if (dy * dy + dx * dx <= radius * radius) offsets.push([dy, dx]);
    }
  }
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      if (!src[r * w + c]) continue;
      for (const [dy, dx] of offsets) {
        const rr = r + dy;
        const cc = c + dx;
        if (rr >= 0 && rr < h && cc >= 0 && cc < w) out[rr * w + cc] = 1;
      }
    }
  }
  return out;
}

/**
 * Rasterize one stroke into a ternary hint patch, exactly as the server
 * will: center-line, disk dilation, sign, then zero outside the valid
 * extent (edge patches are zero-padded and hints may not reach the pad).
 */
export function rasterizeStroke(
  h: number,
  w: number,
  points: [number, number][],
  width: number,
  sign: 1 | -1,
  valid?: [number, number],
): Int8Array {
  if (sign !== 1 && sign !== -1) {
    throw new Error(`stroke sign must be +1 or -1, got ${sign}`);
  }
  const footprint = dilateDisk(polylineCenterline(h, w, points), h, w, width);
  const out = new Int8Array(h * w);
  const vh = Math.min(valid ? valid[0] : h, h);
  const vw = Math.min(valid ? valid[1] : w, w);
  for (let r = 0; r < vh; r++) {
    for (let c = 0; c < vw; c++) {
      if (footprint[r * w + c]) out[r * w + c] = sign;
    }
  }
  return out;
}

/** Expand [value, run] pairs; throws unless they cover `total` exactly. */
export function rleDecode(runs: [number, number][], total: number): Int8Array {
  const out = new Int8Array(total);
  let pos = 0;
  for (const [value, run] of runs) {
    if (run <= 0) throw new Error(`run lengths must be positive, got ${run}`);
    out.fill(value, pos, pos + run);
    pos += run;
  }
  if (pos !== total) {
    throw new Error(`runs cover ${pos} pixels, expected ${total}`);
  }
  return out;
}

/** Canvas-space (x, y) in CSS pixels to patch-space (row, col) floats. */
export function canvasToPatchPoint(
  x: number,
  y: number,
  scale: number,
): [number, number] {
  return [y / scale, x / scale];
}
