import { DepthHole, DepthLookup } from "./types.js";

/**
 * Median depth (millimetres) of the 3x3 patch centred on pixel (u, v).
 *
 * Structured-light sensors speckle: single pixels drop to zero or spike,
 * so a point sample is unusable.  The median over the patch ignores
 * holes (non-positive or missing values); if fewer than five of the
 * nine pixels are valid the patch as a whole is untrustworthy and the
 * frame should be dropped — that is the DepthHole thrown here.
 */
export function medianPatchDepthMm(depth: DepthLookup, u: number, v: number): number {
  const cx = Math.round(u);
  const cy = Math.round(v);
  const valid: number[] = [];
  for (let dy = -1; dy <= 1; dy++) {
    for (let dx = -1; dx <= 1; dx++) {
      const d = depth(cx + dx, cy + dy);
      if (d !== undefined && Number.isFinite(d) && d > 0) {
        valid.push(d);
      }
    }
  }
  if (valid.length < 5) {
    throw new DepthHole(`only ${valid.length}/9 valid depth pixels at (${cx}, ${cy})`);
  }
  valid.sort((a, b) => a - b);
  const mid = valid.length >> 1;
  return valid.length % 2 === 1 ? valid[mid] : (valid[mid - 1] + valid[mid]) / 2;
}
