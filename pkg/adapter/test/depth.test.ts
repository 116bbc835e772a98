import { describe, expect, it } from "vitest";

import { medianPatchDepthMm } from "../src/depth.js";
import { DepthHole } from "../src/types.js";

function patchLookup(values: (number | undefined)[]) {
  // Row-major 3x3 patch centred on (10, 10).
  const map = new Map<string, number | undefined>();
  let i = 0;
  for (let dy = -1; dy <= 1; dy++) {
    for (let dx = -1; dx <= 1; dx++) {
      map.set(`${10 + dx},${10 + dy}`, values[i++]);
    }
  }
  return (x: number, y: number) => map.get(`${x},${y}`);
}

describe("medianPatchDepthMm", () => {
  it("returns the middle value of a full patch", () => {
    const depth = patchLookup([701, 705, 703, 699, 702, 704, 700, 698, 706]);
    expect(medianPatchDepthMm(depth, 10, 10)).toBe(702);
  });

  it("rounds the pixel centre before sampling", () => {
    const depth = patchLookup([701, 705, 703, 699, 702, 704, 700, 698, 706]);
    expect(medianPatchDepthMm(depth, 10.4, 9.6)).toBe(702);
  });

  it("averages the two middle values when an even count survives", () => {
    // Three holes leave six valid samples: median = (702 + 703) / 2.
    const depth = patchLookup([701, 0, 703, 699, 702, undefined, 0, 704, 706]);
    expect(medianPatchDepthMm(depth, 10, 10)).toBeCloseTo(702.5, 12);
  });

  it("ignores zero, negative, and non-finite samples", () => {
    const depth = patchLookup([701, 0, -3, NaN, 702, 704, 700, Infinity, 706]);
    expect(medianPatchDepthMm(depth, 10, 10)).toBe(702);
  });

  it("throws DepthHole when fewer than five samples are valid", () => {
    const depth = patchLookup([701, 0, 0, 0, 702, 0, 0, 698, 706]);
    expect(() => medianPatchDepthMm(depth, 10, 10)).toThrow(DepthHole);
  });

  it("throws DepthHole off the edge of the depth map", () => {
    const depth = patchLookup([701, 705, 703, 699, 702, 704, 700, 698, 706]);
    expect(() => medianPatchDepthMm(depth, 500, 500)).toThrow(DepthHole);
  });
});
