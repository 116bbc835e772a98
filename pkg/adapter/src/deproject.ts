import { Intrinsics } from "./types.js";

/**
 * Pinhole de-projection: pixel (u, v) at metric depth z to camera-frame
 * metres (x right, y down, z forward).
 */
export function deproject(
  u: number,
  v: number,
  zMeters: number,
  cam: Intrinsics,
): [number, number, number] {
  return [
    ((u - cam.cx) * zMeters) / cam.fx,
    ((v - cam.cy) * zMeters) / cam.fy,
    zMeters,
  ];
}
